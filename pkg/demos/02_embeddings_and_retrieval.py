#!/usr/bin/env python3
"""Walkthrough: embeddings, threshold retrieval, and durable persistence.

The library is an exact flat index: every stored key is compared against
the query by cosine similarity, the best entry wins if it clears the
threshold tau, and ties go to the oldest entry. Everything round-trips
through a single checksummed file.
"""

import tempfile

from flowmem.embedding import HashEmbedder
from flowmem.flows import to_canonical_json
from flowmem.labels import ClassLabel
from flowmem.library import ExperienceLibrary, Hit, NoContext, cosine
from flowmem.rules import RuleText
from flowmem.synthetic import synthetic_flows

embedder = HashEmbedder(dim=384, seed=0)
flows = synthetic_flows(50, seed=21)

# Embeddings are unit-norm, so cosine similarity is a plain dot product.
a = embedder.embed(to_canonical_json(flows[0].record))
b = embedder.embed(to_canonical_json(flows[1].record))
print(f"self-similarity: {cosine(a, a):+.6f}")
print(f"cross-flow similarity: {cosine(a, b):+.6f}")

# Store a few rules keyed by their flow embeddings.
library = ExperienceLibrary(dim=384, embedder_fingerprint=embedder.fingerprint)
for flow in flows[:10]:
    key = embedder.embed(to_canonical_json(flow.record))
    rule = RuleText(
        text=(
            f"IF in_pkts near the observed profile THEN class={flow.label}; "
            f"previously misclassified as UNKNOWN; key features: in_pkts"
        ),
        target_class=flow.label,
        confused_with=ClassLabel.unknown(),
    )
    library.insert(key, rule, ClassLabel.unknown(), flow.label, flow.flow_id)
print(f"\nlibrary size: {library.size}")

# Threshold semantics: the same query flips from Hit to NoContext as tau
# crosses the best similarity.
query = embedder.embed(to_canonical_json(flows[0].record))
for tau in (0.5, 0.9, 0.999):
    result = library.retrieve(query, tau)
    if isinstance(result, Hit):
        print(f"tau={tau}: hit entry {result.entry.entry_id} at {result.similarity:.4f}")
    else:
        print(f"tau={tau}: no context injected")

# Persistence: one file, checksum-protected, bit-exact on reload.
with tempfile.NamedTemporaryFile(suffix=".lib", delete=False) as fh:
    path = fh.name
library.save(path)
reloaded = ExperienceLibrary.load(path)
again = reloaded.retrieve(query, 0.5)
assert isinstance(again, Hit) and again.entry.entry_id == 0
print(f"\nsaved and reloaded {reloaded.size} entries from {path}")
print("per-class rule counts:", reloaded.stats().per_class_rule_counts)
