#!/usr/bin/env python3
"""Walkthrough: phase 2, evaluation against a frozen library.

The error analysis agent is disabled and the library is opened read-only:
classification quality now measures how well the accumulated rules
generalize to flows never seen during construction. The library file is
digest-checked before and after to prove evaluation never writes.
"""

import copy
import tempfile

from flowmem.config import RunConfig
from flowmem.library import ExperienceLibrary, file_digest
from flowmem.pipeline import run_build, run_evaluate
from flowmem.synthetic import synthetic_flows

config = RunConfig()
config.seed = 7
config.tau = 0.5
config.curve_window = 250

# Phase 1 on 2,000 flows, persisted to disk.
with tempfile.NamedTemporaryFile(suffix=".lib", delete=False) as fh:
    library_path = fh.name
build_flows = synthetic_flows(2000, seed=7)
build_report = run_build(build_flows, config, library_path=library_path)
print(f"built a library of {build_report.library['size_after']} rules")

# Phase 2 on a disjoint 500-flow set.
digest_before = file_digest(library_path)
library = ExperienceLibrary.load(library_path, read_only=True)
eval_flows = synthetic_flows(500, seed=101, flow_id_start=100_000)

eval_config = copy.deepcopy(config)
eval_config.ablation_mode = "library_only"
eval_report = run_evaluate(eval_flows, eval_config, library=library)

zero_config = copy.deepcopy(config)
zero_config.ablation_mode = "zero_shot"
zero_report = run_evaluate(eval_flows, zero_config, library=None)

print(f"\nfrozen-library evaluation on {len(eval_flows)} unseen flows:")
print(f"  accuracy  {eval_report.metrics['accuracy'] * 100:6.2f}%")
print(f"  macro F1  {eval_report.metrics['macro_f1'] * 100:6.2f}%")
print(f"zero-shot baseline on the same flows:")
print(f"  accuracy  {zero_report.metrics['accuracy'] * 100:6.2f}%")
print(f"  macro F1  {zero_report.metrics['macro_f1'] * 100:6.2f}%")

hits = sum(1 for o in eval_report.outcomes if o.retrieval_hit)
print(f"\nretrieval injected context for {hits}/{len(eval_flows)} flows")
print(f"library file unchanged: {file_digest(library_path) == digest_before}")
