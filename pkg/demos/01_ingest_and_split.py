#!/usr/bin/env python3
"""Walkthrough: CSV ingestion, normalization, and class-balanced splitting.

A flow export carries many columns; a schema map binds the 14 canonical
features plus the label column to whatever the export calls them. Bad
values are normalized to zero (and counted), bad rows are rejected with a
reason, and nothing is dropped silently.
"""

import io

from flowmem.config import DEFAULT_SCHEMA_MAP
from flowmem.flows import (
    IngestReport,
    iter_labeled_flows,
    stratified_split,
    to_canonical_json,
)
from flowmem.labels import ClassSet
from flowmem.synthetic import synthetic_flows, write_synthetic_csv

# Render a synthetic 400-flow export to CSV, then ingest it back.
buffer = io.StringIO()
write_synthetic_csv(buffer, synthetic_flows(400, seed=13))
buffer.seek(0)

class_set = ClassSet(["Benign", "DDoS", "DoS", "Reconnaissance"])
report = IngestReport()
flows = list(iter_labeled_flows(buffer, DEFAULT_SCHEMA_MAP, class_set, report))

print(f"rows read: {report.rows_read}")
print(f"flows accepted: {report.flows_ok}")
print(f"values normalized to zero: {report.values_normalized}")
print(f"rows rejected: {len(report.rejected)}")

# The canonical JSON line is both the prompt payload and the embedding
# input, so equal records must serialize byte-identically.
print("\nfirst flow as canonical JSON:")
print(" ", to_canonical_json(flows[0].record))

# Quota sampling: 200 build + 80 eval, split evenly over four classes.
split = stratified_split(flows, quota_build=200, quota_eval=80, seed=7, class_set=class_set)
print(f"\nper-class quotas: build {split.per_class_quota_build}, eval {split.per_class_quota_eval}")
for name, counts in split.per_class_counts.items():
    print(f"  {name}: build {counts['build']}, eval {counts['eval']}")

build_ids = {f.flow_id for f in split.build_set}
eval_ids = {f.flow_id for f in split.eval_set}
print(f"disjoint: {build_ids.isdisjoint(eval_ids)}")
