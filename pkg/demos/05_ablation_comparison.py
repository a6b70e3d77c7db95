#!/usr/bin/env python3
"""Walkthrough: the three-configuration ablation.

zero_shot measures the agents with no memory at all, library_only measures
retrieval against a fixed library, and full measures the complete loop with
continuous rule induction. All three consume the identical flow sequence so
the comparison isolates the memory machinery.
"""

from flowmem.config import RunConfig
from flowmem.metrics import render_comparison_table
from flowmem.pipeline import run_ablation
from flowmem.synthetic import synthetic_flows

config = RunConfig()
config.seed = 7
config.tau = 0.5
config.curve_window = 250

flows = synthetic_flows(1500, seed=7)
result = run_ablation(flows, config)

rows = []
for name, report in result.reports():
    metrics = report.metrics_report()
    if metrics is not None:
        rows.append((name, metrics))
print(render_comparison_table(rows))

print(f"\nlibrary built by the full pass: {result.library.size} rules")
print("rule distribution by true class:")
for name, count in result.library.stats().per_class_rule_counts.items():
    print(f"  {name}: {count}")

zero_curve = [p.window_macro_f1 for p in result.zero_shot.curve]
full_curve = [p.window_macro_f1 for p in result.full.curve]
print("\nwindowed macro F1 over the stream:")
print("  zero_shot:", " ".join(f"{x * 100:5.1f}" for x in zero_curve))
print("  full:     ", " ".join(f"{x * 100:5.1f}" for x in full_curve))
print("\nthe no-library baseline stays flat; the full loop climbs.")
