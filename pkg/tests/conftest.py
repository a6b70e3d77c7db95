from __future__ import annotations

import numpy as np
import pytest


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" and report.passed:
        print(f"\nACCEPTANCE {name}: PASS")
    elif report.when == "call" and report.failed:
        print(f"\nACCEPTANCE {name}: FAIL")
    elif report.skipped:
        print(f"\nACCEPTANCE {name}: SKIPPED (environment-gated)")

from flowmem.embedding import FlowEmbedding
from flowmem.flows import FlowRecord
from flowmem.labels import ClassLabel, ClassSet
from flowmem.rules import RuleText

BOT_CLASSES = ("Benign", "DDoS", "DoS", "Reconnaissance")


@pytest.fixture
def class_set() -> ClassSet:
    return ClassSet(BOT_CLASSES)


def unit_embedding(rng: np.random.RandomState, dim: int) -> FlowEmbedding:
    return FlowEmbedding.from_vector(rng.standard_normal(dim), dim)


def simple_rule(target: str = "DDoS", confused: str = "DoS") -> RuleText:
    return RuleText(
        text=(
            f"IF in_pkts above the {confused} profile (z=+2.10) "
            f"THEN class={target}; previously misclassified as {confused}; "
            "key features: in_pkts"
        ),
        target_class=ClassLabel(target),
        confused_with=ClassLabel(confused),
    )


def fixture_record() -> FlowRecord:
    return FlowRecord(
        src_ip="192.168.1.10",
        dst_ip="10.0.0.5",
        dst_port=443,
        protocol="TCP",
        in_bytes=5113,
        out_bytes=1280,
        in_pkts=12,
        out_pkts=9,
        flow_duration_ms=3200,
        avg_iat_src_to_dst=12.5,
        avg_iat_dst_to_src=0.125,
        throughput_src_to_dst=1597.8125,
        throughput_dst_to_src=400.0,
        tcp_flags_aggregate=27,
    )
