"""Seeded synthetic flow streams for offline demos and closed-loop tests.

The stream is built from behavior profiles. A profile pins the token-bearing
identity fields (addresses, port, protocol, packet counts, flag byte) and
deterministically owns one class; volumetric and temporal noise fields draw
from ranges shared by every class. Flows of one profile therefore look alike
to a lexical embedder, while nothing short of profile identity reveals the
class: a fresh classifier has no shortcut, and accuracy comes from
accumulating per-profile experience.
"""

from __future__ import annotations

import csv
import random
from typing import IO, Sequence

from .config import DEFAULT_CLASS_SET, DEFAULT_SCHEMA_MAP
from .flows import CANONICAL_FIELDS, FlowRecord, LabeledFlow
from .labels import ClassLabel

_PROTOCOLS = ("TCP", "UDP", "ICMP", "PROTO_47", "PROTO_89", "PROTO_132", "PROTO_2", "PROTO_33", "PROTO_94")


def _profile_record(rng: random.Random, profile: int) -> FlowRecord:
    p = profile
    return FlowRecord(
        src_ip=f"10.{(p * 3) % 250}.{(p * 11) % 250}.{1 + (p * 7) % 250}",
        dst_ip=f"172.{(p * 5) % 250}.{(p * 13) % 250}.{1 + (p * 17) % 250}",
        dst_port=1024 + (p * 131) % 50000,
        protocol=_PROTOCOLS[p % len(_PROTOCOLS)],
        in_bytes=100000 + rng.randrange(900000),
        out_bytes=50000 + rng.randrange(400000),
        in_pkts=500 + (p * 19) % 4000,
        out_pkts=200 + (p * 29) % 2000,
        flow_duration_ms=1000 + rng.randrange(60000),
        avg_iat_src_to_dst=round(rng.uniform(1, 500), 3),
        avg_iat_dst_to_src=round(rng.uniform(1, 250), 3),
        throughput_src_to_dst=round(rng.uniform(100, 90000), 3),
        throughput_dst_to_src=round(rng.uniform(100, 45000), 3),
        tcp_flags_aggregate=(p * 37) % 256,
    )


def synthetic_flows(
    n: int,
    seed: int,
    class_names: Sequence[str] | None = None,
    profiles_per_class: int = 40,
    flow_id_start: int = 0,
) -> list[LabeledFlow]:
    """A mixed stream of n labeled flows, deterministic for a fixed seed.

    Profile ``p`` always belongs to class ``p mod len(class_names)``.
    """
    names = list(class_names or DEFAULT_CLASS_SET)
    total_profiles = profiles_per_class * len(names)
    rng = random.Random(seed)
    flows = []
    for i in range(n):
        profile = rng.randrange(total_profiles)
        label = names[profile % len(names)]
        record = _profile_record(rng, profile)
        flows.append(
            LabeledFlow(record=record, label=ClassLabel(label), flow_id=flow_id_start + i)
        )
    return flows


# Columns a real export would carry beyond the bound schema; values are
# synthesized so ingestion has something to ignore.
_EXTRA_COLUMNS = (
    "L4_SRC_PORT",
    "L7_PROTO",
    "MIN_TTL",
    "MAX_TTL",
    "LONGEST_FLOW_PKT",
    "SHORTEST_FLOW_PKT",
    "RETRANSMITTED_IN_PKTS",
    "RETRANSMITTED_OUT_PKTS",
    "NUM_PKTS_UP_TO_128_BYTES",
    "Label",
)


def write_synthetic_csv(
    fh: IO[str],
    flows: Sequence[LabeledFlow],
    schema_map: dict[str, str] | None = None,
) -> None:
    """Render flows as a many-column CSV export bound by the schema map."""
    schema = schema_map or DEFAULT_SCHEMA_MAP
    feature_columns = [schema[f] for f in CANONICAL_FIELDS]
    header = feature_columns + [schema["label"]] + list(_EXTRA_COLUMNS)
    writer = csv.writer(fh)
    writer.writerow(header)
    rng = random.Random(0xC0FFEE)
    for flow in flows:
        row = [str(getattr(flow.record, f)) for f in CANONICAL_FIELDS]
        row.append(flow.label.name)
        row.extend(str(rng.randrange(1000)) for _ in range(len(_EXTRA_COLUMNS) - 1))
        row.append("1" if flow.label.name != "Benign" else "0")
        writer.writerow(row)
