"""NetFlow CSV ingestion: schema binding, normalization, canonical JSON, splits.

A dataset export may carry dozens of columns; a schema map binds each of the
14 canonical feature names (plus the label column) to a source column, so any
flow-level export can be ingested without code changes. Canonical JSON is
byte-stable: it is both the prompt payload and the embedding input, so equal
records must serialize identically.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

from .errors import (
    EmptyClassError,
    EmptyFileError,
    MissingColumnError,
    OutOfRangeError,
    RaggedRowError,
    UnparseableIPError,
)
from .labels import ClassLabel, ClassSet

# Canonical schema, in serialization order:
# 4 contextual + 4 volumetric + 3 temporal + 2 throughput + 1 flags.
CANONICAL_FIELDS: tuple[str, ...] = (
    "src_ip",
    "dst_ip",
    "dst_port",
    "protocol",
    "in_bytes",
    "out_bytes",
    "in_pkts",
    "out_pkts",
    "flow_duration_ms",
    "avg_iat_src_to_dst",
    "avg_iat_dst_to_src",
    "throughput_src_to_dst",
    "throughput_dst_to_src",
    "tcp_flags_aggregate",
)

INT_FIELDS = frozenset(
    {
        "dst_port",
        "in_bytes",
        "out_bytes",
        "in_pkts",
        "out_pkts",
        "flow_duration_ms",
        "tcp_flags_aggregate",
    }
)
REAL_FIELDS = frozenset(
    {
        "avg_iat_src_to_dst",
        "avg_iat_dst_to_src",
        "throughput_src_to_dst",
        "throughput_dst_to_src",
    }
)
# Fields with a numeric value, in schema order; used by the mock rule inducer.
NUMERIC_FIELDS: tuple[str, ...] = tuple(
    f for f in CANONICAL_FIELDS if f in INT_FIELDS or f in REAL_FIELDS
)

LABEL_KEY = "label"

# Upper bounds for fields with a bounded domain; out-of-domain values are
# normalized to 0 like any other invalid numeric.
_FIELD_MAX = {"dst_port": 65535, "tcp_flags_aggregate": 255}


@dataclass(frozen=True)
class FlowRecord:
    src_ip: str
    dst_ip: str
    dst_port: int
    protocol: str
    in_bytes: int
    out_bytes: int
    in_pkts: int
    out_pkts: int
    flow_duration_ms: int
    avg_iat_src_to_dst: float
    avg_iat_dst_to_src: float
    throughput_src_to_dst: float
    throughput_dst_to_src: float
    tcp_flags_aggregate: int

    def numeric_values(self) -> tuple[float, ...]:
        return tuple(float(getattr(self, f)) for f in NUMERIC_FIELDS)


@dataclass
class RawFlowRow:
    """One CSV record with every source column preserved."""

    columns: list[tuple[str, str]]
    line_number: int

    def value(self, column_name: str) -> str:
        for name, value in self.columns:
            if name == column_name:
                return value
        raise KeyError(column_name)


@dataclass
class LabeledFlow:
    record: FlowRecord
    label: ClassLabel
    flow_id: int


@dataclass
class IngestReport:
    """Audit counters for one ingestion pass; nothing is dropped silently."""

    rows_read: int = 0
    flows_ok: int = 0
    values_normalized: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)
    off_schema_labels: int = 0

    def reject(self, line_number: int, reason: str) -> None:
        self.rejected.append((line_number, reason))

    def to_json(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "flows_ok": self.flows_ok,
            "values_normalized": self.values_normalized,
            "rejected": [{"line": ln, "reason": r} for ln, r in self.rejected],
            "off_schema_labels": self.off_schema_labels,
        }


def open_dataset(path: str) -> IO[str]:
    """Open a CSV dataset; names ending in .gz are decompressed on the fly."""
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def parse_flow_csv(
    stream: Iterable[str],
    schema_map: dict[str, str],
    errors: list[tuple[int, str]] | None = None,
) -> Iterator[RawFlowRow]:
    """Lazily yield rows from a headered CSV.

    The header must contain every source column named by schema_map. Ragged
    rows raise RaggedRowError, or, when an errors sink is given, are recorded
    there with their line number and skipped so ingestion can continue.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFileError("no header record") from None
    header = [h.strip() for h in header]
    present = set(header)
    for source_column in schema_map.values():
        if source_column not in present:
            raise MissingColumnError(source_column)
    width = len(header)
    for row in reader:
        if not row:
            continue
        line_number = reader.line_num
        if len(row) != width:
            if errors is None:
                raise RaggedRowError(line_number, width, len(row))
            errors.append(
                (line_number, f"ragged row: expected {width} fields, got {len(row)}")
            )
            continue
        yield RawFlowRow(columns=list(zip(header, row)), line_number=line_number)


def normalize_protocol(proto_number: int) -> str:
    """Map an IANA protocol number to its categorical name."""
    if proto_number < 0 or proto_number > 255:
        raise OutOfRangeError(f"protocol number {proto_number} outside 0..255")
    if proto_number == 6:
        return "TCP"
    if proto_number == 17:
        return "UDP"
    if proto_number == 1:
        return "ICMP"
    return f"PROTO_{proto_number}"


def _parse_ipv4(value: str) -> str | None:
    parts = value.strip().split(".")
    if len(parts) != 4:
        return None
    octets = []
    for part in parts:
        if not part.isdigit():
            return None
        n = int(part)
        if n > 255:
            return None
        octets.append(str(n))
    return ".".join(octets)


def _normalize_numeric(raw: str, field_name: str, report: IngestReport | None) -> float:
    """Apply the replace-with-zero rule for missing/invalid numeric values."""

    def normalized() -> float:
        if report is not None:
            report.values_normalized += 1
        return 0.0

    text = raw.strip()
    if not text:
        return normalized()
    try:
        value = float(text)
    except ValueError:
        return normalized()
    if math.isnan(value) or math.isinf(value) or value < 0:
        return normalized()
    bound = _FIELD_MAX.get(field_name)
    if bound is not None and value > bound:
        return normalized()
    return value


_CATEGORICAL_PROTOCOLS = {"tcp": "TCP", "udp": "UDP", "icmp": "ICMP"}


def _normalize_protocol_value(raw: str, report: IngestReport | None) -> str:
    text = raw.strip()
    lowered = text.casefold()
    if lowered in _CATEGORICAL_PROTOCOLS:
        return _CATEGORICAL_PROTOCOLS[lowered]
    if lowered.startswith("proto_") and lowered[6:].isdigit():
        return f"PROTO_{int(lowered[6:])}"
    try:
        number = int(float(text))
    except ValueError:
        number = -1
    if 0 <= number <= 255:
        return normalize_protocol(number)
    if report is not None:
        report.values_normalized += 1
    return normalize_protocol(0)


def select_and_normalize(
    row: RawFlowRow,
    schema_map: dict[str, str],
    report: IngestReport | None = None,
) -> FlowRecord:
    """Project a raw row onto the 14-feature schema, normalizing bad values.

    Negative, non-numeric, or missing numeric values become 0 and are counted
    in the report. Unrecoverable IP addresses reject the whole row.
    """
    values: dict[str, object] = {}
    for ip_field in ("src_ip", "dst_ip"):
        raw = row.value(schema_map[ip_field])
        parsed = _parse_ipv4(raw)
        if parsed is None:
            raise UnparseableIPError(row.line_number, raw)
        values[ip_field] = parsed
    values["protocol"] = _normalize_protocol_value(
        row.value(schema_map["protocol"]), report
    )
    for field_name in NUMERIC_FIELDS:
        number = _normalize_numeric(
            row.value(schema_map[field_name]), field_name, report
        )
        values[field_name] = int(number) if field_name in INT_FIELDS else number
    return FlowRecord(**values)  # type: ignore[arg-type]


def _format_real(value: float) -> str:
    """Reals carry up to 6 fractional digits with trailing zeros trimmed."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def to_canonical_json(record: FlowRecord) -> str:
    """Serialize a record to its byte-stable single-line JSON form."""
    parts = []
    for field_name in CANONICAL_FIELDS:
        value = getattr(record, field_name)
        if isinstance(value, str):
            rendered = json.dumps(value)
        elif field_name in INT_FIELDS:
            rendered = str(int(value))
        else:
            rendered = _format_real(float(value))
        parts.append(f'"{field_name}":{rendered}')
    return "{" + ",".join(parts) + "}"


def flow_record_from_json(text: str) -> FlowRecord:
    obj = json.loads(text)
    values: dict[str, object] = {}
    for field_name in CANONICAL_FIELDS:
        raw = obj[field_name]
        if field_name in INT_FIELDS:
            values[field_name] = int(raw)
        elif field_name in REAL_FIELDS:
            values[field_name] = float(raw)
        else:
            values[field_name] = str(raw)
    return FlowRecord(**values)  # type: ignore[arg-type]


def iter_labeled_flows(
    stream: Iterable[str],
    schema_map: dict[str, str],
    class_set: ClassSet,
    report: IngestReport | None = None,
) -> Iterator[LabeledFlow]:
    """Parse, normalize, and label flows; flow ids are data-row ordinals.

    Rejected rows (bad IPs, ragged rows, off-schema labels) still consume an
    id so that ids stay stable however the ingest is filtered.
    """
    if report is None:
        report = IngestReport()
    ragged: list[tuple[int, str]] = []
    flow_id = -1
    label_column = schema_map[LABEL_KEY]
    for row in parse_flow_csv(stream, schema_map, errors=ragged):
        # ragged rows recorded by the parser precede this row; they consume ids too
        while ragged:
            report.reject(*ragged.pop(0))
            flow_id += 1
            report.rows_read += 1
        flow_id += 1
        report.rows_read += 1
        label = class_set.resolve(row.value(label_column))
        if label is None:
            report.off_schema_labels += 1
            report.reject(row.line_number, f"off-schema label {row.value(label_column)!r}")
            continue
        try:
            record = select_and_normalize(row, schema_map, report)
        except UnparseableIPError as exc:
            report.reject(row.line_number, str(exc))
            continue
        report.flows_ok += 1
        yield LabeledFlow(record=record, label=label, flow_id=flow_id)
    while ragged:
        report.reject(*ragged.pop(0))
        report.rows_read += 1


@dataclass
class DatasetSplit:
    build_set: list[LabeledFlow]
    eval_set: list[LabeledFlow]
    seed: int
    per_class_quota_build: int
    per_class_quota_eval: int
    per_class_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    deficits: dict[str, int] = field(default_factory=dict)

    def to_manifest(self) -> dict:
        return {
            "seed": self.seed,
            "per_class_quota_build": self.per_class_quota_build,
            "per_class_quota_eval": self.per_class_quota_eval,
            "per_class_counts": self.per_class_counts,
            "deficits": self.deficits,
            "build_flow_ids": [f.flow_id for f in self.build_set],
            "eval_flow_ids": [f.flow_id for f in self.eval_set],
        }


def stratified_split(
    flows: Iterable[LabeledFlow],
    quota_build: int,
    quota_eval: int,
    seed: int,
    class_set: ClassSet,
) -> DatasetSplit:
    """Per-class uniform sampling into disjoint build and eval sets.

    Total quotas are divided evenly across classes. A single pass keeps one
    reservoir of combined size per class, so arbitrarily large inputs sample
    in O(quota) memory. Classes short of their combined quota fill the build
    side first; the shortfall is recorded as a deficit.
    """
    if quota_build < 0 or quota_eval < 0:
        raise ValueError("quotas must be non-negative")
    n_classes = len(class_set)
    qb = quota_build // n_classes
    qe = quota_eval // n_classes
    k = qb + qe

    rng = random.Random(seed)
    reservoirs: dict[str, list[LabeledFlow]] = {name: [] for name in class_set.names}
    seen: dict[str, int] = {name: 0 for name in class_set.names}
    keys = {name.casefold(): name for name in class_set.names}

    for flow in flows:
        name = keys[flow.label.name.casefold()]
        seen[name] += 1
        if k == 0:
            continue
        bucket = reservoirs[name]
        if len(bucket) < k:
            bucket.append(flow)
        else:
            j = rng.randrange(seen[name])
            if j < k:
                bucket[j] = flow

    build: list[LabeledFlow] = []
    eval_: list[LabeledFlow] = []
    per_class_counts: dict[str, dict[str, int]] = {}
    deficits: dict[str, int] = {}
    for name in class_set.names:
        if seen[name] == 0:
            raise EmptyClassError(name)
        bucket = reservoirs[name]
        class_rng = random.Random(f"{seed}:{name}")
        class_rng.shuffle(bucket)
        n_build = min(qb, len(bucket))
        n_eval = min(qe, len(bucket) - n_build)
        build.extend(bucket[:n_build])
        eval_.extend(bucket[n_build : n_build + n_eval])
        per_class_counts[name] = {"build": n_build, "eval": n_eval}
        deficit = (qb - n_build) + (qe - n_eval)
        if deficit > 0:
            deficits[name] = deficit

    # interleave classes so downstream sequential passes see a mixed stream
    random.Random(f"{seed}:build").shuffle(build)
    random.Random(f"{seed}:eval").shuffle(eval_)

    build_ids = {f.flow_id for f in build}
    assert all(f.flow_id not in build_ids for f in eval_), "split sets overlap"

    return DatasetSplit(
        build_set=build,
        eval_set=eval_,
        seed=seed,
        per_class_quota_build=qb,
        per_class_quota_eval=qe,
        per_class_counts=per_class_counts,
        deficits=deficits,
    )


def load_flows_by_ids(
    stream: Iterable[str],
    schema_map: dict[str, str],
    class_set: ClassSet,
    flow_ids: Sequence[int],
    report: IngestReport | None = None,
) -> list[LabeledFlow]:
    """Re-read a dataset and return flows in the order the id list dictates."""
    wanted = set(flow_ids)
    found: dict[int, LabeledFlow] = {}
    for flow in iter_labeled_flows(stream, schema_map, class_set, report):
        if flow.flow_id in wanted:
            found[flow.flow_id] = flow
            if len(found) == len(wanted):
                break
    missing = wanted - found.keys()
    if missing:
        raise ValueError(f"manifest flow ids not found in dataset: {sorted(missing)[:5]}")
    return [found[i] for i in flow_ids]
