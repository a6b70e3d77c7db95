"""Two-phase orchestration: library construction, frozen evaluation, ablation.

Phase 1 is strictly sequential so that the library state seen by flow t+1
includes every rule induced up to flow t. Phase 2 never writes: the library
is opened read-only and its digest is recorded before and after. Offline
runs use mock agents, the hash embedder, and a zero clock, which makes every
report, transcript, and library file byte-reproducible from seed and config.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .agents import (
    AgentVerdict,
    MockRuleInducer,
    MockState,
    MockTrafficClassifier,
    Prompt,
    RemoteChatAgent,
    build_classification_prompt,
    build_induction_prompt,
    classify,
    induce_rule,
)
from .config import RunConfig, api_key_from_env
from .embedding import CachingEmbedder, HashEmbedder, RemoteEmbedder
from .errors import AgentUnavailableError, ConfigError, ResponseTimeoutError
from .flows import LabeledFlow, to_canonical_json
from .labels import ClassLabel, ClassSet
from .library import ExperienceLibrary, Hit, NO_CONTEXT, RetrievalResult
from .metrics import ConfusionMatrix, CurvePoint, MetricsReport, macro_metrics, windowed_curve

MODES = ("zero_shot", "library_only", "full")


def zero_clock() -> float:
    """Clock for deterministic offline runs; latencies read as 0."""
    return 0.0


@dataclass
class Components:
    embedder: CachingEmbedder
    classifier: object
    inducer: object
    mock_state: MockState | None
    clock: Callable[[], float]


def build_components(config: RunConfig) -> Components:
    class_set = ClassSet(config.class_set)
    if config.embedder.kind == "hash":
        embedder = CachingEmbedder(
            HashEmbedder(dim=config.embedder.dim, seed=config.embedder.hash_seed)
        )
    elif config.embedder.kind == "remote":
        embedder = CachingEmbedder(
            RemoteEmbedder(
                endpoint=config.embedder.endpoint,
                model_name=config.embedder.model_name,
                dim=config.embedder.dim,
                batch_size=config.embedder.batch_size,
                api_key=api_key_from_env(config.embedder.api_key_env),
            )
        )
    else:
        raise ConfigError(f"unknown embedder kind {config.embedder.kind!r}")

    if config.agents.kind == "mock":
        state = MockState(class_set, config.embedder.dim)
        classifier: object = MockTrafficClassifier(state, embedder)
        inducer: object = MockRuleInducer(state)
        clock: Callable[[], float] = zero_clock
    elif config.agents.kind == "remote_llm":
        agent = RemoteChatAgent(
            endpoint=config.agents.endpoint,
            model_name=config.agents.model_name,
            max_response_tokens=config.agents.max_response_tokens,
            timeout_s=config.agents.timeout_s,
            retries=config.agents.retries,
            api_key=api_key_from_env(config.agents.api_key_env),
        )
        state = None
        classifier = agent
        inducer = agent
        clock = time.perf_counter
    else:
        raise ConfigError(f"unknown agent kind {config.agents.kind!r}")
    return Components(
        embedder=embedder,
        classifier=classifier,
        inducer=inducer,
        mock_state=state if config.agents.kind == "mock" else None,
        clock=clock,
    )


@dataclass
class FlowOutcome:
    flow_id: int
    true_label: ClassLabel
    predicted: ClassLabel | None
    parse_status: str | None
    retrieval_hit: bool
    retrieval_similarity: float | None
    retrieved_entry_id: int | None
    induced_rule_id: int | None
    library_size: int
    latency_ms: dict[str, float]
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "flow_id": self.flow_id,
            "true_label": self.true_label.display(),
            "predicted": None if self.predicted is None else self.predicted.display(),
            "parse_status": self.parse_status,
            "retrieval_hit": self.retrieval_hit,
            "retrieval_similarity": self.retrieval_similarity,
            "retrieved_entry_id": self.retrieved_entry_id,
            "induced_rule_id": self.induced_rule_id,
            "library_size": self.library_size,
            "latency_ms": self.latency_ms,
            "error": self.error,
        }

    @staticmethod
    def from_json(obj: dict, class_set: ClassSet) -> "FlowOutcome":
        def to_label(name: str | None) -> ClassLabel | None:
            if name is None:
                return None
            resolved = class_set.resolve(name)
            return resolved if resolved is not None else ClassLabel.unknown(name)

        true_label = to_label(obj["true_label"])
        assert true_label is not None
        return FlowOutcome(
            flow_id=obj["flow_id"],
            true_label=true_label,
            predicted=to_label(obj["predicted"]),
            parse_status=obj["parse_status"],
            retrieval_hit=obj["retrieval_hit"],
            retrieval_similarity=obj["retrieval_similarity"],
            retrieved_entry_id=obj["retrieved_entry_id"],
            induced_rule_id=obj["induced_rule_id"],
            library_size=obj["library_size"],
            latency_ms=dict(obj["latency_ms"]),
            error=obj["error"],
        )


@dataclass
class RunReport:
    kind: str  # "build" | "evaluate"
    mode: str
    config: dict
    config_hash: str
    totals: dict
    library: dict
    metrics: dict | None
    curve: list[CurvePoint] = field(default_factory=list)
    outcomes: list[FlowOutcome] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "config": self.config,
            "config_hash": self.config_hash,
            "totals": self.totals,
            "library": self.library,
            "metrics": self.metrics,
            "curve": [p.to_json() for p in self.curve],
            "outcomes": [o.to_json() for o in self.outcomes],
        }

    def metrics_report(self) -> MetricsReport | None:
        if self.metrics is None:
            return None
        return MetricsReport(
            accuracy=self.metrics["accuracy"],
            macro_precision=self.metrics["macro_precision"],
            macro_recall=self.metrics["macro_recall"],
            macro_f1=self.metrics["macro_f1"],
            per_class=self.metrics["per_class"],
        )


def dump_report(report: RunReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def dump_curve_csv(curve: Sequence[CurvePoint], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("sequence_end,window_macro_f1,cumulative_macro_f1,library_size\n")
        for point in curve:
            fh.write(
                f"{point.sequence_end},{point.window_macro_f1:.6f},"
                f"{point.cumulative_macro_f1:.6f},{point.library_size}\n"
            )


class _Transcript:
    """JSON Lines audit log of every raw agent exchange.

    Fresh runs truncate; resumed runs append after the checkpointed offset.
    """

    def __init__(self, path: str | None, mode: str = "w"):
        self._path = path
        self._fh = open(path, mode, encoding="utf-8") if path else None

    @staticmethod
    def prompt_hash(prompt: Prompt) -> str:
        blob = prompt.system_text + "\0" + prompt.user_text
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def record(self, flow_id: int, kind: str, prompt: Prompt, raw_text: str, parse_status: str) -> None:
        if self._fh is None:
            return
        line = json.dumps(
            {
                "flow_id": flow_id,
                "kind": kind,
                "prompt_sha256": self.prompt_hash(prompt),
                "raw_text": raw_text,
                "parse_status": parse_status,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        self._fh.write(line + "\n")

    def offset(self) -> int:
        if self._fh is None:
            return 0
        self._fh.flush()
        return self._fh.tell()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _truncate_file(path: str | None, size: int) -> None:
    if path and os.path.exists(path):
        with open(path, "r+b") as fh:
            fh.truncate(size)


def _metrics_or_none(outcomes: list[FlowOutcome], class_set: ClassSet) -> dict | None:
    classified = [o for o in outcomes if o.error is None]
    if not classified:
        return None
    cm = ConfusionMatrix(class_set)
    for outcome in classified:
        assert outcome.predicted is not None
        cm.accumulate(outcome.true_label, outcome.predicted)
    return macro_metrics(cm).to_json()


def _curve_from_outcomes(
    outcomes: list[FlowOutcome], window: int, class_set: ClassSet
) -> list[CurvePoint]:
    classified = [o for o in outcomes if o.error is None]
    pairs = [(o.true_label, o.predicted) for o in classified]
    sizes = [o.library_size for o in classified]
    return windowed_curve(pairs, window, class_set, library_sizes=sizes)  # type: ignore[arg-type]


def _classify_one(
    flow: LabeledFlow,
    config: RunConfig,
    components: Components,
    class_set: ClassSet,
    library: ExperienceLibrary | None,
    mode: str,
) -> tuple[Prompt, AgentVerdict | None, RetrievalResult, dict[str, float], str | None]:
    """Shared per-flow classification path: serialize, embed, retrieve, ask."""
    clock = components.clock
    latency: dict[str, float] = {}
    flow_json = to_canonical_json(flow.record)

    t0 = clock()
    embedding = components.embedder.embed(flow_json)
    latency["embed"] = (clock() - t0) * 1000.0

    t0 = clock()
    if mode == "zero_shot" or library is None:
        retrieval: RetrievalResult = NO_CONTEXT
    else:
        retrieval = library.retrieve(embedding, config.tau)
    latency["retrieve"] = (clock() - t0) * 1000.0

    prompt = build_classification_prompt(flow_json, retrieval, class_set)
    t0 = clock()
    try:
        verdict: AgentVerdict | None = classify(components.classifier, prompt)
        error = None
    except (AgentUnavailableError, ResponseTimeoutError) as exc:
        verdict = None
        error = f"{type(exc).__name__}: {exc}"
    latency["classify"] = (clock() - t0) * 1000.0
    return prompt, verdict, retrieval, latency, error


def run_build(
    flows: Sequence[LabeledFlow],
    config: RunConfig,
    components: Components | None = None,
    library: ExperienceLibrary | None = None,
    *,
    library_path: str | None = None,
    transcript_path: str | None = None,
    checkpoint_path: str | None = None,
    stop_after: int | None = None,
) -> RunReport:
    """Phase 1: sequential pass over the build stream.

    In full mode every misclassification is analyzed and its rule appended
    to the library before the next flow is processed. zero_shot and
    library_only passes share the loop but never induce, which is what the
    ablation harness and the no-library baseline curve run on.
    """
    mode = config.ablation_mode
    if mode not in MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}")
    if components is None:
        components = build_components(config)
    class_set = ClassSet(config.class_set)
    clock = components.clock

    if library is None and mode == "full":
        library = ExperienceLibrary(
            dim=config.embedder.dim,
            embedder_fingerprint=components.embedder.fingerprint,
        )
    if mode == "library_only" and library is None:
        raise ConfigError("library_only mode requires an existing library")
    if mode == "zero_shot" and library is not None:
        raise ConfigError("zero_shot mode forbids a library")

    outcomes: list[FlowOutcome] = []
    tallies = {
        "classified": 0,
        "errored": 0,
        "misclassified": 0,
        "inductions": 0,
        "induction_failures": 0,
        "unparsed_rules": 0,
    }
    start_index = 0
    resumed = False

    # resume from a matching checkpoint, replaying mock observations
    if checkpoint_path and os.path.exists(checkpoint_path):
        resumed = True
        with open(checkpoint_path, "r", encoding="utf-8") as fh:
            state = json.load(fh)
        if state["config_hash"] != config.config_hash():
            raise ConfigError("checkpoint was written by a different configuration")
        start_index = state["processed"]
        outcomes = [FlowOutcome.from_json(o, class_set) for o in state["outcomes"]]
        tallies = state["tallies"]
        _truncate_file(transcript_path, state["transcript_bytes"])
        if mode == "full" and library_path and os.path.exists(library_path):
            library = ExperienceLibrary.load(library_path)
        if components.mock_state is not None and mode == "full":
            for flow in flows[:start_index]:
                flow_json = to_canonical_json(flow.record)
                embedding = components.embedder.embed(flow_json)
                components.mock_state.observe(flow.record, embedding, flow.label)

    size_before = 0 if library is None else (library.size - tallies["inductions"])
    transcript = _Transcript(transcript_path, mode="a" if resumed else "w")

    def save_checkpoint(processed: int) -> None:
        if not checkpoint_path:
            return
        if library is not None and library_path:
            library.save(library_path)
        blob = {
            "config_hash": config.config_hash(),
            "processed": processed,
            "outcomes": [o.to_json() for o in outcomes],
            "tallies": tallies,
            "transcript_bytes": transcript.offset(),
        }
        tmp = checkpoint_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, sort_keys=True)
        os.replace(tmp, checkpoint_path)

    stopped_early = False
    try:
        for seq in range(start_index, len(flows)):
            if stop_after is not None and seq >= stop_after:
                stopped_early = True
                break
            flow = flows[seq]
            prompt, verdict, retrieval, latency, error = _classify_one(
                flow, config, components, class_set, library, mode
            )
            hit = isinstance(retrieval, Hit)
            induced_rule_id: int | None = None

            if verdict is None:
                tallies["errored"] += 1
            else:
                transcript.record(
                    flow.flow_id, "classify", prompt, verdict.raw_text, verdict.parse_status
                )
                tallies["classified"] += 1
                wrong = verdict.label != flow.label
                if wrong:
                    tallies["misclassified"] += 1
                if wrong and mode == "full":
                    assert library is not None
                    induction_prompt = build_induction_prompt(
                        to_canonical_json(flow.record), verdict.label, flow.label, retrieval
                    )
                    t0 = clock()
                    try:
                        rule, rule_status = induce_rule(components.inducer, induction_prompt)
                    except (AgentUnavailableError, ResponseTimeoutError) as exc:
                        rule = None
                        rule_status = f"{type(exc).__name__}"
                        tallies["induction_failures"] += 1
                    latency["induce"] = (clock() - t0) * 1000.0
                    if rule is not None:
                        if rule_status == "unparsed":
                            tallies["unparsed_rules"] += 1
                        embedding = components.embedder.embed(to_canonical_json(flow.record))
                        induced_rule_id = library.insert(
                            key=embedding,
                            rule=rule,
                            predicted=verdict.label,
                            actual=flow.label,
                            source_flow_id=flow.flow_id,
                            created_seq=seq,
                        )
                        transcript.record(
                            flow.flow_id, "induce", induction_prompt, rule.text, rule_status
                        )
                        tallies["inductions"] += 1

            if components.mock_state is not None and mode == "full":
                embedding = components.embedder.embed(to_canonical_json(flow.record))
                components.mock_state.observe(flow.record, embedding, flow.label)

            outcomes.append(
                FlowOutcome(
                    flow_id=flow.flow_id,
                    true_label=flow.label,
                    predicted=None if verdict is None else verdict.label,
                    parse_status=None if verdict is None else verdict.parse_status,
                    retrieval_hit=hit,
                    retrieval_similarity=retrieval.similarity if hit else None,
                    retrieved_entry_id=retrieval.entry.entry_id if hit else None,
                    induced_rule_id=induced_rule_id,
                    library_size=0 if library is None else library.size,
                    latency_ms=latency,
                    error=error,
                )
            )
            processed = seq + 1
            if checkpoint_path and processed % config.checkpoint_interval == 0:
                save_checkpoint(processed)

        if stopped_early:
            assert stop_after is not None
            save_checkpoint(stop_after)
        else:
            if library is not None and library_path:
                library.save(library_path)
            if checkpoint_path and os.path.exists(checkpoint_path):
                os.remove(checkpoint_path)
    finally:
        transcript.close()

    size_after = 0 if library is None else library.size
    report = RunReport(
        kind="build",
        mode=mode,
        config=config.resolved(),
        config_hash=config.config_hash(),
        totals={
            "flows": len(outcomes),
            "checkpointed": stopped_early,
            **tallies,
        },
        library={
            "size_before": size_before,
            "size_after": size_after,
            "fingerprint": None if library is None else library.embedder_fingerprint,
            "content_digest": None if library is None else library.content_digest(),
        },
        metrics=_metrics_or_none(outcomes, class_set),
        curve=_curve_from_outcomes(outcomes, config.curve_window, class_set),
        outcomes=outcomes,
    )
    return report


def run_evaluate(
    flows: Sequence[LabeledFlow],
    config: RunConfig,
    components: Components | None = None,
    library: ExperienceLibrary | None = None,
    *,
    transcript_path: str | None = None,
) -> RunReport:
    """Phase 2: classification-only pass against a frozen library.

    The rule inducer never runs and the library is asserted unchanged. With
    mock agents and a fixed seed the report is byte-reproducible.
    """
    mode = config.ablation_mode
    if mode == "full":
        mode = "library_only"
    if mode not in ("zero_shot", "library_only"):
        raise ConfigError(f"evaluation mode must be zero_shot or library_only, got {mode!r}")
    if mode == "library_only" and library is None:
        raise ConfigError("library_only evaluation requires a library")
    if mode == "zero_shot" and library is not None:
        raise ConfigError("zero_shot evaluation forbids a library")
    if components is None:
        components = build_components(config)
    class_set = ClassSet(config.class_set)

    size_before = 0 if library is None else library.size
    digest_before = None if library is None else library.content_digest()
    transcript = _Transcript(transcript_path)

    def evaluate_one(
        flow: LabeledFlow,
    ) -> tuple[FlowOutcome, Prompt, AgentVerdict | None]:
        prompt, verdict, retrieval, latency, error = _classify_one(
            flow, config, components, class_set, library, mode
        )
        hit = isinstance(retrieval, Hit)
        return FlowOutcome(
            flow_id=flow.flow_id,
            true_label=flow.label,
            predicted=None if verdict is None else verdict.label,
            parse_status=None if verdict is None else verdict.parse_status,
            retrieval_hit=hit,
            retrieval_similarity=retrieval.similarity if hit else None,
            retrieved_entry_id=retrieval.entry.entry_id if hit else None,
            induced_rule_id=None,
            library_size=size_before,
            latency_ms=latency,
            error=error,
        ), prompt, verdict

    outcomes: list[FlowOutcome] = []
    try:
        limit = config.agents.in_flight_limit
        if limit > 1:
            with ThreadPoolExecutor(max_workers=limit) as pool:
                results = list(pool.map(evaluate_one, flows))
        else:
            results = [evaluate_one(flow) for flow in flows]
        for outcome, prompt, verdict in results:
            if verdict is not None:
                transcript.record(
                    outcome.flow_id, "classify", prompt, verdict.raw_text, verdict.parse_status
                )
            outcomes.append(outcome)
    finally:
        transcript.close()

    size_after = 0 if library is None else library.size
    digest_after = None if library is None else library.content_digest()
    if size_before != size_after or digest_before != digest_after:
        raise RuntimeError("evaluation must not modify the library")

    classified = sum(1 for o in outcomes if o.error is None)
    errored = len(outcomes) - classified
    return RunReport(
        kind="evaluate",
        mode=mode,
        config=config.resolved(),
        config_hash=config.config_hash(),
        totals={
            "flows": len(outcomes),
            "classified": classified,
            "errored": errored,
            "misclassified": sum(
                1 for o in outcomes if o.error is None and o.predicted != o.true_label
            ),
        },
        library={
            "size_before": size_before,
            "size_after": size_after,
            "fingerprint": None if library is None else library.embedder_fingerprint,
            "content_digest_before": digest_before,
            "content_digest_after": digest_after,
        },
        metrics=_metrics_or_none(outcomes, class_set),
        curve=[],
        outcomes=outcomes,
    )


@dataclass
class AblationResult:
    zero_shot: RunReport
    full: RunReport
    library_only: RunReport
    library: ExperienceLibrary

    def reports(self) -> list[tuple[str, RunReport]]:
        return [
            ("zero_shot", self.zero_shot),
            ("library_only", self.library_only),
            ("full", self.full),
        ]


def run_ablation(
    flows: Sequence[LabeledFlow],
    config: RunConfig,
    *,
    transcript_dir: str | None = None,
) -> AblationResult:
    """Run the three configurations over one identical flow sequence.

    zero_shot: no retrieval and no library. full: retrieval plus continuous
    rule induction (builds the library). library_only: retrieval against the
    library the full pass just built, frozen. Each pass gets fresh agents so
    nothing leaks between configurations except the library file itself.
    """

    def sub_config(mode: str) -> RunConfig:
        clone = copy.deepcopy(config)
        clone.ablation_mode = mode
        return clone

    def transcript(name: str) -> str | None:
        if transcript_dir is None:
            return None
        return os.path.join(transcript_dir, f"transcript_{name}.jsonl")

    zero_config = sub_config("zero_shot")
    zero_report = run_build(
        flows, zero_config, build_components(zero_config),
        transcript_path=transcript("zero_shot"),
    )

    full_config = sub_config("full")
    full_components = build_components(full_config)
    library = ExperienceLibrary(
        dim=full_config.embedder.dim,
        embedder_fingerprint=full_components.embedder.fingerprint,
    )
    full_report = run_build(
        flows, full_config, full_components, library,
        transcript_path=transcript("full"),
    )

    library.read_only = True
    lib_config = sub_config("library_only")
    lib_report = run_evaluate(
        flows, lib_config, build_components(lib_config), library,
        transcript_path=transcript("library_only"),
    )
    return AblationResult(
        zero_shot=zero_report, full=full_report, library_only=lib_report, library=library
    )
