from __future__ import annotations

import dataclasses
import json

import pytest

from flowmem.config import RunConfig
from flowmem.errors import AgentUnavailableError, ConfigError
from flowmem.flows import LabeledFlow
from flowmem.labels import ClassLabel
from flowmem.library import ExperienceLibrary, file_digest
from flowmem.pipeline import (
    Components,
    build_components,
    dump_report,
    run_ablation,
    run_build,
    run_evaluate,
)
from flowmem.synthetic import synthetic_flows

from conftest import fixture_record


def offline_config(**overrides) -> RunConfig:
    config = RunConfig()
    config.seed = 7
    config.tau = 0.5
    config.curve_window = 100
    config.checkpoint_interval = 50
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def report_bytes(report) -> bytes:
    return json.dumps(report.to_json(), sort_keys=True).encode()


class TestRunBuild:
    def test_empty_build_set(self):
        config = offline_config()
        report = run_build([], config)
        assert report.totals["flows"] == 0
        assert report.metrics is None
        assert report.library["size_before"] == 0
        assert report.library["size_after"] == 0
        assert report.curve == []

    def test_500_flow_stream_replay_audit(self):
        config = offline_config()
        flows = synthetic_flows(500, seed=7)
        report = run_build(flows, config)
        # every misclassification induced exactly one rule, and nothing else did
        misclassified = [
            o for o in report.outcomes if o.error is None and o.predicted != o.true_label
        ]
        induced = [o for o in report.outcomes if o.induced_rule_id is not None]
        assert len(induced) == len(misclassified)
        assert report.totals["inductions"] == len(induced)
        assert report.library["size_after"] == len(induced)
        assert report.totals["induction_failures"] == 0
        # rule ids appear in flow order and are dense
        assert [o.induced_rule_id for o in induced] == list(range(len(induced)))
        # the closed loop improves over the stream
        assert report.curve[-1].window_macro_f1 > report.curve[0].window_macro_f1

    def test_accounting_conservation(self):
        config = offline_config()
        flows = synthetic_flows(200, seed=11)
        report = run_build(flows, config)
        assert report.totals["classified"] + report.totals["errored"] == len(flows)
        assert report.totals["errored"] == 0

    def test_sequential_causality_on_near_duplicates(self):
        config = offline_config()
        base = fixture_record()
        near = dataclasses.replace(base, in_bytes=base.in_bytes + 1)
        flows = [
            LabeledFlow(record=base, label=ClassLabel("DDoS"), flow_id=0),
            LabeledFlow(record=near, label=ClassLabel("DDoS"), flow_id=1),
        ]
        report = run_build(flows, config)
        first, second = report.outcomes
        # flow 1: cold agent, no context, wrong verdict, rule induced
        assert not first.retrieval_hit
        assert first.predicted != first.true_label
        assert first.induced_rule_id == 0
        # flow 2 retrieves the rule induced one step earlier
        assert second.retrieval_hit
        assert second.retrieved_entry_id == 0
        assert second.retrieval_similarity >= config.tau
        assert second.predicted == second.true_label

    def test_unknown_verdicts_trigger_induction(self):
        config = offline_config()
        flows = synthetic_flows(5, seed=3)
        report = run_build(flows, config)
        first = report.outcomes[0]
        assert first.parse_status == "exact"
        assert first.predicted is not None and first.predicted.is_unknown
        assert first.induced_rule_id is not None

    def test_flaky_agent_counts_errors_and_conserves(self):
        config = offline_config()
        flows = synthetic_flows(60, seed=5)
        components = build_components(config)

        class Flaky:
            def __init__(self, inner):
                self.inner = inner
                self.calls = 0

            def complete(self, prompt):
                self.calls += 1
                if self.calls % 10 == 0:
                    raise AgentUnavailableError("synthetic outage")
                return self.inner.complete(prompt)

        components = Components(
            embedder=components.embedder,
            classifier=Flaky(components.classifier),
            inducer=components.inducer,
            mock_state=components.mock_state,
            clock=components.clock,
        )
        report = run_build(flows, config, components)
        assert report.totals["errored"] == 6
        assert report.totals["classified"] == 54
        assert report.totals["classified"] + report.totals["errored"] == len(flows)
        errored = [o for o in report.outcomes if o.error is not None]
        assert len(errored) == 6
        assert all(o.predicted is None for o in errored)

    def test_mode_rules_enforced(self):
        config = offline_config(ablation_mode="zero_shot")
        library = ExperienceLibrary(dim=config.embedder.dim)
        with pytest.raises(ConfigError):
            run_build([], config, library=library)
        config = offline_config(ablation_mode="library_only")
        with pytest.raises(ConfigError):
            run_build([], config)

    def test_zero_shot_build_never_retrieves_or_induces(self):
        config = offline_config(ablation_mode="zero_shot")
        flows = synthetic_flows(50, seed=9)
        report = run_build(flows, config)
        assert all(not o.retrieval_hit for o in report.outcomes)
        assert all(o.induced_rule_id is None for o in report.outcomes)
        assert report.library["size_after"] == 0


class TestReplayDeterminism:
    def test_two_builds_are_byte_identical(self, tmp_path):
        outputs = []
        for run in ("a", "b"):
            config = offline_config()
            library_path = str(tmp_path / f"lib_{run}.bin")
            transcript_path = str(tmp_path / f"transcript_{run}.jsonl")
            flows = synthetic_flows(300, seed=7)
            report = run_build(
                flows,
                config,
                library_path=library_path,
                transcript_path=transcript_path,
            )
            outputs.append(
                (
                    report_bytes(report),
                    file_digest(library_path),
                    open(transcript_path, "rb").read(),
                )
            )
        assert outputs[0][0] == outputs[1][0]
        assert outputs[0][1] == outputs[1][1]
        assert outputs[0][2] == outputs[1][2]

    def test_evaluate_twice_identical(self, tmp_path):
        config = offline_config()
        flows = synthetic_flows(200, seed=7)
        build_report = run_build(
            flows, config, library_path=str(tmp_path / "lib.bin")
        )
        assert build_report.library["size_after"] > 0
        eval_flows = synthetic_flows(80, seed=23, flow_id_start=5000)
        results = []
        for _ in range(2):
            library = ExperienceLibrary.load(str(tmp_path / "lib.bin"), read_only=True)
            eval_config = offline_config(ablation_mode="library_only")
            results.append(
                report_bytes(run_evaluate(eval_flows, eval_config, library=library))
            )
        assert results[0] == results[1]


class TestRunEvaluate:
    def build_library(self, tmp_path) -> str:
        config = offline_config()
        flows = synthetic_flows(300, seed=7)
        path = str(tmp_path / "lib.bin")
        run_build(flows, config, library_path=path)
        return path

    def test_library_file_untouched(self, tmp_path):
        path = self.build_library(tmp_path)
        digest_before = file_digest(path)
        library = ExperienceLibrary.load(path, read_only=True)
        config = offline_config(ablation_mode="library_only")
        eval_flows = synthetic_flows(100, seed=31, flow_id_start=9000)
        report = run_evaluate(eval_flows, config, library=library)
        assert file_digest(path) == digest_before
        assert report.library["size_before"] == report.library["size_after"]
        assert (
            report.library["content_digest_before"]
            == report.library["content_digest_after"]
        )

    def test_never_induces(self, tmp_path):
        path = self.build_library(tmp_path)
        library = ExperienceLibrary.load(path, read_only=True)
        config = offline_config(ablation_mode="library_only")
        eval_flows = synthetic_flows(100, seed=31, flow_id_start=9000)
        report = run_evaluate(eval_flows, config, library=library)
        assert all(o.induced_rule_id is None for o in report.outcomes)
        assert report.kind == "evaluate"

    def test_frozen_library_beats_cold_baseline(self, tmp_path):
        path = self.build_library(tmp_path)
        library = ExperienceLibrary.load(path, read_only=True)
        eval_flows = synthetic_flows(150, seed=41, flow_id_start=7000)
        lib_report = run_evaluate(
            eval_flows, offline_config(ablation_mode="library_only"), library=library
        )
        zero_report = run_evaluate(
            eval_flows, offline_config(ablation_mode="zero_shot"), library=None
        )
        assert lib_report.metrics["macro_f1"] > zero_report.metrics["macro_f1"]

    def test_mode_rules(self, tmp_path):
        with pytest.raises(ConfigError):
            run_evaluate([], offline_config(ablation_mode="library_only"), library=None)
        library = ExperienceLibrary(dim=384)
        with pytest.raises(ConfigError):
            run_evaluate([], offline_config(ablation_mode="zero_shot"), library=library)

    def test_parallel_evaluation_matches_sequential(self, tmp_path):
        path = self.build_library(tmp_path)
        eval_flows = synthetic_flows(60, seed=51, flow_id_start=8000)
        reports = []
        for limit in (1, 4):
            config = offline_config(ablation_mode="library_only")
            config.agents.in_flight_limit = limit
            library = ExperienceLibrary.load(path, read_only=True)
            reports.append(run_evaluate(eval_flows, config, library=library))
        a, b = reports
        assert [o.flow_id for o in a.outcomes] == [o.flow_id for o in b.outcomes]
        assert [str(o.predicted) for o in a.outcomes] == [
            str(o.predicted) for o in b.outcomes
        ]
        assert a.metrics == b.metrics


class TestCheckpointResume:
    def test_resumed_run_equals_uninterrupted(self, tmp_path):
        flows = synthetic_flows(120, seed=7)

        def paths(tag):
            return dict(
                library_path=str(tmp_path / f"lib_{tag}.bin"),
                transcript_path=str(tmp_path / f"tr_{tag}.jsonl"),
                checkpoint_path=str(tmp_path / f"ck_{tag}.json"),
            )

        straight = run_build(flows, offline_config(), **paths("straight"))

        interrupted = paths("resumed")
        partial = run_build(flows, offline_config(), stop_after=47, **interrupted)
        assert partial.totals["checkpointed"]
        assert partial.totals["flows"] == 47
        resumed = run_build(flows, offline_config(), **interrupted)

        assert report_bytes(resumed) == report_bytes(straight)
        assert file_digest(interrupted["library_path"]) == file_digest(
            paths("straight")["library_path"]
        )
        assert (
            open(interrupted["transcript_path"], "rb").read()
            == open(paths("straight")["transcript_path"], "rb").read()
        )

    def test_checkpoint_of_other_config_rejected(self, tmp_path):
        flows = synthetic_flows(60, seed=7)
        kwargs = dict(
            library_path=str(tmp_path / "lib.bin"),
            checkpoint_path=str(tmp_path / "ck.json"),
        )
        run_build(flows, offline_config(), stop_after=20, **kwargs)
        other = offline_config()
        other.tau = 0.9
        with pytest.raises(ConfigError):
            run_build(flows, other, **kwargs)


class TestRunAblation:
    def test_three_modes_share_flow_sequence_and_order(self):
        config = offline_config()
        flows = synthetic_flows(200, seed=7)
        result = run_ablation(flows, config)
        sequences = [
            [o.flow_id for o in report.outcomes]
            for report in (result.zero_shot, result.full, result.library_only)
        ]
        assert sequences[0] == sequences[1] == sequences[2]

    def test_library_only_beats_zero_shot(self):
        config = offline_config()
        flows = synthetic_flows(200, seed=7)
        result = run_ablation(flows, config)
        assert (
            result.library_only.metrics["macro_f1"]
            >= result.zero_shot.metrics["macro_f1"]
        )

    def test_modes_recorded_and_library_grows_only_in_full(self):
        config = offline_config()
        flows = synthetic_flows(150, seed=19)
        result = run_ablation(flows, config)
        assert result.zero_shot.mode == "zero_shot"
        assert result.full.mode == "full"
        assert result.library_only.mode == "library_only"
        assert result.zero_shot.library["size_after"] == 0
        assert result.full.library["size_after"] == result.library.size
        assert result.library_only.library["size_before"] == result.library.size


class TestReportSerialization:
    def test_dump_and_reload(self, tmp_path):
        config = offline_config()
        flows = synthetic_flows(50, seed=7)
        report = run_build(flows, config)
        path = str(tmp_path / "report.json")
        dump_report(report, path)
        data = json.loads(open(path).read())
        assert data["kind"] == "build"
        assert data["config_hash"] == config.config_hash()
        assert data["totals"]["flows"] == 50
        assert len(data["outcomes"]) == 50
        assert data["config"]["tau"] == config.tau

    def test_latencies_are_zero_under_the_offline_clock(self):
        config = offline_config()
        flows = synthetic_flows(10, seed=7)
        report = run_build(flows, config)
        for outcome in report.outcomes:
            assert all(v == 0.0 for v in outcome.latency_ms.values())
