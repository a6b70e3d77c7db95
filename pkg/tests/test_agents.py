from __future__ import annotations

import numpy as np
import pytest

from flowmem.agents import (
    MockRuleInducer,
    MockState,
    MockTrafficClassifier,
    RemoteChatAgent,
    build_classification_prompt,
    build_induction_prompt,
    classify,
    induce_rule,
    parse_label,
)
from flowmem.embedding import HashEmbedder
from flowmem.errors import AgentUnavailableError, ResponseTimeoutError
from flowmem.flows import NUMERIC_FIELDS, to_canonical_json
from flowmem.labels import ClassLabel
from flowmem.library import ExperienceLibrary, Hit, NO_CONTEXT
from flowmem.rules import MAX_RULE_CHARS, TRUNCATION_MARKER
from flowmem.synthetic import synthetic_flows

from conftest import fixture_record, simple_rule, unit_embedding

FLOW_JSON = to_canonical_json(fixture_record())


def make_hit(similarity: float = 0.93) -> Hit:
    library = ExperienceLibrary(dim=8)
    rng = np.random.RandomState(0)
    entry_id = library.insert(
        unit_embedding(rng, 8), simple_rule(), ClassLabel("DoS"), ClassLabel("DDoS"), 0
    )
    return Hit(entry=library.entry(entry_id), similarity=similarity)


class TestClassificationPrompt:
    def test_no_context_renders_the_epsilon_branch(self, class_set):
        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        assert "No relevant past experience." in prompt.user_text
        assert prompt.user_text.startswith(FLOW_JSON)
        assert prompt.kind == "classify"

    def test_hit_renders_rule_and_similarity(self, class_set):
        hit = make_hit(0.93)
        prompt = build_classification_prompt(FLOW_JSON, hit, class_set)
        assert hit.entry.rule.text in prompt.user_text
        assert "0.93" in prompt.user_text

    def test_system_text_enumerates_each_class_exactly_once(self, class_set):
        import re

        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        for name in class_set.names:
            assert len(re.findall(rf"\b{name}\b", prompt.system_text)) == 1
        assert "LABEL: <class>" in prompt.system_text

    def test_deterministic(self, class_set):
        a = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        b = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        assert a.system_text == b.system_text
        assert a.user_text == b.user_text

    def test_distinct_rules_produce_distinct_prompts(self, class_set):
        hit_a = make_hit()
        hit_b = Hit(entry=hit_a.entry, similarity=hit_a.similarity)
        other_rule_entry = make_hit()
        object.__setattr__(other_rule_entry.entry.rule, "text", "IF x THEN class=DoS; previously misclassified as DDoS; key features: x")
        a = build_classification_prompt(FLOW_JSON, hit_a, class_set)
        b = build_classification_prompt(FLOW_JSON, other_rule_entry, class_set)
        assert a.user_text != b.user_text


class TestInductionPrompt:
    def test_contains_error_pair(self):
        prompt = build_induction_prompt(
            FLOW_JSON, ClassLabel("DoS"), ClassLabel("DDoS"), NO_CONTEXT
        )
        assert "predicted: DoS" in prompt.user_text
        assert "actual: DDoS" in prompt.user_text
        assert prompt.kind == "induce"

    def test_hit_quotes_prior_rule(self):
        hit = make_hit()
        prompt = build_induction_prompt(FLOW_JSON, ClassLabel("DoS"), ClassLabel("DDoS"), hit)
        assert "Previous related experience:" in prompt.user_text
        assert hit.entry.rule.text in prompt.user_text

    def test_identical_inputs_identical_prompts(self):
        a = build_induction_prompt(FLOW_JSON, ClassLabel("DoS"), ClassLabel("DDoS"), NO_CONTEXT)
        b = build_induction_prompt(FLOW_JSON, ClassLabel("DoS"), ClassLabel("DDoS"), NO_CONTEXT)
        assert (a.system_text, a.user_text) == (b.system_text, b.user_text)

    def test_correct_prediction_is_a_precondition_violation(self):
        with pytest.raises(ValueError):
            build_induction_prompt(FLOW_JSON, ClassLabel("DoS"), ClassLabel("DoS"), NO_CONTEXT)


class TestParseLabel:
    def test_exact_label_line(self, class_set):
        label, status = parse_label("LABEL: Benign", class_set)
        assert label == ClassLabel("Benign")
        assert status == "exact"

    def test_exact_is_case_insensitive(self, class_set):
        label, status = parse_label("label: ddos\nbecause of rate", class_set)
        assert label == ClassLabel("DDoS")
        assert status == "exact"

    def test_unknown_label_line_is_exact(self, class_set):
        label, status = parse_label("LABEL: UNKNOWN\nNo idea.", class_set)
        assert label.is_unknown
        assert status == "exact"

    def test_fuzzy_whole_word(self, class_set):
        label, status = parse_label("This looks like a reconnaissance sweep.", class_set)
        assert label == ClassLabel("Reconnaissance")
        assert status == "fuzzy"

    def test_fuzzy_earliest_position_wins(self, class_set):
        label, status = parse_label("maybe DoS, though DDoS fits too", class_set)
        assert label == ClassLabel("DoS")
        assert status == "fuzzy"

    def test_word_boundaries_respected(self, class_set):
        # "DDoSer" must not match DDoS; "DoS" inside "DDoS" must not match
        label, status = parse_label("a DDoSer toolkit", class_set)
        assert status == "unparsed"

    def test_unparsed_keeps_excerpt(self, class_set):
        label, status = parse_label("insufficient information", class_set)
        assert status == "unparsed"
        assert label.is_unknown
        assert label.name == "insufficient information"

    def test_garbage_label_line_falls_through_to_fuzzy(self, class_set):
        label, status = parse_label("LABEL: Maybe-Benign-ish\nBenign traffic.", class_set)
        assert label == ClassLabel("Benign")
        assert status == "fuzzy"

    def test_never_fabricates_off_schema_class(self, class_set):
        for raw in ("LABEL: Exfiltration", "looks like exfiltration", ""):
            label, _ = parse_label(raw, class_set)
            assert label.is_unknown or label in class_set


class FakeChatService:
    def __init__(self, reply: str = "LABEL: DDoS\nHigh packet rate.", fail_times: int = 0):
        self.reply = reply
        self.fail_times = fail_times
        self.payloads: list[dict] = []

    def __call__(self, url, payload, headers, timeout):
        if self.fail_times > 0:
            self.fail_times -= 1
            raise ConnectionError("down")
        self.payloads.append(payload)
        return {"choices": [{"message": {"content": self.reply}}]}


class TestRemoteChatAgent:
    def make(self, service, **kwargs):
        return RemoteChatAgent(
            endpoint="https://chat.example/v1/chat/completions",
            model_name="reasoner-large",
            transport=service,
            sleeper=lambda _: None,
            **kwargs,
        )

    def test_wire_format_fixes_temperature_at_zero(self, class_set):
        service = FakeChatService()
        agent = self.make(service)
        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        verdict = classify(agent, prompt)
        payload = service.payloads[0]
        assert payload["temperature"] == 0.0
        assert payload["model"] == "reasoner-large"
        assert payload["messages"][0]["role"] == "system"
        assert payload["messages"][1]["content"] == prompt.user_text
        assert verdict.label == ClassLabel("DDoS")
        assert verdict.parse_status == "exact"

    def test_unavailable_after_retries(self, class_set):
        agent = self.make(FakeChatService(fail_times=99), retries=3)
        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        with pytest.raises(AgentUnavailableError):
            classify(agent, prompt)

    def test_timeout_maps_to_response_timeout(self, class_set):
        def timing_out(url, payload, headers, timeout):
            raise TimeoutError("too slow")

        agent = self.make(timing_out)
        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        with pytest.raises(ResponseTimeoutError):
            classify(agent, prompt)


class TestMockClassifier:
    def test_cold_start_is_unknown_exact(self, class_set):
        state = MockState(class_set, dim=64)
        agent = MockTrafficClassifier(state, HashEmbedder(dim=64))
        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        verdict = classify(agent, prompt)
        assert verdict.label.is_unknown
        assert verdict.parse_status == "exact"

    def test_follows_retrieved_rule(self, class_set):
        state = MockState(class_set, dim=8)
        agent = MockTrafficClassifier(state, HashEmbedder(dim=8))
        prompt = build_classification_prompt(FLOW_JSON, make_hit(), class_set)
        verdict = classify(agent, prompt)
        assert verdict.label == ClassLabel("DDoS")  # the rule's target class

    def test_nearest_centroid_matches_independent_computation(self, class_set):
        dim = 64
        embedder = HashEmbedder(dim=dim)
        state = MockState(class_set, dim=dim)
        flows = synthetic_flows(80, seed=5)
        observed = []
        for flow in flows:
            embedding = embedder.embed(to_canonical_json(flow.record))
            state.observe(flow.record, embedding, flow.label)
            observed.append((embedding, flow.label))

        query_flow = synthetic_flows(3, seed=99)[2]
        query_json = to_canonical_json(query_flow.record)
        query = embedder.embed(query_json)

        # independent nearest-centroid computation
        sums: dict[str, np.ndarray] = {}
        counts: dict[str, int] = {}
        for embedding, label in observed:
            sums.setdefault(label.name, np.zeros(dim)).__iadd__(embedding.values.astype(np.float64))
            counts[label.name] = counts.get(label.name, 0) + 1
        best_name, best_sim = None, -2.0
        for name in class_set.names:
            center = sums[name] / counts[name]
            sim = float(
                np.dot(query.values.astype(np.float64), center)
                / (np.linalg.norm(query.values) * np.linalg.norm(center))
            )
            if sim > best_sim:
                best_name, best_sim = name, sim

        agent = MockTrafficClassifier(state, embedder)
        prompt = build_classification_prompt(query_json, NO_CONTEXT, class_set)
        verdict = classify(agent, prompt)
        assert verdict.label == ClassLabel(best_name)


class TestMockState:
    def test_single_observation_centroid_equals_embedding(self, class_set):
        embedder = HashEmbedder(dim=32)
        state = MockState(class_set, dim=32)
        flow = synthetic_flows(1, seed=1)[0]
        embedding = embedder.embed(to_canonical_json(flow.record))
        state.observe(flow.record, embedding, flow.label)
        centroid = state.centroid(flow.label)
        assert np.allclose(centroid, embedding.values.astype(np.float64))

    def test_two_observations_centroid_is_their_mean(self, class_set):
        embedder = HashEmbedder(dim=32)
        state = MockState(class_set, dim=32)
        flows = synthetic_flows(30, seed=2, class_names=["DoS"])
        first, second = flows[0], flows[1]
        e1 = embedder.embed(to_canonical_json(first.record))
        e2 = embedder.embed(to_canonical_json(second.record))
        state.observe(first.record, e1, first.label)
        state.observe(second.record, e2, second.label)
        expected = (e1.values.astype(np.float64) + e2.values.astype(np.float64)) / 2
        assert np.allclose(state.centroid(ClassLabel("DoS")), expected)

    def test_streaming_mean_matches_batch_mean_after_100(self, class_set):
        embedder = HashEmbedder(dim=48)
        state = MockState(class_set, dim=48)
        flows = synthetic_flows(100, seed=3, class_names=["Benign"])
        batch = []
        for flow in flows:
            embedding = embedder.embed(to_canonical_json(flow.record))
            state.observe(flow.record, embedding, flow.label)
            batch.append(embedding.values.astype(np.float64))
        assert np.allclose(
            state.centroid(ClassLabel("Benign")), np.mean(batch, axis=0), atol=1e-6
        )

    def test_feature_stats_match_batch_moments(self, class_set):
        state = MockState(class_set, dim=8)
        embedder = HashEmbedder(dim=8)
        flows = synthetic_flows(60, seed=4, class_names=["DDoS"])
        rows = []
        for flow in flows:
            embedding = embedder.embed(to_canonical_json(flow.record))
            state.observe(flow.record, embedding, flow.label)
            rows.append(flow.record.numeric_values())
        rows = np.asarray(rows)
        z = state.z_scores(flows[0].record, ClassLabel("DDoS"))
        expected = (np.asarray(flows[0].record.numeric_values()) - rows.mean(axis=0)) / rows.std(
            axis=0
        )
        assert np.allclose(z, expected, atol=1e-9)


class TestMockInducer:
    def observed_state(self, class_set) -> tuple[MockState, list]:
        embedder = HashEmbedder(dim=16)
        state = MockState(class_set, dim=16)
        flows = synthetic_flows(120, seed=6)
        for flow in flows:
            embedding = embedder.embed(to_canonical_json(flow.record))
            state.observe(flow.record, embedding, flow.label)
        return state, flows

    def test_rule_names_top_two_z_score_features(self, class_set):
        state, flows = self.observed_state(class_set)
        victim = flows[7]
        predicted = ClassLabel("DoS") if victim.label != ClassLabel("DoS") else ClassLabel("Benign")
        prompt = build_induction_prompt(
            to_canonical_json(victim.record), predicted, victim.label, NO_CONTEXT
        )
        rule, status = induce_rule(MockRuleInducer(state), prompt)
        assert status == "exact"

        # independent recomputation of the top-2 |z| features
        z = state.z_scores(victim.record, predicted)
        order = sorted(range(len(NUMERIC_FIELDS)), key=lambda i: (-abs(z[i]), i))
        expected = [NUMERIC_FIELDS[i] for i in order[:2]]
        assert rule.text.endswith("key features: " + ", ".join(expected))
        assert rule.target_class == victim.label
        assert rule.confused_with == predicted

    def test_rule_conforms_to_template(self, class_set):
        state, flows = self.observed_state(class_set)
        victim = flows[11]
        predicted = ClassLabel("Benign") if victim.label != ClassLabel("Benign") else ClassLabel("DoS")
        prompt = build_induction_prompt(
            to_canonical_json(victim.record), predicted, victim.label, NO_CONTEXT
        )
        rule, _ = induce_rule(MockRuleInducer(state), prompt)
        assert rule.text.startswith("IF ")
        assert f"THEN class={victim.label}" in rule.text
        assert f"previously misclassified as {predicted}" in rule.text


class TestInduceRule:
    class CannedAgent:
        def __init__(self, reply: str):
            self.reply = reply

        def complete(self, prompt):
            return self.reply

    def test_overlong_response_truncated_with_marker(self):
        long_text = (
            "IF in_bytes above everything THEN class=DDoS; previously "
            "misclassified as DoS; key features: " + "x" * 2000
        )
        prompt = build_induction_prompt(FLOW_JSON, ClassLabel("DoS"), ClassLabel("DDoS"), NO_CONTEXT)
        rule, status = induce_rule(self.CannedAgent(long_text), prompt)
        assert len(rule.text) == MAX_RULE_CHARS
        assert rule.text.endswith(TRUNCATION_MARKER)
        assert status == "exact"

    def test_freeform_response_wrapped_into_template(self):
        prompt = build_induction_prompt(FLOW_JSON, ClassLabel("DoS"), ClassLabel("DDoS"), NO_CONTEXT)
        rule, status = induce_rule(self.CannedAgent("the bytes look weird"), prompt)
        assert status == "unparsed"
        assert rule.text.startswith("IF (unstructured diagnosis) THEN class=DDoS")
        assert "the bytes look weird" in rule.text

    def test_kind_is_checked(self, class_set):
        prompt = build_classification_prompt(FLOW_JSON, NO_CONTEXT, class_set)
        with pytest.raises(ValueError):
            induce_rule(self.CannedAgent("x"), prompt)
