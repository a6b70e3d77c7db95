"""Classification and rule-induction agents behind one text interface.

An agent exposes a single ``complete(prompt) -> str`` method. The remote
variant calls a chat-completion endpoint at temperature 0.0; the mock
variants are pure functions of their accumulated observations, which makes
whole closed-loop runs replayable offline. All label extraction goes through
``parse_label`` so remote drift and mock output are handled identically.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .embedding import FlowEmbedding
from .errors import AgentUnavailableError, ResponseTimeoutError
from .flows import NUMERIC_FIELDS, flow_record_from_json, FlowRecord
from .labels import ClassLabel, ClassSet
from .library import Hit, NO_CONTEXT, RetrievalResult
from .rules import RuleText, conforms_to_template, make_rule

SEPARATOR = "\n\n"
NO_CONTEXT_TEXT = "No relevant past experience."
PRIOR_RULE_HEADER = "Previous related experience:"


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    kind: str  # "classify" | "induce"
    flow_json: str
    class_set: ClassSet | None = None
    retrieval: RetrievalResult | None = None
    predicted: ClassLabel | None = None
    actual: ClassLabel | None = None


@dataclass(frozen=True)
class AgentVerdict:
    label: ClassLabel
    raw_text: str
    parse_status: str  # "exact" | "fuzzy" | "unparsed"


def _render_retrieval(retrieval: RetrievalResult) -> str:
    if isinstance(retrieval, Hit):
        return (
            f"Relevant past experience (similarity {retrieval.similarity:.2f}): "
            f"{retrieval.entry.rule.text}"
        )
    return NO_CONTEXT_TEXT


def build_classification_prompt(
    flow_json: str, retrieval: RetrievalResult, class_set: ClassSet
) -> Prompt:
    """Flow JSON concatenated with the retrieved context, if any."""
    if not len(class_set):
        raise ValueError("class_set must be non-empty")
    class_list = ", ".join(class_set.names)
    system_text = (
        "You are a network traffic classification agent for flow-level "
        "intrusion detection. Classify the flow described by the JSON object "
        f"into exactly one of these classes: {class_list}. "
        "Answer with exactly one line 'LABEL: <class>' followed by one short "
        "rationale line."
    )
    user_text = flow_json + SEPARATOR + _render_retrieval(retrieval)
    return Prompt(
        system_text=system_text,
        user_text=user_text,
        kind="classify",
        flow_json=flow_json,
        class_set=class_set,
        retrieval=retrieval,
    )


def build_induction_prompt(
    flow_json: str,
    predicted: ClassLabel,
    actual: ClassLabel,
    retrieval: RetrievalResult,
) -> Prompt:
    """Misclassified flow plus its error pair and any prior retrieved rule."""
    if predicted == actual:
        raise ValueError("induction requires a misclassification (predicted != actual)")
    system_text = (
        "You are an error analysis agent for flow-level intrusion detection. "
        "A flow was misclassified. Compare its features with what is typical "
        "for the true class, isolate the features that separate the true "
        "class from the wrong prediction (for example an unusually high "
        "avg_iat_src_to_dst), and state one rule in exactly this form: "
        "IF <feature conditions> THEN class=<true class>; previously "
        "misclassified as <predicted class>; key features: <comma-separated "
        "feature names>."
    )
    if isinstance(retrieval, Hit):
        context = f"{PRIOR_RULE_HEADER} {retrieval.entry.rule.text}"
    else:
        context = "No previous related experience."
    user_text = (
        flow_json
        + SEPARATOR
        + f"predicted: {predicted}"
        + "\n"
        + f"actual: {actual}"
        + SEPARATOR
        + context
    )
    return Prompt(
        system_text=system_text,
        user_text=user_text,
        kind="induce",
        flow_json=flow_json,
        retrieval=retrieval,
        predicted=predicted,
        actual=actual,
    )


_LABEL_LINE_RE = re.compile(r"^\s*LABEL:\s*(?P<name>.+?)\s*$", re.IGNORECASE | re.MULTILINE)


def parse_label(raw: str, class_set: ClassSet) -> tuple[ClassLabel, str]:
    """Three-stage label extraction.

    1. a 'LABEL: <name>' line whose name matches a class exactly
       (case-insensitive); the literal name UNKNOWN is accepted here too;
    2. the earliest whole-word occurrence of any class name, ties broken by
       class-set order;
    3. otherwise the Unknown sentinel carrying the first 40 characters.
    """
    text = raw or ""
    match = _LABEL_LINE_RE.search(text)
    if match:
        name = match.group("name")
        resolved = class_set.resolve(name)
        if resolved is not None:
            return resolved, "exact"
        if name.strip().casefold() == "unknown":
            return ClassLabel.unknown(), "exact"
    best: tuple[int, int] | None = None
    for idx, label in enumerate(class_set):
        word = re.search(rf"\b{re.escape(label.name)}\b", text, re.IGNORECASE)
        if word and (best is None or (word.start(), idx) < best):
            best = (word.start(), idx)
    if best is not None:
        return class_set.labels[best[1]], "fuzzy"
    return ClassLabel.unknown(text[:40]), "unparsed"


def classify(agent, prompt: Prompt) -> AgentVerdict:
    if prompt.kind != "classify":
        raise ValueError("classify requires a classification prompt")
    raw = agent.complete(prompt)
    label, status = parse_label(raw, prompt.class_set)
    return AgentVerdict(label=label, raw_text=raw, parse_status=status)


def induce_rule(agent, prompt: Prompt) -> tuple[RuleText, str]:
    """Run the induction agent and coerce its answer into a stored rule.

    Returns the rule plus a parse status: free-form responses that do not
    follow the template are wrapped into it rather than discarded.
    """
    if prompt.kind != "induce":
        raise ValueError("induce_rule requires an induction prompt")
    raw = agent.complete(prompt)
    text = (raw or "").strip()
    if text and conforms_to_template(text):
        return make_rule(text, prompt.actual, prompt.predicted), "exact"
    wrapped = (
        f"IF (unstructured diagnosis) THEN class={prompt.actual}; "
        f"previously misclassified as {prompt.predicted}; "
        f"key features: unspecified; notes: {text}"
    )
    return make_rule(wrapped, prompt.actual, prompt.predicted), "unparsed"


# --- remote chat agent -------------------------------------------------------


def _default_post(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import requests

    response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


class RemoteChatAgent:
    """Chat-completion client; one stateless request per flow.

    Wire format: POST {"model", "temperature": 0.0, "messages": [system, user]}
    and read the first choice's message content.
    """

    kind = "remote_llm"

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        max_response_tokens: int = 256,
        timeout_s: float = 60.0,
        retries: int = 3,
        backoff_s: float = 0.5,
        api_key: str | None = None,
        transport: Callable[[str, dict, dict, float], dict] | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.model_name = model_name
        self.max_response_tokens = max_response_tokens
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self._headers = {"Content-Type": "application/json"}
        if api_key:
            self._headers["Authorization"] = f"Bearer {api_key}"
        self._post = transport or _default_post
        self._sleep = sleeper

    def complete(self, prompt: Prompt) -> str:
        payload = {
            "model": self.model_name,
            "temperature": 0.0,
            "max_tokens": self.max_response_tokens,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                body = self._post(self.endpoint, payload, self._headers, self.timeout_s)
                return body["choices"][0]["message"]["content"]
            except TimeoutError as exc:
                raise ResponseTimeoutError(str(exc)) from exc
            except Exception as exc:
                if type(exc).__name__ in ("Timeout", "ReadTimeout", "ConnectTimeout"):
                    raise ResponseTimeoutError(str(exc)) from exc
                last_error = exc
                if attempt + 1 < self.retries:
                    self._sleep(self.backoff_s * (2**attempt))
        raise AgentUnavailableError(
            f"chat agent failed after {self.retries} attempts: {last_error}"
        )


# --- mock agents -------------------------------------------------------------


class _RunningStats:
    """Welford mean/variance accumulator over the numeric feature vector."""

    def __init__(self, width: int):
        self.count = 0
        self.mean = np.zeros(width, dtype=np.float64)
        self.m2 = np.zeros(width, dtype=np.float64)

    def update(self, values: np.ndarray) -> None:
        self.count += 1
        delta = values - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (values - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / self.count)


class MockState:
    """Shared observation memory for the two mock agents.

    Holds per-class embedding centroids for the classifier and per-class
    plus global numeric-feature statistics for the inducer. Updated only
    during library construction, after the ground truth is revealed.
    """

    def __init__(self, class_set: ClassSet, dim: int):
        self.class_set = class_set
        self.dim = dim
        width = len(NUMERIC_FIELDS)
        self._centroid_sums: dict[str, np.ndarray] = {}
        self._centroid_counts: dict[str, int] = {}
        self._feature_stats: dict[str, _RunningStats] = {}
        self._global_stats = _RunningStats(width)

    def observe(self, record: FlowRecord, embedding: FlowEmbedding, label: ClassLabel) -> None:
        key = label.name.casefold()
        if key not in self._centroid_sums:
            self._centroid_sums[key] = np.zeros(self.dim, dtype=np.float64)
            self._centroid_counts[key] = 0
            self._feature_stats[key] = _RunningStats(len(NUMERIC_FIELDS))
        self._centroid_sums[key] += embedding.values.astype(np.float64)
        self._centroid_counts[key] += 1
        values = np.asarray(record.numeric_values(), dtype=np.float64)
        self._feature_stats[key].update(values)
        self._global_stats.update(values)

    @property
    def observation_count(self) -> int:
        return self._global_stats.count

    def centroid(self, label: ClassLabel) -> np.ndarray | None:
        key = label.name.casefold()
        count = self._centroid_counts.get(key, 0)
        if count == 0:
            return None
        return self._centroid_sums[key] / count

    def nearest_centroid(self, embedding: FlowEmbedding) -> tuple[ClassLabel, float] | None:
        """Highest-cosine class centroid; ties break by class-set order."""
        best: tuple[float, int] | None = None
        query = embedding.values.astype(np.float64)
        qnorm = float(np.linalg.norm(query))
        if qnorm == 0.0:
            return None
        for idx, label in enumerate(self.class_set):
            center = self.centroid(label)
            if center is None:
                continue
            cnorm = float(np.linalg.norm(center))
            if cnorm == 0.0:
                continue
            sim = float(np.dot(query, center) / (qnorm * cnorm))
            if best is None or sim > best[0]:
                best = (sim, idx)
        if best is None:
            return None
        return self.class_set.labels[best[1]], best[0]

    def z_scores(self, record: FlowRecord, reference: ClassLabel) -> np.ndarray:
        """Feature z-scores against the reference class, else global, stats."""
        stats = self._feature_stats.get(reference.name.casefold())
        if stats is None or stats.count == 0:
            stats = self._global_stats
        values = np.asarray(record.numeric_values(), dtype=np.float64)
        std = stats.std()
        z = np.zeros_like(values)
        mask = std > 0
        z[mask] = (values[mask] - stats.mean[mask]) / std[mask]
        return z


class MockTrafficClassifier:
    """Deterministic stand-in for the remote classifier.

    Decision order: follow the retrieved rule's target class when context
    was injected, else the nearest observed class centroid, else UNKNOWN.
    """

    kind = "mock"

    def __init__(self, state: MockState, embedder):
        self._state = state
        self._embedder = embedder

    def complete(self, prompt: Prompt) -> str:
        retrieval = prompt.retrieval if prompt.retrieval is not None else NO_CONTEXT
        if isinstance(retrieval, Hit):
            target = retrieval.entry.rule.target_class
            return (
                f"LABEL: {target}\n"
                f"Follows retrieved experience (similarity {retrieval.similarity:.2f})."
            )
        if self._state.observation_count > 0:
            embedding = self._embedder.embed(prompt.flow_json)
            nearest = self._state.nearest_centroid(embedding)
            if nearest is not None:
                label, sim = nearest
                return f"LABEL: {label}\nNearest class profile (cosine {sim:.4f})."
        return "LABEL: UNKNOWN\nNo prior experience or observations."


class MockRuleInducer:
    """Deterministic stand-in for the remote error analyst.

    Names the two numeric features whose values deviate most (by absolute
    z-score) from what is typical for the class the flow was mistaken for.
    """

    kind = "mock"

    def __init__(self, state: MockState):
        self._state = state

    def complete(self, prompt: Prompt) -> str:
        record = flow_record_from_json(prompt.flow_json)
        z = self._state.z_scores(record, prompt.predicted)
        order = sorted(range(len(NUMERIC_FIELDS)), key=lambda i: (-abs(z[i]), i))
        top = order[:2]
        conditions = []
        for i in top:
            name = NUMERIC_FIELDS[i]
            if z[i] > 0:
                direction = "above"
            elif z[i] < 0:
                direction = "below"
            else:
                direction = "near"
            conditions.append(
                f"{name} {direction} the {prompt.predicted} profile (z={z[i]:+.2f})"
            )
        features = ", ".join(NUMERIC_FIELDS[i] for i in top)
        return (
            f"IF {' AND '.join(conditions)} THEN class={prompt.actual}; "
            f"previously misclassified as {prompt.predicted}; "
            f"key features: {features}"
        )
