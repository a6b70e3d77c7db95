"""Human-readable detection rules induced from misclassifications."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .labels import ClassLabel, label_from_json, label_to_json

MAX_RULE_CHARS = 1000
TRUNCATION_MARKER = "...[truncated]"

# Shape every rule must follow. Free-form agent output that does not match
# gets wrapped into this template by the induction step.
RULE_PATTERN = re.compile(
    r"^IF\s.+\sTHEN\s+class=.+;\s*previously misclassified as\s.+", re.DOTALL
)


@dataclass(frozen=True)
class RuleText:
    """One stored rule: condition text plus the error pair it came from."""

    text: str
    target_class: ClassLabel
    confused_with: ClassLabel

    def __post_init__(self):
        if not self.text:
            raise ValueError("rule text must be non-empty")
        if len(self.text) > MAX_RULE_CHARS:
            raise ValueError("rule text exceeds the length cap; use make_rule")

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "target_class": label_to_json(self.target_class),
            "confused_with": label_to_json(self.confused_with),
        }

    @staticmethod
    def from_json(obj: dict) -> "RuleText":
        return RuleText(
            text=obj["text"],
            target_class=label_from_json(obj["target_class"]),
            confused_with=label_from_json(obj["confused_with"]),
        )


def truncate_rule_text(text: str) -> str:
    if len(text) <= MAX_RULE_CHARS:
        return text
    keep = MAX_RULE_CHARS - len(TRUNCATION_MARKER)
    return text[:keep] + TRUNCATION_MARKER


def conforms_to_template(text: str) -> bool:
    return bool(RULE_PATTERN.match(text.strip()))


def make_rule(text: str, target_class: ClassLabel, confused_with: ClassLabel) -> RuleText:
    """Build a RuleText, enforcing the length cap with a visible marker."""
    return RuleText(
        text=truncate_rule_text(text),
        target_class=target_class,
        confused_with=confused_with,
    )
