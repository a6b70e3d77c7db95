"""Traffic class labels and the configured class set.

Label identity is case-insensitive on the canonical name. Labels that could
not be resolved to a configured class are represented by the Unknown
sentinel; every Unknown compares equal regardless of the raw text it
carries, so tallies treat them as a single bucket.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence


class ClassLabel:
    __slots__ = ("name", "is_unknown")

    def __init__(self, name: str, is_unknown: bool = False):
        self.name = name
        self.is_unknown = is_unknown

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassLabel):
            return NotImplemented
        if self.is_unknown or other.is_unknown:
            return self.is_unknown and other.is_unknown
        return self.name.casefold() == other.name.casefold()

    def __hash__(self) -> int:
        if self.is_unknown:
            return hash(("flowmem.unknown",))
        return hash(self.name.casefold())

    def __repr__(self) -> str:
        if self.is_unknown:
            return f"ClassLabel.unknown({self.name!r})"
        return f"ClassLabel({self.name!r})"

    def __str__(self) -> str:
        return "UNKNOWN" if self.is_unknown else self.name

    @staticmethod
    def unknown(excerpt: str = "") -> "ClassLabel":
        return ClassLabel(excerpt or "UNKNOWN", is_unknown=True)

    def display(self) -> str:
        """Name used in reports: canonical text, or UNKNOWN for the sentinel."""
        return str(self)


UNKNOWN = ClassLabel.unknown()


class ClassSet:
    """Ordered set of target traffic classes.

    Order is significant: it drives prompt rendering, fuzzy-parse
    tie-breaking, and metric column layout.
    """

    def __init__(self, names: Sequence[str]):
        if not names:
            raise ValueError("class set must not be empty")
        seen: set[str] = set()
        labels: list[ClassLabel] = []
        for name in names:
            canonical = name.strip()
            if not canonical:
                raise ValueError("class names must be non-empty")
            key = canonical.casefold()
            if key in seen:
                raise ValueError(f"duplicate class name {canonical!r}")
            seen.add(key)
            labels.append(ClassLabel(canonical))
        self._labels = tuple(labels)
        self._by_key = {label.name.casefold(): label for label in self._labels}

    @property
    def labels(self) -> tuple[ClassLabel, ...]:
        return self._labels

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(label.name for label in self._labels)

    def resolve(self, text: str) -> ClassLabel | None:
        """Map raw label text to its configured class, or None if off-schema."""
        return self._by_key.get(text.strip().casefold())

    def index(self, label: ClassLabel) -> int:
        for i, candidate in enumerate(self._labels):
            if candidate == label:
                return i
        raise KeyError(label)

    def __iter__(self) -> Iterator[ClassLabel]:
        return iter(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, item: object) -> bool:
        if isinstance(item, ClassLabel):
            return not item.is_unknown and item.name.casefold() in self._by_key
        if isinstance(item, str):
            return item.strip().casefold() in self._by_key
        return False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassSet):
            return NotImplemented
        return self.names == other.names

    def __repr__(self) -> str:
        return f"ClassSet({list(self.names)!r})"


def label_to_json(label: ClassLabel) -> dict:
    return {"name": label.name, "unknown": label.is_unknown}


def label_from_json(obj: dict) -> ClassLabel:
    return ClassLabel(obj["name"], is_unknown=bool(obj.get("unknown", False)))


def resolve_all(names: Iterable[str]) -> ClassSet:
    return ClassSet(list(names))
