"""Canonical state documents, include/exclude field rules, and structural diffs.

A document is JSON-shaped data: dicts with string keys, lists, strings,
integers, booleans, None, and Decimal for non-integral numbers. Canonical
form sorts dict keys, normalizes decimals (trailing zeros stripped, -0
becomes 0), and preserves list order. Equality is type-aware: int 1,
Decimal("1.0") and True are three different values even though Python's
``==`` would conflate them.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fnmatch import fnmatchcase
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

Path = tuple[str, ...]


class DocumentError(Exception):
    """Raised for documents or rules that fall outside the supported shape."""


def _normalize_decimal(value: Decimal) -> Decimal:
    if not value.is_finite():
        raise DocumentError(f"non-finite number in document: {value}")
    if value == 0:
        return Decimal(0)
    return value.normalize()


def canonicalize(value: Any) -> Any:
    """Rebuild a document in canonical form (also a deep copy)."""
    return _walk(value, (), _INCLUDE_ALL)


def parse_json_document(text: str) -> Any:
    """Parse JSON with exact numerics: floats become Decimal, ints stay int."""
    try:
        raw = json.loads(text, parse_float=Decimal)
    except (json.JSONDecodeError, InvalidOperation) as exc:
        raise DocumentError(f"invalid JSON document: {exc}") from exc
    return canonicalize(raw)


def canonical_json(value: Any) -> str:
    """Deterministic JSON text for a canonical document.

    Decimals are rendered as plain (non-scientific) number literals; an
    integral Decimal therefore serializes identically to the int, so a
    JSON round-trip degrades Decimal(1) to int 1. Comparisons made after a
    round-trip see both sides degraded the same way.
    """
    out: list[str] = []
    _render(value, out)
    return "".join(out)


def _render(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, Decimal):
        out.append(format(value, "f"))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, Mapping):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _render(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _render(item, out)
        out.append("]")
    else:  # pragma: no cover - canonical docs cannot hold other types
        raise DocumentError(f"unsupported value in document: {type(value).__name__}")


# --------------------------------------------------------------------- rules


@dataclass(frozen=True)
class FieldRule:
    """One dotted-path pattern with an include/exclude action.

    Each pattern segment is an fnmatch glob matched against one path segment
    (list items use their decimal index). A pattern whose last segment is
    ``*`` also matches the parent node itself, so excluding ``meta.*`` prunes
    the whole ``meta`` subtree including the key.
    """

    pattern: str
    action: str = "include"
    unordered: bool = False

    def __post_init__(self) -> None:
        if self.action not in ("include", "exclude"):
            raise DocumentError(f"rule action must be include or exclude, got {self.action!r}")
        if not self.pattern:
            raise DocumentError("rule pattern must be non-empty")

    @cached_property
    def segments(self) -> tuple[str, ...]:
        return tuple(self.pattern.split("."))

    def matches(self, path: Path) -> bool:
        segs = self.segments
        if len(segs) == len(path):
            return all(fnmatchcase(p, s) for p, s in zip(path, segs))
        if len(segs) == len(path) + 1 and segs[-1] == "*":
            return all(fnmatchcase(p, s) for p, s in zip(path, segs[:-1]))
        return False


@dataclass(frozen=True)
class FieldRuleSet:
    """Ordered rules; the first match wins, unmatched paths are included."""

    rules: tuple[FieldRule, ...] = ()

    @classmethod
    def from_config(cls, entries: Iterable[Mapping] | None) -> "FieldRuleSet":
        if not entries:
            return cls()
        rules = []
        for entry in entries:
            if not isinstance(entry, Mapping) or "path" not in entry:
                raise DocumentError(f"field rule needs a 'path': {entry!r}")
            rules.append(
                FieldRule(
                    pattern=str(entry["path"]),
                    action=str(entry.get("action", "include")),
                    unordered=bool(entry.get("unordered", False)),
                )
            )
        return cls(tuple(rules))

    @cached_property
    def fingerprint(self) -> str:
        payload = canonical_json(
            [
                {"action": r.action, "path": r.pattern, "unordered": r.unordered}
                for r in self.rules
            ]
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def first_match(self, path: Path) -> FieldRule | None:
        for rule in self.rules:
            if rule.matches(path):
                return rule
        return None

    def includes(self, path: Path) -> bool:
        rule = self.first_match(path)
        return rule is None or rule.action == "include"


_INCLUDE_ALL = FieldRuleSet()


def filter_document(value: Any, rules: FieldRuleSet) -> Any:
    """Apply field rules and return the canonical filtered document."""
    return _walk(value, (), rules)


def _walk(value: Any, path: Path, rules: FieldRuleSet) -> Any:
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        # Floats only appear via in-process callbacks; go through the repr to
        # avoid binary-fraction noise like 0.1000000000000000055511151231.
        return _normalize_decimal(Decimal(str(value)))
    if isinstance(value, Decimal):
        return _normalize_decimal(value)
    if isinstance(value, Mapping):
        out = {}
        for key in sorted(value):
            if not isinstance(key, str):
                raise DocumentError(f"document keys must be strings, got {key!r}")
            child_path = path + (key,)
            if not rules.includes(child_path):
                continue
            out[key] = _walk(value[key], child_path, rules)
        return out
    if isinstance(value, (list, tuple)):
        items = []
        for index, item in enumerate(value):
            child_path = path + (str(index),)
            if not rules.includes(child_path):
                continue
            items.append(_walk(item, child_path, rules))
        rule = rules.first_match(path)
        if rule is not None and rule.unordered:
            items.sort(key=canonical_json)
        return items
    raise DocumentError(f"unsupported value in document: {type(value).__name__}")


# ------------------------------------------------------------------ equality


def documents_equal(a: Any, b: Any) -> bool:
    """Type-aware deep equality over canonical documents."""
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, int) or isinstance(b, int):
        return isinstance(a, int) and isinstance(b, int) and a == b
    if isinstance(a, Decimal) or isinstance(b, Decimal):
        return isinstance(a, Decimal) and isinstance(b, Decimal) and a == b
    if isinstance(a, str) or isinstance(b, str):
        return isinstance(a, str) and isinstance(b, str) and a == b
    if isinstance(a, Mapping) or isinstance(b, Mapping):
        if not (isinstance(a, Mapping) and isinstance(b, Mapping)):
            return False
        if set(a) != set(b):
            return False
        return all(documents_equal(a[k], b[k]) for k in a)
    if isinstance(a, Sequence) or isinstance(b, Sequence):
        if not (isinstance(a, Sequence) and isinstance(b, Sequence)):
            return False
        if len(a) != len(b):
            return False
        return all(documents_equal(x, y) for x, y in zip(a, b))
    raise DocumentError(  # pragma: no cover - canonical docs cannot hold other types
        f"unsupported value in document: {type(a).__name__}"
    )


# ---------------------------------------------------------------------- diff


@dataclass(frozen=True)
class DiffEntry:
    path: Path
    kind: str  # "added" | "removed" | "changed"
    old: Any = None
    new: Any = None

    def to_wire(self) -> dict:
        out: dict = {"path": ".".join(self.path), "kind": self.kind}
        if self.kind in ("removed", "changed"):
            out["old"] = self.old
        if self.kind in ("added", "changed"):
            out["new"] = self.new
        return out


def diff_documents(a: Any, b: Any) -> list[DiffEntry]:
    """Structural diff between canonical documents; empty iff equal."""
    entries: list[DiffEntry] = []
    _diff(a, b, (), entries)
    return entries


def _diff(a: Any, b: Any, path: Path, entries: list[DiffEntry]) -> None:
    a_is_map = isinstance(a, Mapping)
    b_is_map = isinstance(b, Mapping)
    a_is_seq = isinstance(a, Sequence) and not isinstance(a, str)
    b_is_seq = isinstance(b, Sequence) and not isinstance(b, str)
    if a_is_map and b_is_map:
        for key in sorted(set(a) | set(b)):
            child = path + (key,)
            if key not in a:
                entries.append(DiffEntry(child, "added", new=b[key]))
            elif key not in b:
                entries.append(DiffEntry(child, "removed", old=a[key]))
            else:
                _diff(a[key], b[key], child, entries)
        return
    if a_is_seq and b_is_seq:
        common = min(len(a), len(b))
        for index in range(common):
            _diff(a[index], b[index], path + (str(index),), entries)
        for index in range(common, len(b)):
            entries.append(DiffEntry(path + (str(index),), "added", new=b[index]))
        for index in range(common, len(a)):
            entries.append(DiffEntry(path + (str(index),), "removed", old=a[index]))
        return
    if not documents_equal(a, b):
        entries.append(DiffEntry(path, "changed", old=a, new=b))


def apply_diff(doc: Any, entries: Sequence[DiffEntry]) -> Any:
    """Apply a diff produced by ``diff_documents(doc, other)``; returns other.

    Entries are reordered internally so list removals happen tail-first and
    list additions tail-last, which is the only order in which the recorded
    indices stay valid.
    """
    result = canonicalize(doc)

    def sort_key(entry: DiffEntry) -> tuple:
        if entry.kind == "removed":
            return (0, -len(entry.path), _index_key(entry.path, negate=True))
        if entry.kind == "changed":
            return (1, 0, 0)
        return (2, len(entry.path), _index_key(entry.path))

    for entry in sorted(entries, key=sort_key):
        result = _apply_entry(result, entry)
    return result


def _index_key(path: Path, negate: bool = False) -> int:
    last = path[-1] if path else "0"
    value = int(last) if last.isdigit() else 0
    return -value if negate else value


def _apply_entry(doc: Any, entry: DiffEntry) -> Any:
    if not entry.path:
        if entry.kind != "changed":  # pragma: no cover - diff never emits these
            raise DocumentError("add/remove at document root is not applicable")
        return canonicalize(entry.new)
    parent = doc
    for segment in entry.path[:-1]:
        parent = parent[int(segment)] if isinstance(parent, list) else parent[segment]
    last = entry.path[-1]
    if isinstance(parent, list):
        index = int(last)
        if entry.kind == "removed":
            if index != len(parent) - 1:
                raise DocumentError(f"cannot remove non-tail list index {index}")
            parent.pop()
        elif entry.kind == "added":
            if index != len(parent):
                raise DocumentError(f"cannot add at non-tail list index {index}")
            parent.append(canonicalize(entry.new))
        else:
            parent[index] = canonicalize(entry.new)
    else:
        if entry.kind == "removed":
            parent.pop(last, None)
        else:
            parent[last] = canonicalize(entry.new)
    return doc
