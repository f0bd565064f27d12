"""Attribute matching and threshold decisions.

Scores are exact rationals. A record's score is the sum of weights of the
attribute types it shares with the disclosed claims; derived fields
(controller-inferred values such as an age range) only add up to
``derived_cap`` in total and, by default, can never carry a match on their own.
"""

from __future__ import annotations

import enum
import hmac
import json
import re
from dataclasses import dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

from .canonical import CanonicalValue, attribute, match_tag
from .credentials import Mode, Presentation, Verdict
from .datastore import DataRecord, Field, Sensitivity
from .encoding import canonical_json


class PolicyError(ValueError):
    pass


class ModeMismatch(Exception):
    pass


class Level(str, enum.Enum):
    UNIQUE = "unique"
    THRESHOLD = "threshold"
    NONE = "none"


def as_fraction(x: Any) -> Fraction:
    if isinstance(x, bool):
        raise PolicyError("boolean is not a number")
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)):
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError) as exc:
            raise PolicyError(f"not a rational: {x!r}") from exc
    if isinstance(x, float):
        return Fraction(repr(x))
    raise PolicyError(f"not a rational: {x!r}")


def _fraction_text(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class MatchPolicy:
    weights: Mapping[str, Fraction] = field(default_factory=dict)
    unique_types: frozenset[str] = frozenset({"pid.unique_id"})
    base_threshold: Fraction = Fraction(3)
    sensitivity_multiplier: Fraction = Fraction(3, 2)
    derived_cap: Fraction = Fraction(1, 2)
    derived_standalone_forbidden: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", {k: as_fraction(v) for k, v in self.weights.items()})
        object.__setattr__(self, "unique_types", frozenset(self.unique_types))
        for name in ("base_threshold", "sensitivity_multiplier", "derived_cap"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        for k, w in self.weights.items():
            attribute(k)
            if w < 0:
                raise PolicyError(f"negative weight for {k}")
        for k in self.unique_types:
            attribute(k)
        if self.sensitivity_multiplier < 1:
            raise PolicyError("sensitivity_multiplier must be >= 1")
        if self.derived_cap < 0:
            raise PolicyError("derived_cap must be >= 0")
        if self.derived_standalone_forbidden and not self.derived_cap < self.base_threshold:
            raise PolicyError("derived_cap must be below base_threshold when derived matches may not stand alone")

    def weight(self, attr_id: str) -> Fraction:
        return self.weights.get(attr_id, Fraction(1))

    def effective_threshold(self, sensitivity: Sensitivity) -> Fraction:
        if sensitivity is Sensitivity.SPECIAL_CATEGORY:
            return self.base_threshold * self.sensitivity_multiplier
        return self.base_threshold

    def to_json(self) -> dict:
        return {
            "weights": {k: _fraction_text(v) for k, v in sorted(self.weights.items())},
            "unique_types": sorted(self.unique_types),
            "base_threshold": _fraction_text(self.base_threshold),
            "sensitivity_multiplier": _fraction_text(self.sensitivity_multiplier),
            "derived_cap": _fraction_text(self.derived_cap),
            "derived_standalone_forbidden": self.derived_standalone_forbidden,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> MatchPolicy:
        if not isinstance(data, Mapping):
            raise PolicyError("policy must be a JSON object")
        known = {"weights", "unique_types", "base_threshold", "sensitivity_multiplier", "derived_cap", "derived_standalone_forbidden"}
        extra = set(data) - known
        if extra:
            raise PolicyError(f"unknown policy fields: {sorted(extra)}")
        kwargs: dict[str, Any] = {}
        if "weights" in data:
            if not isinstance(data["weights"], Mapping):
                raise PolicyError("weights must be an object")
            kwargs["weights"] = {k: as_fraction(v) for k, v in data["weights"].items()}
        if "unique_types" in data:
            if not isinstance(data["unique_types"], list):
                raise PolicyError("unique_types must be a list")
            kwargs["unique_types"] = frozenset(data["unique_types"])
        for name in ("base_threshold", "sensitivity_multiplier", "derived_cap"):
            if name in data:
                kwargs[name] = as_fraction(data[name])
        if "derived_standalone_forbidden" in data:
            if not isinstance(data["derived_standalone_forbidden"], bool):
                raise PolicyError("derived_standalone_forbidden must be boolean")
            kwargs["derived_standalone_forbidden"] = data["derived_standalone_forbidden"]
        try:
            return cls(**kwargs)
        except KeyError as exc:
            raise PolicyError(f"unknown attribute {exc}") from None

    def encode(self) -> bytes:
        return canonical_json(self.to_json())


DEFAULT_POLICY = MatchPolicy()


def load_policy(path: str | Path) -> MatchPolicy:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PolicyError(f"cannot read policy {path}: {exc}") from exc
    return MatchPolicy.from_json(data)


# -- field matching -----------------------------------------------------------

_POSTAL = re.compile(r"(?<!\d)(\d{4,5})(?!\d)")


def age_on(birth: date, as_of: date) -> int:
    return as_of.year - birth.year - ((as_of.month, as_of.day) < (birth.month, birth.day))


def field_matches(f: Field, claimed: str, as_of: date | None = None) -> bool:
    """Exact canonical equality, or containment for derived range/prefix fields.

    ``claimed`` is the canonical text of the credential attribute the field is
    compared against: the same type for ordinary fields, the source type
    (``derived_from``) for derived ones.
    """
    attr = f.attr
    if attr is None or f.canonical is None:
        return False
    if not attr.derived:
        return f.canonical == claimed
    if attr.id == "derived.age_range":
        if as_of is None:
            return False
        try:
            birth = date.fromisoformat(claimed)
            lo, hi = (int(x) for x in f.canonical.split("-"))
        except ValueError:
            return False
        return lo <= age_on(birth, as_of) <= hi
    if attr.id == "derived.postal_prefix":
        m = _POSTAL.search(claimed)
        return bool(m) and m.group(1).startswith(f.canonical)
    return False


# -- scoring ------------------------------------------------------------------


@dataclass(frozen=True)
class Claims:
    """Disclosed claims normalized for matching: cleartext values or match tags."""

    mode: Mode
    values: Mapping[str, str] = field(default_factory=dict)
    tags: Mapping[str, bytes] = field(default_factory=dict)
    nonce: bytes | None = None


Disclosed = Union[Presentation, Claims, Mapping[str, Union[CanonicalValue, str]]]


def claims_of(disclosed: Disclosed, nonce: bytes | None = None, expected_mode: Mode | None = None) -> Claims:
    if isinstance(disclosed, Claims):
        claims = disclosed
    elif isinstance(disclosed, Presentation):
        if disclosed.mode is Mode.CLEARTEXT:
            claims = Claims(Mode.CLEARTEXT, {d.attr.id: d.value.text for d in disclosed.disclosed})
        else:
            claims = Claims(Mode.HASHED, tags={d.attr.id: d.match_tag for d in disclosed.disclosed}, nonce=disclosed.nonce)
    else:
        claims = Claims(
            Mode.CLEARTEXT,
            {attribute(k).id: (v.text if isinstance(v, CanonicalValue) else v) for k, v in disclosed.items()},
        )
    if expected_mode is not None and claims.mode is not expected_mode:
        raise ModeMismatch(f"expected {expected_mode.value}, got {claims.mode.value}")
    if claims.mode is Mode.HASHED:
        if nonce is None or claims.nonce is None or not hmac.compare_digest(nonce, claims.nonce):
            raise ModeMismatch("hashed claims require the request nonce")
    return claims


@dataclass(frozen=True)
class RecordScore:
    score: Fraction
    matched_attrs: frozenset[str]
    derived_contribution: Fraction
    # (attr_id, stored canonical value) for each non-derived field that matched
    hits: frozenset[tuple[str, str]] = frozenset()


@dataclass(frozen=True)
class MatchScore:
    per_record: Mapping[str, RecordScore]


@dataclass(frozen=True)
class AuthDecision:
    verdict: Verdict
    matched_records: frozenset[str] = frozenset()
    level: Level = Level.NONE

    def __post_init__(self) -> None:
        if self.verdict is Verdict.ACCEPT and not self.matched_records:
            raise ValueError("Accept requires at least one matched record")


DECLINED = AuthDecision(Verdict.DECLINE)


_NO_MATCH = RecordScore(Fraction(0), frozenset(), Fraction(0))


def _score(
    claims: Claims,
    record: DataRecord,
    policy: MatchPolicy,
    as_of: date | None,
    tag_cache: dict[tuple[str, str], bytes] | None,
) -> RecordScore:
    direct: set[str] = set()
    derived: set[str] = set()
    hits: set[tuple[str, str]] = set()
    for f in record.typed_fields():
        a = f.attr.id
        if f.attr.derived:
            if claims.mode is Mode.CLEARTEXT:
                claimed = claims.values.get(f.attr.derived_from)
                if claimed is not None and field_matches(f, claimed, as_of):
                    derived.add(a)
            # containment cannot be evaluated over match tags
            continue
        if claims.mode is Mode.CLEARTEXT:
            if a in claims.values and field_matches(f, claims.values[a], as_of):
                direct.add(a)
                hits.add((a, f.canonical))
        elif a in claims.tags:
            key = (a, f.canonical)
            tag = tag_cache.get(key) if tag_cache is not None else None
            if tag is None:
                tag = match_tag(claims.nonce, f.attr, CanonicalValue(f.attr, f.canonical)).tag
                if tag_cache is not None:
                    tag_cache[key] = tag
            if hmac.compare_digest(tag, claims.tags[a]):
                direct.add(a)
                hits.add((a, f.canonical))
    if not direct and not derived:
        return _NO_MATCH
    derived_total = sum((policy.weight(a) for a in derived), Fraction(0))
    contribution = min(derived_total, policy.derived_cap)
    score = sum((policy.weight(a) for a in direct), Fraction(0)) + contribution
    return RecordScore(score, frozenset(direct | derived), contribution, frozenset(hits))


def score_match(
    disclosed: Disclosed,
    record: DataRecord,
    policy: MatchPolicy,
    nonce: bytes | None = None,
    as_of: date | None = None,
    expected_mode: Mode | None = None,
) -> RecordScore:
    return _score(claims_of(disclosed, nonce, expected_mode), record, policy, as_of, None)


def score_records(
    disclosed: Disclosed,
    candidates: Sequence[DataRecord],
    policy: MatchPolicy,
    nonce: bytes | None = None,
    as_of: date | None = None,
    expected_mode: Mode | None = None,
) -> MatchScore:
    claims = claims_of(disclosed, nonce, expected_mode)
    cache: dict[tuple[str, str], bytes] = {}
    return MatchScore({r.record_id: _score(claims, r, policy, as_of, cache) for r in candidates})


def evaluate(scores: MatchScore, policy: MatchPolicy, sensitivity: Sensitivity) -> AuthDecision:
    threshold = policy.effective_threshold(sensitivity)
    unique: set[str] = set()
    by_threshold: set[str] = set()
    for rid, s in scores.per_record.items():
        if s.matched_attrs & policy.unique_types:
            unique.add(rid)
        elif s.matched_attrs and s.score >= threshold and (
            not policy.derived_standalone_forbidden or s.score - s.derived_contribution > 0
        ):
            by_threshold.add(rid)
    if unique:
        return AuthDecision(Verdict.ACCEPT, frozenset(unique | by_threshold), Level.UNIQUE)
    if by_threshold:
        return AuthDecision(Verdict.ACCEPT, frozenset(by_threshold), Level.THRESHOLD)
    return DECLINED


def match_records(
    disclosed: Disclosed,
    candidates: Sequence[DataRecord],
    policy: MatchPolicy,
    sensitivity: Sensitivity,
    nonce: bytes | None = None,
    as_of: date | None = None,
    expected_mode: Mode | None = None,
) -> AuthDecision:
    return evaluate(score_records(disclosed, candidates, policy, nonce, as_of, expected_mode), policy, sensitivity)


def matched_values(scores: MatchScore, decision: AuthDecision) -> dict[str, str]:
    """Stored canonical values behind the non-derived attributes that matched in matched records."""
    out: dict[str, str] = {}
    for rid in sorted(decision.matched_records):
        for attr_id, value in sorted(scores.per_record[rid].hits):
            out.setdefault(attr_id, value)
    return out
