"""Brute-force reference for record matching.

Deliberately shares no code with :mod:`dsrauth.policy`: it enumerates every
(record, attribute) pair, recomputes ages and postal prefixes its own way and
applies the threshold rules from first principles. Only usable at desk scale.
"""

from __future__ import annotations

from datetime import date
from fractions import Fraction
from typing import Mapping, Sequence

from ..credentials import Verdict
from ..datastore import DataRecord, Sensitivity
from ..policy import AuthDecision, Level, MatchPolicy

MAX_RECORDS = 10
MAX_ATTRIBUTES = 8


class ScaleExceeded(ValueError):
    pass


def _full_years(birth: date, as_of: date) -> int:
    years = 0
    for y in range(birth.year + 1, as_of.year + 1):
        try:
            anniversary = date(y, birth.month, birth.day)
        except ValueError:  # 29 February in a common year
            anniversary = date(y, 3, 1)
        if anniversary <= as_of:
            years += 1
    return years


def _first_postal_code(address: str) -> str | None:
    runs = "".join(c if c.isdecimal() else " " for c in address).split()
    for run in runs:
        if 4 <= len(run) <= 5:
            return run
    return None


def _derived_hit(attr_id: str, stored: str, claimed: str, as_of: date | None) -> bool:
    if attr_id == "derived.age_range":
        if as_of is None:
            return False
        try:
            birth = date.fromisoformat(claimed)
        except ValueError:
            return False
        lo_text, _, hi_text = stored.partition("-")
        if not (lo_text.isdecimal() and hi_text.isdecimal()):
            return False
        return int(lo_text) <= _full_years(birth, as_of) <= int(hi_text)
    if attr_id == "derived.postal_prefix":
        code = _first_postal_code(claimed)
        return code is not None and code[: len(stored)] == stored
    return False


def oracle_match(
    disclosed: Mapping[str, str],
    candidates: Sequence[DataRecord],
    policy: MatchPolicy,
    sensitivity: Sensitivity = Sensitivity.NORMAL,
    as_of: date | None = None,
) -> AuthDecision:
    """Reference decision for cleartext ``disclosed`` values (attr id -> canonical)."""
    if len(candidates) > MAX_RECORDS:
        raise ScaleExceeded(f"{len(candidates)} records > {MAX_RECORDS}")
    attrs = set(disclosed)
    for r in candidates:
        attrs |= {f.attr.id for f in r.fields if f.attr is not None}
    if len(attrs) > MAX_ATTRIBUTES:
        raise ScaleExceeded(f"{len(attrs)} attributes > {MAX_ATTRIBUTES}")

    threshold = policy.base_threshold
    if sensitivity == Sensitivity.SPECIAL_CATEGORY:
        threshold = threshold * policy.sensitivity_multiplier

    weights = {a: Fraction(policy.weights[a]) if a in policy.weights else Fraction(1) for a in attrs}
    unique_hits: list[str] = []
    threshold_hits: list[str] = []
    for record in candidates:
        plain = Fraction(0)
        weak = Fraction(0)
        any_unique = False
        hits = 0
        for attr_id in sorted(attrs):
            weight = weights[attr_id]
            hit = False
            is_derived = False
            for f in record.fields:
                if f.attr is None or f.attr.id != attr_id or f.canonical is None:
                    continue
                if f.attr.derived_from is None:
                    if attr_id in disclosed and disclosed[attr_id] == f.canonical:
                        hit = True
                else:
                    is_derived = True
                    source = f.attr.derived_from
                    if source in disclosed and _derived_hit(attr_id, f.canonical, disclosed[source], as_of):
                        hit = True
            if not hit:
                continue
            hits += 1
            if is_derived:
                weak += weight
            else:
                plain += weight
                if attr_id in policy.unique_types:
                    any_unique = True
        weak = policy.derived_cap if weak > policy.derived_cap else weak
        total = plain + weak
        if any_unique:
            unique_hits.append(record.record_id)
        elif hits and total >= threshold and (plain > 0 or not policy.derived_standalone_forbidden):
            threshold_hits.append(record.record_id)

    if unique_hits:
        return AuthDecision(Verdict.ACCEPT, frozenset(unique_hits + threshold_hits), Level.UNIQUE)
    if threshold_hits:
        return AuthDecision(Verdict.ACCEPT, frozenset(threshold_hits), Level.THRESHOLD)
    return AuthDecision(Verdict.DECLINE, frozenset(), Level.NONE)


def oracle_match_chunked(
    disclosed: Mapping[str, str],
    candidates: Sequence[DataRecord],
    policy: MatchPolicy,
    sensitivity: Sensitivity = Sensitivity.NORMAL,
    as_of: date | None = None,
) -> AuthDecision:
    """Apply :func:`oracle_match` to stores larger than desk scale, ten records at a time.

    Records are judged independently, so the decision over the whole store is
    the union of the per-chunk matches and the best level among them.
    """
    unique: set[str] = set()
    plain: set[str] = set()
    for i in range(0, len(candidates), MAX_RECORDS):
        d = oracle_match(disclosed, candidates[i : i + MAX_RECORDS], policy, sensitivity, as_of)
        if d.level == Level.UNIQUE:
            unique |= d.matched_records
        elif d.level == Level.THRESHOLD:
            plain |= d.matched_records
    if unique:
        return AuthDecision(Verdict.ACCEPT, frozenset(unique | plain), Level.UNIQUE)
    if plain:
        return AuthDecision(Verdict.ACCEPT, frozenset(plain), Level.THRESHOLD)
    return AuthDecision(Verdict.DECLINE, frozenset(), Level.NONE)
