"""Random desk-scale matching instances for oracle-equivalence checks."""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import date, timedelta
from fractions import Fraction

from ..canonical import CATALOG, canonicalize
from ..datastore import DataRecord, Field, Sensitivity
from ..policy import MatchPolicy

# up to 8 attribute types per instance: 6 plain + 2 derived
PLAIN_ATTRS = ["pid.given_name", "pid.family_name", "pid.birth_date", "pid.unique_id", "pid.address", "pid.email"]
DERIVED_ATTRS = ["derived.age_range", "derived.postal_prefix"]

_NAMES = ["anna", "bert", "clara", "dirk", "eva"]
_STREETS = ["hauptstr. 1, 10115 berlin", "ring 5, 50667 köln", "weg 9, 80331 münchen"]
_WEIGHTS = [Fraction(0), Fraction(1, 2), Fraction(1), Fraction(1), Fraction(2)]


@dataclass(frozen=True)
class Instance:
    disclosed: dict[str, str]
    records: list[DataRecord]
    policy: MatchPolicy
    sensitivity: Sensitivity
    as_of: date


def _value(rng: random.Random, attr_id: str, base: date) -> str:
    if attr_id in ("pid.given_name", "pid.family_name"):
        return rng.choice(_NAMES)
    if attr_id == "pid.birth_date":
        return (base - timedelta(days=rng.randint(20 * 365, 23 * 365))).isoformat()
    if attr_id == "pid.unique_id":
        return f"id-{rng.randint(0, 3)}"
    if attr_id == "pid.address":
        return rng.choice(_STREETS)
    return f"{rng.choice(_NAMES)}@example.org"


def _derived(rng: random.Random, attr_id: str) -> str:
    if attr_id == "derived.age_range":
        lo = rng.choice([18, 20, 21, 22, 25])
        return f"{lo}-{lo + rng.choice([0, 1, 2, 4, 9])}"
    return rng.choice(["1", "10", "101", "5", "50", "8"])


def random_policy(rng: random.Random, attrs: list[str]) -> MatchPolicy:
    weights = {a: rng.choice(_WEIGHTS) for a in attrs if rng.random() < 0.6}
    unique = frozenset(a for a in ("pid.unique_id", "pid.email") if rng.random() < 0.4)
    threshold = rng.choice([Fraction(1), Fraction(3, 2), Fraction(2), Fraction(5, 2), Fraction(3), Fraction(4)])
    forbid = rng.random() < 0.7
    cap = rng.choice([Fraction(0), Fraction(1, 2), Fraction(1), Fraction(2)])
    if forbid and cap >= threshold:
        cap = threshold / 2
    return MatchPolicy(
        weights=weights,
        unique_types=unique,
        base_threshold=threshold,
        sensitivity_multiplier=rng.choice([Fraction(1), Fraction(3, 2), Fraction(2)]),
        derived_cap=cap,
        derived_standalone_forbidden=forbid,
    )


def random_instance(rng: random.Random, max_records: int = 10) -> Instance:
    as_of = date(2026, 1, 1) + timedelta(days=rng.randint(0, 365))
    plain = rng.sample(PLAIN_ATTRS, rng.randint(1, len(PLAIN_ATTRS)))
    derived = rng.sample(DERIVED_ATTRS, rng.randint(0, 2))
    attrs = plain + derived
    disclosed = {}
    for a in plain:
        if rng.random() < 0.8:
            disclosed[a] = canonicalize(a, _value(rng, a, as_of)).text
    # derived matching needs the source attributes disclosed
    for d in derived:
        src = CATALOG[d].derived_from
        if src not in disclosed and rng.random() < 0.7:
            disclosed[src] = canonicalize(src, _value(rng, src, as_of)).text
    if len(set(disclosed) | set(attrs)) > 8:
        disclosed = {k: v for k, v in disclosed.items() if k in attrs}
    records = []
    for i in range(rng.randint(0, max_records)):
        fields = []
        for a in attrs:
            if rng.random() < 0.25:
                continue
            attr = CATALOG[a]
            if attr.derived:
                raw = _derived(rng, a)
            elif a in disclosed and rng.random() < 0.5:
                raw = disclosed[a]
            else:
                raw = _value(rng, a, as_of)
            c = canonicalize(attr, raw).text
            fields.append(Field(raw, attr=attr, canonical=c, derived=attr.derived))
        if rng.random() < 0.3:
            fields.append(Field(f"ord-{i}", label="order_no"))
        records.append(DataRecord(f"r{i}", "d0", tuple(fields)))
    sensitivity = Sensitivity.SPECIAL_CATEGORY if rng.random() < 0.3 else Sensitivity.NORMAL
    return Instance(disclosed, records, random_policy(rng, attrs), sensitivity, as_of)
