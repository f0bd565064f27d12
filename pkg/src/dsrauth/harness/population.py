"""Synthetic data subjects and the controller store derived from them.

Collision pressure comes from small surname pools and households that share
a family name and address. Every record carries a ground-truth owner label.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Mapping, Optional

from ..datastore import DataStore, Scope

GIVEN = [
    "anna", "ben", "clara", "david", "emma", "felix", "greta", "hannes", "ida", "jonas", "karla", "lukas",
    "marie", "noah", "olga", "paul", "quirin", "rosa", "simon", "tara", "ulrich", "vera", "wim", "xenia",
    "yusuf", "zoe", "erika", "max", "lena", "tim", "mia", "leon", "sofia", "elias", "lina", "finn",
]
FAMILY = [
    "mueller", "schmidt", "schneider", "fischer", "weber", "meyer", "wagner", "becker", "schulz", "hoffmann",
    "koch", "richter", "klein", "wolf", "schroeder", "neumann", "schwarz", "braun", "zimmermann", "krueger",
    "hartmann", "lange", "werner", "krause", "lehmann", "koehler", "herrmann", "walter", "koenig", "mayer",
]
STREETS = ["hauptstrasse", "schulweg", "gartenstrasse", "bahnhofstrasse", "lindenallee", "bergweg", "ringstrasse"]
CITIES = ["berlin", "hamburg", "muenchen", "koeln", "leipzig", "dresden", "bremen", "hannover"]
MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
          "November", "December"]

# values reserved for impersonators so that fresh attributes can never collide with real people
FRESH_GIVEN = ["alrik", "bjarne", "cosima", "dagny", "eskil", "frauke", "gisbert", "hedda"]
FRESH_FAMILY = ["adlersfeld", "brunnhuber", "czerwinski", "dannemann", "eulenbruch", "falkenrath"]

ATTRS = ("pid.given_name", "pid.family_name", "pid.birth_date", "pid.unique_id", "pid.address",
         "pid.email", "pid.phone", "pid.nationality")


@dataclass(frozen=True)
class PopulationSpec:
    size: int = 100
    surname_pool: int = len(FAMILY)
    household_rate: float = 0.1  # chance that a person joins the previous person's household
    twin_rate: float = 0.0  # chance that a household member shares the previous member's birth date
    health: bool = False  # issue eaa.health_insurance_id
    birth_from: date = date(1940, 1, 1)
    birth_to: date = date(2005, 12, 31)

    @classmethod
    def from_json(cls, d: Mapping) -> PopulationSpec:
        known = {"size", "surname_pool", "household_rate", "twin_rate", "health"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown population keys {sorted(extra)}")
        return cls(**{k: d[k] for k in known if k in d})


@dataclass(frozen=True)
class Person:
    person_id: str
    attrs: Mapping[str, str]  # attr id -> canonical-form raw value
    household: int


def _address(rng: random.Random, used: set[str]) -> tuple[str, str]:
    while True:
        code = f"{rng.randint(10000, 89999)}"
        text = f"{rng.choice(STREETS)} {rng.randint(1, 199)}, {code} {rng.choice(CITIES)}"
        if text not in used:
            used.add(text)
            return text, code


def generate_population(spec: PopulationSpec, rng: random.Random) -> list[Person]:
    families = FAMILY[: max(1, min(spec.surname_pool, len(FAMILY)))]
    span = (spec.birth_to - spec.birth_from).days
    used_addr: set[str] = set()
    people: list[Person] = []
    household = -1
    for n in range(spec.size):
        joins = people and rng.random() < spec.household_rate
        given = rng.choice(GIVEN)
        if joins:
            prev = people[-1].attrs
            family, address = prev["pid.family_name"], prev["pid.address"]
            if rng.random() < spec.twin_rate:
                birth = date.fromisoformat(prev["pid.birth_date"])
            else:
                prev_birth = date.fromisoformat(prev["pid.birth_date"])
                birth = prev_birth
                while birth == prev_birth:
                    birth = spec.birth_from + timedelta(days=rng.randint(0, span))
        else:
            household += 1
            family = rng.choice(families)
            address, _ = _address(rng, used_addr)
            birth = spec.birth_from + timedelta(days=rng.randint(0, span))
        attrs = {
            "pid.given_name": given,
            "pid.family_name": family,
            "pid.birth_date": birth.isoformat(),
            "pid.unique_id": f"de-{n:09d}",
            "pid.address": address,
            "pid.email": f"{given}.{family}.{n}@example.org",
            "pid.phone": f"+49155{n:07d}",
            "pid.nationality": "de",
        }
        if spec.health:
            attrs["eaa.health_insurance_id"] = f"a{n:09d}"
        people.append(Person(f"person-{n:05d}", attrs, household))
    return people


def fresh_identity(rng: random.Random, serial: int) -> dict[str, str]:
    """Attribute values guaranteed disjoint from any generated person."""
    birth = date(1900, 1, 1) + timedelta(days=rng.randint(0, 30 * 365))
    code = f"{rng.randint(90000, 99999)}"
    return {
        "pid.given_name": rng.choice(FRESH_GIVEN),
        "pid.family_name": rng.choice(FRESH_FAMILY),
        "pid.birth_date": birth.isoformat(),
        "pid.unique_id": f"xx-{serial:09d}",
        "pid.address": f"am rand {serial % 97 + 1}, {code} nirgendwo",
        "pid.email": f"fresh.{serial}@adversary.invalid",
        "pid.phone": f"+49999{serial:07d}",
        "pid.nationality": "xx",
        "eaa.health_insurance_id": f"z{serial:09d}",
    }


# -- store construction -------------------------------------------------------

DATASET_KINDS = ("customers", "orders", "newsletter", "pharmacy", "accounts")

MAPPINGS: dict[str, dict[str, Optional[str]]] = {
    "customers": {"customer_no": None, "given": "pid.given_name", "family": "pid.family_name",
                  "birth": "pid.birth_date", "email": "pid.email"},
    "orders": {"order_no": None, "family": "pid.family_name", "address": "pid.address", "birth": "pid.birth_date"},
    "newsletter": {"email": "pid.email", "age": "derived.age_range", "plz": "derived.postal_prefix"},
    "pharmacy": {"insurance": "eaa.health_insurance_id", "given": "pid.given_name", "family": "pid.family_name",
                 "birth": "pid.birth_date", "address": "pid.address"},
    # keyed by the national identifier: only the unique id plus two weak attributes
    "accounts": {"national_id": "pid.unique_id", "family": "pid.family_name", "birth": "pid.birth_date"},
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    coverage: float = 1.0
    dataset_id: Optional[str] = None

    @property
    def id(self) -> str:
        return self.dataset_id or self.kind


@dataclass(frozen=True)
class NoiseSpec:
    typo_rate: float = 0.0  # per text cell (names, emails)
    stale_address_rate: float = 0.0  # per address cell


@dataclass(frozen=True)
class StoreSpec:
    datasets: tuple[DatasetSpec, ...] = (DatasetSpec("customers"),)
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    @classmethod
    def from_json(cls, d: Mapping) -> StoreSpec:
        extra = set(d) - {"datasets", "noise"}
        if extra:
            raise ValueError(f"unknown store keys {sorted(extra)}")
        ds = []
        for item in d.get("datasets", [{"kind": "customers"}]):
            if item.get("kind") not in DATASET_KINDS:
                raise ValueError(f"unknown dataset kind {item.get('kind')!r}")
            ds.append(DatasetSpec(item["kind"], float(item.get("coverage", 1.0)), item.get("dataset_id")))
        n = d.get("noise", {})
        return cls(tuple(ds), NoiseSpec(float(n.get("typo_rate", 0.0)), float(n.get("stale_address_rate", 0.0))))


def _format_date(rng: random.Random, iso: str) -> str:
    d = date.fromisoformat(iso)
    style = rng.randrange(3)
    if style == 0:
        return iso
    if style == 1:
        return f"{d.day:02d}.{d.month:02d}.{d.year}"
    return f"{MONTHS[d.month - 1]} {d.day}, {d.year}"


def _typo(rng: random.Random, text: str) -> str:
    i = rng.randrange(len(text))
    letters = "abcdefghijklmnopqrstuvwxyz"
    c = rng.choice(letters.replace(text[i].lower(), "") if text[i].isalpha() else letters)
    return text[:i] + c + text[i + 1:]


def _display(text: str, rng: random.Random) -> str:
    # vary case and spacing so canonicalization has work to do
    style = rng.randrange(3)
    if style == 0:
        return text.title()
    if style == 1:
        return text.upper()
    return f"  {text} "


def _age_range(birth: date, as_of: date) -> str:
    years = as_of.year - birth.year - ((as_of.month, as_of.day) < (birth.month, birth.day))
    lo = years // 10 * 10
    return f"{lo}-{lo + 9}"


@dataclass
class BuiltStore:
    store: DataStore
    owner: dict[str, str]  # record id -> person id

    def records_of(self, person_id: str, scope: Scope = Scope.all()) -> list[str]:
        return [r.record_id for r in self.store.candidate_records(scope) if self.owner.get(r.record_id) == person_id]


def build_store(people: list[Person], spec: StoreSpec, rng: random.Random, as_of: date) -> BuiltStore:
    store = DataStore()
    owner: dict[str, str] = {}
    used_addr = {p.attrs["pid.address"] for p in people}
    for ds in spec.datasets:
        rows: list[dict[str, str]] = []
        owners: list[str] = []
        for n, p in enumerate(people):
            if rng.random() >= ds.coverage:
                continue
            a = dict(p.attrs)
            if ds.kind in ("orders", "pharmacy") and rng.random() < spec.noise.stale_address_rate:
                a["pid.address"], _ = _address(rng, used_addr)
            for k in ("pid.given_name", "pid.family_name", "pid.email"):
                if rng.random() < spec.noise.typo_rate:
                    a[k] = _typo(rng, a[k])
            if ds.kind == "customers":
                row = {"customer_no": f"c{n:06d}", "given": _display(a["pid.given_name"], rng),
                       "family": _display(a["pid.family_name"], rng),
                       "birth": _format_date(rng, a["pid.birth_date"]), "email": a["pid.email"]}
            elif ds.kind == "orders":
                row = {"order_no": f"o-{len(rows):06d}", "family": _display(a["pid.family_name"], rng),
                       "address": _display(a["pid.address"], rng), "birth": _format_date(rng, a["pid.birth_date"])}
            elif ds.kind == "newsletter":
                code = [t for t in a["pid.address"].replace(",", " ").split() if t.isdigit() and len(t) == 5][0]
                row = {"email": a["pid.email"], "age": _age_range(date.fromisoformat(a["pid.birth_date"]), as_of),
                       "plz": code[:3]}
            elif ds.kind == "accounts":
                row = {"national_id": a["pid.unique_id"].upper(), "family": _display(a["pid.family_name"], rng),
                       "birth": _format_date(rng, a["pid.birth_date"])}
            else:
                if "eaa.health_insurance_id" not in a:
                    continue
                row = {"insurance": a["eaa.health_insurance_id"], "given": a["pid.given_name"],
                       "family": a["pid.family_name"], "birth": _format_date(rng, a["pid.birth_date"]),
                       "address": a["pid.address"]}
            rows.append(row)
            owners.append(p.person_id)
        if not rows:
            continue
        ds_id = store.ingest(rows, MAPPINGS[ds.kind], {"dataset_id": ds.id, "description": ds.kind})
        for i, pid in enumerate(owners):
            owner[f"{ds_id}/{i:05d}"] = pid
    return BuiltStore(store, owner)
