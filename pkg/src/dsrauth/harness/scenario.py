"""Scenario files: what population, store, flow and adversary a run uses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from ..credentials import Mode
from ..datastore import Scope
from ..encoding import ts_decode
from ..policy import DEFAULT_POLICY, MatchPolicy, PolicyError, load_policy
from .population import PopulationSpec, StoreSpec


class FixtureMissing(FileNotFoundError):
    pass


class ScenarioError(ValueError):
    pass


ADVERSARIES = ("none", "impersonator", "probing_sp", "malicious_idp_probe", "replayer", "expired_wallet")

_KEYS = {
    "name", "seed", "clock", "population", "store", "adversary", "flow", "mode", "policy", "dsr_type", "scope",
    "requesters", "consent", "initiate", "expect", "description",
}


@dataclass(frozen=True)
class AdversarySpec:
    kind: str = "none"
    # impersonator: number of genuine victim attributes held, or "all_but_unique"
    overlap: Union[int, str, None] = None
    attempts: int = 0

    @classmethod
    def from_json(cls, d: Mapping) -> AdversarySpec:
        extra = set(d) - {"kind", "overlap", "attempts"}
        if extra:
            raise ScenarioError(f"unknown adversary keys {sorted(extra)}")
        kind = d.get("kind", "none")
        if kind not in ADVERSARIES:
            raise ScenarioError(f"unknown adversary {kind!r}")
        overlap = d.get("overlap")
        if kind == "impersonator" and not (isinstance(overlap, int) and overlap >= 0 or overlap == "all_but_unique"):
            raise ScenarioError("impersonator needs overlap: a non-negative int or 'all_but_unique'")
        attempts = int(d.get("attempts", 0))
        if attempts < 0:
            raise ScenarioError("attempts must be non-negative")
        return cls(kind, overlap, attempts)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.overlap is not None:
            out["overlap"] = self.overlap
        if self.attempts:
            out["attempts"] = self.attempts
        return out


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    clock: str = "2026-03-01T12:00:00Z"
    population: PopulationSpec = field(default_factory=PopulationSpec)
    store: StoreSpec = field(default_factory=StoreSpec)
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    flow: str = "ssi"
    mode: Mode = Mode.CLEARTEXT
    policy: Union[str, Mapping, None] = None  # None/"default", a path relative to the file, or inline JSON
    dsr_type: str = "access"
    scope: Mapping = field(default_factory=lambda: {"kind": "all"})
    requesters: Optional[int] = None  # genuine requesters; None means everyone
    consent: Mapping = field(default_factory=lambda: {"approve": "all"})
    initiate: str = "direct"  # FIM: "direct" to the SP or "idp" via /initiate
    expect: Mapping[str, Any] = field(default_factory=dict)
    base_dir: Optional[Path] = None
    raw: Mapping = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_json(cls, d: Mapping, base_dir: Optional[Path] = None) -> Scenario:
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        extra = set(d) - _KEYS
        if extra:
            raise ScenarioError(f"unknown scenario keys {sorted(extra)}")
        for k in ("name", "seed"):
            if k not in d:
                raise ScenarioError(f"missing {k!r}")
        if not isinstance(d["seed"], int):
            raise ScenarioError("seed must be an integer")
        flow = d.get("flow", "ssi")
        if flow not in ("ssi", "fim"):
            raise ScenarioError(f"unknown flow {flow!r}")
        if d.get("dsr_type", "access") not in ("access", "erasure"):
            raise ScenarioError("dsr_type must be access or erasure")
        if d.get("initiate", "direct") not in ("direct", "idp"):
            raise ScenarioError("initiate must be direct or idp")
        try:
            ts_decode(d.get("clock", "2026-03-01T12:00:00Z"))
            Scope.from_wire(d.get("scope", {"kind": "all"}))
            mode = Mode(d.get("mode", "cleartext"))
            s = cls(
                name=str(d["name"]),
                seed=d["seed"],
                clock=d.get("clock", "2026-03-01T12:00:00Z"),
                population=PopulationSpec.from_json(d.get("population", {})),
                store=StoreSpec.from_json(d.get("store", {})),
                adversary=AdversarySpec.from_json(d.get("adversary", {})),
                flow=flow,
                mode=mode,
                policy=d.get("policy"),
                dsr_type=d.get("dsr_type", "access"),
                scope=d.get("scope", {"kind": "all"}),
                requesters=d.get("requesters"),
                consent=d.get("consent", {"approve": "all"}),
                initiate=d.get("initiate", "direct"),
                expect=d.get("expect", {}),
                base_dir=base_dir,
                raw=d,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from exc
        if s.flow == "fim" and s.mode is Mode.HASHED:
            raise ScenarioError("hashed mode applies to the SSI flow only")
        return s

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        path = Path(path)
        if not path.is_file():
            raise FixtureMissing(f"no such file: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        return cls.from_json(data, path.parent)

    def resolve_policy(self) -> MatchPolicy:
        ref = self.policy
        if ref is None or ref == "default":
            return DEFAULT_POLICY
        if isinstance(ref, str):
            path = Path(ref)
            if not path.is_absolute() and self.base_dir is not None:
                path = self.base_dir / path
            if not path.is_file():
                raise FixtureMissing(f"no such file: {path}")
            return load_policy(path)
        try:
            return MatchPolicy.from_json(ref)
        except PolicyError as exc:
            raise ScenarioError(f"policy: {exc}") from exc


def bundled_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios"


def bundled(name: str) -> Scenario:
    """Load one of the scenario files shipped with the package, e.g. ``bundled("baseline")``."""
    return Scenario.load(bundled_dir() / f"{name}.json")
