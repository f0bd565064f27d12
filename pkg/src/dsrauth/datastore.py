"""Service Provider data holdings under a category-tagged data model.

Each record field is tagged with its attribute type (or left as an untyped
label such as an order number). Typed values are canonicalized at ingestion;
rows that fail canonicalization are quarantined, never silently dropped.
"""

from __future__ import annotations

import copy
import csv
import enum
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .canonical import AttributeType, UnparseableValue, attribute, canonicalize
from .credentials import Verdict
from .encoding import canonical_json, ts_decode, ts_encode, utc

logger = logging.getLogger(__name__)

DSR_DEADLINE = timedelta(days=30)


class StoreError(Exception):
    pass


class EmptySource(StoreError):
    pass


class MappingMismatch(StoreError):
    pass


class UnknownScopeId(StoreError):
    pass


class UnauthorizedExecution(StoreError):
    pass


class CorruptStore(StoreError):
    pass


class Sensitivity(str, enum.Enum):
    NORMAL = "normal"
    SPECIAL_CATEGORY = "special_category"


@dataclass(frozen=True)
class Field:
    raw: str
    attr: AttributeType | None = None
    label: str | None = None
    canonical: str | None = None
    derived: bool = False

    @property
    def typed(self) -> bool:
        return self.attr is not None

    def to_json(self) -> dict:
        if self.attr is None:
            return {"label": self.label, "raw": self.raw, "derived": self.derived}
        return {"attr": self.attr.id, "raw": self.raw, "canonical": self.canonical, "derived": self.derived}


@dataclass(frozen=True)
class DataRecord:
    record_id: str
    dataset_id: str
    fields: tuple[Field, ...]

    def typed_fields(self) -> tuple[Field, ...]:
        cached = self.__dict__.get("_typed")
        if cached is None:
            cached = tuple(f for f in self.fields if f.attr is not None and f.canonical is not None)
            object.__setattr__(self, "_typed", cached)
        return cached

    def to_json(self) -> dict:
        return {"record_id": self.record_id, "fields": [f.to_json() for f in self.fields]}


@dataclass
class DataSet:
    dataset_id: str
    description: str = ""
    records: list[DataRecord] = field(default_factory=list)
    # attribute ids the ingest mapping declared; survives erasure of every record holding them
    schema: tuple[str, ...] = ()

    @property
    def sensitivity(self) -> Sensitivity:
        if any(attribute(a).sensitive for a in self.schema):
            return Sensitivity.SPECIAL_CATEGORY
        for r in self.records:
            for f in r.fields:
                if f.attr is not None and f.attr.sensitive:
                    return Sensitivity.SPECIAL_CATEGORY
        return Sensitivity.NORMAL

    def to_json(self) -> dict:
        out = {
            "dataset_id": self.dataset_id,
            "description": self.description,
            "sensitivity": self.sensitivity.value,
            "records": [r.to_json() for r in self.records],
        }
        if self.schema:
            out["schema"] = list(self.schema)
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> DataSet:
        ds_id = data["dataset_id"]
        records = []
        for r in data["records"]:
            fields = []
            for f in r["fields"]:
                if "attr" in f:
                    attr = attribute(f["attr"])
                    canon = canonicalize(attr, f["raw"]).text
                    if f.get("canonical") not in (None, canon):
                        raise CorruptStore(f"canonical mismatch in {r['record_id']}")
                    fields.append(Field(f["raw"], attr=attr, canonical=canon, derived=bool(f.get("derived", attr.derived))))
                else:
                    fields.append(Field(f["raw"], label=f["label"], derived=bool(f.get("derived", False))))
            records.append(DataRecord(r["record_id"], ds_id, tuple(fields)))
        schema = tuple(attribute(a).id for a in data.get("schema", ()))
        ds = cls(ds_id, data.get("description", ""), records, schema)
        if data.get("sensitivity", ds.sensitivity.value) != ds.sensitivity.value:
            raise CorruptStore(f"sensitivity label mismatch for {ds_id}")
        return ds


@dataclass(frozen=True)
class Scope:
    kind: str  # "all" | "datasets" | "records"
    ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("all", "datasets", "records"):
            raise ValueError(f"unknown scope kind {self.kind!r}")
        if self.kind == "all" and self.ids:
            raise ValueError("scope 'all' takes no ids")

    @classmethod
    def all(cls) -> Scope:
        return cls("all")

    @classmethod
    def datasets(cls, *ids: str) -> Scope:
        return cls("datasets", tuple(ids))

    @classmethod
    def records(cls, *ids: str) -> Scope:
        return cls("records", tuple(ids))

    def to_wire(self) -> dict:
        if self.kind == "all":
            return {"kind": "all"}
        return {"kind": self.kind, "ids": list(self.ids)}

    @classmethod
    def from_wire(cls, data: Mapping) -> Scope:
        return cls(data["kind"], tuple(data.get("ids", ())))


@dataclass
class DSRRequestRecord:
    request_id: str
    dsr_type: str  # "access" | "erasure"
    scope: Scope
    received_at: datetime
    status: str = "pending"  # pending | fulfilled | declined; "overdue" is derived

    @property
    def deadline(self) -> datetime:
        return self.received_at + DSR_DEADLINE

    def status_at(self, now: datetime) -> str:
        if self.status == "pending" and utc(now) >= self.deadline:
            return "overdue"
        return self.status


@dataclass(frozen=True)
class DSRResult:
    request_id: str
    dsr_type: str
    status: str
    exported: tuple[DataRecord, ...] | None = None
    erased: int | None = None


@dataclass(frozen=True)
class QuarantinedRow:
    row_index: int
    column: str
    raw: str
    reason: str

    def to_json(self) -> dict:
        return {"row_index": self.row_index, "column": self.column, "raw": self.raw, "reason": self.reason}


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def source_values(store: DataStore) -> set[tuple[str, str]]:
    """All (attr_id, canonical) pairs currently held; used by privacy instrumentation."""
    out = set()
    for ds in store.datasets.values():
        for r in ds.records:
            for f in r.typed_fields():
                out.add((f.attr.id, f.canonical))
    return out


class DataStore:
    """Data sets plus the DSR request journal. Single writer; readers get copies."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self.datasets: dict[str, DataSet] = {}
        self.quarantine: dict[str, list[QuarantinedRow]] = {}
        self.requests: dict[str, DSRRequestRecord] = {}
        self.journal: list[dict] = []

    # -- ingestion ------------------------------------------------------------

    def ingest(
        self,
        rows: Sequence[Mapping[str, str]],
        mapping: Mapping[str, str | None],
        dataset_meta: Mapping[str, Any],
    ) -> str:
        """Ingest tabular rows; ``mapping`` sends each column to an attribute id or None (untyped)."""
        rows = list(rows)
        if not rows:
            raise EmptySource(dataset_meta.get("dataset_id", "?"))
        header = set(rows[0])
        missing = [c for c in mapping if c not in header]
        if missing:
            raise MappingMismatch(f"columns not in source: {missing}")
        typed = {c: attribute(a) for c, a in mapping.items() if a is not None}
        ds_id = str(dataset_meta["dataset_id"])
        records: list[DataRecord] = []
        quarantined: list[QuarantinedRow] = []
        for i, row in enumerate(rows):
            fields: list[Field] = []
            bad: QuarantinedRow | None = None
            for col in mapping:
                raw = row.get(col)
                if raw is None or raw.strip() == "":
                    continue
                attr = typed.get(col)
                if attr is None:
                    fields.append(Field(raw, label=col))
                    continue
                try:
                    canon = canonicalize(attr, raw).text
                except UnparseableValue as exc:
                    bad = QuarantinedRow(i, col, raw, str(exc))
                    break
                fields.append(Field(raw, attr=attr, canonical=canon, derived=attr.derived))
            if bad is not None:
                quarantined.append(bad)
                continue
            records.append(DataRecord(f"{ds_id}/{i:05d}", ds_id, tuple(fields)))
        if quarantined:
            logger.warning("dataset %s: %d row(s) quarantined", ds_id, len(quarantined))
        schema = tuple(sorted({a.id for a in typed.values()}))
        self.datasets[ds_id] = DataSet(ds_id, str(dataset_meta.get("description", "")), records, schema)
        self.quarantine[ds_id] = quarantined
        return ds_id

    def add_dataset(self, ds: DataSet) -> None:
        self.datasets[ds.dataset_id] = ds

    # -- reads ----------------------------------------------------------------

    def attribute_catalog(self) -> tuple[AttributeType, ...]:
        """Requestable attribute types across every data set, sorted by id.

        Derived fields contribute the credential attribute they are derived from.
        Declared schemas count too, so erasing records never narrows the catalog.
        """
        types = {a.id: a for a in catalog_of(r for ds in self.datasets.values() for r in ds.records)}
        for ds in self.datasets.values():
            for a in map(attribute, ds.schema):
                src = attribute(a.derived_from) if a.derived else a
                types[src.id] = src
        return tuple(types[k] for k in sorted(types))

    def candidate_records(self, scope: Scope) -> list[DataRecord]:
        if scope.kind == "all":
            return [r for k in sorted(self.datasets) for r in self.datasets[k].records]
        if scope.kind == "datasets":
            unknown = [i for i in scope.ids if i not in self.datasets]
            if unknown:
                raise UnknownScopeId(", ".join(unknown))
            return [r for i in dict.fromkeys(scope.ids) for r in self.datasets[i].records]
        index = {r.record_id: r for r in self.candidate_records(Scope.all())}
        unknown = [i for i in scope.ids if i not in index]
        if unknown:
            raise UnknownScopeId(", ".join(unknown))
        return [index[i] for i in dict.fromkeys(scope.ids)]

    def sensitivity_of(self, records: Iterable[DataRecord]) -> Sensitivity:
        ds_ids = {r.dataset_id for r in records}
        for i in ds_ids:
            ds = self.datasets.get(i)
            if ds is not None and ds.sensitivity is Sensitivity.SPECIAL_CATEGORY:
                return Sensitivity.SPECIAL_CATEGORY
        return Sensitivity.NORMAL

    # -- DSR requests ---------------------------------------------------------

    def _log(self, event: dict) -> None:
        self.journal.append(event)
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self.root / "dsr-journal.jsonl", "ab") as fh:
                fh.write(canonical_json(event) + b"\n")

    def open_request(self, request_id: str, dsr_type: str, scope: Scope, received_at: datetime) -> DSRRequestRecord:
        if dsr_type not in ("access", "erasure"):
            raise ValueError(f"unknown DSR type {dsr_type!r}")
        existing = self.requests.get(request_id)
        if existing is not None:
            return existing
        self.candidate_records(scope)  # validates ids
        req = DSRRequestRecord(request_id, dsr_type, scope, utc(received_at))
        self.requests[request_id] = req
        self._log({
            "event": "received",
            "request_id": request_id,
            "dsr_type": dsr_type,
            "scope": scope.to_wire(),
            "received_at": ts_encode(req.received_at),
        })
        return req

    def decline(self, req: DSRRequestRecord) -> None:
        if req.status == "pending":
            req.status = "declined"
            self._log({"event": "declined", "request_id": req.request_id})

    def execute_dsr(self, req: DSRRequestRecord, matched: Iterable[str], decision: Any) -> DSRResult:
        """Run access or erasure over ``matched``; requires an Accept decision covering them."""
        matched = set(matched)
        if decision is None or getattr(decision, "verdict", None) is not Verdict.ACCEPT:
            raise UnauthorizedExecution(req.request_id)
        if not matched <= set(getattr(decision, "matched_records", ())):
            raise UnauthorizedExecution("records outside the accepted match set")
        if req.status != "pending":
            raise UnauthorizedExecution(f"request {req.request_id} is {req.status}")
        in_scope = self.candidate_records(req.scope)
        hits = [r for r in in_scope if r.record_id in matched]
        if req.dsr_type == "access":
            result = DSRResult(req.request_id, "access", "fulfilled", exported=tuple(copy.deepcopy(hits)))
            self._log({"event": "fulfilled", "request_id": req.request_id, "exported": len(hits)})
        else:
            gone = {r.record_id for r in hits}
            for ds in self.datasets.values():
                ds.records = [r for r in ds.records if r.record_id not in gone]
            result = DSRResult(req.request_id, "erasure", "fulfilled", erased=len(gone))
            self._log({"event": "fulfilled", "request_id": req.request_id, "erased": len(gone)})
        req.status = "fulfilled"
        return result

    # -- persistence ----------------------------------------------------------

    def save(self, root: str | Path | None = None) -> None:
        root = Path(root) if root is not None else self.root
        if root is None:
            raise StoreError("no store directory")
        (root / "datasets").mkdir(parents=True, exist_ok=True)
        (root / "quarantine").mkdir(parents=True, exist_ok=True)
        for old in (root / "datasets").glob("*.json"):
            if old.stem not in self.datasets:
                old.unlink()
        for ds_id, ds in self.datasets.items():
            (root / "datasets" / f"{ds_id}.json").write_bytes(canonical_json(ds.to_json()))
        for ds_id, rows in self.quarantine.items():
            (root / "quarantine" / f"{ds_id}.json").write_bytes(canonical_json([q.to_json() for q in rows]))

    @classmethod
    def load(cls, root: str | Path) -> DataStore:
        root = Path(root)
        store = cls(root)
        try:
            for path in sorted((root / "datasets").glob("*.json")):
                ds = DataSet.from_json(json.loads(path.read_text("utf-8")))
                store.datasets[ds.dataset_id] = ds
            qdir = root / "quarantine"
            for path in sorted(qdir.glob("*.json")) if qdir.exists() else ():
                store.quarantine[path.stem] = [QuarantinedRow(**q) for q in json.loads(path.read_text("utf-8"))]
            journal = root / "dsr-journal.jsonl"
            if journal.exists():
                for line in journal.read_text("utf-8").splitlines():
                    if line.strip():
                        store._replay(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptStore(f"{root}: {exc}") from exc
        return store

    def _replay(self, event: Mapping) -> None:
        self.journal.append(dict(event))
        kind, rid = event["event"], event["request_id"]
        if kind == "received":
            self.requests[rid] = DSRRequestRecord(
                rid, event["dsr_type"], Scope.from_wire(event["scope"]), ts_decode(event["received_at"])
            )
        elif kind in ("fulfilled", "declined") and rid in self.requests:
            self.requests[rid].status = kind
        else:
            raise CorruptStore(f"bad journal event {event!r}")


def catalog_of(records: Iterable[DataRecord]) -> tuple[AttributeType, ...]:
    types: dict[str, AttributeType] = {}
    for r in records:
        for f in r.typed_fields():
            a = attribute(f.attr.derived_from) if f.attr.derived else f.attr
            types[a.id] = a
    return tuple(types[k] for k in sorted(types))
