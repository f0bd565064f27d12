import io
import csv
from datetime import timedelta

import pytest

from dsrauth.credentials import Verdict
from dsrauth.datastore import (
    CorruptStore,
    DataStore,
    EmptySource,
    MappingMismatch,
    Scope,
    Sensitivity,
    UnauthorizedExecution,
    UnknownScopeId,
    read_csv,
)
from dsrauth.policy import AuthDecision, Level

from .conftest import NOW

ORDERS_CSV = """order_no,name,dob
A-1001,Mustermann,12.08.1991
A-1002,Schmidt,1985-03-04
A-1003,Weber,Feb 30 1990
A-1004,Müller,July 4 1970
"""
ORDERS_MAP = {"order_no": None, "name": "pid.family_name", "dob": "pid.birth_date"}


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def store():
    s = DataStore()
    s.ingest(rows(ORDERS_CSV), ORDERS_MAP, {"dataset_id": "orders", "description": "web shop"})
    s.ingest(
        rows("email,age\nerika@example.org,30-39\nmax@example.org,20–29\n"),
        {"email": "pid.email", "age": "derived.age_range"},
        {"dataset_id": "newsletter"},
    )
    return s


def accept(*ids):
    return AuthDecision(Verdict.ACCEPT, frozenset(ids), Level.THRESHOLD)


class TestIngest:
    def test_catalog_from_mapping(self):
        s = DataStore()
        s.ingest(rows(ORDERS_CSV), ORDERS_MAP, {"dataset_id": "orders"})
        assert [a.id for a in s.attribute_catalog()] == ["pid.birth_date", "pid.family_name"]

    def test_bad_row_quarantined(self, store):
        assert len(store.datasets["orders"].records) == 3
        q = store.quarantine["orders"]
        assert len(q) == 1 and q[0].raw == "Feb 30 1990" and q[0].row_index == 2

    def test_reingest_identical(self, store):
        before = (store.attribute_catalog(), len(store.datasets["orders"].records))
        store.ingest(rows(ORDERS_CSV), ORDERS_MAP, {"dataset_id": "orders"})
        assert (store.attribute_catalog(), len(store.datasets["orders"].records)) == before

    def test_untyped_and_derived_fields(self, store):
        r = store.datasets["orders"].records[0]
        f = {fl.label or fl.attr.id: fl for fl in r.fields}
        assert f["order_no"].attr is None and f["order_no"].raw == "A-1001"
        assert f["pid.birth_date"].canonical == "1991-08-12"
        n = store.datasets["newsletter"].records[1]
        age = [fl for fl in n.fields if fl.attr and fl.attr.id == "derived.age_range"][0]
        assert age.derived and age.canonical == "20-29"

    def test_errors(self):
        s = DataStore()
        with pytest.raises(EmptySource):
            s.ingest([], ORDERS_MAP, {"dataset_id": "x"})
        with pytest.raises(MappingMismatch):
            s.ingest(rows(ORDERS_CSV), {"zip": "pid.address"}, {"dataset_id": "x"})

    def test_csv_file(self, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text(ORDERS_CSV, encoding="utf-8")
        s = DataStore()
        s.ingest(read_csv(p), ORDERS_MAP, {"dataset_id": "orders"})
        assert len(s.datasets["orders"].records) == 3

    def test_sensitivity(self):
        s = DataStore()
        s.ingest(rows("ins\nX-1\n"), {"ins": "eaa.health_insurance_id"}, {"dataset_id": "pharmacy"})
        assert s.datasets["pharmacy"].sensitivity is Sensitivity.SPECIAL_CATEGORY
        assert s.sensitivity_of(s.candidate_records(Scope.all())) is Sensitivity.SPECIAL_CATEGORY


class TestCatalog:
    def test_union(self):
        s = DataStore()
        s.ingest(rows("a,b\nx,y\n"), {"a": "pid.given_name", "b": "pid.family_name"}, {"dataset_id": "d1"})
        s.ingest(rows("b,c\ny,z\n"), {"b": "pid.family_name", "c": "pid.address"}, {"dataset_id": "d2"})
        assert [a.id for a in s.attribute_catalog()] == ["pid.address", "pid.family_name", "pid.given_name"]
        s.ingest(rows("d\n1\n"), {"d": "pid.phone"}, {"dataset_id": "d3"})
        assert "pid.phone" in [a.id for a in s.attribute_catalog()]

    def test_empty(self):
        assert DataStore().attribute_catalog() == ()

    def test_derived_requests_source(self, store):
        ids = [a.id for a in store.attribute_catalog()]
        assert "derived.age_range" not in ids and "pid.birth_date" in ids and "pid.email" in ids


class TestScope:
    def test_all(self, store):
        assert len(store.candidate_records(Scope.all())) == 5

    def test_datasets(self, store):
        recs = store.candidate_records(Scope.datasets("newsletter"))
        assert {r.dataset_id for r in recs} == {"newsletter"} and len(recs) == 2

    def test_records(self, store):
        recs = store.candidate_records(Scope.records("orders/00001"))
        assert [r.record_id for r in recs] == ["orders/00001"]

    def test_unknown(self, store):
        with pytest.raises(UnknownScopeId):
            store.candidate_records(Scope.records("orders/99999"))
        with pytest.raises(UnknownScopeId):
            store.candidate_records(Scope.datasets("ghost"))


class TestExecute:
    def test_access(self, store):
        ids = ["orders/00000", "orders/00001", "orders/00003"]
        before = store.candidate_records(Scope.all())
        req = store.open_request("r1", "access", Scope.all(), NOW)
        res = store.execute_dsr(req, ids, accept(*ids))
        assert len(res.exported) == 3 and res.status == "fulfilled"
        assert store.candidate_records(Scope.all()) == before
        assert req.status == "fulfilled"

    def test_erasure(self, store):
        ids = ["orders/00000", "orders/00001", "orders/00003"]
        req = store.open_request("r1", "erasure", Scope.all(), NOW)
        res = store.execute_dsr(req, ids, accept(*ids))
        assert res.erased == 3
        left = {r.record_id for r in store.candidate_records(Scope.all())}
        assert not left & set(ids)
        # nothing of the erased records remains readable
        with pytest.raises(UnknownScopeId):
            store.candidate_records(Scope.records("orders/00000"))
        assert "mustermann" not in str([r.to_json() for r in store.candidate_records(Scope.all())])

    def test_empty_match(self, store):
        req = store.open_request("r1", "erasure", Scope.all(), NOW)
        # an Accept with an empty matched set cannot exist; an Accept covering other records still authorizes nothing extra
        res = store.execute_dsr(req, [], accept("orders/00000"))
        assert res.erased == 0 and req.status == "fulfilled"
        req2 = store.open_request("r2", "access", Scope.all(), NOW)
        assert store.execute_dsr(req2, [], accept("orders/00000")).exported == ()

    def test_unauthorized(self, store):
        req = store.open_request("r1", "erasure", Scope.all(), NOW)
        with pytest.raises(UnauthorizedExecution):
            store.execute_dsr(req, ["orders/00000"], None)
        with pytest.raises(UnauthorizedExecution):
            store.execute_dsr(req, ["orders/00000"], AuthDecision(Verdict.DECLINE))
        with pytest.raises(UnauthorizedExecution):
            store.execute_dsr(req, ["orders/00001"], accept("orders/00000"))

    def test_deadline(self, store):
        req = store.open_request("r1", "access", Scope.all(), NOW)
        assert req.deadline == NOW + timedelta(days=30)
        assert req.status_at(NOW + timedelta(days=30) - timedelta(seconds=1)) == "pending"
        assert req.status_at(NOW + timedelta(days=30)) == "overdue"
        store.decline(req)
        assert req.status_at(NOW + timedelta(days=31)) == "declined"

    def test_open_request_idempotent(self, store):
        a = store.open_request("r1", "access", Scope.all(), NOW)
        b = store.open_request("r1", "access", Scope.all(), NOW + timedelta(days=3))
        assert a is b and len(store.journal) == 1


class TestPersistence:
    def test_round_trip(self, store, tmp_path):
        store.root = tmp_path
        req = store.open_request("r1", "erasure", Scope.datasets("orders"), NOW)
        store.execute_dsr(req, ["orders/00000"], accept("orders/00000"))
        store.save()
        again = DataStore.load(tmp_path)
        assert again.attribute_catalog() == store.attribute_catalog()
        assert [r.record_id for r in again.candidate_records(Scope.all())] == [
            r.record_id for r in store.candidate_records(Scope.all())
        ]
        assert again.requests["r1"].status == "fulfilled"
        assert len(again.quarantine["orders"]) == 1

    def test_corrupt(self, store, tmp_path):
        store.save(tmp_path)
        (tmp_path / "datasets" / "orders.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(CorruptStore):
            DataStore.load(tmp_path)

    def test_canonical_mismatch_is_corrupt(self, store, tmp_path):
        store.save(tmp_path)
        p = tmp_path / "datasets" / "orders.json"
        p.write_text(p.read_text("utf-8").replace('"canonical":"mustermann"', '"canonical":"MUSTER"'), encoding="utf-8")
        with pytest.raises(CorruptStore):
            DataStore.load(tmp_path)
