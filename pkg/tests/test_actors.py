import json
import threading
import time
from datetime import timedelta

import pytest

from dsrauth.actors import (
    ActorServer,
    BindFailure,
    ConfigError,
    CorruptState,
    FixedClock,
    HttpTransport,
    InProcessTransport,
    StateDir,
    Transcript,
    build_service,
    load_config,
    prompt_consent,
    serve,
)
from dsrauth.actors.config import EXIT_CONFIG, EXIT_CORRUPT
from dsrauth.credentials import Mode
from dsrauth.datastore import Scope
from dsrauth.encoding import b64e, ts_decode
from dsrauth.protocol.messages import (
    CredentialRequest,
    DsrResult,
    Health,
    IssueRequest,
    IssueResponse,
    RevokeRequest,
    Validity,
    decode,
    encode,
)

from .deploy import ACTORS, REGISTRY, write_deployment

NOW = ts_decode("2026-03-01T12:00:00Z")
SELECTION = tuple(sorted(REGISTRY["person-1"]))


class Running:
    """The four actors of a deployment, each behind its own HTTP listener in this process."""

    def __init__(self, dep, transcript=None):
        self.dep = dep
        self.clock = FixedClock(NOW)
        self.transcript = transcript or Transcript()
        self.services = {}
        self.servers = {}
        for actor in ACTORS:
            cfg = load_config(dep.config(actor))
            svc = build_service(cfg, HttpTransport(cfg.peers, self.transcript), self.clock)
            self.services[actor] = svc
            self.servers[actor] = ActorServer(svc, *cfg.listen).start()

    def call(self, actor, method, path, msg=None):
        return self.services[actor].transport.call("test", actor, method, path, msg)

    def issue(self, person="person-1", selection=SELECTION):
        resp = self.call("issuer-1", "POST", "/issue", IssueRequest(person, selection))
        assert isinstance(resp, IssueResponse)
        return resp.bundle

    @property
    def wallet(self):
        return self.services["wallet-1"]

    def stop(self):
        for s in self.servers.values():
            s.stop()


@pytest.fixture
def running(tmp_path):
    r = Running(write_deployment(tmp_path / "dep"))
    yield r
    r.stop()


class TestHttpDeployment:
    def test_health_endpoints(self, running):
        for actor in ACTORS:
            h = running.call(actor, "GET", "/health")
            assert isinstance(h, Health)
            assert h.actor_id == actor

    def test_ssi_access_end_to_end(self, running):
        running.wallet.set_bundle(running.issue())
        out = running.wallet.request_dsr("sp-1", "access", Scope.all())
        assert isinstance(out, DsrResult) and out.status == "fulfilled"
        rows = [r for ds in out.payload["datasets"] for r in ds["records"]] if "datasets" in out.payload else None
        body = json.dumps(out.payload)
        assert "Erika@Example.org" in body or "erika@example.org" in body.lower()
        assert "jonas" not in body.lower()
        assert rows is None or len(rows) == 1

    def test_fim_flow_notifies_device(self, running):
        running.wallet.set_bundle(running.issue())
        running.wallet.register_at("idp-1", "handle-1")
        out = running.wallet.request_dsr("sp-1", "access", Scope.all(), "fim")
        assert out.status == "fulfilled"
        # one verification per candidate record, each one announced to the device
        notes = running.wallet.state.notifications
        assert len(notes) == 3
        assert {n.sp_id for n in notes} == {"sp-1"}

    def test_issue_twice_both_valid(self, running):
        a, b = running.issue(), running.issue()
        assert a.bundle_id != b.bundle_id
        for bundle in (a, b):
            v = running.call("issuer-1", "GET", f"/validity/{b64e(bundle.bundle_id)}")
            assert isinstance(v, Validity) and v.status == "valid"

    def test_revoke_is_idempotent_and_unknown_is_404(self, running):
        bundle = running.issue()
        ref = b64e(bundle.bundle_id)
        running.call("issuer-1", "POST", "/revoke", RevokeRequest(ref))
        running.call("issuer-1", "POST", "/revoke", RevokeRequest(ref))
        assert running.call("issuer-1", "GET", f"/validity/{ref}").status == "expired"
        status, body = running.services["issuer-1"].handle("POST", "/revoke", encode(RevokeRequest("A" * 22)))
        assert status == 404
        assert decode(body).error == "UnknownBundle"

    def test_revoked_bundle_is_declined(self, running):
        bundle = running.issue()
        running.wallet.set_bundle(bundle)
        running.call("issuer-1", "POST", "/revoke", RevokeRequest(b64e(bundle.bundle_id)))
        out = running.wallet.request_dsr("sp-1", "access", Scope.all())
        assert out.status == "declined"

    def test_register_rejects_tampered_bundle(self, running):
        from dataclasses import replace

        from dsrauth.protocol.messages import Register

        bundle = running.issue()
        bad = replace(bundle, signature=bytes(64))
        status, body = running.services["idp-1"].handle("POST", "/register", encode(Register("h", bad, "wallet-1")))
        assert status == 422
        assert decode(body).error == "InvalidBundle"

    def test_unknown_path_and_garbage_body(self, running):
        status, body = running.services["sp-1"].handle("GET", "/nope", b"")
        assert status == 404
        status, body = running.services["sp-1"].handle("POST", "/dsr", b"{not json")
        assert status == 400
        assert decode(body).error == "EncodingError"

    def test_unresolvable_reply_channel_leaves_request_pending(self, running):
        wallet = running.wallet
        wallet.set_bundle(running.issue())
        # without a relay the SP's transport cannot map the wallet's reply token to an actor
        running.services["sp-1"].transport.channel_relay = None
        out = wallet.request_dsr("sp-1", "access", Scope.all())
        assert out.status == "pending"

    def test_transcript_records_send_and_reply(self, running):
        running.wallet.set_bundle(running.issue())
        running.wallet.request_dsr("sp-1", "access", Scope.all())
        events = [json.loads(line) for line in running.transcript.lines().splitlines()]
        paths = {e["path"] for e in events if e["event"] == "send"}
        assert {"/issue", "/dsr", "/credential-request", "/verify"} <= paths


class TestPersistence:
    def test_sp_erasure_survives_restart(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        r = Running(dep)
        try:
            r.wallet.set_bundle(r.issue())
            out = r.wallet.request_dsr("sp-1", "erasure", Scope.all())
            assert out.status == "fulfilled"
        finally:
            r.stop()
        sp = build_service(load_config(dep.config("sp-1")), InProcessTransport())
        left = [rec.record_id for rec in sp.store.candidate_records(Scope.all())]
        assert len(left) == 2
        assert len(sp.state.flows) == 1

    def test_issuer_state_restored(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        r = Running(dep)
        try:
            bundle = r.issue()
        finally:
            r.stop()
        issuer = build_service(load_config(dep.config("issuer-1")), InProcessTransport(), FixedClock(NOW))
        status, body = issuer.handle("GET", f"/validity/{b64e(bundle.bundle_id)}", b"")
        assert status == 200 and decode(body).status == "valid"

    def test_corrupt_snapshot_refuses_to_start(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        state = dep.root / "state" / "sp-1"
        state.mkdir(parents=True)
        (state / "state.json").write_text("{broken", "utf-8")
        with pytest.raises(CorruptState):
            build_service(load_config(dep.config("sp-1")), InProcessTransport())
        assert serve(load_config(dep.config("sp-1"))) == EXIT_CORRUPT

    def test_seeded_restart_draws_fresh_randomness(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        draws = [build_service(load_config(dep.config("wallet-1")), InProcessTransport()).randbytes(16)
                 for _ in range(2)]
        assert draws[0] != draws[1]
        again = write_deployment(tmp_path / "dep2")
        assert build_service(load_config(again.config("wallet-1")), InProcessTransport()).randbytes(16) == draws[0]

    def test_corrupt_journal_line(self, tmp_path):
        sd = StateDir(tmp_path)
        sd.append({"event": "ok"})
        with open(sd.journal_path, "ab") as fh:
            fh.write(b"[1, 2\n")
        with pytest.raises(CorruptState):
            sd.load()

    def test_snapshot_round_trip(self, tmp_path):
        sd = StateDir(tmp_path / "s")
        assert sd.load() is None
        sd.save({"b": 1, "a": [1, 2]})
        assert sd.load() == {"a": [1, 2], "b": 1}


class TestConfig:
    def test_missing_actor_section(self, tmp_path):
        p = tmp_path / "x.ini"
        p.write_text("[peers]\n", "utf-8")
        with pytest.raises(ConfigError, match="actor"):
            load_config(p)

    def test_unknown_kind(self, tmp_path):
        p = tmp_path / "x.ini"
        p.write_text("[actor]\nkind = broker\nid = b\n", "utf-8")
        with pytest.raises(ConfigError, match="kind"):
            load_config(p)

    def test_sp_idp_must_be_a_peer(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        text = dep.config("sp-1").read_text("utf-8").replace("idp = idp-1", "idp = idp-9")
        dep.config("sp-1").write_text(text, "utf-8")
        with pytest.raises(ConfigError, match="idp-9"):
            load_config(dep.config("sp-1"))

    def test_idp_needs_issuer_key(self, tmp_path):
        p = tmp_path / "idp.ini"
        p.write_text("[actor]\nkind = idp\nid = idp-1\n", "utf-8")
        with pytest.raises(ConfigError, match="issuer"):
            load_config(p)

    def test_bad_listen_and_clock(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        with pytest.raises(ConfigError, match="listen"):
            load_config(dep.config("sp-1"), env={"DSRAUTH_LISTEN": "nowhere"})
        with pytest.raises(ConfigError, match="clock"):
            load_config(dep.config("sp-1"), env={"DSRAUTH_CLOCK": "sundial"})

    def test_env_overrides(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        cfg = load_config(dep.config("sp-1"), env={"DSRAUTH_LISTEN": "127.0.0.1:9999",
                                                   "DSRAUTH_CLOCK": "fixed:2030-01-01T00:00:00Z"})
        assert cfg.listen == ("127.0.0.1", 9999)
        assert cfg.clock == "fixed:2030-01-01T00:00:00Z"

    def test_bad_issuer_key_file(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        (dep.root / "issuer.key").write_text("zz\n", "ascii")
        with pytest.raises(ConfigError, match="key"):
            build_service(load_config(dep.config("issuer-1")), InProcessTransport())

    def test_missing_consent_file(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        (dep.root / "consent.json").unlink()
        with pytest.raises(ConfigError, match="consent"):
            load_config(dep.config("wallet-1"))

    def test_serve_reports_config_and_bind_errors(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        (dep.root / "registry.json").write_text("[]", "utf-8")
        assert serve(load_config(dep.config("issuer-1"))) == EXIT_CONFIG
        cfg = load_config(dep.config("idp-1"))
        blocker = ActorServer(build_service(cfg, InProcessTransport()), *cfg.listen)
        try:
            with pytest.raises(BindFailure):
                ActorServer(build_service(cfg, InProcessTransport()), *cfg.listen)
            assert serve(cfg) == EXIT_CONFIG
        finally:
            blocker.httpd.server_close()

    def test_serve_until_stopped(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        cfg = load_config(dep.config("idp-1"))
        ready = threading.Event()
        codes = []
        t = threading.Thread(target=lambda: codes.append(serve(cfg, ready)), daemon=True)
        t.start()
        assert ready.wait(5)
        h = HttpTransport({"idp-1": dep.url("idp-1")}).call("test", "idp-1", "GET", "/health")
        assert h.kind == "idp"


class TestConsent:
    REQ = CredentialRequest(bytes(16), ("pid.birth_date", "pid.given_name"), Mode.CLEARTEXT, "sp-1")

    def test_prompt_answers(self):
        answers = iter(["y", "n"])
        c = prompt_consent(lambda _prompt: next(answers), out=open("/dev/null", "w"), timeout=2)(self.REQ)
        assert c.approved == frozenset({"pid.birth_date"})

    def test_prompt_timeout_is_a_denial(self, running):
        def stall(_prompt):
            time.sleep(5)
            return "y"

        wallet = running.wallet
        wallet.set_bundle(running.issue())
        wallet.consent = prompt_consent(stall, out=open("/dev/null", "w"), timeout=0.1)
        out = wallet.request_dsr("sp-1", "access", Scope.all())
        assert out.status == "pending"
        assert wallet.last_error == "ConsentDenied"

    def test_eof_denies_everything(self):
        def eof(_prompt):
            raise EOFError

        c = prompt_consent(eof, out=open("/dev/null", "w"), timeout=2)(self.REQ)
        assert c.denied


class TestKeyHygiene:
    def test_private_key_never_on_the_wire(self, running):
        running.wallet.set_bundle(running.issue())
        running.wallet.register_at("idp-1", "h-7")
        running.wallet.request_dsr("sp-1", "access", Scope.all())
        running.wallet.request_dsr("sp-1", "access", Scope.all(), "fim")
        seed = bytes(range(32))
        wire = running.transcript.lines()
        assert seed.hex().encode() not in wire
        assert b64e(seed).encode() not in wire

    def test_key_file_mode(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        assert (dep.root / "issuer.key").stat().st_mode & 0o077 == 0

    def test_validity_window_follows_config(self, tmp_path):
        dep = write_deployment(tmp_path / "dep")
        text = dep.config("issuer-1").read_text("utf-8") + "validity_days = 10\n"
        dep.config("issuer-1").write_text(text, "utf-8")
        clock = FixedClock(NOW)
        issuer = build_service(load_config(dep.config("issuer-1")), InProcessTransport(), clock)
        _, body = issuer.handle("POST", "/issue", encode(IssueRequest("person-1", SELECTION)))
        bundle = decode(body).bundle
        assert bundle.valid_until - bundle.valid_from == timedelta(days=10)
