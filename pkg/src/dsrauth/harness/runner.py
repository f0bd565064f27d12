"""Drive the four actors through a scenario and check every protocol invariant.

A run builds a population, the SP store derived from it, an issuer, an IdP,
an SP and one wallet per person, all on one transport. Flows execute one at
a time with the fixed clock advanced a second per flow, so a given (scenario,
seed) always produces the same transcript. After the flows, invariant checks
append ``assertion`` events to the transcript.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Callable, Optional

from ..actors.clock import FixedClock
from ..actors.consent import parse_consent, scripted
from ..actors.http import ActorServer
from ..actors.services import IdpService, IssuerService, SpService, WalletService
from ..actors.transport import HttpTransport, InProcessTransport, Transcript, Transport, TransportError
from ..credentials import CredentialBundle, IssuerKey, IssuerState, Mode, Verdict
from ..datastore import Scope, source_values
from ..encoding import b64e, canonical_json, ts_decode
from ..protocol import machines as m
from ..protocol.messages import (
    CredentialRequest,
    CredentialResponse,
    DsrRequest,
    DsrResult,
    FimVerificationRequest,
    IssueRequest,
    IssueResponse,
    RevokeRequest,
    VerificationRequest,
    VerificationResponse,
    decode,
    encode,
)
from .oracle import ScaleExceeded, oracle_match_chunked
from .population import BuiltStore, Person, build_store, fresh_identity, generate_population
from .scenario import Scenario

log = logging.getLogger(__name__)

ISSUER, IDP, SP, ADVERSARY, PROBE = "issuer-1", "idp-1", "sp-1", "wallet-adversary", "sp-probe"

ACCEPT_BODY = encode(VerificationResponse(Verdict.ACCEPT))
DECLINE_BODY = encode(VerificationResponse(Verdict.DECLINE))


class AssertionFailure(AssertionError):
    def __init__(self, report: RunReport):
        super().__init__(f"{report.scenario}: " + "; ".join(report.assertion_failures))
        self.report = report


@dataclass
class RunReport:
    scenario: str
    seed: int
    flow: str
    mode: str
    adversary: str
    transport: str = "inprocess"
    attempts: int = 0
    accepts: int = 0
    declines: int = 0
    pending: int = 0
    false_accepts: int = 0
    false_rejects: int = 0
    notifications_sent: int = 0
    notifications_expected: int = 0
    privacy_violations: int = 0
    oracle_checked: int = 0
    oracle_mismatches: int = 0
    replay_accepts: int = 0
    replay_state_changes: int = 0
    probes: int = 0
    idp_learned_values: int = 0
    idp_learned_fraction: float = 0.0
    rogue_accepts: int = 0
    decline_bodies: list[str] = field(default_factory=list)
    request_bodies: int = 0
    assertions: dict[str, bool] = field(default_factory=dict)
    assertion_failures: list[str] = field(default_factory=list)
    transcript_path: Optional[str] = None
    transcript_sha256: str = ""
    transcript: bytes = field(default=b"", repr=False)

    def to_json(self) -> dict:
        out = asdict(self)
        del out["transcript"]
        return out

    @property
    def ok(self) -> bool:
        return not self.assertion_failures

    def summary(self) -> str:
        lines = [
            f"scenario {self.scenario} (seed {self.seed}, {self.flow}/{self.mode}, adversary {self.adversary}, "
            f"{self.transport})",
            f"  attempts {self.attempts}: {self.accepts} accepted, {self.declines} declined, {self.pending} pending",
            f"  false accepts {self.false_accepts}, false rejects {self.false_rejects}",
        ]
        if self.flow == "fim":
            lines.append(f"  notifications {self.notifications_sent} sent / {self.notifications_expected} expected")
        if self.oracle_checked:
            lines.append(f"  oracle agreement {self.oracle_checked - self.oracle_mismatches}/{self.oracle_checked}")
        if self.adversary == "replayer":
            lines.append(f"  replays accepted {self.replay_accepts}, state changes {self.replay_state_changes}")
        if self.adversary == "probing_sp":
            lines.append(f"  probes {self.probes}")
        if self.adversary == "malicious_idp_probe":
            lines.append(f"  IdP saw {self.idp_learned_values} store values "
                         f"({self.idp_learned_fraction:.0%} of the store); rogue accepts {self.rogue_accepts}")
        lines.append(f"  privacy violations {self.privacy_violations}, distinct decline bodies {len(self.decline_bodies)}")
        for name, ok in self.assertions.items():
            lines.append(f"  [{'ok' if ok else 'FAIL'}] {name}")
        lines.append(f"  transcript sha256 {self.transcript_sha256}")
        return "\n".join(lines)


def _randbytes(seed: int, label: str) -> Callable[[int], bytes]:
    return random.Random(f"{seed}:{label}").randbytes


def _wallet_id(p: Person) -> str:
    return "wallet-" + p.person_id.split("-", 1)[1]


class _ReplayWallet(WalletService):
    """Answers any credential request with a previously captured response."""

    replay: Optional[CredentialResponse] = None

    def answer(self, msg: CredentialRequest) -> Optional[CredentialResponse]:
        return self.replay


class _RogueIdp(IdpService):
    """An IdP that vouches for its own handles without a credential or a notification."""

    rogue_handles: frozenset[str] = frozenset()

    def _fim_verify(self, p: str, body: bytes) -> VerificationResponse:
        try:
            msg = decode(body, expect=FimVerificationRequest)
        except ValueError:
            msg = None
        if msg is not None and msg.ds_handle in self.rogue_handles:
            return VerificationResponse(Verdict.ACCEPT)
        return super()._fim_verify(p, body)


class _World:
    def __init__(self, s: Scenario, transport_kind: str):
        self.s = s
        self.rng = random.Random(f"{s.seed}:scenario")
        self.clock = FixedClock(ts_decode(s.clock))
        self.transcript = Transcript()
        self.transport_kind = transport_kind
        self.transport: Transport = (
            HttpTransport({}, self.transcript) if transport_kind == "http" else InProcessTransport(self.transcript)
        )
        self.servers: list[ActorServer] = []
        self.policy = s.resolve_policy()
        self.scope = Scope.from_wire(s.scope)

        self.people = generate_population(s.population, random.Random(f"{s.seed}:population"))
        self.built: BuiltStore = build_store(
            self.people, s.store, random.Random(f"{s.seed}:store"), self.clock.now().date()
        )
        self.store_values = source_values(self.built.store)

        key = IssuerKey.from_seed(ISSUER, random.Random(f"{s.seed}:issuer-key").randbytes(32))
        self.issuer_key = key
        issuer_state = IssuerState(key, registry={p.person_id: dict(p.attrs) for p in self.people})
        self.issuer = IssuerService(ISSUER, issuer_state, self.transport, self.clock, _randbytes(s.seed, ISSUER))
        idp_state = m.IdpState(IDP, {ISSUER: key.public_key}, policies={SP: self.policy})
        idp_cls = _RogueIdp if s.adversary.kind == "malicious_idp_probe" else IdpService
        self.idp = idp_cls(IDP, idp_state, {ISSUER: ISSUER}, self.transport, self.clock, _randbytes(s.seed, IDP))
        self.sp = SpService(SP, self.built.store, self.policy, IDP, self.transport, self.clock,
                            _randbytes(s.seed, SP), mode=s.mode)
        consent = scripted(parse_consent(dict(s.consent)))
        self.wallets: dict[str, WalletService] = {}
        for p in self.people:
            wid = _wallet_id(p)
            self.wallets[wid] = WalletService(wid, self.transport, self.clock, _randbytes(s.seed, wid), consent=consent)
        adv_cls = _ReplayWallet if s.adversary.kind == "replayer" else WalletService
        self.adversary = adv_cls(ADVERSARY, self.transport, self.clock, _randbytes(s.seed, ADVERSARY))

        actors = [self.issuer, self.idp, self.sp, self.adversary, *self.wallets.values()]
        if isinstance(self.transport, InProcessTransport):
            for a in actors:
                self.transport.attach(a.actor_id, a)
        else:
            for a in actors:
                srv = ActorServer(a, "127.0.0.1", 0).start()
                self.servers.append(srv)
                self.transport.peers[a.actor_id] = srv.url

    def close(self) -> None:
        for srv in self.servers:
            srv.stop()

    def tick(self) -> None:
        self.clock.advance(timedelta(seconds=1))

    # -- helpers --------------------------------------------------------------

    def issue(self, wallet: WalletService, person_id: str) -> CredentialBundle:
        selection = sorted(self.issuer.state.registry[person_id])
        resp = self.transport.call(wallet.actor_id, ISSUER, "POST", "/issue", IssueRequest(person_id, selection))
        assert isinstance(resp, IssueResponse)
        wallet.set_bundle(resp.bundle)
        return resp.bundle

    def handle_for(self, wallet_id: str) -> str:
        return b64e(random.Random(f"{self.s.seed}:handle:{wallet_id}").randbytes(16))

    def request(self, wallet: WalletService) -> Optional[DsrResult]:
        s = self.s
        self.tick()
        try:
            if s.flow == "fim" and s.initiate == "idp":
                out = wallet.initiate_via_idp(IDP, SP, s.dsr_type, self.scope)
            else:
                out = wallet.request_dsr(SP, s.dsr_type, self.scope, s.flow)
        except TransportError as exc:
            log.info("%s: request failed: %s", wallet.actor_id, exc)
            return None
        return out if isinstance(out, DsrResult) else None

    def disclosed_for(self, wallet: WalletService) -> dict[str, str]:
        """Cleartext values the wallet's most recent presentation carried."""
        if not wallet.state.consent_log or wallet.bundle is None:
            return {}
        entry = wallet.state.consent_log[-1]
        approved = set(entry.get("approved", []))
        return {c.attr.id: c.value.text for c in wallet.bundle.attributes if c.attr.id in approved}


def _tally(report: RunReport, result: Optional[DsrResult]) -> str:
    report.attempts += 1
    status = result.status if result is not None else "pending"
    if status == "fulfilled":
        report.accepts += 1
    elif status == "declined":
        report.declines += 1
    else:
        report.pending += 1
    return status


def _oracle_check(w: _World, report: RunReport, wallet: WalletService, candidates, result: Optional[DsrResult]) -> None:
    if w.s.mode is not Mode.CLEARTEXT or result is None or result.status == "pending":
        return
    flow = w.sp.state.flows.get(result.request_id)
    if flow is None or flow.decision is None:
        return
    disclosed = w.disclosed_for(wallet)
    try:
        expected = oracle_match_chunked(
            disclosed, candidates, w.policy, w.built.store.sensitivity_of(candidates), w.clock.now().date()
        )
    except ScaleExceeded:
        return
    report.oracle_checked += 1
    got = flow.decision
    if (expected.verdict, expected.matched_records, expected.level) != (got.verdict, got.matched_records, got.level):
        report.oracle_mismatches += 1
        log.warning("oracle disagrees on %s: expected %s, got %s", result.request_id, expected, got)


def _genuine_flows(w: _World, report: RunReport, requesters: list[Person]) -> None:
    for p in requesters:
        wallet = w.wallets[_wallet_id(p)]
        candidates = list(w.built.store.candidate_records(w.scope))
        owned = {r.record_id for r in candidates if w.built.owner.get(r.record_id) == p.person_id}
        result = w.request(wallet)
        status = _tally(report, result)
        if status == "fulfilled":
            flow = w.sp.state.flows[result.request_id]
            if any(w.built.owner.get(r) != p.person_id for r in flow.decision.matched_records):
                report.false_accepts += 1
        elif status == "declined" and owned:
            report.false_rejects += 1
        if w.s.flow == "ssi":
            _oracle_check(w, report, wallet, candidates, result)


def _stray_handle(w: _World) -> None:
    """A FIM request naming a handle no one registered: declined, nobody notified."""
    w.tick()
    rid = m.new_request_id(random.Random(f"{w.s.seed}:stray").randbytes)
    handle = b64e(random.Random(f"{w.s.seed}:stray-handle").randbytes(16))
    w.transport.call(ADVERSARY, SP, "POST", "/dsr", DsrRequest(rid, w.s.dsr_type, w.scope, "fim", ds_handle=handle))


def _setup_wallets(w: _World, people: list[Person]) -> None:
    for p in people:
        wallet = w.wallets[_wallet_id(p)]
        w.issue(wallet, p.person_id)
        if w.s.flow == "fim":
            wallet.register_at(IDP, w.handle_for(wallet.actor_id))


# -- adversaries ---------------------------------------------------------------


def _genuine_pool(w: _World, victim: Person, overlap) -> list[str]:
    comparable = {a.id for a in w.built.store.attribute_catalog()}
    if overlap == "all_but_unique":
        return sorted(a for a in victim.attrs if a != "pid.unique_id")
    pool = sorted(a for a in comparable if a in victim.attrs and a != "pid.unique_id")
    if overlap > len(pool):
        raise ValueError(f"overlap {overlap} exceeds the {len(pool)} comparable attributes")
    return w.rng.sample(pool, overlap)


def _impersonator(w: _World, report: RunReport) -> None:
    adv = w.adversary
    for n in range(w.s.adversary.attempts):
        victim = w.rng.choice(w.people)
        attrs = fresh_identity(w.rng, n)
        if not w.s.population.health:
            attrs.pop("eaa.health_insurance_id")
        for a in _genuine_pool(w, victim, w.s.adversary.overlap):
            attrs[a] = victim.attrs[a]
        fake = f"adversary-{n:05d}"
        w.issuer.state.registry[fake] = attrs
        w.issue(adv, fake)
        if w.s.flow == "fim":
            adv.register_at(IDP, w.handle_for(f"{ADVERSARY}:{n}"))
        candidates = list(w.built.store.candidate_records(w.scope))
        result = w.request(adv)
        if _tally(report, result) == "fulfilled":
            report.false_accepts += 1
        if w.s.flow == "ssi":
            _oracle_check(w, report, adv, candidates, result)


def _expired_wallet(w: _World, report: RunReport) -> None:
    adv = w.adversary
    adv.allow_expired = True
    for n in range(w.s.adversary.attempts):
        person = w.people[n % len(w.people)]
        if n % 2 == 0:
            bundle = w.issue(adv, person.person_id)
            if w.s.flow == "fim":
                adv.register_at(IDP, w.handle_for(f"{ADVERSARY}:{n}"))
            w.transport.call(ADVERSARY, ISSUER, "POST", "/revoke", RevokeRequest(b64e(bundle.bundle_id)))
        else:
            # a bundle that ran out last month; minted directly as an issuance fixture
            now = w.clock.now()
            with w.issuer._lock:
                bundle = w.issuer.state.issue(person.person_id, sorted(person.attrs),
                                              (now - timedelta(days=400), now - timedelta(days=35)),
                                              w.issuer.randbytes)
            adv.set_bundle(bundle)
            if w.s.flow == "fim":
                # registration refuses expired bundles, so a live registration is reused
                handle = w.handle_for(f"{ADVERSARY}:{n - 1}")
                adv.state = m.WalletState(ADVERSARY, bundle, handle, adv.state.consent_log, adv.state.notifications)
        if _tally(report, w.request(adv)) == "fulfilled":
            report.false_accepts += 1


def _replayer(w: _World, report: RunReport, requesters: list[Person]) -> None:
    adv: _ReplayWallet = w.adversary  # type: ignore[assignment]
    for p in requesters:
        wallet = w.wallets[_wallet_id(p)]
        before_events = len(w.transcript.events)
        result = w.request(wallet)
        status = _tally(report, result)
        if status == "fulfilled":
            owned = w.sp.state.flows[result.request_id].decision.matched_records
            if any(w.built.owner.get(r) != p.person_id for r in owned):
                report.false_accepts += 1
        captured = None
        for e in w.transcript.events[before_events:]:
            if e["event"] == "reply" and e["path"] == "/credential-request" and e["body"] is not None:
                captured = decode(e["body"], expect=CredentialResponse)
        if captured is None or result is None:
            continue

        store_before = canonical_json({k: d.to_json() for k, d in w.built.store.datasets.items()})
        audit_before = len(w.idp.state.audit)
        old_flows = dict(w.sp.state.flows)

        # fresh request answered with the captured presentation: the nonce cannot match
        adv.replay = captured
        replay = w.request(adv)
        if replay is not None and replay.status == "fulfilled":
            report.replay_accepts += 1
        # duplicate delivery of the genuine request must re-emit, not re-execute
        orig = None
        for e in w.transcript.events[before_events:]:
            if e["event"] == "send" and e["path"] == "/dsr" and e["from"] == wallet.actor_id:
                orig = decode(e["body"], expect=DsrRequest)
                break
        dup = w.transport.call(ADVERSARY, SP, "POST", "/dsr", orig) if orig is not None else None
        if dup is not None and encode(dup) != encode(result):
            report.replay_state_changes += 1

        changed = (
            canonical_json({k: d.to_json() for k, d in w.built.store.datasets.items()}) != store_before
            or len(w.idp.state.audit) != audit_before
            or any(w.sp.state.flows.get(rid) != f for rid, f in old_flows.items())
        )
        if changed:
            report.replay_state_changes += 1


def _probing_sp(w: _World, report: RunReport, requesters: list[Person]) -> None:
    """Replay crafted verification requests at the IdP and record what comes back."""
    _genuine_flows(w, report, requesters)
    presentations = []
    for e in w.transcript.events:
        if e["event"] == "send" and e["path"] == "/verify" and e["from"] == SP:
            presentations.append(decode(e["body"], expect=VerificationRequest))
    for vr in presentations[: max(1, w.s.adversary.attempts or len(presentations))]:
        wire = vr.to_wire()
        variants = [wire]
        for i, slot in enumerate(wire["presentation"]["claims"]):
            if slot.get("value") is not None:
                v = json.loads(json.dumps(wire))
                v["presentation"]["claims"][i]["value"] = slot["value"] + "x"
                variants.append(v)
        if vr.revealed_values:
            for k in sorted(vr.revealed_values):
                v = json.loads(json.dumps(wire))
                v["revealed_values"][k] = vr.revealed_values[k] + "x"
                variants.append(v)
        v = json.loads(json.dumps(wire))
        v["presentation"]["claims"] = v["presentation"]["claims"][:-1]
        variants.append(v)
        for v in variants:
            w.tick()
            try:
                msg = decode(canonical_json(v), expect=VerificationRequest)
            except ValueError:
                continue
            report.probes += 1
            w.transport.call(PROBE, IDP, "POST", "/verify", msg)
        # undecodable probe
        report.probes += 1
        w.tick()
        status, body = w.idp.handle("POST", "/verify", b"{\"type\":\"verification_request\"}")
        # recorded as the IdP's answer to the probing SP
        w.transcript.record({"event": "probe", "from": IDP, "to": PROBE, "path": "/verify", "status": status,
                             "body": json.loads(body) if body else None})


def _malicious_idp(w: _World, report: RunReport, requesters: list[Person]) -> None:
    _genuine_flows(w, report, requesters)
    learned: set[tuple[str, str]] = set()
    for e in w.transcript.events:
        if e["event"] == "send" and e["path"] == "/fim/verify" and e["to"] == IDP:
            for attr, values in e["body"]["candidate_values"].items():
                learned |= {(attr, v) for v in values}
    report.idp_learned_values = len(learned)
    report.idp_learned_fraction = round(len(learned & w.store_values) / max(1, len(w.store_values)), 4)
    # with what it saw, the IdP vouches for a handle of its own; the SP cannot tell
    rogue = b64e(random.Random(f"{w.s.seed}:rogue").randbytes(16))
    w.idp.rogue_handles = frozenset({rogue})
    for n in range(w.s.adversary.attempts):
        w.tick()
        rid = m.new_request_id(random.Random(f"{w.s.seed}:rogue:{n}").randbytes)
        try:
            out = w.transport.call(IDP, SP, "POST", "/dsr", DsrRequest(rid, w.s.dsr_type, w.scope, "fim", ds_handle=rogue))
        except TransportError:
            out = None
        if isinstance(out, DsrResult) and out.status == "fulfilled":
            report.rogue_accepts += 1


# -- invariant checks ----------------------------------------------------------


def _check(w: _World, report: RunReport, name: str, ok: bool, detail: str = "") -> None:
    report.assertions[name] = ok
    w.transcript.record({"event": "assertion", "name": name, "ok": ok, "detail": detail})
    if not ok:
        report.assertion_failures.append(f"{name}: {detail}" if detail else name)


def _as_bytes(body) -> bytes:
    return canonical_json(body) if body is not None else b""


def check_invariants(w: _World, report: RunReport) -> None:
    events = w.transcript.events
    s = w.s

    # opacity: the IdP answers verification with one of exactly two bodies
    declines, others = set(), set()
    for e in events:
        if e.get("from") == IDP and e["event"] in ("reply", "probe") and e["path"] in ("/verify", "/fim/verify"):
            b = _as_bytes(e["body"])
            if b == DECLINE_BODY:
                declines.add(b.decode())
            elif b != ACCEPT_BODY:
                others.add(b.decode())
    # every non-accept body, so a union across runs shows any leak
    report.decline_bodies = sorted(declines | others)
    _check(w, report, "opaque_decline", not others and len(declines) <= 1,
           f"{len(declines)} decline bodies, {len(others)} other bodies")

    # uniform request: one body per SP once the nonce is zeroed
    zeroed = set()
    for e in events:
        if e["event"] == "send" and e["path"] == "/credential-request" and e["from"] == SP:
            body = dict(e["body"])
            body["nonce"] = b64e(bytes(16))
            zeroed.add(canonical_json(body))
    report.request_bodies = len(zeroed)
    _check(w, report, "uniform_request", len(zeroed) <= 1, f"{len(zeroed)} distinct requests")

    # notifications: one per verification request with a known handle
    if s.flow == "fim":
        report.notifications_expected = sum(
            1 for e in w.idp.state.audit if e["event"] == "fim_verify" and e.get("known")
        )
        report.notifications_sent = sum(len(x.state.notifications) for x in [*w.wallets.values(), w.adversary])
        on_wire = sum(1 for e in events if e["event"] == "send" and e["path"] == "/notify")
        _check(w, report, "notification_audit",
               report.notifications_sent == report.notifications_expected == on_wire,
               f"{report.notifications_sent} delivered, {on_wire} sent, {report.notifications_expected} expected")

    # audit: the IdP logged every verification it answered (a rogue IdP keeps no honest log)
    answered = sum(1 for e in events if e.get("from") == IDP and e["event"] in ("reply", "probe")
                   and e["path"] in ("/verify", "/fim/verify"))
    if s.adversary.kind != "malicious_idp_probe":
        _check(w, report, "idp_audit_complete", w.idp.state.verification_count() == answered,
               f"{w.idp.state.verification_count()} audited, {answered} answered")

    # key hygiene: the issuer's signing seed never appears on the wire
    raw = w.transcript.lines()
    seed = w.issuer_key.private_bytes()
    _check(w, report, "key_hygiene", seed.hex().encode() not in raw and b64e(seed).encode() not in raw)

    # anonymity: nothing the wallet sends the SP names the wallet or the bundle
    leaks = 0
    bundle_ids = {b64e(x.bundle.bundle_id) for x in [*w.wallets.values(), w.adversary] if x.bundle is not None}
    for e in events:
        to_sp = (e["event"] == "send" and e.get("to") == SP and e["path"] == "/dsr") or (
            e["event"] == "reply" and e.get("to") == SP and e["path"] == "/credential-request")
        if not to_sp or e["body"] is None:
            continue
        text = _as_bytes(e["body"]).decode()
        if "bundle_id" in text or "wallet-" in text or any(b in text for b in bundle_ids):
            leaks += 1
    _check(w, report, "requester_anonymity", leaks == 0, f"{leaks} messages identify the requester")

    # hashed mode: the SP learns plaintext only for values it already held
    if s.mode is Mode.HASHED:
        violations = sum(1 for pair in w.sp.state.materialized if tuple(pair) not in w.store_values)
        for e in events:
            if e["event"] == "reply" and e.get("to") == SP and e["path"] == "/credential-request" and e["body"]:
                for slot in e["body"]["presentation"]["claims"]:
                    if slot.get("value") is not None:
                        violations += 1
        report.privacy_violations += violations
        _check(w, report, "hashed_privacy", violations == 0, f"{violations} plaintext values outside the store")

    if report.oracle_checked:
        _check(w, report, "oracle_agreement", report.oracle_mismatches == 0,
               f"{report.oracle_mismatches} of {report.oracle_checked} verdicts differ")
    if s.adversary.kind == "replayer":
        _check(w, report, "replay_rejected", report.replay_accepts == 0 and report.replay_state_changes == 0,
               f"{report.replay_accepts} accepted, {report.replay_state_changes} state changes")
    if s.adversary.kind == "expired_wallet":
        _check(w, report, "expired_declined", report.accepts == 0, f"{report.accepts} accepted")

    for key, want in sorted(s.expect.items()):
        got = getattr(report, key, None)
        _check(w, report, f"expect.{key}", got == want, f"got {got!r}, want {want!r}")


# -- entry point ---------------------------------------------------------------


def run_scenario(
    s: Scenario,
    out_dir: str | Path | None = None,
    *,
    transport: str = "inprocess",
    strict: bool = True,
) -> RunReport:
    """Run ``s`` and return its report.

    With ``out_dir`` the transcript (``transcript.jsonl``), the report
    (``report.json``) and a readable summary are written there. ``strict``
    raises :class:`AssertionFailure` after writing when any check failed.
    """
    if transport not in ("inprocess", "http"):
        raise ValueError(f"unknown transport {transport!r}")
    w = _World(s, transport)
    report = RunReport(s.name, s.seed, s.flow, s.mode.value, s.adversary.kind, transport)
    try:
        count = len(w.people) if s.requesters is None else min(s.requesters, len(w.people))
        requesters = w.people[:count]
        kind = s.adversary.kind
        _setup_wallets(w, requesters if kind != "malicious_idp_probe" else w.people[:count])
        if kind == "none":
            _genuine_flows(w, report, requesters)
            if s.flow == "fim":
                _stray_handle(w)
        elif kind == "impersonator":
            _impersonator(w, report)
        elif kind == "expired_wallet":
            _expired_wallet(w, report)
        elif kind == "replayer":
            _replayer(w, report, requesters)
        elif kind == "probing_sp":
            _probing_sp(w, report, requesters)
        else:
            _malicious_idp(w, report, requesters)
        check_invariants(w, report)
    finally:
        w.close()

    data = w.transcript.lines()
    report.transcript_sha256 = hashlib.sha256(data).hexdigest()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "transcript.jsonl"
        path.write_bytes(data)
        report.transcript_path = str(path)
        (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
        (out / "summary.txt").write_text(report.summary() + "\n", "utf-8")
    report.transcript = data
    if strict and report.assertion_failures:
        raise AssertionFailure(report)
    return report


def report_from_transcript(path: str | Path) -> dict:
    """Recount protocol outcomes from a written transcript."""
    events = Transcript.read(path)
    statuses: dict[str, int] = {}
    assertions = {}
    notifications = 0
    declines = set()
    for e in events:
        if e["event"] == "reply" and e["path"] == "/dsr" and e.get("body") and e["body"].get("type") == "dsr_result":
            st = e["body"]["status"]
            statuses[st] = statuses.get(st, 0) + 1
        elif e["event"] == "send" and e["path"] == "/notify":
            notifications += 1
        elif e["event"] == "assertion":
            assertions[e["name"]] = e["ok"]
        if e["event"] in ("reply", "probe") and e.get("path") in ("/verify", "/fim/verify"):
            b = _as_bytes(e.get("body"))
            if b != ACCEPT_BODY:
                declines.add(b.decode())
    return {
        "events": len(events),
        "results": dict(sorted(statuses.items())),
        "notifications": notifications,
        "distinct_decline_bodies": len(declines),
        "assertions": assertions,
        "ok": all(assertions.values()),
        "sha256": hashlib.sha256(Path(path).read_bytes()).hexdigest(),
    }
