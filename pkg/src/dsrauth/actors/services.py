"""The four actors as request handlers over the protocol state machines.

Every service answers ``handle(method, path, body) -> (status, body)``; the
HTTP front-end and the in-process transport both call exactly this. Actor
locks guard state updates only and are never held across an outbound call,
so nested flows (SP -> wallet -> ...) cannot deadlock. SP flows are
additionally serialized per request id.
"""

from __future__ import annotations

import logging
import os
import threading
from collections import defaultdict
from datetime import timedelta
from typing import Any, Callable, Mapping, Optional

from ..credentials import (
    CredentialBundle,
    CredentialError,
    ExpirationStatus,
    ExpiredBundle,
    InvalidBundle,
    IssuerState,
    Mode,
    UnknownBundle,
    UnknownPerson,
    Verdict,
)
from ..datastore import DataStore, Scope, StoreError, UnknownScopeId, UnauthorizedExecution
from ..encoding import EncodingError, b64d, b64e, ts_encode
from ..policy import AuthDecision, Level, MatchPolicy, PolicyError
from ..protocol import machines as m
from ..protocol.messages import (
    Ack,
    CredentialRequest,
    CredentialResponse,
    DeviceNotification,
    DsrRequest,
    DsrResult,
    ErrorReply,
    FimVerificationRequest,
    Health,
    Initiate,
    IssueRequest,
    IssueResponse,
    Message,
    Register,
    RevokeRequest,
    Validity,
    VerificationRequest,
    VerificationResponse,
    decode,
    encode,
)
from .clock import Clock
from .consent import ConsentTimeout
from .persist import CorruptState, StateDir
from .transport import Transport, TransportError

log = logging.getLogger(__name__)

RandBytes = Callable[[int], bytes]

_STATUS = [
    (EncodingError, 400),
    (UnknownPerson, 404),
    (UnknownBundle, 404),
    (UnknownScopeId, 404),
    (m.UnknownHandle, 404),
    (m.NonceMismatch, 409),
    (InvalidBundle, 422),
    (ExpiredBundle, 422),
    (UnauthorizedExecution, 403),
    (m.ProtocolError, 400),
    (CredentialError, 400),
    (StoreError, 400),
    (TransportError, 502),
]


class Service:
    kind = "actor"

    def __init__(
        self,
        actor_id: str,
        transport: Transport,
        clock: Clock,
        randbytes: RandBytes = os.urandom,
        state_dir: Optional[StateDir] = None,
    ):
        self.actor_id = actor_id
        self.transport = transport
        self.clock = clock
        self.randbytes = randbytes
        self.state_dir = state_dir
        self._lock = threading.RLock()
        self.routes: dict[tuple[str, str], Callable[[str, bytes], Optional[Message]]] = {
            ("GET", "/health"): lambda _p, _b: Health(self.actor_id, self.kind),
        }

    def _route(self, method: str, path: str):
        fn = self.routes.get((method, path))
        if fn is not None:
            return fn, ""
        # one trailing path parameter, e.g. /validity/{ref}
        head, _, param = path.rpartition("/")
        fn = self.routes.get((method, head + "/{}"))
        if fn is not None and param:
            return fn, param
        return None, ""

    def handle(self, method: str, path: str, body: bytes) -> tuple[int, bytes]:
        fn, param = self._route(method, path)
        if fn is None:
            return 404, encode(ErrorReply("NotFound", f"{method} {path}"))
        try:
            out = fn(param, body)
        except Exception as exc:  # mapped to a status; anything unmapped is a server error
            for cls, status in _STATUS:
                if isinstance(exc, cls):
                    break
            else:
                log.exception("%s: unhandled error on %s %s", self.actor_id, method, path)
                status = 500
            self._journal({"event": "error", "path": path, "error": type(exc).__name__})
            return status, encode(ErrorReply(type(exc).__name__, str(exc)))
        if out is None:
            return 204, b""
        return 200, encode(out)

    def _journal(self, event: Mapping[str, Any]) -> None:
        if self.state_dir is not None:
            self.state_dir.append({"at": ts_encode(self.clock.now()), **event})

    # persistence hooks
    def snapshot(self) -> dict:
        return {}

    def restore(self, data: Mapping[str, Any]) -> None:
        pass

    def load_state(self) -> None:
        if self.state_dir is None:
            return
        data = self.state_dir.load()
        if data is None:
            return
        try:
            self.restore(data)
        except CorruptState:
            raise
        except (KeyError, TypeError, ValueError, PolicyError) as exc:
            raise CorruptState(f"{self.actor_id}: {exc}") from exc

    def close(self) -> None:
        if self.state_dir is not None:
            with self._lock:
                self.state_dir.save(self.snapshot())


def _expect(body: bytes, cls):
    return decode(body, expect=cls)


# -- issuer -------------------------------------------------------------------


class IssuerService(Service):
    kind = "issuer"

    def __init__(self, actor_id: str, state: IssuerState, transport: Transport, clock: Clock,
                 randbytes: RandBytes = os.urandom, state_dir: Optional[StateDir] = None,
                 validity: timedelta = timedelta(days=365)):
        super().__init__(actor_id, transport, clock, randbytes, state_dir)
        self.state = state
        self.validity = validity
        self.routes.update({
            ("POST", "/issue"): self._issue,
            ("POST", "/revoke"): self._revoke,
            ("GET", "/validity/{}"): self._validity,
        })

    @property
    def issuer_id(self) -> str:
        return self.state.key.issuer_id

    def _issue(self, _p: str, body: bytes) -> IssueResponse:
        msg = _expect(body, IssueRequest)
        now = self.clock.now()
        with self._lock:
            bundle = self.state.issue(msg.person_id, msg.selection, (now, now + self.validity), self.randbytes)
        self._journal({"event": "issued", "bundle_id": b64e(bundle.bundle_id)})
        return IssueResponse(bundle)

    def _revoke(self, _p: str, body: bytes) -> Ack:
        msg = _expect(body, RevokeRequest)
        with self._lock:
            self.state.revoke(msg.bundle_id, self.clock.now())
        self._journal({"event": "revoked", "bundle_id": msg.bundle_id})
        return Ack()

    def _validity(self, ref: str, _b: bytes) -> Validity:
        now = self.clock.now()
        with self._lock:
            # a signature fingerprint is 64 hex digits; a bundle id is 22 base64url characters
            st = self.state.check_signature(ref, now) if len(ref) == 64 else self.state.check(ref, now)
        return Validity(st.state, st.valid_until)

    def snapshot(self) -> dict:
        return self.state.to_json()

    def restore(self, data: Mapping[str, Any]) -> None:
        if data.get("issuer_id") != self.issuer_id:
            raise CorruptState(f"snapshot belongs to {data.get('issuer_id')!r}")
        self.state = IssuerState.from_json(data, self.state.key)


# -- identity provider --------------------------------------------------------


class IdpService(Service):
    kind = "idp"

    def __init__(self, actor_id: str, state: m.IdpState, issuers: Mapping[str, str], transport: Transport,
                 clock: Clock, randbytes: RandBytes = os.urandom, state_dir: Optional[StateDir] = None):
        """``issuers`` maps issuer ids to the actor ids answering their validity endpoint."""
        super().__init__(actor_id, transport, clock, randbytes, state_dir)
        self.state = state
        self.issuers = dict(issuers)
        # issuers sharing this process (combined issuer+IdP deployments) are asked directly
        self.local_issuers: dict[str, IssuerService] = {}
        self.routes.update({
            ("POST", "/verify"): self._verify,
            ("POST", "/fim/verify"): self._fim_verify,
            ("POST", "/register"): self._register,
            ("POST", "/initiate"): self._initiate,
        })

    def _oracle(self, issuer_id: str) -> m.ExpirationOracle:
        def check(ref: str) -> ExpirationStatus:
            local = self.local_issuers.get(issuer_id)
            if local is not None:
                v = local._validity(ref, b"")
                return ExpirationStatus(v.status, v.valid_until)
            peer = self.issuers.get(issuer_id)
            if peer is None:
                return ExpirationStatus("unknown")
            try:
                v = self.transport.call(self.actor_id, peer, "GET", f"/validity/{ref}")
            except TransportError as exc:
                log.warning("validity lookup failed: %s", exc)
                return ExpirationStatus("unknown")
            if not isinstance(v, Validity):
                return ExpirationStatus("unknown")
            return ExpirationStatus(v.status, v.valid_until)

        return check

    def _apply(self, fn, *args):
        with self._lock:
            self.state, outs = fn(self.state, *args)
            return outs

    def _verify(self, _p: str, body: bytes) -> VerificationResponse:
        now = self.clock.now()
        try:
            msg = _expect(body, VerificationRequest)
        except EncodingError:
            # undecodable requests get the same answer as any other failure
            [out] = self._apply(lambda st: (st.audited({"event": "verify", "timestamp": ts_encode(now),
                                                         "issuer_id": None, "verdict": "decline"}),
                                            [VerificationResponse(Verdict.DECLINE)]))
            return out
        [out] = self._apply(m.idp_handle_verification, msg, self._oracle(msg.presentation.issuer_id), now)
        self._journal({"event": "verify", "verdict": out.verdict.value})
        return out

    def _fim_verify(self, _p: str, body: bytes) -> VerificationResponse:
        now = self.clock.now()
        try:
            msg = _expect(body, FimVerificationRequest)
        except EncodingError:
            [out] = self._apply(lambda st: (st.audited({"event": "fim_verify", "timestamp": ts_encode(now),
                                                         "sp_id": None, "verdict": "decline", "known": False}),
                                            [VerificationResponse(Verdict.DECLINE)]))
            return out
        with self._lock:
            reg = self.state.registry.get(msg.ds_handle)
        oracle = self._oracle(reg.bundle.issuer_id) if reg is not None else (lambda ref: ExpirationStatus("unknown"))
        outs = self._apply(m.idp_handle_fim_request, msg, oracle, now)
        verdict = outs[-1]
        for note in outs[:-1]:
            try:
                self.transport.call(self.actor_id, reg.device, "POST", "/notify", note)
            except TransportError as exc:
                log.warning("notification to %s failed: %s", reg.device, exc)
        self._journal({"event": "fim_verify", "verdict": verdict.verdict.value, "sp_id": msg.sp_id})
        return verdict

    def _register(self, _p: str, body: bytes) -> Ack:
        msg = _expect(body, Register)
        self._apply(m.idp_handle_register, msg, self._oracle(msg.bundle.issuer_id), self.clock.now())
        self._journal({"event": "register", "ds_handle": msg.ds_handle})
        return Ack()

    def _initiate(self, _p: str, body: bytes) -> Optional[Message]:
        msg = _expect(body, Initiate)
        [fwd] = self._apply(m.idp_handle_initiate, msg, self.clock.now())
        self._journal({"event": "initiate", "sp_id": msg.sp_id})
        return self.transport.call(self.actor_id, msg.sp_id, "POST", "/dsr", fwd)

    def register_policy(self, sp_id: str, policy: MatchPolicy) -> None:
        with self._lock:
            self.state = m.IdpState(self.state.idp_id, self.state.issuer_keys, self.state.registry,
                                    {**self.state.policies, sp_id: policy}, self.state.audit)

    def snapshot(self) -> dict:
        st = self.state
        return {
            "idp_id": st.idp_id,
            "registry": {h: {"bundle": r.bundle.to_wire(), "device": r.device} for h, r in st.registry.items()},
            "policies": {sp: p.to_json() for sp, p in st.policies.items()},
            "audit": list(st.audit),
        }

    def restore(self, data: Mapping[str, Any]) -> None:
        registry = {
            h: m.Registration(CredentialBundle.from_wire(r["bundle"]), r["device"]) for h, r in data["registry"].items()
        }
        policies = {sp: MatchPolicy.from_json(p) for sp, p in data["policies"].items()}
        # configured policies win over snapshotted ones
        policies.update(self.state.policies)
        self.state = m.IdpState(data["idp_id"], self.state.issuer_keys, registry, policies, tuple(data["audit"]))


# -- service provider ---------------------------------------------------------


def _flow_to_json(f: m.SpFlow) -> dict:
    d = f.decision
    return {
        "request_id": f.request_id,
        "dsr_type": f.dsr_type,
        "scope": f.scope.to_wire(),
        "flow": f.flow,
        "phase": f.phase.value,
        "nonce": b64e(f.nonce) if f.nonce is not None else None,
        "request": f.request.to_wire() if f.request is not None else None,
        "candidates": list(f.candidates),
        "fim_requests": [r.to_wire() for r in f.fim_requests],
        "decision": None if d is None else {
            "verdict": d.verdict.value, "matched": sorted(d.matched_records), "level": d.level.value,
        },
        "result": f.result.to_wire() if f.result is not None else None,
    }


def _flow_from_json(d: Mapping[str, Any]) -> m.SpFlow:
    dec = d["decision"]
    return m.SpFlow(
        request_id=d["request_id"],
        dsr_type=d["dsr_type"],
        scope=Scope.from_wire(d["scope"]),
        flow=d["flow"],
        phase=m.Phase(d["phase"]),
        nonce=b64d(d["nonce"], 16) if d["nonce"] is not None else None,
        request=decode(d["request"], CredentialRequest) if d["request"] is not None else None,
        candidates=tuple(d["candidates"]),
        fim_requests=tuple(decode(r, FimVerificationRequest) for r in d["fim_requests"]),
        decision=None if dec is None else AuthDecision(Verdict(dec["verdict"]), frozenset(dec["matched"]), Level(dec["level"])),
        result=decode(d["result"], DsrResult) if d["result"] is not None else None,
    )


class SpService(Service):
    kind = "sp"

    def __init__(self, actor_id: str, store: DataStore, policy: MatchPolicy, idp_id: str, transport: Transport,
                 clock: Clock, randbytes: RandBytes = os.urandom, state_dir: Optional[StateDir] = None,
                 mode: Mode = Mode.CLEARTEXT):
        super().__init__(actor_id, transport, clock, randbytes, state_dir)
        self.store = store
        self.policy = policy
        self.idp_id = idp_id
        self.state = m.SpState(actor_id, mode)
        self._flow_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self.routes[("POST", "/dsr")] = self._dsr

    def _apply(self, fn, *args):
        with self._lock:
            self.state, outs = fn(self.state, *args)
            return outs

    def _dsr(self, _p: str, body: bytes) -> DsrResult:
        msg = _expect(body, DsrRequest)
        with self._lock:
            flow_lock = self._flow_locks[msg.request_id]
        with flow_lock:
            result = self._run(msg)
        if result.status == "fulfilled" and msg.dsr_type == "erasure" and self.store.root is not None:
            with self._lock:
                self.store.save()  # erased records must not survive a restart
        self._journal({"event": "dsr", "request_id": msg.request_id, "status": result.status})
        return result

    def _pending(self, rid: str) -> DsrResult:
        return DsrResult(rid, "pending")

    def _run(self, msg: DsrRequest) -> DsrResult:
        rid = msg.request_id
        outs = self._apply(m.sp_handle_dsr_request, msg, self.store, self.policy, self.randbytes, self.clock.now())
        if not outs:
            return self._pending(rid)
        if isinstance(outs[0], DsrResult):
            return outs[0]

        if msg.flow == "fim":
            verdicts = []
            for req in outs:
                try:
                    v = self.transport.call(self.actor_id, self.idp_id, "POST", "/fim/verify", req)
                except TransportError as exc:
                    log.warning("IdP unavailable for %s: %s", rid, exc)
                    return self._pending(rid)
                verdicts.append(v if isinstance(v, VerificationResponse) else VerificationResponse(Verdict.DECLINE))
            [result] = self._apply(m.sp_handle_fim_responses, rid, verdicts, self.store)
            return result

        [creq] = outs
        try:
            wallet = self.transport.resolve_channel(msg.reply_channel or "")
            reply = self.transport.call(self.actor_id, wallet, "POST", "/credential-request", creq)
        except TransportError as exc:
            log.info("no credentials for %s: %s", rid, exc)
            return self._pending(rid)
        if not isinstance(reply, CredentialResponse):
            # the holder declined or could not present; the request stays open
            return self._pending(rid)
        try:
            outs = self._apply(m.sp_handle_credential_response, reply, self.store, self.policy, self.clock.now())
        except m.NonceMismatch:
            log.info("dropped credential response with a stale or foreign nonce (%s)", rid)
            return self._pending(rid)
        if isinstance(outs[0], DsrResult):
            return outs[0]
        try:
            verdict = self.transport.call(self.actor_id, self.idp_id, "POST", "/verify", outs[0])
        except TransportError as exc:
            log.warning("IdP unavailable for %s: %s", rid, exc)
            return self._pending(rid)
        if not isinstance(verdict, VerificationResponse):
            verdict = VerificationResponse(Verdict.DECLINE)
        [result] = self._apply(m.sp_finalize, rid, verdict, self.store)
        return result

    def snapshot(self) -> dict:
        st = self.state
        if self.store.root is not None:
            self.store.save()
        return {
            "sp_id": st.sp_id,
            "mode": st.mode.value,
            "flows": {rid: _flow_to_json(f) for rid, f in st.flows.items()},
            "nonces": {b64e(n): rid for n, rid in st.nonces.items()},
            "materialized": [list(x) for x in st.materialized],
        }

    def restore(self, data: Mapping[str, Any]) -> None:
        self.state = m.SpState(
            data["sp_id"],
            Mode(data["mode"]),
            {rid: _flow_from_json(f) for rid, f in data["flows"].items()},
            {b64d(n, 16): rid for n, rid in data["nonces"].items()},
            tuple(tuple(x) for x in data["materialized"]),
        )


# -- wallet -------------------------------------------------------------------

ConsentProvider = Callable[[CredentialRequest], m.Consent]


class WalletService(Service):
    kind = "wallet"

    def __init__(self, actor_id: str, transport: Transport, clock: Clock, randbytes: RandBytes = os.urandom,
                 state_dir: Optional[StateDir] = None, bundle: Optional[CredentialBundle] = None,
                 consent: Optional[ConsentProvider] = None):
        super().__init__(actor_id, transport, clock, randbytes, state_dir)
        self.state = m.WalletState(actor_id, bundle)
        self.consent: ConsentProvider = consent or (lambda req: m.Consent.all())
        self.allow_expired = False
        self.last_error: Optional[str] = None
        self.routes.update({
            ("POST", "/credential-request"): self._credential_request,
            ("POST", "/notify"): self._notify,
        })

    @property
    def bundle(self) -> Optional[CredentialBundle]:
        return self.state.bundle

    def set_bundle(self, bundle: CredentialBundle) -> None:
        with self._lock:
            self.state = m.WalletState(self.actor_id, bundle, self.state.ds_handle, self.state.consent_log,
                                       self.state.notifications)

    # inbound

    def _credential_request(self, _p: str, body: bytes) -> Optional[CredentialResponse]:
        msg = _expect(body, CredentialRequest)
        return self.answer(msg)

    def answer(self, msg: CredentialRequest) -> Optional[CredentialResponse]:
        """Present credentials for ``msg``; ``None`` when nothing may be sent."""
        if self.bundle is None:
            self.last_error = "NoBundle"
            return None
        try:
            try:
                consent = self.consent(msg)
            except ConsentTimeout as exc:
                raise m.ConsentDenied("consent timed out") from exc
            with self._lock:
                self.state, [out] = m.wallet_handle_credential_request(
                    self.state, msg, self.bundle, consent, self.clock.now(), allow_expired=self.allow_expired
                )
        except (m.ConsentDenied, ExpiredBundle) as exc:
            self.last_error = type(exc).__name__
            log.info("%s: not answering %s (%s)", self.actor_id, msg.sp_id, self.last_error)
            with self._lock:
                entry = {"sp_id": msg.sp_id, "requested": list(msg.requested), "approved": [],
                         "outcome": self.last_error}
                self.state = m.WalletState(self.actor_id, self.state.bundle, self.state.ds_handle,
                                           self.state.consent_log + (entry,), self.state.notifications)
            return None
        self.last_error = None
        return out

    def _notify(self, _p: str, body: bytes) -> Ack:
        msg = _expect(body, DeviceNotification)
        with self._lock:
            self.state, _ = m.wallet_handle_notification(self.state, msg)
        self._journal({"event": "notified", "sp_id": msg.sp_id})
        return Ack()

    # outbound

    def request_dsr(self, sp_id: str, dsr_type: str, scope: Scope, flow: str = "ssi") -> Optional[Message]:
        with self._lock:
            self.state, [msg] = m.wallet_start_dsr(self.state, dsr_type, scope, flow, self.randbytes)
        return self.send_dsr(sp_id, msg)

    def send_dsr(self, sp_id: str, msg: DsrRequest) -> Optional[Message]:
        if msg.reply_channel is not None:
            self.transport.bind_channel(msg.reply_channel, self.actor_id)
        try:
            return self.transport.call(self.actor_id, sp_id, "POST", "/dsr", msg)
        finally:
            if msg.reply_channel is not None:
                self.transport.release_channel(msg.reply_channel)

    def register_at(self, idp_id: str, ds_handle: str) -> None:
        if self.bundle is None:
            raise m.ProtocolError("no bundle to register")
        self.transport.call(self.actor_id, idp_id, "POST", "/register", Register(ds_handle, self.bundle, self.actor_id))
        with self._lock:
            self.state = m.WalletState(self.actor_id, self.state.bundle, ds_handle, self.state.consent_log,
                                       self.state.notifications)

    def initiate_via_idp(self, idp_id: str, sp_id: str, dsr_type: str, scope: Scope) -> Optional[Message]:
        with self._lock:
            self.state, [msg] = m.wallet_initiate_via_idp(self.state, dsr_type, scope, sp_id, self.randbytes)
        return self.transport.call(self.actor_id, idp_id, "POST", "/initiate", msg)

    def snapshot(self) -> dict:
        st = self.state
        return {
            "wallet_id": st.wallet_id,
            "bundle": st.bundle.to_wire() if st.bundle is not None else None,
            "ds_handle": st.ds_handle,
            "consent_log": list(st.consent_log),
            "notifications": [n.to_wire() for n in st.notifications],
        }

    def restore(self, data: Mapping[str, Any]) -> None:
        bundle = CredentialBundle.from_wire(data["bundle"]) if data["bundle"] is not None else self.state.bundle
        self.state = m.WalletState(
            data["wallet_id"],
            bundle,
            data["ds_handle"],
            tuple(data["consent_log"]),
            tuple(decode(n, DeviceNotification) for n in data["notifications"]),
        )


class CombinedService(Service):
    """Several roles behind one listener, e.g. an issuer that also verifies as an IdP."""

    def __init__(self, actor_id: str, parts: list[Service]):
        super().__init__(actor_id, parts[0].transport, parts[0].clock)
        self.parts = parts
        self.kind = "+".join(p.kind for p in parts)
        for p in parts:
            for key, fn in p.routes.items():
                if key != ("GET", "/health"):
                    self.routes[key] = fn

    def load_state(self) -> None:
        for p in self.parts:
            p.load_state()

    def close(self) -> None:
        for p in self.parts:
            p.close()
