"""Per-actor state machines for the SSI and FIM flows.

Handlers take the current actor state and one input and return the successor
state plus the messages to emit. States are immutable values; a handler that
raises leaves the caller's state untouched. Stores passed to the SP handlers
are the one mutable exception: they are the controller's own database.
"""

from __future__ import annotations

import enum
import logging
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Callable, Mapping, Optional, Sequence

from ..canonical import attribute, canonicalize
from ..credentials import (
    CredentialBundle,
    ExpirationStatus,
    ExpiredBundle,
    InvalidBundle,
    Mode,
    UseCase,
    Verdict,
    build_presentation,
    fingerprint,
    verify_bundle,
    verify_presentation,
)
from ..datastore import DataRecord, DataStore, DSRResult, Field, Scope, catalog_of
from ..encoding import b64e, ts_encode, utc
from ..policy import (
    DECLINED,
    DEFAULT_POLICY,
    AuthDecision,
    Level,
    MatchPolicy,
    ModeMismatch,
    evaluate,
    match_records,
    matched_values,
    score_records,
)
from .messages import (
    CredentialRequest,
    CredentialResponse,
    DeviceNotification,
    DsrRequest,
    DsrResult,
    FimVerificationRequest,
    Initiate,
    Register,
    VerificationRequest,
    VerificationResponse,
)

log = logging.getLogger(__name__)

RandBytes = Callable[[int], bytes]
ExpirationOracle = Callable[[str], ExpirationStatus]


class ProtocolError(Exception):
    pass


class NonceMismatch(ProtocolError):
    pass


class ConsentDenied(ProtocolError):
    pass


class UnknownHandle(ProtocolError):
    pass


class IllegalTransition(ProtocolError):
    pass


class Phase(str, enum.Enum):
    IDLE = "idle"
    AWAITING_CREDENTIALS = "awaiting_credentials"
    AWAITING_VERIFICATION = "awaiting_verification"
    AWAITING_IDP = "awaiting_idp"
    DONE = "done"


TRANSITIONS: dict[Phase, frozenset[Phase]] = {
    Phase.IDLE: frozenset({Phase.AWAITING_CREDENTIALS, Phase.AWAITING_IDP}),
    Phase.AWAITING_CREDENTIALS: frozenset({Phase.AWAITING_VERIFICATION, Phase.DONE}),
    Phase.AWAITING_VERIFICATION: frozenset({Phase.DONE}),
    Phase.AWAITING_IDP: frozenset({Phase.DONE}),
    Phase.DONE: frozenset(),
}


def new_request_id(randbytes: RandBytes) -> str:
    return str(uuid.UUID(bytes=randbytes(16), version=4))


# -- service provider ---------------------------------------------------------


@dataclass(frozen=True)
class SpFlow:
    request_id: str
    dsr_type: str
    scope: Scope
    flow: str
    phase: Phase = Phase.IDLE
    nonce: Optional[bytes] = None
    request: Optional[CredentialRequest] = None
    candidates: tuple[str, ...] = ()
    fim_requests: tuple[FimVerificationRequest, ...] = ()
    decision: Optional[AuthDecision] = None
    result: Optional[DsrResult] = None

    def advance(self, phase: Phase, **changes) -> SpFlow:
        if phase not in TRANSITIONS[self.phase]:
            raise IllegalTransition(f"{self.request_id}: {self.phase.value} -> {phase.value}")
        return replace(self, phase=phase, **changes)


@dataclass(frozen=True)
class SpState:
    sp_id: str
    mode: Mode = Mode.CLEARTEXT
    flows: Mapping[str, SpFlow] = field(default_factory=dict)
    nonces: Mapping[bytes, str] = field(default_factory=dict)  # kept after completion for replay rejection
    # instrumentation: (attr, value) pairs the SP turned into plaintext while handling hashed claims
    materialized: tuple[tuple[str, str], ...] = ()

    def with_flow(self, flow: SpFlow, **changes) -> SpState:
        return replace(self, flows={**self.flows, flow.request_id: flow}, **changes)


def _result_of(res: DSRResult) -> DsrResult:
    if res.exported is not None:
        payload = {"records": [r.to_json() | {"dataset_id": r.dataset_id} for r in res.exported]}
    else:
        payload = {"erased": res.erased}
    return DsrResult(res.request_id, res.status, payload)


def _typed_candidates(records: Sequence[DataRecord]) -> list[DataRecord]:
    return [r for r in records if r.typed_fields()]


def sp_handle_dsr_request(
    state: SpState,
    msg: DsrRequest,
    store: DataStore,
    policy: MatchPolicy,
    randbytes: RandBytes,
    now: datetime,
) -> tuple[SpState, list]:
    existing = state.flows.get(msg.request_id)
    if existing is not None:
        # at-least-once delivery: answer with what the flow already emitted
        if existing.phase is Phase.DONE:
            return state, [existing.result]
        if existing.phase is Phase.AWAITING_CREDENTIALS:
            return state, [existing.request]
        if existing.phase is Phase.AWAITING_IDP:
            return state, list(existing.fim_requests)
        return state, []

    scoped = store.candidate_records(msg.scope)  # raises UnknownScopeId
    store.open_request(msg.request_id, msg.dsr_type, msg.scope, now)
    flow = SpFlow(msg.request_id, msg.dsr_type, msg.scope, msg.flow)

    if msg.flow == "ssi":
        nonce = randbytes(16)
        # the full-store catalog, whatever the scope: every requester sees the same request
        catalog = tuple(a.id for a in store.attribute_catalog())
        req = CredentialRequest(nonce, catalog, state.mode, state.sp_id)
        flow = flow.advance(Phase.AWAITING_CREDENTIALS, nonce=nonce, request=req)
        return state.with_flow(flow, nonces={**state.nonces, nonce: msg.request_id}), [req]

    if msg.ds_handle is None:
        raise ProtocolError("FIM request without ds_handle")
    candidates = _typed_candidates(scoped)
    if not candidates:
        store.decline(store.requests[msg.request_id])
        result = DsrResult(msg.request_id, "declined")
        flow = flow.advance(Phase.AWAITING_IDP).advance(Phase.DONE, decision=DECLINED, result=result)
        return state.with_flow(flow), [result]
    required = tuple(a.id for a in catalog_of(scoped))
    sensitivity = store.sensitivity_of(scoped)
    outs = []
    for r in candidates:
        values: dict[str, list[str]] = {}
        for f in r.typed_fields():
            values.setdefault(f.attr.id, []).append(f.canonical)
        outs.append(
            FimVerificationRequest(
                state.sp_id, required, {k: tuple(v) for k, v in values.items()}, msg.ds_handle, sensitivity
            )
        )
    flow = flow.advance(
        Phase.AWAITING_IDP, candidates=tuple(r.record_id for r in candidates), fim_requests=tuple(outs)
    )
    return state.with_flow(flow), outs


def sp_handle_credential_response(
    state: SpState,
    msg: CredentialResponse,
    store: DataStore,
    policy: MatchPolicy,
    now: datetime,
) -> tuple[SpState, list]:
    p = msg.presentation
    rid = state.nonces.get(p.nonce)
    flow = state.flows.get(rid) if rid is not None else None
    if flow is None or flow.phase is not Phase.AWAITING_CREDENTIALS:
        raise NonceMismatch("no flow awaits credentials for this nonce")

    records = store.candidate_records(flow.scope)
    sensitivity = store.sensitivity_of(records)
    try:
        scores = score_records(p, records, policy, nonce=flow.nonce, as_of=utc(now).date(), expected_mode=state.mode)
        decision = evaluate(scores, policy, sensitivity)
    except ModeMismatch:
        log.info("request %s: presentation mode does not match the request", rid)
        scores, decision = None, DECLINED

    if decision.verdict is Verdict.DECLINE:
        store.decline(store.requests[rid])
        result = DsrResult(rid, "declined")
        return state.with_flow(flow.advance(Phase.DONE, decision=decision, result=result)), [result]

    revealed = None
    materialized = state.materialized
    if p.mode is Mode.HASHED:
        revealed = matched_values(scores, decision)
        materialized = materialized + tuple(sorted(revealed.items()))
    out = VerificationRequest(p, revealed)
    flow = flow.advance(Phase.AWAITING_VERIFICATION, decision=decision)
    return state.with_flow(flow, materialized=materialized), [out]


def _finish(state: SpState, flow: SpFlow, decision: AuthDecision, store: DataStore) -> tuple[SpState, list]:
    req = store.requests[flow.request_id]
    if decision.verdict is Verdict.ACCEPT:
        result = _result_of(store.execute_dsr(req, decision.matched_records, decision))
    else:
        store.decline(req)
        result = DsrResult(flow.request_id, "declined")
    return state.with_flow(flow.advance(Phase.DONE, decision=decision, result=result)), [result]


def sp_finalize(
    state: SpState,
    request_id: str,
    msg: VerificationResponse,
    store: DataStore,
) -> tuple[SpState, list]:
    flow = state.flows.get(request_id)
    if flow is None:
        raise ProtocolError(f"unknown request {request_id}")
    if flow.phase is Phase.DONE:
        return state, [flow.result]
    if flow.phase is not Phase.AWAITING_VERIFICATION:
        raise IllegalTransition(f"{request_id}: finalize in {flow.phase.value}")
    decision = flow.decision if msg.verdict is Verdict.ACCEPT else DECLINED
    return _finish(state, flow, decision, store)


def sp_handle_fim_responses(
    state: SpState,
    request_id: str,
    responses: Sequence[VerificationResponse],
    store: DataStore,
) -> tuple[SpState, list]:
    """Combine the per-candidate IdP verdicts: the matched set is every accepted record."""
    flow = state.flows.get(request_id)
    if flow is None:
        raise ProtocolError(f"unknown request {request_id}")
    if flow.phase is Phase.DONE:
        return state, [flow.result]
    if flow.phase is not Phase.AWAITING_IDP or len(responses) != len(flow.candidates):
        raise IllegalTransition(f"{request_id}: unexpected FIM verdicts")
    matched = frozenset(r for r, v in zip(flow.candidates, responses) if v.verdict is Verdict.ACCEPT)
    decision = AuthDecision(Verdict.ACCEPT, matched, Level.THRESHOLD) if matched else DECLINED
    return _finish(state, flow, decision, store)


# -- wallet -------------------------------------------------------------------


@dataclass(frozen=True)
class Consent:
    """Operator decision for one credential request. ``approved=None`` approves everything."""

    approved: Optional[frozenset[str]] = None
    denied: bool = False

    @classmethod
    def all(cls) -> Consent:
        return cls()

    @classmethod
    def deny(cls) -> Consent:
        return cls(denied=True)

    @classmethod
    def only(cls, *attr_ids: str) -> Consent:
        return cls(frozenset(attr_ids))


@dataclass(frozen=True)
class WalletState:
    wallet_id: str
    bundle: Optional[CredentialBundle] = None
    ds_handle: Optional[str] = None
    consent_log: tuple[dict, ...] = ()
    notifications: tuple[DeviceNotification, ...] = ()


def wallet_start_dsr(
    state: WalletState,
    dsr_type: str,
    scope: Scope,
    flow: str,
    randbytes: RandBytes,
) -> tuple[WalletState, list]:
    rid = new_request_id(randbytes)
    if flow == "ssi":
        return state, [DsrRequest(rid, dsr_type, scope, "ssi", reply_channel=b64e(randbytes(16)))]
    if state.ds_handle is None:
        raise UnknownHandle("wallet is not registered at an IdP")
    return state, [DsrRequest(rid, dsr_type, scope, "fim", ds_handle=state.ds_handle)]


def wallet_handle_credential_request(
    state: WalletState,
    msg: CredentialRequest,
    bundle: CredentialBundle,
    consent: Consent,
    now: datetime,
    *,
    allow_expired: bool = False,
) -> tuple[WalletState, list]:
    entry = {"sp_id": msg.sp_id, "requested": list(msg.requested)}
    if consent.denied:
        raise ConsentDenied(msg.sp_id)
    approved = set(msg.requested) if consent.approved is None else set(consent.approved) & set(msg.requested)
    withheld = [a for a in msg.requested if a not in approved]
    p = build_presentation(
        bundle, msg.requested, msg.mode, msg.nonce, UseCase.DSR, now, withheld=withheld, allow_expired=allow_expired
    )
    entry["approved"] = sorted(approved)
    return replace(state, consent_log=state.consent_log + (entry,)), [CredentialResponse(p)]


def wallet_handle_notification(state: WalletState, msg: DeviceNotification) -> tuple[WalletState, list]:
    return replace(state, notifications=state.notifications + (msg,)), []


def wallet_initiate_via_idp(
    state: WalletState,
    dsr_type: str,
    scope: Scope,
    sp_id: str,
    randbytes: RandBytes,
) -> tuple[WalletState, list]:
    if state.ds_handle is None:
        raise UnknownHandle("wallet is not registered at an IdP")
    return state, [Initiate(state.ds_handle, sp_id, new_request_id(randbytes), dsr_type, scope)]


# -- identity provider --------------------------------------------------------


@dataclass(frozen=True)
class Registration:
    bundle: CredentialBundle
    device: str


@dataclass(frozen=True)
class IdpState:
    idp_id: str
    issuer_keys: Mapping[str, bytes] = field(default_factory=dict)
    registry: Mapping[str, Registration] = field(default_factory=dict)
    policies: Mapping[str, MatchPolicy] = field(default_factory=dict)
    audit: tuple[dict, ...] = ()

    def audited(self, entry: dict) -> IdpState:
        return replace(self, audit=self.audit + (entry,))

    def verification_count(self) -> int:
        return sum(1 for e in self.audit if e["event"] in ("verify", "fim_verify"))


def idp_handle_verification(
    state: IdpState,
    msg: VerificationRequest,
    expiration: ExpirationOracle,
    now: datetime,
) -> tuple[IdpState, list]:
    p = msg.presentation
    key = state.issuer_keys.get(p.issuer_id)
    verdict = Verdict.DECLINE
    if key is not None and verify_presentation(p, key, now, msg.revealed_values).verdict is Verdict.ACCEPT:
        if expiration(fingerprint(p.signature)).valid:
            verdict = Verdict.ACCEPT
    entry = {"event": "verify", "timestamp": ts_encode(now), "issuer_id": p.issuer_id, "verdict": verdict.value}
    return state.audited(entry), [VerificationResponse(verdict)]


def _candidate_record(msg: FimVerificationRequest) -> DataRecord:
    fields = []
    for attr_id, values in sorted(msg.candidate_values.items()):
        attr = attribute(attr_id)
        for v in values:
            try:
                c = canonicalize(attr, v).text
            except ValueError:
                continue
            fields.append(Field(v, attr=attr, canonical=c, derived=attr.derived))
    return DataRecord("candidate", "fim", tuple(fields))


def idp_handle_fim_request(
    state: IdpState,
    msg: FimVerificationRequest,
    expiration: ExpirationOracle,
    now: datetime,
) -> tuple[IdpState, list]:
    """Match the registered bundle against one candidate record.

    A known handle always yields a :class:`DeviceNotification` ahead of the
    verdict, whatever the verdict is.
    """
    reg = state.registry.get(msg.ds_handle)
    if reg is None:
        entry = {"event": "fim_verify", "timestamp": ts_encode(now), "sp_id": msg.sp_id, "verdict": "decline", "known": False}
        return state.audited(entry), [VerificationResponse(Verdict.DECLINE)]
    policy = state.policies.get(msg.sp_id)
    if policy is None:
        log.info("no registered policy for %s, applying the default", msg.sp_id)
        policy = DEFAULT_POLICY
    verdict = Verdict.DECLINE
    if expiration(b64e(reg.bundle.bundle_id)).valid:
        required = set(msg.required)
        held = {
            c.attr.id: c.value.text for c in reg.bundle.attributes if c.attr.id in required and c.permits(UseCase.DSR)
        }
        decision = match_records(held, [_candidate_record(msg)], policy, msg.sensitivity, as_of=utc(now).date())
        verdict = decision.verdict
    note = DeviceNotification(msg.sp_id, tuple(sorted(msg.required)), now)
    entry = {"event": "fim_verify", "timestamp": ts_encode(now), "sp_id": msg.sp_id, "verdict": verdict.value, "known": True}
    return state.audited(entry), [note, VerificationResponse(verdict)]


def idp_handle_register(
    state: IdpState,
    msg: Register,
    expiration: ExpirationOracle,
    now: datetime,
) -> tuple[IdpState, list]:
    bundle = msg.bundle
    key = state.issuer_keys.get(bundle.issuer_id)
    if key is None or not verify_bundle(bundle, key):
        raise InvalidBundle(b64e(bundle.bundle_id))
    if not expiration(b64e(bundle.bundle_id)).valid:
        raise ExpiredBundle(b64e(bundle.bundle_id))
    state = replace(state, registry={**state.registry, msg.ds_handle: Registration(bundle, msg.device)})
    return state.audited({"event": "register", "timestamp": ts_encode(now), "ds_handle": msg.ds_handle}), []


def idp_handle_initiate(state: IdpState, msg: Initiate, now: datetime) -> tuple[IdpState, list]:
    if msg.ds_handle not in state.registry:
        raise UnknownHandle(msg.ds_handle)
    fwd = DsrRequest(msg.request_id, msg.dsr_type, msg.scope, "fim", ds_handle=msg.ds_handle)
    entry = {"event": "initiate", "timestamp": ts_encode(now), "sp_id": msg.sp_id, "request_id": msg.request_id}
    return state.audited(entry), [fwd]
