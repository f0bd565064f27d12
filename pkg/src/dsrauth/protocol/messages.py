"""Protocol message vocabulary.

Every message serializes to a JSON object with a ``type`` discriminator and
a fixed key set. :func:`decode` is strict: unknown types, missing or extra
keys and malformed field values raise :class:`~dsrauth.encoding.EncodingError`.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Any, Mapping, Optional, Union

from ..canonical import NONCE_LEN, UnknownAttribute, attribute
from ..credentials import CredentialBundle, Mode, Presentation, Verdict
from ..datastore import Scope, Sensitivity
from ..encoding import EncodingError, b64d, b64e, canonical_json, loads, ts_decode, ts_encode

DSR_TYPES = ("access", "erasure")
FLOWS = ("ssi", "fim")


def _attr_ids(values: Any) -> tuple[str, ...]:
    if not isinstance(values, list):
        raise ValueError("attribute list expected")
    for v in values:
        attribute(v)
    if len(set(values)) != len(values):
        raise ValueError("duplicate attribute")
    return tuple(values)


def _text(v: Any) -> str:
    if not isinstance(v, str):
        raise ValueError("text expected")
    return v


@dataclass(frozen=True)
class DsrRequest:
    request_id: str
    dsr_type: str
    scope: Scope
    flow: str
    reply_channel: Optional[str] = None
    ds_handle: Optional[str] = None

    type = "dsr_request"

    def to_wire(self) -> dict:
        out = {
            "type": self.type,
            "request_id": self.request_id,
            "dsr_type": self.dsr_type,
            "scope": self.scope.to_wire(),
            "flow": self.flow,
        }
        if self.reply_channel is not None:
            out["reply_channel"] = self.reply_channel
        if self.ds_handle is not None:
            out["ds_handle"] = self.ds_handle
        return out

    @classmethod
    def _from(cls, d: Mapping) -> DsrRequest:
        if d["dsr_type"] not in DSR_TYPES or d["flow"] not in FLOWS:
            raise ValueError("bad dsr_type or flow")
        scope = d["scope"]
        if not isinstance(scope, Mapping) or not set(scope) <= {"kind", "ids"}:
            raise ValueError("bad scope")
        rc = d.get("reply_channel")
        dh = d.get("ds_handle")
        return cls(
            _text(d["request_id"]),
            d["dsr_type"],
            Scope(scope["kind"], tuple(_text(i) for i in scope.get("ids", ()))),
            d["flow"],
            None if rc is None else _text(rc),
            None if dh is None else _text(dh),
        )


@dataclass(frozen=True)
class CredentialRequest:
    nonce: bytes
    requested: tuple[str, ...]
    mode: Mode
    sp_id: str

    type = "credential_request"

    def to_wire(self) -> dict:
        return {
            "type": self.type,
            "nonce": b64e(self.nonce),
            "requested": list(self.requested),
            "mode": self.mode.value,
            "sp_id": self.sp_id,
        }

    @classmethod
    def _from(cls, d: Mapping) -> CredentialRequest:
        return cls(b64d(d["nonce"], NONCE_LEN), _attr_ids(d["requested"]), Mode(d["mode"]), _text(d["sp_id"]))


@dataclass(frozen=True)
class CredentialResponse:
    presentation: Presentation

    type = "credential_response"

    def to_wire(self) -> dict:
        return {"type": self.type, "presentation": self.presentation.to_wire()}

    @classmethod
    def _from(cls, d: Mapping) -> CredentialResponse:
        return cls(Presentation.from_wire(d["presentation"]))


@dataclass(frozen=True)
class VerificationRequest:
    presentation: Presentation
    revealed_values: Optional[Mapping[str, str]] = None

    type = "verification_request"

    def to_wire(self) -> dict:
        out = {"type": self.type, "presentation": self.presentation.to_wire()}
        if self.revealed_values is not None:
            out["revealed_values"] = dict(sorted(self.revealed_values.items()))
        return out

    @classmethod
    def _from(cls, d: Mapping) -> VerificationRequest:
        rv = d.get("revealed_values")
        if rv is not None:
            if not isinstance(rv, Mapping):
                raise ValueError("revealed_values must be an object")
            rv = {attribute(k).id: _text(v) for k, v in rv.items()}
        return cls(Presentation.from_wire(d["presentation"]), rv)


@dataclass(frozen=True)
class FimVerificationRequest:
    """One candidate record's typed values, sent SP -> IdP."""

    sp_id: str
    required: tuple[str, ...]
    candidate_values: Mapping[str, tuple[str, ...]]
    ds_handle: str
    sensitivity: Sensitivity = Sensitivity.NORMAL

    type = "fim_verification_request"

    def to_wire(self) -> dict:
        return {
            "type": self.type,
            "sp_id": self.sp_id,
            "required": sorted(self.required),
            "candidate_values": {k: sorted(set(v)) for k, v in sorted(self.candidate_values.items())},
            "ds_handle": self.ds_handle,
            "sensitivity": self.sensitivity.value,
        }

    @classmethod
    def _from(cls, d: Mapping) -> FimVerificationRequest:
        cv = d["candidate_values"]
        if not isinstance(cv, Mapping):
            raise ValueError("candidate_values must be an object")
        values = {}
        for k, vs in cv.items():
            attribute(k)
            if not isinstance(vs, list):
                raise ValueError("candidate value list expected")
            values[k] = tuple(_text(v) for v in vs)
        return cls(
            _text(d["sp_id"]),
            _attr_ids(d["required"]),
            values,
            _text(d["ds_handle"]),
            Sensitivity(d["sensitivity"]),
        )


@dataclass(frozen=True)
class VerificationResponse:
    verdict: Verdict

    type = "verification_response"

    def to_wire(self) -> dict:
        return {"type": self.type, "verdict": self.verdict.value}

    @classmethod
    def _from(cls, d: Mapping) -> VerificationResponse:
        return cls(Verdict(d["verdict"]))


@dataclass(frozen=True)
class DeviceNotification:
    sp_id: str
    required_types: tuple[str, ...]
    timestamp: datetime

    type = "device_notification"

    def to_wire(self) -> dict:
        return {
            "type": self.type,
            "sp_id": self.sp_id,
            "required_types": sorted(self.required_types),
            "timestamp": ts_encode(self.timestamp),
        }

    @classmethod
    def _from(cls, d: Mapping) -> DeviceNotification:
        return cls(_text(d["sp_id"]), _attr_ids(d["required_types"]), ts_decode(d["timestamp"]))


@dataclass(frozen=True)
class DsrResult:
    request_id: str
    status: str  # fulfilled | declined | pending
    payload: Optional[Mapping[str, Any]] = None

    type = "dsr_result"

    def to_wire(self) -> dict:
        out = {"type": self.type, "request_id": self.request_id, "status": self.status}
        if self.payload is not None:
            out["payload"] = self.payload
        return out

    @classmethod
    def _from(cls, d: Mapping) -> DsrResult:
        if d["status"] not in ("fulfilled", "declined", "pending"):
            raise ValueError("bad status")
        p = d.get("payload")
        if p is not None and not isinstance(p, Mapping):
            raise ValueError("payload must be an object")
        return cls(_text(d["request_id"]), d["status"], p)


# -- actor management messages ------------------------------------------------


@dataclass(frozen=True)
class Register:
    ds_handle: str
    bundle: CredentialBundle
    device: str  # actor id the IdP notifies

    type = "register"

    def to_wire(self) -> dict:
        return {"type": self.type, "ds_handle": self.ds_handle, "bundle": self.bundle.to_wire(), "device": self.device}

    @classmethod
    def _from(cls, d: Mapping) -> Register:
        return cls(_text(d["ds_handle"]), CredentialBundle.from_wire(d["bundle"]), _text(d["device"]))


@dataclass(frozen=True)
class Initiate:
    ds_handle: str
    sp_id: str
    request_id: str
    dsr_type: str
    scope: Scope

    type = "initiate"

    def to_wire(self) -> dict:
        return {
            "type": self.type,
            "ds_handle": self.ds_handle,
            "sp_id": self.sp_id,
            "request_id": self.request_id,
            "dsr_type": self.dsr_type,
            "scope": self.scope.to_wire(),
        }

    @classmethod
    def _from(cls, d: Mapping) -> Initiate:
        inner = DsrRequest._from({**d, "flow": "fim"})
        return cls(_text(d["ds_handle"]), _text(d["sp_id"]), inner.request_id, inner.dsr_type, inner.scope)


@dataclass(frozen=True)
class IssueRequest:
    person_id: str
    selection: tuple[str, ...]

    type = "issue"

    def to_wire(self) -> dict:
        return {"type": self.type, "person_id": self.person_id, "selection": list(self.selection)}

    @classmethod
    def _from(cls, d: Mapping) -> IssueRequest:
        return cls(_text(d["person_id"]), _attr_ids(d["selection"]))


@dataclass(frozen=True)
class IssueResponse:
    bundle: CredentialBundle

    type = "issued"

    def to_wire(self) -> dict:
        return {"type": self.type, "bundle": self.bundle.to_wire()}

    @classmethod
    def _from(cls, d: Mapping) -> IssueResponse:
        return cls(CredentialBundle.from_wire(d["bundle"]))


@dataclass(frozen=True)
class RevokeRequest:
    bundle_id: str

    type = "revoke"

    def to_wire(self) -> dict:
        return {"type": self.type, "bundle_id": self.bundle_id}

    @classmethod
    def _from(cls, d: Mapping) -> RevokeRequest:
        b64d(d["bundle_id"], 16)
        return cls(d["bundle_id"])


@dataclass(frozen=True)
class Validity:
    status: str  # valid | expired | unknown
    valid_until: Optional[datetime] = None

    type = "validity"

    def to_wire(self) -> dict:
        out = {"type": self.type, "status": self.status}
        if self.valid_until is not None:
            out["valid_until"] = ts_encode(self.valid_until)
        return out

    @classmethod
    def _from(cls, d: Mapping) -> Validity:
        if d["status"] not in ("valid", "expired", "unknown"):
            raise ValueError("bad validity status")
        vu = d.get("valid_until")
        return cls(d["status"], None if vu is None else ts_decode(vu))


@dataclass(frozen=True)
class Ack:
    type = "ack"

    def to_wire(self) -> dict:
        return {"type": self.type}

    @classmethod
    def _from(cls, d: Mapping) -> Ack:
        return cls()


@dataclass(frozen=True)
class Health:
    actor_id: str
    kind: str

    type = "health"

    def to_wire(self) -> dict:
        return {"type": self.type, "actor_id": self.actor_id, "kind": self.kind}

    @classmethod
    def _from(cls, d: Mapping) -> Health:
        return cls(_text(d["actor_id"]), _text(d["kind"]))


@dataclass(frozen=True)
class ErrorReply:
    error: str
    detail: str = ""

    type = "error"

    def to_wire(self) -> dict:
        return {"type": self.type, "error": self.error, "detail": self.detail}

    @classmethod
    def _from(cls, d: Mapping) -> ErrorReply:
        return cls(_text(d["error"]), _text(d["detail"]))


Message = Union[
    DsrRequest, CredentialRequest, CredentialResponse, VerificationRequest, FimVerificationRequest,
    VerificationResponse, DeviceNotification, DsrResult, Register, Initiate, IssueRequest, IssueResponse,
    RevokeRequest, Validity, Ack, Health, ErrorReply,
]

_REQUIRED = {
    DsrRequest: ({"type", "request_id", "dsr_type", "scope", "flow"}, {"reply_channel", "ds_handle"}),
    CredentialRequest: ({"type", "nonce", "requested", "mode", "sp_id"}, set()),
    CredentialResponse: ({"type", "presentation"}, set()),
    VerificationRequest: ({"type", "presentation"}, {"revealed_values"}),
    FimVerificationRequest: ({"type", "sp_id", "required", "candidate_values", "ds_handle", "sensitivity"}, set()),
    VerificationResponse: ({"type", "verdict"}, set()),
    DeviceNotification: ({"type", "sp_id", "required_types", "timestamp"}, set()),
    DsrResult: ({"type", "request_id", "status"}, {"payload"}),
    Register: ({"type", "ds_handle", "bundle", "device"}, set()),
    Initiate: ({"type", "ds_handle", "sp_id", "request_id", "dsr_type", "scope"}, set()),
    IssueRequest: ({"type", "person_id", "selection"}, set()),
    IssueResponse: ({"type", "bundle"}, set()),
    RevokeRequest: ({"type", "bundle_id"}, set()),
    Validity: ({"type", "status"}, {"valid_until"}),
    Ack: ({"type"}, set()),
    Health: ({"type", "actor_id", "kind"}, set()),
    ErrorReply: ({"type", "error", "detail"}, set()),
}
MESSAGE_TYPES = {cls.type: cls for cls in _REQUIRED}


def decode(data: Mapping | bytes | str, expect: type | tuple[type, ...] | None = None) -> Message:
    if isinstance(data, (bytes, str)):
        data = loads(data)
    if not isinstance(data, Mapping):
        raise EncodingError("message must be a JSON object")
    cls = MESSAGE_TYPES.get(data.get("type"))
    if cls is None:
        raise EncodingError(f"unknown message type {data.get('type')!r}")
    required, optional = _REQUIRED[cls]
    keys = set(data)
    if not required <= keys or not keys <= required | optional:
        raise EncodingError(f"bad fields for {cls.type}: {sorted(keys ^ required)}")
    try:
        msg = cls._from(data)
    except EncodingError:
        raise
    except (KeyError, TypeError, ValueError, UnknownAttribute) as exc:
        raise EncodingError(f"malformed {cls.type}: {exc}") from exc
    if expect is not None and not isinstance(msg, expect):
        raise EncodingError(f"unexpected message type {cls.type}")
    return msg


def encode(msg: Message) -> bytes:
    return canonical_json(msg.to_wire())
