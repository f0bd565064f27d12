"""Selective-disclosure credentials: issuance, negotiation, presentation, verification.

A bundle holds one salted commitment per attribute and a single issuer
signature over the sorted digest vector and validity window. Presentations
carry the digest vector and signature so a verifier can check the signature
without seeing undisclosed values.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Callable, Iterable, Mapping, Sequence, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import (
    CATALOG,
    MANDATORY,
    NONCE_LEN,
    SALT_LEN,
    AttributeType,
    CanonicalValue,
    Commitment,
    UnknownAttribute,
    attribute,
    canonicalize,
    commit,
    match_tag,
)
from .encoding import (
    EncodingError,
    b64d,
    b64e,
    canonical_json,
    ts_decode,
    ts_encode,
    utc,
)

RandBytes = Callable[[int], bytes]

_SECOND = timedelta(seconds=1)


class CredentialError(Exception):
    pass


class MissingMandatoryAttribute(CredentialError):
    pass


class MandatoryRemoval(CredentialError):
    pass


class ExpiredBundle(CredentialError):
    pass


class InvalidBundle(CredentialError):
    pass


class UnknownBundle(CredentialError):
    pass


class UnknownPerson(CredentialError):
    pass


class UseCase(str, enum.Enum):
    DSR = "dsr"
    LOGIN = "login"
    AGE_PROOF = "age_proof"
    ANY = "any"


class Mode(str, enum.Enum):
    CLEARTEXT = "cleartext"
    HASHED = "hashed"


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    DECLINE = "decline"


# -- signatures ---------------------------------------------------------------


class IssuerKey:
    """Ed25519 signing key bound to an issuer id (deterministic signatures)."""

    def __init__(self, issuer_id: str, private: Ed25519PrivateKey):
        self.issuer_id = issuer_id
        self._private = private
        self.public_key = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @classmethod
    def generate(cls, issuer_id: str) -> IssuerKey:
        return cls(issuer_id, Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, issuer_id: str, seed: bytes) -> IssuerKey:
        return cls(issuer_id, Ed25519PrivateKey.from_private_bytes(seed))

    def private_bytes(self) -> bytes:
        return self._private.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def signing_payload(
    issuer_id: str,
    digests: Iterable[bytes],
    valid_from: datetime,
    valid_until: datetime,
) -> bytes:
    return canonical_json(
        {
            "digests": [b64e(d) for d in sorted(digests)],
            "issuer_id": issuer_id,
            "valid_from": ts_encode(valid_from),
            "valid_until": ts_encode(valid_until),
        }
    )


def fingerprint(signature: bytes) -> str:
    """Issuer-side lookup key for a bundle version (hex SHA-256 of its signature)."""
    return hashlib.sha256(signature).hexdigest()


# -- bundles ------------------------------------------------------------------


@dataclass(frozen=True)
class BundleClaim:
    attr: AttributeType
    value: CanonicalValue
    salt: bytes
    commitment: Commitment
    restrictions: frozenset[UseCase] = frozenset({UseCase.ANY})

    def permits(self, use_case: UseCase) -> bool:
        return UseCase.ANY in self.restrictions or use_case in self.restrictions


@dataclass(frozen=True)
class CredentialBundle:
    bundle_id: bytes
    issuer_id: str
    attributes: tuple[BundleClaim, ...]
    valid_from: datetime
    valid_until: datetime
    signature: bytes

    def claim(self, attr_id: str) -> BundleClaim | None:
        for c in self.attributes:
            if c.attr.id == attr_id:
                return c
        return None

    @property
    def digests(self) -> tuple[bytes, ...]:
        return tuple(sorted(c.commitment.digest for c in self.attributes))

    def to_wire(self) -> dict:
        return {
            "bundle_id": b64e(self.bundle_id),
            "issuer_id": self.issuer_id,
            "valid_from": ts_encode(self.valid_from),
            "valid_until": ts_encode(self.valid_until),
            "signature": b64e(self.signature),
            "claims": [
                {
                    "attr": c.attr.id,
                    "value": c.value.text,
                    "salt": b64e(c.salt),
                    "commitment": b64e(c.commitment.digest),
                    "restrictions": sorted(u.value for u in c.restrictions),
                }
                for c in self.attributes
            ],
        }

    @classmethod
    def from_wire(cls, data: Mapping) -> CredentialBundle:
        try:
            claims = []
            for c in data["claims"]:
                attr = attribute(c["attr"])
                salt = b64d(c["salt"], SALT_LEN)
                claims.append(
                    BundleClaim(
                        attr=attr,
                        value=CanonicalValue(attr, c["value"]),
                        salt=salt,
                        commitment=Commitment(b64d(c["commitment"], 32), salt),
                        restrictions=frozenset(UseCase(u) for u in c["restrictions"]),
                    )
                )
            return cls(
                bundle_id=b64d(data["bundle_id"], 16),
                issuer_id=data["issuer_id"],
                attributes=tuple(claims),
                valid_from=ts_decode(data["valid_from"]),
                valid_until=ts_decode(data["valid_until"]),
                signature=b64d(data["signature"], 64),
            )
        except (KeyError, TypeError, ValueError, UnknownAttribute) as exc:
            raise EncodingError(f"malformed bundle: {exc}") from exc


def verify_bundle(bundle: CredentialBundle, public_key: bytes) -> bool:
    if not bundle.valid_from < bundle.valid_until:
        return False
    for c in bundle.attributes:
        try:
            if canonicalize(c.attr, c.value.text).text != c.value.text:
                return False
        except ValueError:
            return False
        if commit(c.attr, c.value, c.salt).digest != c.commitment.digest:
            return False
    payload = signing_payload(bundle.issuer_id, bundle.digests, bundle.valid_from, bundle.valid_until)
    return verify_signature(public_key, payload, bundle.signature)


def _sign(
    key: IssuerKey,
    bundle_id: bytes,
    claims: Sequence[BundleClaim],
    valid_from: datetime,
    valid_until: datetime,
) -> CredentialBundle:
    claims = tuple(sorted(claims, key=lambda c: c.attr.id))
    payload = signing_payload(
        key.issuer_id, (c.commitment.digest for c in claims), valid_from, valid_until
    )
    return CredentialBundle(
        bundle_id=bundle_id,
        issuer_id=key.issuer_id,
        attributes=claims,
        valid_from=valid_from,
        valid_until=valid_until,
        signature=key.sign(payload),
    )


def _new_claim(attr: AttributeType, raw: str, randbytes: RandBytes) -> BundleClaim:
    value = canonicalize(attr, raw)
    salt = randbytes(SALT_LEN)
    return BundleClaim(attr, value, salt, commit(attr, value, salt))


def issuable(attr: AttributeType) -> bool:
    return attr.id in CATALOG and not attr.derived


def issue_bundle(
    registry_record: Mapping[str | AttributeType, str],
    selection: Iterable[str | AttributeType],
    validity: tuple[datetime, datetime],
    issuer_key: IssuerKey,
    randbytes: RandBytes = os.urandom,
) -> CredentialBundle:
    """Issue a bundle over ``selection``, canonicalizing each registry value.

    Raises :class:`MissingMandatoryAttribute` if the selection lacks any of the
    four mandatory PID attributes or the registry record lacks a selected one.
    """
    record = {attribute(k).id: v for k, v in registry_record.items()}
    chosen = sorted({attribute(a).id for a in selection})
    for m in MANDATORY:
        if m.id not in chosen:
            raise MissingMandatoryAttribute(m.id)
    missing = [a for a in chosen if a not in record]
    if missing:
        raise MissingMandatoryAttribute(", ".join(missing))
    for a in chosen:
        if not issuable(attribute(a)):
            raise UnknownAttribute(a)
    valid_from, valid_until = utc(validity[0]), utc(validity[1])
    if not valid_from < valid_until:
        raise ValueError("valid_from must precede valid_until")
    claims = [_new_claim(attribute(a), record[a], randbytes) for a in chosen]
    return _sign(issuer_key, randbytes(16), claims, valid_from, valid_until)


@dataclass(frozen=True)
class AddAttr:
    attr: AttributeType | str
    raw: str


@dataclass(frozen=True)
class RemoveAttr:
    attr: AttributeType | str


@dataclass(frozen=True)
class Restrict:
    attr: AttributeType | str
    use_cases: frozenset[UseCase]


CatalogChange = Union[AddAttr, RemoveAttr, Restrict]


def negotiate_catalog(
    bundle: CredentialBundle,
    changes: Sequence[CatalogChange],
    issuer_key: IssuerKey,
    randbytes: RandBytes = os.urandom,
) -> CredentialBundle:
    """Apply add/remove/restrict changes and re-sign; the bundle id is kept."""
    claims = {c.attr.id: c for c in bundle.attributes}
    mandatory = {m.id for m in MANDATORY}
    for ch in changes:
        try:
            attr = attribute(ch.attr)
        except UnknownAttribute:
            raise UnknownAttribute(str(ch.attr)) from None
        if not issuable(attr):
            raise UnknownAttribute(attr.id)
        if isinstance(ch, AddAttr):
            restrictions = claims[attr.id].restrictions if attr.id in claims else None
            claim = _new_claim(attr, ch.raw, randbytes)
            if restrictions is not None:
                claim = replace(claim, restrictions=restrictions)
            claims[attr.id] = claim
        elif isinstance(ch, RemoveAttr):
            if attr.id in mandatory:
                raise MandatoryRemoval(attr.id)
            if attr.id not in claims:
                raise UnknownAttribute(attr.id)
            del claims[attr.id]
        elif isinstance(ch, Restrict):
            if attr.id not in claims:
                raise UnknownAttribute(attr.id)
            if not ch.use_cases:
                raise ValueError("restriction set must not be empty")
            claims[attr.id] = replace(claims[attr.id], restrictions=frozenset(ch.use_cases))
        else:
            raise TypeError(f"unknown catalog change {ch!r}")
    return _sign(issuer_key, bundle.bundle_id, list(claims.values()), bundle.valid_from, bundle.valid_until)


# -- presentations ------------------------------------------------------------


@dataclass(frozen=True)
class Absent:
    attr: str


@dataclass(frozen=True)
class Disclosure:
    attr: AttributeType
    salt: bytes
    commitment: bytes
    value: CanonicalValue | None = None
    match_tag: bytes | None = None


Slot = Union[Absent, Disclosure]


@dataclass(frozen=True)
class Presentation:
    mode: Mode
    nonce: bytes
    issuer_id: str
    valid_from: datetime
    valid_until: datetime
    slots: tuple[Slot, ...]
    signature: bytes
    digests: tuple[bytes, ...]

    @property
    def disclosed(self) -> tuple[Disclosure, ...]:
        return tuple(s for s in self.slots if isinstance(s, Disclosure))

    def to_wire(self) -> dict:
        claims = []
        for s in self.slots:
            if isinstance(s, Absent):
                claims.append({"attr": s.attr, "absent": True})
                continue
            item = {"attr": s.attr.id, "salt": b64e(s.salt), "commitment": b64e(s.commitment)}
            if self.mode is Mode.CLEARTEXT:
                item["value"] = s.value.text
            else:
                item["match_tag"] = b64e(s.match_tag)
            claims.append(item)
        return {
            "mode": self.mode.value,
            "nonce": b64e(self.nonce),
            "issuer_id": self.issuer_id,
            "valid_from": ts_encode(self.valid_from),
            "valid_until": ts_encode(self.valid_until),
            "claims": claims,
            "signature": b64e(self.signature),
            "digests": [b64e(d) for d in self.digests],
        }

    @classmethod
    def from_wire(cls, data: Mapping) -> Presentation:
        """Strict decode: unknown keys, wrong types or mixed-mode claims are rejected."""
        try:
            if set(data) != {"mode", "nonce", "issuer_id", "valid_from", "valid_until", "claims", "signature", "digests"}:
                raise ValueError("unexpected presentation keys")
            mode = Mode(data["mode"])
            slots: list[Slot] = []
            for c in data["claims"]:
                if not isinstance(c, Mapping):
                    raise ValueError("claim must be an object")
                if c.get("absent") is True:
                    if set(c) != {"attr", "absent"}:
                        raise ValueError("malformed absent slot")
                    attribute(c["attr"])
                    slots.append(Absent(c["attr"]))
                    continue
                attr = attribute(c["attr"])
                want = {"attr", "salt", "commitment", "value" if mode is Mode.CLEARTEXT else "match_tag"}
                if set(c) != want:
                    raise ValueError("claim fields do not match presentation mode")
                if mode is Mode.CLEARTEXT:
                    if not isinstance(c["value"], str):
                        raise ValueError("value must be text")
                    slots.append(
                        Disclosure(attr, b64d(c["salt"], SALT_LEN), b64d(c["commitment"], 32),
                                   value=CanonicalValue(attr, c["value"]))
                    )
                else:
                    slots.append(
                        Disclosure(attr, b64d(c["salt"], SALT_LEN), b64d(c["commitment"], 32),
                                   match_tag=b64d(c["match_tag"], 32))
                    )
            if not isinstance(data["issuer_id"], str):
                raise ValueError("issuer_id must be text")
            return cls(
                mode=mode,
                nonce=b64d(data["nonce"], NONCE_LEN),
                issuer_id=data["issuer_id"],
                valid_from=ts_decode(data["valid_from"]),
                valid_until=ts_decode(data["valid_until"]),
                slots=tuple(slots),
                signature=b64d(data["signature"], 64),
                digests=tuple(b64d(d, 32) for d in data["digests"]),
            )
        except (KeyError, TypeError, ValueError, UnknownAttribute) as exc:
            raise EncodingError(f"malformed presentation: {exc}") from exc


def build_presentation(
    bundle: CredentialBundle,
    requested: Sequence[AttributeType | str],
    mode: Mode,
    nonce: bytes,
    use_case: UseCase,
    now: datetime,
    *,
    withheld: Iterable[str] = (),
    allow_expired: bool = False,
) -> Presentation:
    """Disclose the requested attributes in request order.

    A slot is :class:`Absent` when the bundle lacks the attribute, its
    restrictions exclude ``use_case`` or the holder withheld it. Attributes
    that were not requested do not appear at all.
    """
    now = utc(now)
    if not allow_expired and not (bundle.valid_from <= now <= bundle.valid_until):
        raise ExpiredBundle(b64e(bundle.bundle_id))
    if len(nonce) != NONCE_LEN:
        raise ValueError("bad nonce length")
    withheld = set(withheld)
    seen: set[str] = set()
    slots: list[Slot] = []
    for a in requested:
        attr_id = a.id if isinstance(a, AttributeType) else a
        if attr_id in seen:
            continue
        seen.add(attr_id)
        claim = bundle.claim(attr_id)
        if claim is None or not claim.permits(use_case) or attr_id in withheld:
            slots.append(Absent(attr_id))
        elif mode is Mode.CLEARTEXT:
            slots.append(Disclosure(claim.attr, claim.salt, claim.commitment.digest, value=claim.value))
        else:
            tag = match_tag(nonce, claim.attr, claim.value).tag
            slots.append(Disclosure(claim.attr, claim.salt, claim.commitment.digest, match_tag=tag))
    return Presentation(
        mode=mode,
        nonce=nonce,
        issuer_id=bundle.issuer_id,
        valid_from=bundle.valid_from,
        valid_until=bundle.valid_until,
        slots=tuple(slots),
        signature=bundle.signature,
        digests=bundle.digests,
    )


@dataclass(frozen=True)
class VerificationOutcome:
    verdict: Verdict

    def encode(self) -> bytes:
        return canonical_json({"verdict": self.verdict.value})


ACCEPT = VerificationOutcome(Verdict.ACCEPT)
DECLINE = VerificationOutcome(Verdict.DECLINE)


def _presentation_ok(
    p: Presentation,
    issuer_pubkey: bytes,
    now: datetime,
    revealed_values: Mapping[str, CanonicalValue | str] | None,
) -> bool:
    if list(p.digests) != sorted(set(p.digests)):
        return False
    if not (p.valid_from <= now <= p.valid_until):
        return False
    payload = signing_payload(p.issuer_id, p.digests, p.valid_from, p.valid_until)
    if not verify_signature(issuer_pubkey, payload, p.signature):
        return False
    digest_set = set(p.digests)
    seen: set[str] = set()
    revealed = dict(revealed_values or {})
    for slot in p.slots:
        attr_id = slot.attr if isinstance(slot, Absent) else slot.attr.id
        if attr_id in seen:
            return False
        seen.add(attr_id)
        if isinstance(slot, Absent):
            continue
        if slot.commitment not in digest_set:
            return False
        if p.mode is Mode.CLEARTEXT:
            if slot.value is None or slot.match_tag is not None:
                return False
            if commit(slot.attr, slot.value, slot.salt).digest != slot.commitment:
                return False
        else:
            if slot.match_tag is None or slot.value is not None:
                return False
            if attr_id in revealed:
                rv = revealed[attr_id]
                text = rv.text if isinstance(rv, CanonicalValue) else rv
                value = CanonicalValue(slot.attr, text)
                if commit(slot.attr, value, slot.salt).digest != slot.commitment:
                    return False
                if not hmac.compare_digest(match_tag(p.nonce, slot.attr, value).tag, slot.match_tag):
                    return False
    # revealed values must refer to disclosed claims
    disclosed_ids = {d.attr.id for d in p.disclosed}
    return set(revealed) <= disclosed_ids


def verify_presentation(
    p: Presentation,
    issuer_pubkey: bytes,
    now: datetime,
    revealed_values: Mapping[str, CanonicalValue | str] | None = None,
) -> VerificationOutcome:
    """Accept only if signature, validity window and every checkable commitment hold.

    All failure causes return the same :data:`DECLINE` value.
    """
    try:
        ok = _presentation_ok(p, issuer_pubkey, utc(now), revealed_values)
    except (ValueError, TypeError, AttributeError):
        ok = False
    return ACCEPT if ok else DECLINE


# -- issuer records and expiration oracle -------------------------------------


@dataclass(frozen=True)
class ExpirationStatus:
    state: str  # "valid" | "expired" | "unknown"
    valid_until: datetime | None = None

    @property
    def valid(self) -> bool:
        return self.state == "valid"

    def to_wire(self) -> dict:
        out = {"status": self.state}
        if self.valid_until is not None:
            out["valid_until"] = ts_encode(self.valid_until)
        return out

    @classmethod
    def from_wire(cls, data: Mapping) -> ExpirationStatus:
        vu = data.get("valid_until")
        return cls(data["status"], ts_decode(vu) if vu else None)


EXPIRED = ExpirationStatus("expired")
UNKNOWN = ExpirationStatus("unknown")


@dataclass
class IssuedRecord:
    valid_from: datetime
    valid_until: datetime
    revoked: bool = False
    current: str = ""  # fingerprint of the live version
    superseded: list[str] = field(default_factory=list)


@dataclass
class IssuerState:
    """Authoritative issuer records: registry persons, issued bundles, revocations."""

    key: IssuerKey
    registry: dict[str, dict[str, str]] = field(default_factory=dict)
    issued: dict[str, IssuedRecord] = field(default_factory=dict)

    def _record(self, bundle: CredentialBundle) -> None:
        bid = b64e(bundle.bundle_id)
        fp = fingerprint(bundle.signature)
        rec = self.issued.get(bid)
        if rec is None:
            self.issued[bid] = IssuedRecord(bundle.valid_from, bundle.valid_until, current=fp)
        else:
            rec.superseded.append(rec.current)
            rec.current = fp

    def issue(
        self,
        person_id: str,
        selection: Iterable[str],
        validity: tuple[datetime, datetime],
        randbytes: RandBytes = os.urandom,
    ) -> CredentialBundle:
        if person_id not in self.registry:
            raise UnknownPerson(person_id)
        bundle = issue_bundle(self.registry[person_id], selection, validity, self.key, randbytes)
        self._record(bundle)
        return bundle

    def negotiate(
        self,
        bundle: CredentialBundle,
        changes: Sequence[CatalogChange],
        randbytes: RandBytes = os.urandom,
    ) -> CredentialBundle:
        bid = b64e(bundle.bundle_id)
        if bid not in self.issued or not verify_bundle(bundle, self.key.public_key):
            raise InvalidBundle(bid)
        updated = negotiate_catalog(bundle, changes, self.key, randbytes)
        self._record(updated)
        return updated

    def revoke(self, bundle_id: str, now: datetime) -> None:
        rec = self.issued.get(bundle_id)
        if rec is None:
            raise UnknownBundle(bundle_id)
        if rec.revoked:
            return
        rec.revoked = True
        rec.valid_until = min(rec.valid_until, utc(now) - _SECOND)

    def _status(self, rec: IssuedRecord, now: datetime) -> ExpirationStatus:
        if utc(now) > rec.valid_until:
            return EXPIRED
        return ExpirationStatus("valid", rec.valid_until)

    def check(self, bundle_id: str, now: datetime) -> ExpirationStatus:
        rec = self.issued.get(bundle_id)
        return UNKNOWN if rec is None else self._status(rec, now)

    def check_signature(self, fp: str, now: datetime) -> ExpirationStatus:
        for rec in self.issued.values():
            if rec.current == fp:
                return self._status(rec, now)
            if fp in rec.superseded:
                return EXPIRED
        return UNKNOWN

    def to_json(self) -> dict:
        return {
            "issuer_id": self.key.issuer_id,
            "registry": self.registry,
            "issued": {
                bid: {
                    "valid_from": ts_encode(r.valid_from),
                    "valid_until": ts_encode(r.valid_until),
                    "revoked": r.revoked,
                    "current": r.current,
                    "superseded": list(r.superseded),
                }
                for bid, r in self.issued.items()
            },
        }

    @classmethod
    def from_json(cls, data: Mapping, key: IssuerKey) -> IssuerState:
        issued = {
            bid: IssuedRecord(
                ts_decode(r["valid_from"]),
                ts_decode(r["valid_until"]),
                bool(r["revoked"]),
                r["current"],
                list(r["superseded"]),
            )
            for bid, r in data["issued"].items()
        }
        return cls(key=key, registry={k: dict(v) for k, v in data["registry"].items()}, issued=issued)


def check_expiration(bundle_id: bytes | str, now: datetime, issuer_state: IssuerState) -> ExpirationStatus:
    bid = bundle_id if isinstance(bundle_id, str) else b64e(bundle_id)
    return issuer_state.check(bid, now)
