"""Attribute catalog, value canonicalization, commitments and match tags.

Every actor canonicalizes before hashing or comparing, so matching is
insensitive to case, whitespace runs and the accepted date spellings.

Byte layouts (hash is SHA-256 throughout):

* commitment digest = H(salt[16] || attr_id || 0x00 || canonical_text)
* match tag         = H(nonce[16] || attr_id || 0x00 || canonical_text)

``attr_id`` and ``canonical_text`` are UTF-8. The NUL separator keeps the
attribute/value boundary unambiguous; attribute ids cannot contain it.
"""

from __future__ import annotations

import calendar
import hashlib
import re
import unicodedata
from dataclasses import dataclass
from datetime import date
from typing import Literal

HASH_NAME = "sha256"
DIGEST_LEN = 32
SALT_LEN = 16
NONCE_LEN = 16

Kind = Literal["text", "date", "numeric", "identifier", "range"]
KINDS: frozenset[str] = frozenset({"text", "date", "numeric", "identifier", "range"})

_ATTR_ID = re.compile(r"[a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)+")


class UnparseableValue(ValueError):
    """Raw text matched none of the accepted formats for its attribute kind."""


class UnknownAttribute(KeyError):
    """Attribute id not present in the catalog."""


@dataclass(frozen=True)
class AttributeType:
    id: str
    kind: Kind
    sensitive: bool = False
    # derived attributes name the credential attribute they are inferred from
    derived_from: str | None = None

    def __post_init__(self) -> None:
        if not _ATTR_ID.fullmatch(self.id):
            raise ValueError(f"invalid attribute id {self.id!r}")
        if self.kind not in KINDS:
            raise ValueError(f"invalid attribute kind {self.kind!r}")

    @property
    def derived(self) -> bool:
        return self.derived_from is not None


@dataclass(frozen=True)
class CanonicalValue:
    attr: AttributeType
    text: str


@dataclass(frozen=True)
class Commitment:
    digest: bytes
    salt: bytes


@dataclass(frozen=True)
class MatchTag:
    tag: bytes


GIVEN_NAME = AttributeType("pid.given_name", "text")
FAMILY_NAME = AttributeType("pid.family_name", "text")
BIRTH_DATE = AttributeType("pid.birth_date", "date")
UNIQUE_ID = AttributeType("pid.unique_id", "identifier")
ADDRESS = AttributeType("pid.address", "text")
EMAIL = AttributeType("pid.email", "identifier")
PHONE = AttributeType("pid.phone", "identifier")
NATIONALITY = AttributeType("pid.nationality", "text")
EAA_EMAIL = AttributeType("eaa.email", "identifier")
CUSTOMER_NUMBER = AttributeType("eaa.customer_number", "numeric")
HEALTH_INSURANCE_ID = AttributeType("eaa.health_insurance_id", "identifier", sensitive=True)
AGE_RANGE = AttributeType("derived.age_range", "range", derived_from="pid.birth_date")
POSTAL_PREFIX = AttributeType("derived.postal_prefix", "identifier", derived_from="pid.address")

MANDATORY: tuple[AttributeType, ...] = (GIVEN_NAME, FAMILY_NAME, BIRTH_DATE, UNIQUE_ID)

CATALOG: dict[str, AttributeType] = {
    a.id: a
    for a in (
        GIVEN_NAME,
        FAMILY_NAME,
        BIRTH_DATE,
        UNIQUE_ID,
        ADDRESS,
        EMAIL,
        PHONE,
        NATIONALITY,
        EAA_EMAIL,
        CUSTOMER_NUMBER,
        HEALTH_INSURANCE_ID,
        AGE_RANGE,
        POSTAL_PREFIX,
    )
}


def attribute(attr_id: str | AttributeType) -> AttributeType:
    """Resolve an attribute id against the catalog."""
    if isinstance(attr_id, AttributeType):
        return attr_id
    try:
        return CATALOG[attr_id]
    except KeyError:
        raise UnknownAttribute(attr_id) from None


# -- canonicalization --------------------------------------------------------

_MONTHS: dict[str, int] = {}
for _i in range(1, 13):
    _MONTHS[calendar.month_name[_i].lower()] = _i
    _MONTHS[calendar.month_abbr[_i].lower()] = _i
_MONTHS["sept"] = 9

_ISO_DATE = re.compile(r"(\d{4})-(\d{2})-(\d{2})")
_DOT_DATE = re.compile(r"(\d{1,2})\.(\d{1,2})\.(\d{4})")
_SLASH_DATE = re.compile(r"(\d{1,2})/(\d{1,2})/(\d{4})")
_NAMED_DATE = re.compile(r"([A-Za-z]+)\.? (\d{1,2}),? (\d{4})")
_NUMBER = re.compile(r"([+-]?)(\d{1,3}(?:[,' _]\d{3})+|\d+)(?:\.(\d+))?")
_RANGE = re.compile(r"(\d{1,3}) ?[-–—] ?(\d{1,3})")


def _squash(text: str) -> str:
    # str.split() with no argument trims and splits on any Unicode whitespace run
    return " ".join(text.split())


def _fold(text: str) -> str:
    folded = unicodedata.normalize("NFC", text.casefold())
    # casefold/NFC can interact on a few code points; settle on a fixed point
    for _ in range(3):
        again = unicodedata.normalize("NFC", folded.casefold())
        if again == folded:
            break
        folded = again
    return _squash(folded)


def _parse_date(text: str) -> str:
    if m := _ISO_DATE.fullmatch(text):
        y, mo, d = int(m[1]), int(m[2]), int(m[3])
    elif m := (_DOT_DATE.fullmatch(text) or _SLASH_DATE.fullmatch(text)):
        d, mo, y = int(m[1]), int(m[2]), int(m[3])
    elif m := _NAMED_DATE.fullmatch(text):
        mo = _MONTHS.get(m[1].lower(), 0)
        d, y = int(m[2]), int(m[3])
    else:
        raise UnparseableValue(f"no accepted date format matches {text!r}")
    try:
        return date(y, mo, d).isoformat()
    except ValueError:
        raise UnparseableValue(f"not a calendar date: {text!r}") from None


def _parse_number(text: str) -> str:
    m = _NUMBER.fullmatch(text)
    if not m:
        raise UnparseableValue(f"not a number: {text!r}")
    sign, whole, frac = m[1], re.sub(r"[,' _]", "", m[2]), m[3] or ""
    whole = whole.lstrip("0") or "0"
    frac = frac.rstrip("0")
    out = whole + ("." + frac if frac else "")
    if sign == "-" and out != "0":
        out = "-" + out
    return out


def _parse_range(text: str) -> str:
    m = _RANGE.fullmatch(text)
    if not m:
        raise UnparseableValue(f"not a range: {text!r}")
    lo, hi = int(m[1]), int(m[2])
    if lo > hi:
        raise UnparseableValue(f"empty range: {text!r}")
    return f"{lo}-{hi}"


def canonicalize(attr: AttributeType | str, raw: str) -> CanonicalValue:
    """Return the canonical form of ``raw`` for ``attr``.

    Applies NFC composition, trimming and whitespace collapse for every kind,
    then case folding (text, identifier) or format parsing (date, numeric,
    range). Date and numeric inputs outside the accepted formats raise
    :class:`UnparseableValue`; nothing is guessed.
    """
    attr = attribute(attr)
    if not isinstance(raw, str):
        raise UnparseableValue(f"expected text, got {type(raw).__name__}")
    text = _squash(unicodedata.normalize("NFC", raw))
    if attr.kind in ("text", "identifier"):
        text = _fold(text)
    elif attr.kind == "date":
        text = _parse_date(text)
    elif attr.kind == "numeric":
        text = _parse_number(text)
    else:
        text = _parse_range(text)
    return CanonicalValue(attr, text)


# -- commitments and tags -----------------------------------------------------


def _h(prefix: bytes, attr: AttributeType, text: str) -> bytes:
    h = hashlib.new(HASH_NAME)
    h.update(prefix)
    h.update(attr.id.encode("utf-8"))
    h.update(b"\x00")
    h.update(text.encode("utf-8"))
    return h.digest()


def commit(attr: AttributeType, value: CanonicalValue, salt: bytes) -> Commitment:
    if len(salt) != SALT_LEN:
        raise ValueError(f"salt must be {SALT_LEN} bytes")
    return Commitment(_h(salt, attr, value.text), salt)


def match_tag(nonce: bytes, attr: AttributeType, value: CanonicalValue) -> MatchTag:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    return MatchTag(_h(nonce, attr, value.text))
