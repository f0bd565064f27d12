"""Canonical JSON and the byte/timestamp encodings shared by every wire format.

Canonical form: keys sorted lexicographically, no insignificant whitespace,
UTF-8 output, byte fields as unpadded base64url, timestamps as
``YYYY-MM-DDTHH:MM:SSZ`` (UTC, second resolution).
"""

from __future__ import annotations

import base64
import json
from datetime import datetime, timezone
from typing import Any


class EncodingError(ValueError):
    """Raised when a wire value cannot be decoded."""


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def loads(data: bytes | str) -> Any:
    try:
        return json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise EncodingError(f"invalid JSON: {exc}") from exc


def b64e(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def b64d(text: str, length: int | None = None) -> bytes:
    if not isinstance(text, str):
        raise EncodingError("expected base64url string")
    if any(c in text for c in "=+/") or text.strip() != text:
        raise EncodingError("non-canonical base64url")
    try:
        raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (ValueError, TypeError) as exc:
        raise EncodingError(f"invalid base64url: {exc}") from exc
    # reject encodings with non-zero padding bits so every value has one text form
    if b64e(raw) != text:
        raise EncodingError("non-canonical base64url")
    if length is not None and len(raw) != length:
        raise EncodingError(f"expected {length} bytes, got {len(raw)}")
    return raw


def utc(dt: datetime) -> datetime:
    """Normalize to an aware UTC datetime truncated to whole seconds."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def ts_encode(dt: datetime) -> str:
    return utc(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def ts_decode(text: str) -> datetime:
    if not isinstance(text, str):
        raise EncodingError("expected timestamp string")
    try:
        dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    except ValueError as exc:
        raise EncodingError(f"invalid timestamp {text!r}") from exc
    dt = dt.replace(tzinfo=timezone.utc)
    if ts_encode(dt) != text:
        raise EncodingError(f"non-canonical timestamp {text!r}")
    return dt
