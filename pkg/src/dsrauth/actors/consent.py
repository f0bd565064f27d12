"""Wallet-operator consent: scripted from a file or asked on the terminal."""

from __future__ import annotations

import json
import queue
import sys
import threading
from pathlib import Path
from typing import Callable, Optional, TextIO

from ..protocol.machines import Consent
from ..protocol.messages import CredentialRequest


class ConsentTimeout(Exception):
    pass


class ConsentFileError(ValueError):
    pass


def parse_consent(data) -> Consent:
    """``{"approve": "all"}``, ``{"approve": [...]}``, ``{"deny": [...]}`` or ``{"deny": "all"}``."""
    if not isinstance(data, dict) or not set(data) <= {"approve", "deny"} or not data:
        raise ConsentFileError("consent must be an object with 'approve' and/or 'deny'")
    deny = data.get("deny", [])
    if deny == "all":
        return Consent.deny()
    approve = data.get("approve", "all")
    if not isinstance(deny, list) or not (approve == "all" or isinstance(approve, list)):
        raise ConsentFileError("approve/deny must be 'all' or a list of attribute ids")
    if approve == "all" and not deny:
        return Consent.all()
    return _Partial(None if approve == "all" else frozenset(approve), frozenset(deny))


class _Partial:
    def __init__(self, approve: Optional[frozenset[str]], deny: frozenset[str]):
        self.approve, self.deny = approve, deny

    def for_request(self, req: CredentialRequest) -> Consent:
        base = set(req.requested) if self.approve is None else set(self.approve)
        return Consent.only(*(base - self.deny))


def consent_from_file(path: str | Path) -> Callable[[CredentialRequest], Consent]:
    try:
        parsed = parse_consent(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConsentFileError(f"{path}: {exc}") from exc
    return scripted(parsed)


def scripted(decision) -> Callable[[CredentialRequest], Consent]:
    if isinstance(decision, _Partial):
        return decision.for_request
    return lambda req: decision


def prompt_consent(
    input_fn: Callable[[str], str] = input,
    out: TextIO = sys.stderr,
    timeout: Optional[float] = 60.0,
) -> Callable[[CredentialRequest], Consent]:
    """Ask once per requested attribute.

    Raises :class:`ConsentTimeout` when the operator does not finish within
    ``timeout`` seconds; the wallet treats that as a denial.
    """

    def ask(req: CredentialRequest) -> Consent:
        answers: queue.Queue = queue.Queue()

        def worker() -> None:
            picked = []
            try:
                for attr in req.requested:
                    if input_fn(f"share {attr} with {req.sp_id}? [y/N] ").strip().lower() in ("y", "yes"):
                        picked.append(attr)
            except EOFError:
                answers.put(None)
                return
            answers.put(picked)

        print(f"{req.sp_id} requests {len(req.requested)} attributes", file=out)
        threading.Thread(target=worker, daemon=True).start()
        try:
            picked = answers.get(timeout=timeout)
        except queue.Empty as exc:
            print("consent timed out; nothing will be shared", file=out)
            raise ConsentTimeout(req.sp_id) from exc
        if picked is None:
            return Consent.deny()
        return Consent.only(*picked)

    return ask
