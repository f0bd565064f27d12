"""Actor state on disk: a canonical-JSON snapshot plus an append-only journal."""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Any, Mapping, Optional

from ..encoding import EncodingError, canonical_json, loads


class CorruptState(Exception):
    pass


class StateDir:
    SNAPSHOT = "state.json"
    JOURNAL = "journal.jsonl"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    @property
    def snapshot_path(self) -> Path:
        return self.root / self.SNAPSHOT

    @property
    def journal_path(self) -> Path:
        return self.root / self.JOURNAL

    def load(self) -> Optional[dict]:
        """The last snapshot, or None for a fresh directory. Validates the journal too."""
        self.read_journal()
        if not self.snapshot_path.exists():
            return None
        try:
            data = loads(self.snapshot_path.read_bytes())
        except (OSError, EncodingError) as exc:
            raise CorruptState(f"{self.snapshot_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise CorruptState(f"{self.snapshot_path}: snapshot must be an object")
        return data

    def save(self, snapshot: Mapping[str, Any]) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.snapshot_path.with_suffix(".tmp")
        tmp.write_bytes(canonical_json(snapshot) + b"\n")
        os.replace(tmp, self.snapshot_path)

    def append(self, event: Mapping[str, Any]) -> None:
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self.journal_path, "ab") as fh:
                fh.write(canonical_json(event) + b"\n")

    def read_journal(self) -> list[dict]:
        if not self.journal_path.exists():
            return []
        out = []
        for n, line in enumerate(self.journal_path.read_bytes().splitlines(), 1):
            if not line.strip():
                continue
            try:
                e = loads(line)
            except EncodingError as exc:
                raise CorruptState(f"{self.journal_path}:{n}: {exc}") from exc
            if not isinstance(e, dict):
                raise CorruptState(f"{self.journal_path}:{n}: event must be an object")
            out.append(e)
        return out
