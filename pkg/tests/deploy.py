"""Writes a four-actor deployment (configs, key, registry, store) into a directory."""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass
from pathlib import Path

from dsrauth.actors.config import write_key
from dsrauth.credentials import IssuerKey
from dsrauth.datastore import DataStore
from dsrauth.encoding import b64e

REGISTRY = {
    "person-1": {
        "pid.unique_id": "de-000000001",
        "pid.given_name": "Erika",
        "pid.family_name": "Mustermann",
        "pid.birth_date": "1991-08-12",
        "pid.email": "erika@example.org",
        "pid.address": "Heidestrasse 17, 51147 Koeln",
    },
    "person-2": {
        "pid.unique_id": "de-000000002",
        "pid.given_name": "Max",
        "pid.family_name": "Mustermann",
        "pid.birth_date": "1989-02-03",
        "pid.email": "max@example.org",
        "pid.address": "Heidestrasse 17, 51147 Koeln",
    },
}

CUSTOMERS = [
    {"no": "c1", "given": "ERIKA", "family": "Mustermann", "birth": "12.08.1991", "email": "Erika@Example.org"},
    {"no": "c2", "given": "Max", "family": "mustermann", "birth": "03.02.1989", "email": "max@example.org"},
    {"no": "c3", "given": "Jonas", "family": "Weber", "birth": "1970-01-01", "email": "jonas@example.org"},
]
MAPPING = {"no": None, "given": "pid.given_name", "family": "pid.family_name", "birth": "pid.birth_date",
           "email": "pid.email"}

ACTORS = ("issuer-1", "idp-1", "sp-1", "wallet-1")


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@dataclass
class Deployment:
    root: Path
    ports: dict[str, int]

    def config(self, actor: str) -> Path:
        return self.root / f"{actor}.ini"

    def url(self, actor: str) -> str:
        return f"http://127.0.0.1:{self.ports[actor]}"


def write_deployment(root: Path, consent: dict | None = None, clock: str = "fixed:2026-03-01T12:00:00Z") -> Deployment:
    root.mkdir(parents=True, exist_ok=True)
    ports = {a: free_port() for a in ACTORS}
    key = IssuerKey.from_seed("issuer-1", bytes(range(32)))
    write_key(root / "issuer.key", key)
    (root / "registry.json").write_text(json.dumps(REGISTRY), "utf-8")
    (root / "consent.json").write_text(json.dumps(consent or {"approve": "all"}), "utf-8")
    store = DataStore(root / "store")
    store.ingest(CUSTOMERS, MAPPING, {"dataset_id": "customers"})
    store.save()
    peers = "\n".join(f"{a} = http://127.0.0.1:{p}" for a, p in ports.items())

    def actor(kind: str, actor_id: str, seed: int, body: str) -> None:
        text = (f"[actor]\nkind = {kind}\nid = {actor_id}\nlisten = 127.0.0.1:{ports[actor_id]}\nclock = {clock}\n"
                f"seed = {seed}\nstate_dir = state/{actor_id}\n\n[peers]\n{peers}\n\n{body}")
        (root / f"{actor_id}.ini").write_text(text, "utf-8")

    actor("issuer", "issuer-1", 1, "[keys]\nprivate_key = issuer.key\n\n[issuer]\nregistry = registry.json\n")
    actor("idp", "idp-1", 2, f"[keys]\nissuer.issuer-1 = {b64e(key.public_key)}\n")
    actor("sp", "sp-1", 3, "[sp]\nstore = store\nidp = idp-1\nchannel_relay = wallet-1\n")
    actor("wallet", "wallet-1", 4, "[wallet]\nbundle = bundle.json\nconsent = consent.json\n")
    return Deployment(root, ports)
