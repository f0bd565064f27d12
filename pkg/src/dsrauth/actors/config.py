"""INI actor configuration, service construction and the ``serve`` entry point.

Example (SP)::

    [actor]
    kind = sp
    id = sp-1
    listen = 127.0.0.1:8443
    clock = real
    state_dir = ./state/sp-1

    [peers]
    idp-1 = http://127.0.0.1:8442

    [sp]
    store = ./store
    idp = idp-1

``DSRAUTH_LISTEN`` and ``DSRAUTH_CLOCK`` override ``listen`` and ``clock``.
"""

from __future__ import annotations

import configparser
import logging
import os
import random
import signal
import threading
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Mapping, Optional

from ..canonical import UnknownAttribute, attribute
from ..credentials import CredentialBundle, IssuerKey, IssuerState, Mode
from ..datastore import CorruptStore, DataStore
from ..encoding import EncodingError, b64d, loads
from ..policy import DEFAULT_POLICY, PolicyError, load_policy
from ..protocol.machines import IdpState
from .clock import Clock, parse_clock
from .consent import ConsentFileError, consent_from_file, prompt_consent
from .http import ActorServer, BindFailure
from .persist import CorruptState, StateDir
from .services import CombinedService, IdpService, IssuerService, Service, SpService, WalletService
from .transport import HttpTransport, Transport

log = logging.getLogger(__name__)

KINDS = ("issuer", "idp", "sp", "wallet", "issuer+idp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORRUPT = 3


class ConfigError(ValueError):
    pass


@dataclass
class ActorConfig:
    kind: str
    actor_id: str
    listen: tuple[str, int] = ("127.0.0.1", 0)
    clock: str = "real"
    seed: Optional[int] = None
    state_dir: Optional[Path] = None
    peers: dict[str, str] = field(default_factory=dict)
    keys: dict[str, str] = field(default_factory=dict)
    sections: dict[str, dict[str, str]] = field(default_factory=dict)
    base: Path = Path(".")

    def role(self, name: str) -> dict[str, str]:
        return self.sections.get(name, {})

    def path(self, value: str) -> Path:
        p = Path(value).expanduser()
        return p if p.is_absolute() else self.base / p


def _listen(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ConfigError(f"listen must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def load_config(path: str | Path, env: Optional[Mapping[str, str]] = None) -> ActorConfig:
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep peer ids and attribute ids as written
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not cp.has_section("actor"):
        raise ConfigError(f"{path}: missing [actor] section")
    a = cp["actor"]
    kind = a.get("kind", "")
    if kind not in KINDS:
        raise ConfigError(f"actor kind must be one of {', '.join(KINDS)}")
    if not a.get("id"):
        raise ConfigError("actor id missing")
    base = Path(path).resolve().parent
    cfg = ActorConfig(
        kind=kind,
        actor_id=a["id"],
        listen=_listen(env.get("DSRAUTH_LISTEN") or a.get("listen", "127.0.0.1:0")),
        clock=env.get("DSRAUTH_CLOCK") or a.get("clock", "real"),
        peers=dict(cp["peers"]) if cp.has_section("peers") else {},
        keys=dict(cp["keys"]) if cp.has_section("keys") else {},
        sections={s: dict(cp[s]) for s in cp.sections() if s not in ("actor", "peers", "keys")},
        base=base,
    )
    if a.get("seed"):
        try:
            cfg.seed = int(a["seed"])
        except ValueError as exc:
            raise ConfigError("seed must be an integer") from exc
    if a.get("state_dir"):
        cfg.state_dir = cfg.path(a["state_dir"])
    try:
        parse_clock(cfg.clock)
    except (ValueError, EncodingError) as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def _need(section: Mapping[str, str], key: str, where: str) -> str:
    v = section.get(key)
    if not v:
        raise ConfigError(f"[{where}] {key} is required")
    return v


def validate(cfg: ActorConfig) -> None:
    """Every peer a flow will contact must be resolvable before the first message."""
    roles = cfg.kind.split("+")
    if "sp" in roles:
        sp = cfg.role("sp")
        idp = _need(sp, "idp", "sp")
        if idp not in cfg.peers:
            raise ConfigError(f"[sp] idp {idp!r} has no entry in [peers]")
        _need(sp, "store", "sp")
        if sp.get("mode", "cleartext") not in ("cleartext", "hashed"):
            raise ConfigError("[sp] mode must be cleartext or hashed")
        relay = sp.get("channel_relay")
        if relay and relay not in cfg.peers:
            raise ConfigError(f"[sp] channel_relay {relay!r} has no entry in [peers]")
    if "idp" in roles:
        idp = cfg.role("idp")
        trusted = [k[len("issuer."):] for k in cfg.keys if k.startswith("issuer.")]
        if not trusted and "issuer" not in roles:
            raise ConfigError("[keys] needs at least one issuer.<id> public key")
        for iss in trusted:
            if iss not in cfg.peers and iss != cfg.actor_id:
                raise ConfigError(f"issuer {iss!r} has no entry in [peers]")
        for k, v in idp.items():
            if k.startswith("policy.") and not cfg.path(v).exists():
                raise ConfigError(f"[idp] {k}: {v} not found")
    if "issuer" in roles:
        _need(cfg.keys, "private_key", "keys")
        _need(cfg.role("issuer"), "registry", "issuer")
    if "wallet" in roles:
        w = cfg.role("wallet")
        consent = w.get("consent", "prompt")
        if consent != "prompt" and not cfg.path(consent).exists():
            raise ConfigError(f"[wallet] consent file {consent} not found")


def read_key(path: Path, issuer_id: str) -> IssuerKey:
    try:
        text = path.read_text(encoding="ascii").strip()
        seed = bytes.fromhex(text)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read issuer key {path}: {exc}") from exc
    if len(seed) != 32:
        raise ConfigError(f"issuer key {path} must hold 32 bytes as hex")
    return IssuerKey.from_seed(issuer_id, seed)


def write_key(path: Path, key: IssuerKey) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="ascii") as fh:
        fh.write(key.private_bytes().hex() + "\n")


def _randbytes(cfg: ActorConfig):
    if cfg.seed is None:
        return os.urandom
    if cfg.state_dir is None:
        return random.Random(cfg.seed).randbytes
    # a restarted seeded actor must not replay the nonces and request ids of its previous run
    counter = cfg.state_dir / "rng-epoch"
    try:
        epoch = int(counter.read_text("ascii")) + 1 if counter.exists() else 0
    except (OSError, ValueError) as exc:
        raise CorruptState(f"{counter}: {exc}") from exc
    cfg.state_dir.mkdir(parents=True, exist_ok=True)
    counter.write_text(f"{epoch}\n", "ascii")
    return random.Random(f"{cfg.seed}:{epoch}").randbytes


def _state_dir(cfg: ActorConfig, role: str) -> Optional[StateDir]:
    if cfg.state_dir is None:
        return None
    return StateDir(cfg.state_dir / role if "+" in cfg.kind else cfg.state_dir)


def _read_registry(path: Path) -> dict[str, dict[str, str]]:
    try:
        data = loads(path.read_bytes())
    except (OSError, EncodingError) as exc:
        raise ConfigError(f"registry {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"registry {path} must map person ids to attribute objects")
    try:
        return {pid: {attribute(k).id: str(v) for k, v in rec.items()} for pid, rec in data.items()}
    except (AttributeError, UnknownAttribute) as exc:
        raise ConfigError(f"registry {path}: {exc}") from exc


def build_service(cfg: ActorConfig, transport: Optional[Transport] = None, clock: Optional[Clock] = None) -> Service:
    """Construct the configured service. Raises ConfigError or CorruptState."""
    transport = transport or HttpTransport(cfg.peers)
    clock = clock or parse_clock(cfg.clock)
    rb = _randbytes(cfg)
    parts: list[Service] = []
    roles = cfg.kind.split("+")
    issuer_key = None
    if "issuer" in roles:
        issuer_key = read_key(cfg.path(cfg.keys["private_key"]), cfg.actor_id)
        registry = _read_registry(cfg.path(cfg.role("issuer")["registry"]))
        days = int(cfg.role("issuer").get("validity_days", "365"))
        parts.append(IssuerService(cfg.actor_id, IssuerState(issuer_key, registry), transport, clock, rb,
                                   _state_dir(cfg, "issuer"), timedelta(days=days)))
    if "idp" in roles:
        keys = {}
        for k, v in cfg.keys.items():
            if k.startswith("issuer."):
                try:
                    keys[k[len("issuer."):]] = b64d(v, 32)
                except EncodingError as exc:
                    raise ConfigError(f"[keys] {k}: {exc}") from exc
        if issuer_key is not None:
            keys[cfg.actor_id] = issuer_key.public_key
        policies = {}
        for k, v in cfg.role("idp").items():
            if k.startswith("policy."):
                try:
                    policies[k[len("policy."):]] = load_policy(cfg.path(v))
                except PolicyError as exc:
                    raise ConfigError(str(exc)) from exc
        issuers = {iss: iss for iss in keys}
        idp = IdpService(cfg.actor_id, IdpState(cfg.actor_id, keys, policies=policies), issuers,
                         transport, clock, rb, _state_dir(cfg, "idp"))
        if parts and isinstance(parts[0], IssuerService):
            idp.local_issuers[cfg.actor_id] = parts[0]
        parts.append(idp)
    if "sp" in roles:
        sp = cfg.role("sp")
        try:
            store = DataStore.load(cfg.path(sp["store"]))
        except CorruptStore as exc:
            raise CorruptState(str(exc)) from exc
        try:
            policy = load_policy(cfg.path(sp["policy"])) if sp.get("policy") else DEFAULT_POLICY
        except PolicyError as exc:
            raise ConfigError(str(exc)) from exc
        if sp.get("channel_relay"):
            transport.channel_relay = sp["channel_relay"]
        parts.append(SpService(cfg.actor_id, store, policy, sp["idp"], transport, clock, rb,
                               _state_dir(cfg, "sp"), Mode(sp.get("mode", "cleartext"))))
    if "wallet" in roles:
        w = cfg.role("wallet")
        bundle = None
        if w.get("bundle") and cfg.path(w["bundle"]).exists():
            try:
                bundle = CredentialBundle.from_wire(loads(cfg.path(w["bundle"]).read_bytes()))
            except EncodingError as exc:
                raise CorruptState(f"bundle {w['bundle']}: {exc}") from exc
        consent_spec = w.get("consent", "prompt")
        try:
            consent = (prompt_consent(timeout=float(w.get("consent_timeout", "60"))) if consent_spec == "prompt"
                       else consent_from_file(cfg.path(consent_spec)))
        except (ConsentFileError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        parts.append(WalletService(cfg.actor_id, transport, clock, rb, _state_dir(cfg, "wallet"), bundle, consent))
    service = parts[0] if len(parts) == 1 else CombinedService(cfg.actor_id, parts)
    service.load_state()
    return service


def serve(cfg: ActorConfig, ready: Optional[threading.Event] = None) -> int:
    """Run until SIGINT/SIGTERM; state is flushed on the way out. Returns an exit code."""
    try:
        service = build_service(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except CorruptState as exc:
        log.error("refusing to serve, corrupt state: %s", exc)
        return EXIT_CORRUPT
    try:
        server = ActorServer(service, *cfg.listen)
    except BindFailure as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.info("%s (%s) listening on %s", cfg.actor_id, service.kind, server.url)

    def stop(_sig, _frame):
        threading.Thread(target=server.httpd.shutdown, daemon=True).start()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, stop)
        signal.signal(signal.SIGINT, stop)
    if ready is not None:
        ready.set()
    try:
        server.serve_forever()
    finally:
        server.httpd.server_close()
        service.close()
    return EXIT_OK
