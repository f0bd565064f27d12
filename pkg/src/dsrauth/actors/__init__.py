"""Issuer, IdP, SP and wallet services, their transports and configuration."""

from .clock import Clock, FixedClock, RealClock, parse_clock
from .config import ActorConfig, ConfigError, build_service, load_config, serve
from .consent import ConsentTimeout, consent_from_file, parse_consent, prompt_consent, scripted
from .http import ActorServer, BindFailure
from .persist import CorruptState, StateDir
from .services import CombinedService, IdpService, IssuerService, Service, SpService, WalletService
from .transport import HttpTransport, InProcessTransport, RemoteError, Transcript, Transport, TransportError

__all__ = [
    "ActorConfig", "ActorServer", "BindFailure", "Clock", "CombinedService", "ConfigError", "ConsentTimeout",
    "CorruptState", "FixedClock", "HttpTransport", "IdpService", "InProcessTransport", "IssuerService",
    "RealClock", "RemoteError", "Service", "SpService", "StateDir", "Transcript", "Transport", "TransportError",
    "WalletService", "build_service", "consent_from_file", "load_config", "parse_clock", "parse_consent",
    "prompt_consent", "scripted", "serve",
]
