"""Message vocabulary and per-actor state machines for the SSI and FIM flows."""

from .machines import (
    TRANSITIONS,
    Consent,
    ConsentDenied,
    IdpState,
    IllegalTransition,
    NonceMismatch,
    Phase,
    ProtocolError,
    Registration,
    SpFlow,
    SpState,
    UnknownHandle,
    WalletState,
    idp_handle_fim_request,
    idp_handle_initiate,
    idp_handle_register,
    idp_handle_verification,
    new_request_id,
    sp_finalize,
    sp_handle_credential_response,
    sp_handle_dsr_request,
    sp_handle_fim_responses,
    wallet_handle_credential_request,
    wallet_handle_notification,
    wallet_initiate_via_idp,
    wallet_start_dsr,
)
from .messages import (
    MESSAGE_TYPES,
    Ack,
    CredentialRequest,
    CredentialResponse,
    DeviceNotification,
    DsrRequest,
    DsrResult,
    ErrorReply,
    FimVerificationRequest,
    Health,
    Initiate,
    IssueRequest,
    IssueResponse,
    Register,
    RevokeRequest,
    Validity,
    VerificationRequest,
    VerificationResponse,
    decode,
    encode,
)

__all__ = [name for name in dir() if not name.startswith("_")]
