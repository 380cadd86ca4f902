"""Crypto-agile client/server authentication toolkit.

Classical finite-field key exchange and lattice-based key encapsulation run
side by side behind one negotiated wire protocol, with hybrid certificate
chains, an active-interceptor test harness, and a Monte-Carlo latency
benchmark pipeline.
"""

from .errors import (
    AuthRejected,
    CryptoError,
    ProtocolError,
    QshError,
    TransportError,
)
from .handshake import (
    ClientSession,
    Credential,
    Mode,
    NegotiationOffer,
    ServerConfig,
    ServerSession,
    SigningKey,
    default_sig_prefs,
    make_offer,
)
from .kem import (
    DEFAULT_KEM,
    KemAlgorithm,
    get_kem,
    get_kem_by_code,
    kem_names,
    register_kem,
    security_profile,
    unregister_kem,
)
from .primitives import SeededRng, SystemRng
from .server import QshServer, client_authenticate, serve_session
from .sig import get_sig, get_sig_by_code, register_sig, sig_names

__version__ = "0.1.0"

__all__ = [
    "AuthRejected",
    "ClientSession",
    "Credential",
    "CryptoError",
    "DEFAULT_KEM",
    "KemAlgorithm",
    "Mode",
    "NegotiationOffer",
    "ProtocolError",
    "QshError",
    "QshServer",
    "SeededRng",
    "ServerConfig",
    "ServerSession",
    "SigningKey",
    "SystemRng",
    "TransportError",
    "client_authenticate",
    "default_sig_prefs",
    "get_kem",
    "get_kem_by_code",
    "get_sig",
    "get_sig_by_code",
    "kem_names",
    "make_offer",
    "register_kem",
    "register_sig",
    "security_profile",
    "serve_session",
    "sig_names",
    "unregister_kem",
    "__version__",
]
