"""Exception hierarchy shared across the toolkit.

Three broad families matter to callers (and to the CLI's exit codes):
crypto/validation failures, transport failures, and authentication
rejections.  Concrete subclasses live next to the code that raises them.
"""


class QshError(Exception):
    """Base class for all toolkit errors."""


class CryptoError(QshError):
    """Cryptographic or validation failure (bad key, bad signature, bad encoding)."""


class TransportError(QshError):
    """Channel-level failure (timeout, peer closed, I/O error)."""


class AuthRejected(QshError):
    """The server refused the presented credentials."""


class ProtocolError(QshError):
    """Peer violated the handshake protocol (out-of-order or malformed message)."""
