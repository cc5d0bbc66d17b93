"""Exception hierarchy shared by every layer of the protocol."""

from __future__ import annotations


class ProtocolError(Exception):
    """Base class for all errors raised by ehrdeleg."""


class PurposeError(ProtocolError):
    """A key of one purpose (signing/encryption) was used for the other."""


class KeyFormatError(ProtocolError):
    pass


class FormatError(ProtocolError):
    pass


class AuthenticityError(ProtocolError):
    """Authenticated decryption or a signature check failed."""


class ParameterError(ProtocolError):
    pass


class ProfileError(ProtocolError):
    pass


class ModeError(ProtocolError):
    pass


class InsufficientPartiesError(ProtocolError):
    """Raised by the combiners when the cooperating parties do not cover every key."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        labels = ", ".join("{" + ",".join(map(str, b)) + "}" for b in self.missing)
        super().__init__(f"insufficient parties: missing key indices {labels}")


class InconsistencyError(ProtocolError):
    pass


class NotFoundError(ProtocolError):
    pass


class UnresolvedReferenceError(ProtocolError):
    pass


class BindingError(ProtocolError):
    pass


class AuthorizationError(ProtocolError):
    pass


class ValidationError(ProtocolError):
    pass


class NotARecipientError(ProtocolError):
    pass


class ExpiredError(ProtocolError):
    pass


class ConfigurationError(ProtocolError):
    pass


class TransportError(ProtocolError):
    pass


class AccessDenied(ProtocolError):
    def __init__(self, reason: str, by: str | None = None):
        self.reason = reason
        self.by = by
        super().__init__(f"access denied ({reason})" + (f" by {by}" if by else ""))
