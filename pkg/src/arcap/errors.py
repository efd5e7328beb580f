"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input violated a documented precondition (dimension mismatch, empty list, ...)."""


class OrderingError(ValueError):
    """A timestamp or sequence number went backwards within a stream."""


class StateError(RuntimeError):
    """An operation was attempted in an invalid lifecycle state (e.g. append after finalize)."""


class IntegrityError(RuntimeError):
    """Stored data failed validation (bad checksum, truncated chunk, corrupt stream)."""


class ProtocolError(RuntimeError):
    """A wire frame could not be interpreted; the connection can survive this."""

    def __init__(self, code: str, text: str = ""):
        super().__init__(text or code)
        self.code = code
        self.text = text or code


class IncompleteFrame(Exception):
    """Not enough bytes buffered yet to decode a full frame."""
