"""Exception hierarchy shared by all fingerfuzz components."""


class FingerfuzzError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FingerfuzzError):
    """Invalid generation configuration; names the offending field."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"invalid config field '{field}': {reason}")
        self.field = field


class ParseError(FingerfuzzError):
    """Malformed collection, fingerprint, or server-script file."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class IntegrityError(FingerfuzzError):
    """A stored digest does not match the recomputed one."""


class ConnectError(FingerfuzzError):
    """TCP connection to the target could not be established."""


class LoginError(FingerfuzzError):
    """FTP login was rejected; carries the observed replies."""

    def __init__(self, message: str, user_reply=None, pass_reply=None):
        super().__init__(message)
        self.user_reply = user_reply
        self.pass_reply = pass_reply


class TransportError(FingerfuzzError):
    """Local I/O failure on an open session (distinct from sentinel replies)."""


class ScanRefusedError(FingerfuzzError):
    """Target rejected the login, so no comparable fingerprint can be taken."""

    def __init__(self, message: str, user_reply=None, pass_reply=None):
        super().__init__(message)
        self.user_reply = user_reply
        self.pass_reply = pass_reply


class PartialScanError(FingerfuzzError):
    """Scan aborted before all requests were answered; no fingerprint emitted."""

    def __init__(self, message: str, completed: int = 0):
        super().__init__(message)
        self.completed = completed


class IncomparableError(FingerfuzzError):
    """Fingerprints were taken with different request collections."""


class DatabaseError(FingerfuzzError):
    """Fingerprint database directory is unusable (duplicates, mixed digests)."""


class InsufficientDataError(FingerfuzzError):
    """Operation needs more fingerprints than the database holds."""
