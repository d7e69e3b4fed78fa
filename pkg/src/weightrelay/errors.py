"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to.
"""


class RelayError(Exception):
    exit_code = 1


class ConfigError(RelayError, ValueError):
    exit_code = 2


class SpecError(ConfigError):
    """Malformed network description."""


class DataError(ConfigError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(RelayError, ArithmeticError):
    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class BlobError(RelayError, ValueError):
    """A weight blob could not be decoded for the receiving network."""

    exit_code = 3


class IntegrityError(BlobError):
    """Decryption produced something that is not a valid weight blob."""


class ProtocolError(RelayError):
    exit_code = 3


class VerificationError(RelayError):
    exit_code = 4
