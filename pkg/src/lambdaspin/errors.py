"""Exception types raised across the package."""


class LambdaSpinError(Exception):
    """Base class for all package errors."""


class NonConvergenceError(LambdaSpinError):
    """Numerical procedure failed to meet its accuracy or iteration budget."""


class InvalidWindowError(LambdaSpinError, ValueError):
    """Requested sample time lies outside the pulse sequence span."""


class DegenerateInputError(LambdaSpinError, ValueError):
    pass


class InvalidGeometryError(LambdaSpinError, ValueError):
    pass


class InvalidSpecError(LambdaSpinError, ValueError):
    pass


class NoOscillationError(LambdaSpinError):
    """Data carries no oscillation distinguishable from a constant or trend."""


class InsufficientDataError(LambdaSpinError):
    pass


class ConfigError(LambdaSpinError):
    """Base for configuration and input-file problems (CLI exit code 1)."""


class ParseError(ConfigError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ValidationError(ConfigError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class SchemaError(ConfigError):
    pass
