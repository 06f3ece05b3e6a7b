"""Exception hierarchy shared across the package."""


class CurionavError(Exception):
    pass


class DimensionError(CurionavError, ValueError):
    pass


class NumericError(CurionavError, FloatingPointError):
    pass


class ContractError(CurionavError, ValueError):
    pass


class GenerationError(CurionavError, RuntimeError):
    pass


class CheckpointVersionError(CurionavError):
    pass


class DependencyError(CurionavError):
    pass


class ConfigError(CurionavError):
    """Base for config problems; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigMissingError(ConfigError, FileNotFoundError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class ConfigValueError(ConfigError):
    pass
