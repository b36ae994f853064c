"""Exception types shared across modules (the CLI maps them to exit codes)."""


class ParameterError(ValueError):
    """Invalid argument value."""


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class IntegrationError(RuntimeError):
    """Non-finite values during time stepping."""


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint stream."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
