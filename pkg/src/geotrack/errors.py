"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(RuntimeError):
    """A call violated an operation's precondition (e.g. backward on a non-scalar)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class EmptyInputError(ValueError):
    pass


class FormatError(ValueError):
    """A sequence or checkpoint file could not be parsed."""

    def __init__(self, path, line=None, reason=""):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {reason}" if reason else where)


class CheckpointMismatchError(ValueError):
    def __init__(self, name, reason):
        self.name = name
        super().__init__(f"checkpoint parameter {name!r}: {reason}")


class UndefinedMetricError(ValueError):
    pass
