"""Exception types shared across the simulator."""


class ConvoySimError(Exception):
    """Base class for all simulator errors."""


class ParamParseError(ConvoySimError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DuplicateParamError(ParamParseError):
    def __init__(self, name, first_line, second_line):
        self.name = name
        self.first_line = first_line
        self.second_line = second_line
        super().__init__(second_line, f"duplicate parameter {name} (first defined on line {first_line})")


class UnknownParamError(ConvoySimError, KeyError):
    def __str__(self):
        return f"unknown parameter: {self.args[0]}"


class ConfigError(ConvoySimError):
    """Invalid configuration; ``diagnostics`` holds lint findings when the cause was lint."""

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class NumericDomainError(ConvoySimError, ValueError):
    def __init__(self, message, tick=None):
        self.tick = tick
        if tick is not None:
            message = f"tick {tick}: {message}"
        super().__init__(message)


class GeometryError(ConvoySimError, ValueError):
    pass


class ContractError(ConvoySimError):
    """A documented precondition was violated by the caller."""


class BsmDecodeError(ConvoySimError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"field {field}: {message}")
