"""Exception hierarchy shared by every stage of the pipeline."""


class PrefRecError(Exception):
    """Base class for all toolkit errors."""


class DomainError(PrefRecError, ValueError):
    """An argument lies outside the domain the operation accepts."""


class ParseError(PrefRecError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ValidationError(PrefRecError):
    pass


class TemplateError(PrefRecError, KeyError):
    def __init__(self, slot):
        self.slot = slot
        super().__init__(slot)

    def __str__(self):
        return f"missing template variable: {self.slot}"


class BackendError(PrefRecError):
    """A generation or scoring backend failed. ``index`` locates the failing unit."""

    def __init__(self, message, index=None, context=None):
        self.index = index
        self.context = context or {}
        super().__init__(message)


class GenerationError(PrefRecError):
    pass


class NumericalError(PrefRecError, ArithmeticError):
    pass


class FormatError(PrefRecError):
    pass


class ProtocolError(PrefRecError):
    pass


class IoError(PrefRecError, OSError):
    pass


class ConfigError(PrefRecError):
    pass
