"""Exception hierarchy shared by every module.

Each leaf carries an ``exit_code`` so the command line can map failures
without inspecting types: 2 for bad input, 3 for service failures.
"""


class PolifilterError(Exception):
    exit_code = 1


class InputError(PolifilterError):
    exit_code = 2


class MalformedSource(InputError):
    """A raw corpus file could not be parsed."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class UnmappableLabel(InputError):
    def __init__(self, pairs):
        self.pairs = sorted(set(pairs))
        listed = "; ".join(f"({p!r}, {a!r})" for p, a in self.pairs)
        super().__init__(f"{len(self.pairs)} unmappable practice/attribute pair(s): {listed}")


class BadCounts(InputError):
    pass


class InvalidSpan(InputError):
    pass


class NoMaskToken(InputError):
    pass


class MultipleMaskTokens(InputError):
    pass


class ParagraphTooShort(InputError):
    pass


class UnknownParagraph(InputError):
    pass


class ConfigError(InputError):
    pass


class IoFailure(PolifilterError):
    exit_code = 2


class BackendError(PolifilterError):
    exit_code = 3


class BackendUnavailable(BackendError):
    pass


class AuthFailure(BackendError):
    pass


class ResponseTooLong(BackendError):
    pass


class EmptyGeneration(BackendError):
    """A generation held no usable text."""


class ScriptMiss(BackendError):
    """The mock backend has no scripted completion for a request."""
