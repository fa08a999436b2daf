"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`TranstabError`, so callers can catch the whole family at once.
"""


class TranstabError(Exception):
    pass


class DimensionMismatch(TranstabError, ValueError):
    pass


class NonFiniteState(TranstabError, ArithmeticError):
    """A state left the finite range during integration (numerical blow-up).

    ``time`` is the last time reached with a finite state, when known.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class JacobianUnavailable(TranstabError):
    pass


class NoConvergence(TranstabError, RuntimeError):
    pass


class SingularTensor(TranstabError, ArithmeticError):
    pass


class BasisNotOrthonormal(TranstabError, ValueError):
    pass


class ZeroWindow(TranstabError, ValueError):
    pass


class AllCellsFailed(TranstabError, RuntimeError):
    pass


class DegenerateBaseline(TranstabError, ArithmeticError):
    pass


class OutOfRange(TranstabError, IndexError):
    pass


class NonUniformSampling(TranstabError, ValueError):
    pass


class ParseError(TranstabError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(TranstabError, ValueError):
    pass
