"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class ResolutionError(ValueError):
    """Step or grid too coarse for the frequencies involved."""


class UnsupportedOrder(ValueError):
    pass


class DivergentIntegrand(ArithmeticError):
    pass


class ParseError(ValueError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class ValidationError(ValueError):
    pass
