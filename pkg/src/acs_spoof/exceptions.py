class ShapeError(ValueError):
    """Raised when array dimensions disagree.

    ``dimension`` names the offending axis (e.g. ``"C"`` or ``"F"``).
    """

    def __init__(self, dimension, expected, got, where=""):
        self.dimension = dimension
        self.expected = expected
        self.got = got
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}dimension {dimension} mismatch: expected {expected}, got {got}")


class DegenerateCosineError(ValueError):
    """Cosine similarity requested against a zero-norm vector."""


class NonFiniteError(ValueError):
    pass


class CentroidStateError(RuntimeError):
    pass


class FormatError(ValueError):
    """Malformed line in a score, protocol or manifest file."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")
