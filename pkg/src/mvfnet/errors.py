class MvfError(Exception):
    """Base class for library errors."""


class ShapeError(MvfError, ValueError):
    """Tensor shapes (or dtypes) are inconsistent for the requested op."""


class DomainError(MvfError, ValueError):
    """An argument lies outside its admissible range."""
