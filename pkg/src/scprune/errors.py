"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid dimensions."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class SingularMatrixError(RuntimeError):
    """A linear system is singular (or not positive definite) with ridge 0."""


class DegenerateDataError(ValueError):
    """Input data carries no usable correlation structure (e.g. all-zero columns)."""


class StructureError(ValueError):
    """A model graph violates a structural assumption (layer ordering, block layout)."""


class ParameterError(ValueError):
    """A caller-supplied parameter is out of its valid range."""


class InputError(ValueError):
    """External input (files, datasets, labels) is missing or inconsistent."""


class FormatError(ValueError):
    """A serialized file violates the on-disk format."""
