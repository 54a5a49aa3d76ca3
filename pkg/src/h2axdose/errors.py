"""Exception hierarchy shared by all modules."""


class H2AXDoseError(Exception):
    """Base class for package errors."""


class DomainError(H2AXDoseError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class BoundaryError(DomainError):
    """A model parameter falls outside its prior box."""

    def __init__(self, name, value, lower, upper):
        self.name = name
        self.value = value
        self.bounds = (lower, upper)
        super().__init__(f"parameter {name}={value!r} outside prior box [{lower}, {upper}]")


class NumericError(H2AXDoseError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class NotPositiveDefiniteError(NumericError):
    """Matrix factorisation failed; carries the smallest eigenvalue."""

    def __init__(self, min_eigenvalue, message=None):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(message or f"matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")


class OptimizationError(H2AXDoseError, RuntimeError):
    """Every optimizer start failed; ``diagnostics`` lists per-start outcomes."""

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class CalibrationError(H2AXDoseError, RuntimeError):
    """The Laplace approximation could not be formed at the reported mode."""


class GridError(DomainError):
    """The dose grid misses too much posterior mass."""

    def __init__(self, message, left_mass=0.0, right_mass=0.0):
        self.left_mass = left_mass
        self.right_mass = right_mass
        super().__init__(message)


class ParseError(H2AXDoseError, ValueError):
    """Malformed input file; ``line`` and ``column`` are 1-based when known."""

    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
