"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Input failed a precondition (bad probability, mismatched lengths, ...)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class FactorizationError(ArithmeticError):
    """Cholesky factorization hit a negative pivot."""

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"matrix is not positive semi-definite: pivot {pivot} = {value:.3g}"
        )


class NumericWarning(UserWarning):
    """A numerical routine repaired or clamped its input."""
