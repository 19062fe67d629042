"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Malformed input: non-SPD Gram table, bad shape, bad config field.

    ``field`` names the offending input so callers (and the CLI) can point at it.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def __str__(self):
        msg = super().__str__()
        return f"{self.field}: {msg}" if self.field else msg


class SemigroupOverflowError(ArithmeticError):
    """Raised when e^{tA} would exceed double precision range.

    ``mode`` is the index of the first offending mode (eigenvalue index).
    """

    def __init__(self, mode, exponent):
        super().__init__(
            f"e^(tA) overflows at mode {mode} (log-magnitude {exponent:.6g} > 700)"
        )
        self.mode = mode
        self.exponent = exponent


class IncompatibleDataError(ValueError):
    """Final value data fail the compatibility test; carries the report."""

    def __init__(self, report):
        super().__init__(
            f"final value data are not compatible (verdict: {report.verdict})"
        )
        self.report = report


class AccuracyWarning(UserWarning):
    """Quadrature refinement did not settle within the requested tolerance."""
