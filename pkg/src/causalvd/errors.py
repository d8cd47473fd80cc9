"""Exception hierarchy.

Validation problems derive from :class:`DataError` (CLI exit code 2);
numerical problems derive from :class:`FitError` (CLI exit code 3).
"""


class DataError(ValueError):
    pass


class MissingColumn(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} not found in header")


class MissingValue(DataError):
    def __init__(self, row, column):
        self.row = row
        self.column = column
        super().__init__(f"missing value at row {row}, column {column!r}")


class NonBinaryOutcome(DataError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"binary outcome expected, got {value!r} at row {row}")


class SingleLevelFactor(DataError):
    def __init__(self, column, levels):
        self.column = column
        self.levels = levels
        super().__init__(f"column {column!r} needs at least 2 levels, found {levels}")


class DimensionMismatch(ValueError):
    pass


class UnsupportedDims(ValueError):
    pass


class FitError(RuntimeError):
    pass


class RankDeficientDesign(FitError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; dependent columns: {self.columns}")


class NotConverged(FitError):
    def __init__(self, iterations, gradient_norm):
        self.iterations = iterations
        self.gradient_norm = gradient_norm
        super().__init__(
            f"Newton iterations did not converge after {iterations} steps "
            f"(max |gradient| = {gradient_norm:.3g})"
        )


class NonPsdCovariance(FitError):
    def __init__(self, min_eigenvalue):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3g})")


class TooManyFailures(FitError):
    def __init__(self, failed, total):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed} of {total} bootstrap replicates failed to fit")
