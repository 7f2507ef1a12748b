"""Exception hierarchy shared by all modules."""


class WinRatioError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(WinRatioError):
    """Dataset failed one or more invariants.

    ``violations`` holds every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [str(v) for v in self.violations[:20]]
        if len(self.violations) > 20:
            lines.append(f"... and {len(self.violations) - 20} more")
        super().__init__("invalid dataset:\n  " + "\n  ".join(lines))


class ParseError(WinRatioError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EstimationError(WinRatioError):
    """Estimator is undefined on the supplied data."""


class DegenerateDenominator(EstimationError):
    pass


class AllTies(DegenerateDenominator):
    pass


class NoEvents(EstimationError):
    pass


class EmptyInput(WinRatioError):
    pass


class InsufficientReplicates(WinRatioError):
    pass


class TooManyDegenerateReplicates(WinRatioError):
    def __init__(self, n_failed, n_total):
        self.n_failed = n_failed
        self.n_total = n_total
        super().__init__(
            f"{n_failed} of {n_total} bootstrap replicates were degenerate (>20%)"
        )


class ModelFitError(EstimationError):
    pass


class Separation(ModelFitError):
    pass


class SingularInformation(ModelFitError):
    pass


class NoObservedOutcomes(EstimationError):
    pass


class ExtremePropensity(EstimationError):
    def __init__(self, indices, floor):
        self.indices = list(indices)
        self.floor = floor
        shown = ", ".join(str(i) for i in self.indices[:10])
        super().__init__(
            f"fitted observation probability below {floor} for records [{shown}]"
            + (" ..." if len(self.indices) > 10 else "")
        )


class TruthUnavailable(WinRatioError):
    pass
