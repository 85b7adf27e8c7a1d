"""Exception types shared across the package."""


class RulegateError(Exception):
    """Base class for all package-specific errors."""


class LengthMismatchError(RulegateError):
    """Paired sequences have different lengths."""


class NegativeProbabilityError(RulegateError):
    """A probability entry is negative."""


class ZeroMassError(RulegateError):
    """All probability mass is zero."""


class ProbabilityNotNormalizedError(RulegateError):
    """Probabilities do not sum to one within tolerance."""


class StrataTooFineError(RulegateError):
    """A permutation stratum contains fewer than two menus."""


class EmptyDatasetError(RulegateError):
    """Operation requires a nonempty dataset."""


class DimensionMismatchError(RulegateError):
    """Array dimensions do not align."""


class NonFiniteLossError(RulegateError):
    """Training loss became non-finite (learning rate too high)."""


class MissingChoiceRateError(RulegateError):
    """Menu lacks the observed choice rate required here."""


class MissingTrialsError(RulegateError):
    """Trial counts required for trial-level metrics are absent."""


class TooFewMenusError(RulegateError):
    """Not enough menus to build the requested number of cells."""


class NoTwoSidedMenusError(RulegateError):
    """No menu has active rules on both sides."""


class RankDeficientDesignError(RulegateError):
    """Second-stage design matrix has fewer rows than its rank requires."""


class SingularVarianceError(RulegateError):
    """First-stage variance matrix is singular even after ridging."""


class NotSimplexError(RulegateError):
    """Weight vector is not on the probability simplex."""


class DegenerateDenominatorError(RulegateError):
    """Completeness denominator is not positive."""


class SchemaViolationError(RulegateError):
    """Input file does not match the declared schema."""


class ParseError(RulegateError):
    """A row of an input file failed to parse."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class InfeasibleCellError(RulegateError):
    """Synthetic cell generator could not reach the requested rank."""

    def __init__(self, message: str, achieved_rank: int):
        self.achieved_rank = achieved_rank
        super().__init__(f"{message} (achieved rank {achieved_rank})")
