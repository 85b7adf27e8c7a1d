"""Finite-support lotteries, menus, and strict-dominance comparison.

A lottery is a finite probability distribution over monetary payoffs, kept in
a canonical form: strictly increasing outcomes, strictly positive
probabilities summing to one. Dominance between two lotteries is decided by
comparing right-tail (survival) mass on the ordered union of their supports,
with an optional gap parameter that strengthens the requirement.

All functions here are pure and operate on immutable values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LengthMismatchError,
    NegativeProbabilityError,
    ProbabilityNotNormalizedError,
    ZeroMassError,
)

# Absolute tolerance on survival/CDF values. Payoff probabilities in the data
# are short decimals, so this guards against float noise in cumulative sums
# without masking real mass differences.
SURVIVAL_TOL = 1e-12

PROB_SUM_TOL = 1e-6


class Dominance(enum.Enum):
    """Outcome of a strict-dominance comparison between two lotteries."""

    LEFT_STRICT = "left_strict"
    RIGHT_STRICT = "right_strict"
    EQUIVALENT = "equivalent"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True, eq=False)
class Lottery:
    """Canonical finite-support lottery.

    ``outcomes`` are strictly increasing; ``probs`` are strictly positive and
    sum to one. Build instances through :func:`canonicalize`.
    """

    outcomes: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.outcomes.setflags(write=False)
        self.probs.setflags(write=False)

    @property
    def support_size(self) -> int:
        return self.outcomes.size

    def mean(self) -> float:
        return float(self.outcomes @ self.probs)

    def variance(self) -> float:
        mu = self.mean()
        return float(max(self.probs @ (self.outcomes - mu) ** 2, 0.0))

    def sd(self) -> float:
        return float(np.sqrt(self.variance()))

    def skewness(self) -> float:
        """Standardized third central moment; 0 for a degenerate lottery."""
        if self.support_size == 1:
            return 0.0
        mu = self.mean()
        var = self.variance()
        if var <= 0.0:
            return 0.0
        third = float(self.probs @ (self.outcomes - mu) ** 3)
        return third / var**1.5

    def min(self) -> float:
        return float(self.outcomes[0])

    def max(self) -> float:
        return float(self.outcomes[-1])

    def cdf(self, grid: np.ndarray) -> np.ndarray:
        """P(X <= z) at each grid point."""
        idx = np.searchsorted(self.outcomes, grid, side="right")
        cum = np.concatenate(([0.0], np.cumsum(self.probs)))
        return cum[idx]

    def survival(self, grid: np.ndarray) -> np.ndarray:
        """P(X >= z) at each grid point."""
        idx = np.searchsorted(self.outcomes, grid, side="left")
        tail = np.concatenate((np.cumsum(self.probs[::-1])[::-1], [0.0]))
        return tail[idx]

    def __repr__(self):
        pairs = ", ".join(
            f"{z:g}:{p:g}" for z, p in zip(self.outcomes, self.probs)
        )
        return f"Lottery({pairs})"


def canonicalize(outcomes, probs) -> Lottery:
    """Build a canonical lottery from raw outcome/probability lists.

    Equal payoffs are merged by summing probability, zero-probability points
    are dropped, outcomes are sorted ascending, and probabilities are
    renormalized to sum to one exactly. Idempotent on canonical input.
    """
    z = np.asarray(outcomes, dtype=float)
    p = np.asarray(probs, dtype=float)
    if z.ndim != 1 or p.ndim != 1 or z.size != p.size or z.size == 0:
        raise LengthMismatchError(
            f"outcomes ({z.size}) and probs ({p.size}) must be equal-length, nonempty"
        )
    if np.any(p < 0.0):
        raise NegativeProbabilityError(f"negative probability in {p.tolist()}")
    total = float(p.sum())
    if total <= 0.0:
        raise ZeroMassError("all probabilities are zero")
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbabilityNotNormalizedError(
            f"probabilities sum to {total!r}, not 1 within {PROB_SUM_TOL}"
        )

    order = np.argsort(z, kind="stable")
    z, p = z[order], p[order]
    # Merge exactly-equal payoffs.
    boundaries = np.concatenate(([True], z[1:] != z[:-1]))
    group = np.cumsum(boundaries) - 1
    merged_z = z[boundaries]
    merged_p = np.bincount(group, weights=p)
    keep = merged_p > 0.0
    merged_z, merged_p = merged_z[keep], merged_p[keep]
    mass = merged_p.sum()
    if mass != 1.0:  # skip the divide when already normalized (idempotence)
        merged_p = merged_p / mass
    return Lottery(merged_z, merged_p)


def degenerate(payoff: float) -> Lottery:
    """Sure outcome: delta(payoff)."""
    return Lottery(np.array([float(payoff)]), np.array([1.0]))


@dataclass(frozen=True, eq=False)
class Menu:
    """Ordered pair of lotteries with optional observed choice data.

    ``choice_rate`` is the empirical frequency of choosing ``left``;
    ``n_trials`` the number of observations behind it.
    """

    id: str
    left: Lottery
    right: Lottery
    choice_rate: float | None = None
    n_trials: int | None = None
    # Escape hatch for synthetic cells that pin gate features directly.
    feature_override: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.choice_rate is not None and not 0.0 <= self.choice_rate <= 1.0:
            raise ValueError(f"choice_rate {self.choice_rate} outside [0, 1]")
        if self.n_trials is not None and self.n_trials < 1:
            raise ValueError(f"n_trials {self.n_trials} must be >= 1")

    def max_abs_payoff(self) -> float:
        return max(
            float(np.abs(self.left.outcomes).max()),
            float(np.abs(self.right.outcomes).max()),
        )


def support_union(a: Lottery, b: Lottery) -> np.ndarray:
    """Ordered union of the two supports."""
    return np.unique(np.concatenate((a.outcomes, b.outcomes)))


def fsd_compare(a: Lottery, b: Lottery, epsilon: float = 0.0) -> Dominance:
    """Strict first-order stochastic dominance with an optional survival gap.

    With ``epsilon == 0`` this is standard strict FSD on the support union
    grid: ``a`` dominates ``b`` when its survival function is weakly higher
    everywhere and strictly higher somewhere. With ``epsilon > 0`` the
    survival gap must additionally reach ``epsilon`` at every grid point
    above the union minimum (at the minimum itself both survivals equal one
    by construction, so no gap is possible there).

    Survival values are compared with absolute tolerance ``SURVIVAL_TOL``.
    """
    grid = support_union(a, b)
    sa = a.survival(grid)
    sb = b.survival(grid)

    if np.all(np.abs(sa - sb) <= SURVIVAL_TOL):
        return Dominance.EQUIVALENT
    if _dominates(sa, sb, epsilon):
        return Dominance.LEFT_STRICT
    if _dominates(sb, sa, epsilon):
        return Dominance.RIGHT_STRICT
    return Dominance.INCOMPARABLE


def _dominates(sa: np.ndarray, sb: np.ndarray, epsilon: float) -> bool:
    weak = bool(np.all(sa >= sb - SURVIVAL_TOL))
    strict = bool(np.any(sa > sb + SURVIVAL_TOL))
    if not (weak and strict):
        return False
    if epsilon > 0.0 and sa.size > 1:
        return bool(np.all(sa[1:] >= sb[1:] + epsilon - SURVIVAL_TOL))
    return True


def contrast(x: float, y: float) -> float:
    """Normalized payoff contrast |x-y| / (|x|+|y|+1), in [0, 1)."""
    return abs(x - y) / (abs(x) + abs(y) + 1.0)


def product_state_space(a: Lottery, b: Lottery) -> np.ndarray:
    """Product coupling of two lotteries.

    Returns an array of shape (|supp a| * |supp b|, 3) with rows
    (payoff_a, payoff_b, prob_a * prob_b), enumerated with the index of
    ``a`` varying slowest.
    """
    xa = np.repeat(a.outcomes, b.support_size)
    xb = np.tile(b.outcomes, a.support_size)
    pp = np.repeat(a.probs, b.support_size) * np.tile(b.probs, a.support_size)
    return np.column_stack((xa, xb, pp))


def weighted_median(values, weights) -> float:
    """Lower weighted median.

    Sorts by value and returns the smallest value whose cumulative weight
    reaches half the total weight.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size != w.size or v.size == 0:
        raise LengthMismatchError(
            f"values ({v.size}) and weights ({w.size}) must be equal-length, nonempty"
        )
    if np.any(w < 0.0):
        raise NegativeProbabilityError("weights must be non-negative")
    total = float(w.sum())
    if total <= 0.0:
        raise ZeroMassError("total weight must be positive")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / total
    idx = int(np.searchsorted(cum, 0.5 - SURVIVAL_TOL, side="left"))
    return float(v[order][min(idx, v.size - 1)])


def modal_payoff(a: Lottery) -> float:
    """Most likely payoff; among (near-)tied probabilities the largest wins.

    Probabilities within SURVIVAL_TOL of the maximum count as tied.
    """
    pmax = a.probs.max()
    tied = a.outcomes[a.probs >= pmax - SURVIVAL_TOL]
    return float(tied[-1])
