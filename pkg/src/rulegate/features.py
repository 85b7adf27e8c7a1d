"""Menu encodings and descriptive covariates.

Two encodings feed the gate: a 12-dimensional vector of interpretable summary
statistics (pairwise moment gaps plus per-lottery levels) and a 40-dimensional
raw layout of sorted, zero-padded outcome/probability blocks. Both are
computed on outcomes divided by a dataset-wide rescale factor; the factor is
frozen at training time and reused unchanged for transfer evaluation.

Two covariates support comparative statics and are computed on raw payoffs:
tradeoff complexity (log of the excess of CDF distance over the absolute
expected-value gap) and the absolute asymmetry in dispersion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError
from .lotteries import Lottery, Menu, modal_payoff, support_union

GATE_FEATURE_NAMES: tuple[str, ...] = (
    "ev_gap",
    "max_gap",
    "min_gap",
    "var_gap",
    "mode_gap",
    "skew_gap",
    "ev_left",
    "ev_right",
    "sd_left",
    "sd_right",
    "max_abs_payoff",
    "support_gap",
)

N_GATE_FEATURES = len(GATE_FEATURE_NAMES)

RAW_ENCODING_SUPPORT = 10  # max support size per lottery in the raw layout


def rescale_factor(menus: list[Menu]) -> float:
    """Largest absolute payoff across all menus; 1.0 if everything is zero."""
    if not menus:
        raise EmptyDatasetError("rescale factor needs at least one menu")
    peak = max(m.max_abs_payoff() for m in menus)
    return peak if peak > 0.0 else 1.0


def gate_features(menu: Menu, factor: float = 1.0) -> np.ndarray:
    """Interpretable 12-vector of summary statistics, on rescaled outcomes.

    Order per GATE_FEATURE_NAMES: six pairwise gaps (EV, max, min, variance,
    mode, skewness), then EV and SD of each lottery, the largest absolute
    rescaled payoff over both supports, and the support-size gap. Support
    sizes are counted before padding. Swapping the two lotteries negates
    every gap entry and swaps the per-lottery entries.
    """
    if menu.feature_override is not None:
        return np.asarray(menu.feature_override, dtype=float)
    left = _scaled(menu.left, factor)
    right = _scaled(menu.right, factor)
    return np.array(
        [
            left.mean() - right.mean(),
            left.max() - right.max(),
            left.min() - right.min(),
            left.variance() - right.variance(),
            modal_payoff(left) - modal_payoff(right),
            left.skewness() - right.skewness(),
            left.mean(),
            right.mean(),
            left.sd(),
            right.sd(),
            max(np.abs(left.outcomes).max(), np.abs(right.outcomes).max()),
            float(left.support_size - right.support_size),
        ]
    )


def _scaled(lottery: Lottery, factor: float) -> Lottery:
    if factor == 1.0:
        return lottery
    return Lottery(lottery.outcomes / factor, lottery.probs.copy())


def feature_matrix(menus: list[Menu], factor: float = 1.0) -> np.ndarray:
    return np.array([gate_features(m, factor) for m in menus])


def raw_encoding(menu: Menu, factor: float = 1.0) -> np.ndarray:
    """Padded 40-vector: outcomes then probs for left, same for right.

    Outcomes are rescaled, sorted ascending, truncated to the
    RAW_ENCODING_SUPPORT smallest, and zero-padded; probabilities follow the
    same slots without renormalization.
    """
    blocks = []
    for lottery in (menu.left, menu.right):
        scaled = _scaled(lottery, factor)
        m = RAW_ENCODING_SUPPORT
        z = np.zeros(m)
        p = np.zeros(m)
        k = min(scaled.support_size, m)
        z[:k] = scaled.outcomes[:k]
        p[:k] = scaled.probs[:k]
        blocks += [z, p]
    return np.concatenate(blocks)


def decode_raw(encoding: np.ndarray, factor: float = 1.0) -> Menu:
    """Invert raw_encoding for supports within the size cap."""
    m = RAW_ENCODING_SUPPORT
    lotteries = []
    for block in (encoding[: 2 * m], encoding[2 * m :]):
        z, p = block[:m], block[m:]
        keep = p > 0.0
        lotteries.append(Lottery(z[keep] * factor, p[keep] / p[keep].sum()))
    return Menu(id="decoded", left=lotteries[0], right=lotteries[1])


@dataclass(frozen=True)
class MenuCovariates:
    """Descriptive menu covariates on raw payoffs."""

    tc: float  # tradeoff complexity, log(1 + excess CDF dissimilarity)
    risk_asym: float  # |sd(left) - sd(right)|


def cdf_distance(menu: Menu) -> float:
    """Integral of |F_left - F_right| over the payoff line.

    Both CDFs are step functions on the merged support grid, so the integral
    is an exact finite sum over grid intervals.
    """
    grid = support_union(menu.left, menu.right)
    if grid.size == 1:
        return 0.0
    f1 = menu.left.cdf(grid[:-1])
    f2 = menu.right.cdf(grid[:-1])
    return float(np.abs(f1 - f2) @ np.diff(grid))


def menu_covariates(menu: Menu) -> MenuCovariates:
    """Tradeoff complexity and dispersion asymmetry.

    TC = log(1 + d) with d the CDF distance minus the absolute EV gap; d is
    nonnegative up to float noise (the EV gap is the signed CDF integral),
    and residual -1e-9-scale negativity is clamped before the log.
    """
    delta = cdf_distance(menu)
    ev_gap = abs(menu.left.mean() - menu.right.mean())
    excess = max(delta - ev_gap, 0.0)
    return MenuCovariates(
        tc=float(np.log1p(excess)),
        risk_asym=abs(menu.left.sd() - menu.right.sd()),
    )


@dataclass(frozen=True)
class BinAssignment:
    """Quantile-bin labels with a degeneracy flag."""

    bins: np.ndarray
    n_bins: int
    degenerate: bool  # fewer distinct edges than requested


def decile_bins(values, k: int = 10) -> BinAssignment:
    """Quantile-based bins with ties assigned to the lower bin.

    When the value distribution has too few distinct quantile edges, falls
    back to the realizable number of bins and flags the degeneracy.
    """
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("bin values must be finite")
    edges = np.unique(np.quantile(v, np.arange(1, k) / k))
    # A value equal to an edge stays below it (lower bin).
    bins = np.searchsorted(edges, v, side="left")
    # Relabel to consecutive indices so empty quantile slots collapse.
    realized = np.unique(bins)
    bins = np.searchsorted(realized, bins)
    return BinAssignment(
        bins=bins, n_bins=realized.size, degenerate=realized.size < k
    )


def features_to_csv(path, menus: list[Menu], factor: float = 1.0) -> None:
    """Dump menu_id, z_1..z_12, tc, risk_asym for external consumers."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["menu_id", *GATE_FEATURE_NAMES, "tc", "risk_asym"])
        for menu in menus:
            z = gate_features(menu, factor)
            cov = menu_covariates(menu)
            writer.writerow(
                [menu.id, *(repr(x) for x in z), repr(cov.tc), repr(cov.risk_asym)]
            )
