"""Rank diagnostics for gate identification via rule switching.

At a fixed feature value, every menu contributes one linear restriction on
the latent rule-weight vector: cross-multiplying the odds of the mixture
prediction gives h(A)' w = 0 with h_f = kappa^L_f - r(A) kappa^R_f, where the
kappas flag which side rule f is decisive for and r is the choice odds. When
the restrictions stacked within a cell span a codimension-one subspace, the
cell's weights are pinned down up to scale (condition G1); when the
identifying cells' feature values are affinely rich (condition G2), the
affine gate itself is identified.

This module builds the cells (exact feature equality first, k-means on the
standardized features for the rest), computes SVD numerical ranks with a
relative tolerance of 1e-8 times the top singular value, and assembles the
two-sidedness / coverage / rank report. A Jacobian-based local check covers
gates on essentially injective feature maps where within-feature replication
cannot occur.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MissingChoiceRateError,
    NoTwoSidedMenusError,
    TooFewMenusError,
)
from .gate import GateParams, _scores

SVD_REL_TOL = 1e-8
KMEANS_MAX_ITER = 100
KMEANS_SHIFT_TOL = 1e-6
DEFAULT_TRIM = 1e-4


def numerical_rank(matrix: np.ndarray) -> tuple[int, np.ndarray]:
    """Rank counting singular values above 1e-8 x the largest."""
    if matrix.size == 0:
        return 0, np.array([])
    s = np.linalg.svd(matrix, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > SVD_REL_TOL * s[0])), s


def restriction_row(
    choice_rate: float | None,
    active_row: np.ndarray,
    left_row: np.ndarray,
    trim: float = DEFAULT_TRIM,
) -> np.ndarray:
    """h_f = kappa^L_f - r kappa^R_f for one menu, with trimmed odds."""
    if choice_rate is None:
        raise MissingChoiceRateError("restriction row needs an observed choice rate")
    p = min(max(float(choice_rate), trim), 1.0 - trim)
    r = p / (1.0 - p)
    kl = (active_row & left_row).astype(float)
    kr = (active_row & ~left_row).astype(float)
    return kl - r * kr


def restriction_matrix(
    choice_rates: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    trim: float = DEFAULT_TRIM,
) -> np.ndarray:
    """Stack restriction rows for a batch of menus (shape menus x rules)."""
    p = np.clip(np.asarray(choice_rates, dtype=float), trim, 1.0 - trim)
    r = p / (1.0 - p)
    kl = (active & left).astype(float)
    kr = (active & ~left).astype(float)
    return kl - r[:, None] * kr


# ---------------------------------------------------------------------------
# Cell construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellAssignment:
    """Menu grouping by gate-feature value.

    ``members[c]`` holds menu indices of cell c; ``centroids[c]`` the mean
    raw feature vector. ``exact[c]`` marks cells formed by exact feature
    equality (k-means handles the leftover singletons). ``standardizer``
    stores the per-coordinate (mean, sd) used for the k-means metric so that
    bootstrap resamples can be mapped to the same centroids.
    """

    members: tuple[np.ndarray, ...]
    centroids: np.ndarray
    exact: np.ndarray
    standardizer: tuple[np.ndarray, np.ndarray]
    seed: int

    @property
    def n_cells(self) -> int:
        return len(self.members)

    def labels(self, n_menus: int) -> np.ndarray:
        out = np.full(n_menus, -1, dtype=int)
        for c, idx in enumerate(self.members):
            out[idx] = c
        return out

    def assign(self, features: np.ndarray) -> np.ndarray:
        """Nearest-centroid cell label for each feature row (standardized)."""
        mean, sd = self.standardizer
        pts = (features - mean) / sd
        centers = (self.centroids - mean) / sd
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def _kmeans_pp_init(
    pts: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(pts.shape[0])]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j:] = pts[rng.integers(pts.shape[0], size=k - j)]
            break
        probs = d2 / total
        centers[j] = pts[rng.choice(pts.shape[0], p=probs)]
        d2 = np.minimum(d2, ((pts - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(
    pts: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Plain Lloyd iterations; returns labels and the iteration count."""
    centers = _kmeans_pp_init(pts, k, rng)
    labels = np.zeros(pts.shape[0], dtype=int)
    iterations = 0
    for iterations in range(1, KMEANS_MAX_ITER + 1):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if np.any(mask):
                new_centers[j] = pts[mask].mean(axis=0)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < KMEANS_SHIFT_TOL:
            break
    return labels, iterations


def build_cells(
    features: np.ndarray, k: int = 50, seed: int = 0
) -> CellAssignment:
    """Group menus into cells sharing the same (or nearby) feature value.

    Exact-equality groups take precedence, honoring the theory's exact
    replication requirement where the data permit; remaining singleton
    feature values are clustered into k cells by Lloyd's k-means with
    k-means++ seeding on per-coordinate standardized features.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 cells, got {k}")
    features = np.asarray(features, dtype=float)
    n = features.shape[0]

    groups: dict[bytes, list[int]] = {}
    for t in range(n):
        groups.setdefault(features[t].tobytes(), []).append(t)

    exact_cells = [idx for idx in groups.values() if len(idx) >= 2]
    singletons = np.array(
        sorted(idx[0] for idx in groups.values() if len(idx) == 1), dtype=int
    )

    mean = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)

    members: list[np.ndarray] = [np.array(idx, dtype=int) for idx in exact_cells]
    exact_flags = [True] * len(members)

    if singletons.size:
        if singletons.size < k:
            raise TooFewMenusError(
                f"{singletons.size} unmatched menus cannot fill {k} cells"
            )
        pts = (features[singletons] - mean) / sd
        rng = np.random.default_rng(seed)
        labels, _ = _lloyd(pts, k, rng)
        for j in range(k):
            idx = singletons[labels == j]
            if idx.size:
                members.append(idx)
                exact_flags.append(False)

    centroids = np.array([features[idx].mean(axis=0) for idx in members])
    return CellAssignment(
        members=tuple(members),
        centroids=centroids,
        exact=np.array(exact_flags, dtype=bool),
        standardizer=(mean, sd),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Rank diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellRank:
    rank: int
    singular_values: np.ndarray
    gap: float  # sigma_{F-1} / sigma_F, robustness of the rank verdict


def cell_rank(h_matrix: np.ndarray, n_rules: int | None = None) -> CellRank:
    """Numerical rank of a stacked restriction matrix plus the spectral gap."""
    rank, s = numerical_rank(h_matrix)
    n_rules = h_matrix.shape[1] if n_rules is None else n_rules
    gap = np.inf
    if s.size >= n_rules and s[n_rules - 1] > 0.0:
        gap = float(s[n_rules - 2] / s[n_rules - 1])
    return CellRank(rank=rank, singular_values=s, gap=gap)


@dataclass(frozen=True, eq=False)
class RuleCoverage:
    rule: str
    n_active: int
    pr_active: float
    pr_left_given_active: float
    pr_right_given_active: float
    switches: bool


@dataclass(frozen=True, eq=False)
class IdentReport:
    """Two-sidedness, coverage, and rank verification (D1-D3)."""

    n_menus: int
    two_sided_fraction: float  # D1
    coverage: tuple[RuleCoverage, ...]  # D2
    d_eff: int
    g1_pass_count: int
    g1_needed: int
    g1_cell_ranks: tuple[int, ...]
    g1_min_gap: float
    g2_rank: int
    g2_needed: int
    n_cells: int
    n_qualifying_cells: int
    verdict: bool
    kmeans_max_iter: int = KMEANS_MAX_ITER
    kmeans_shift_tol: float = KMEANS_SHIFT_TOL
    trim: float = DEFAULT_TRIM

    def to_dict(self) -> dict:
        return {
            "n_menus": self.n_menus,
            "two_sided_fraction": self.two_sided_fraction,
            "coverage": [vars(c) for c in self.coverage],
            "d_eff": self.d_eff,
            "g1_pass_count": self.g1_pass_count,
            "g1_needed": self.g1_needed,
            "g1_cell_ranks": list(self.g1_cell_ranks),
            "g1_min_gap": self.g1_min_gap,
            "g2_rank": self.g2_rank,
            "g2_needed": self.g2_needed,
            "n_cells": self.n_cells,
            "n_qualifying_cells": self.n_qualifying_cells,
            "verdict": self.verdict,
            "kmeans_max_iter": self.kmeans_max_iter,
            "kmeans_shift_tol": self.kmeans_shift_tol,
            "trim": self.trim,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def to_text(self) -> str:
        lines = [
            f"Two-sided menus (D1): {self.two_sided_fraction:.1%}"
            f" of {self.n_menus}",
            "",
            "Rule coverage and side-variation (D2)",
            f"{'Rule':8s} {'N_act':>7s} {'Pr(act)':>8s} "
            f"{'Pr(L|act)':>10s} {'Pr(R|act)':>10s} Switches",
        ]
        for c in self.coverage:
            lines.append(
                f"{c.rule:8s} {c.n_active:7d} {c.pr_active:8.3f} "
                f"{c.pr_left_given_active:10.3f} {c.pr_right_given_active:10.3f} "
                f"{'yes' if c.switches else ''}"
            )
        lines += [
            "",
            "Rank verification (D3)",
            f"Effective feature dimension d_eff: {self.d_eff}",
            f"(G1) full-rank cells: {self.g1_pass_count} / {self.g1_needed} needed "
            f"(of {self.n_qualifying_cells} qualifying, {self.n_cells} total)",
            f"(G2) rank([1, centroids]): {self.g2_rank} / {self.g2_needed} needed",
            f"Globally identified: {'yes' if self.verdict else 'NO'}",
        ]
        return "\n".join(lines)


def effective_dimension(features: np.ndarray) -> int:
    """rank([1, z]) - 1 over the menus."""
    design = np.column_stack((np.ones(features.shape[0]), features))
    rank, _ = numerical_rank(design)
    return rank - 1


def ident_report(
    choice_rates: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    features: np.ndarray,
    rule_names: tuple[str, ...],
    k: int = 50,
    trim: float = DEFAULT_TRIM,
    seed: int = 0,
    cells: CellAssignment | None = None,
) -> IdentReport:
    """Assemble the D1-D3 diagnostics for a dataset with choice rates."""
    choice_rates = np.asarray(choice_rates, dtype=float)
    if np.any(np.isnan(choice_rates)):
        raise MissingChoiceRateError("every menu needs a choice rate")
    active = np.asarray(active, dtype=bool)
    left = np.asarray(left, dtype=bool)
    n_menus, n_rules = active.shape

    left_side = active & left
    right_side = active & ~left
    two_sided = left_side.any(axis=1) & right_side.any(axis=1)

    coverage = []
    for i, name in enumerate(rule_names):
        n_act = int(active[:, i].sum())
        pr_l = float(left_side[:, i].sum() / n_act) if n_act else 0.0
        pr_r = float(right_side[:, i].sum() / n_act) if n_act else 0.0
        coverage.append(
            RuleCoverage(
                rule=name,
                n_active=n_act,
                pr_active=n_act / n_menus,
                pr_left_given_active=pr_l,
                pr_right_given_active=pr_r,
                switches=pr_l > 0.0 and pr_r > 0.0,
            )
        )

    d_eff = effective_dimension(features)
    needed = d_eff + 1

    if cells is None:
        cells = build_cells(features, k=k, seed=seed)
    h_all = restriction_matrix(choice_rates, active, left, trim)

    min_size = n_rules - 1
    qualifying = [
        c for c in range(cells.n_cells) if cells.members[c].size >= min_size
    ]
    ranks = []
    passing_centroids = []
    min_gap = np.inf
    for c in qualifying:
        idx = cells.members[c]
        rows = idx[two_sided[idx]]
        info = cell_rank(h_all[rows], n_rules)
        ranks.append(info.rank)
        if info.rank == n_rules - 1:
            passing_centroids.append(cells.centroids[c])
            min_gap = min(min_gap, info.gap)

    g1_pass = sum(1 for r in ranks if r == n_rules - 1)
    if passing_centroids:
        g2_design = np.column_stack(
            (np.ones(len(passing_centroids)), np.array(passing_centroids))
        )
        g2_rank, _ = numerical_rank(g2_design)
    else:
        g2_rank = 0

    return IdentReport(
        n_menus=n_menus,
        two_sided_fraction=float(two_sided.mean()),
        coverage=tuple(coverage),
        d_eff=d_eff,
        g1_pass_count=g1_pass,
        g1_needed=needed,
        g1_cell_ranks=tuple(ranks),
        g1_min_gap=float(min_gap),
        g2_rank=g2_rank,
        g2_needed=needed,
        n_cells=cells.n_cells,
        n_qualifying_cells=len(qualifying),
        verdict=(g1_pass >= needed) and (g2_rank == needed),
        trim=trim,
    )


# ---------------------------------------------------------------------------
# Jacobian-based local check
# ---------------------------------------------------------------------------


def log_odds_map(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
) -> np.ndarray:
    """Model log-odds of choosing left, for two-sided menus.

    delta(A) = log sum_{f decisive-left} e^{s_f} - log over the right set.
    Rows that are not two-sided come back NaN.
    """
    scores = _scores(params, z)
    lmask = active & left
    rmask = active & ~left

    def lse(mask):
        neg = np.where(mask, scores, -np.inf)
        rowmax = neg.max(axis=1)
        safe = np.where(np.isfinite(rowmax), rowmax, 0.0)
        out = safe + np.log(
            np.where(mask, np.exp(neg - safe[:, None]), 0.0).sum(axis=1)
        )
        return np.where(mask.any(axis=1), out, np.nan)

    return lse(lmask) - lse(rmask)


def jacobian_local_rank(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    baseline: int = 0,
) -> tuple[int, int, np.ndarray]:
    """Rank of the log-odds Jacobian at the fitted parameters.

    Rows are two-sided menus; columns the free parameters after excluding
    the baseline rule. Entry for rule f is (s_Lf - s_Rf) (1, z), where s_Lf
    is rule f's share within the decisive-left softmax mass and s_Rf its
    share within the decisive-right mass; both vanish for rules decisive on
    neither side. Returns (rank, n_columns, singular_values).
    """
    scores = _scores(params, z)
    q = np.exp(scores - scores.max(axis=1, keepdims=True))
    lmask = active & left
    rmask = active & ~left
    two_sided = lmask.any(axis=1) & rmask.any(axis=1)
    if not np.any(two_sided):
        raise NoTwoSidedMenusError("Jacobian check needs two-sided menus")

    q = q[two_sided]
    lmask = lmask[two_sided]
    rmask = rmask[two_sided]
    zt = np.atleast_2d(z)[two_sided]

    sl = q * lmask
    sl /= sl.sum(axis=1, keepdims=True)
    sr = q * rmask
    sr /= sr.sum(axis=1, keepdims=True)
    diff = sl - sr  # (T2, F)

    free = [i for i in range(params.n_rules) if i != baseline]
    aug = np.column_stack((np.ones(zt.shape[0]), zt))  # (T2, 1+d)
    # Row layout: per free rule, the block [d delta/d alpha_f, d delta/d beta_f].
    jac = np.concatenate(
        [diff[:, [f]] * aug for f in free], axis=1
    )  # (T2, (F-1)(1+d))
    rank, s = numerical_rank(jac)
    return rank, jac.shape[1], s
