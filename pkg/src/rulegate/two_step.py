"""Constructive two-step estimator for the gate parameters.

First stage: within each feature cell, the normalized rule-weight vector is
the minimizer of ||H w||^2 subject to the baseline weight pinned at one and a
small positivity floor on the rest, where H stacks the cell's restriction
rows. With no binding floor and a codimension-one H this equals the
closed-form least squares solution; the projected-gradient path exists for
the boundary cases.

Second stage: per non-baseline rule, the log of the recovered cell weights is
regressed on the augmented cell centroids [1, x]. Gate-feature redundancy is
handled by projecting the design onto its effective column space, so the
reported coefficients live in a (1 + d_eff)-dimensional basis.

Inference comes from a menu-level bootstrap that re-draws menus with
replacement and maps them back to the original cell centroids (re-running
k-means would conflate clustering noise with sampling noise). The bootstrap
yields standard errors for the affine coefficients and the responsibility
functionals, and the per-cell log-weight variances feed the minimum-distance
overidentification J-test of the affine gate restriction.

Practical caveat, mirrored from the estimation theory: approximate binning
and the positivity floor place this implementation outside the exact
assumptions of the asymptotic theorem; read the results as an econometric
cross-check rather than as carrying full inferential status.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    RankDeficientDesignError,
    SingularVarianceError,
)
from .gate import GateParams, gate_weights
from .identification import (
    CellAssignment,
    build_cells,
    numerical_rank,
    restriction_matrix,
)

DEFAULT_FLOOR = 1e-8
PGD_MOVEMENT_TOL = 1e-10
PGD_MAX_ITER = 200_000

CAVEAT = (
    "Cell binning and positivity constraints place this implementation "
    "outside the exact assumptions of the two-step asymptotic theory; "
    "treat the estimates as an econometric cross-check."
)


@dataclass(frozen=True, eq=False)
class CellWeights:
    """First-stage normalized weights for one cell."""

    cell_id: int
    omega: np.ndarray  # full rule vector, omega[baseline] == 1
    residual_norm: float
    active_constraints: tuple[int, ...]  # rule indices at the floor
    converged: bool
    used_closed_form: bool


def cell_weights(
    h_matrix: np.ndarray,
    baseline: int = 0,
    floor: float = DEFAULT_FLOOR,
    cell_id: int = 0,
) -> CellWeights:
    """Solve min ||H w||^2 s.t. w[baseline] = 1, w >= floor.

    Starts from the closed-form least squares of the equality-constrained
    problem; when that solution violates the floor or the reduced system is
    rank-deficient, runs projected gradient from the uniform (all-ones)
    start with a 1/L step until iterate movement falls below 1e-10.
    """
    h_matrix = np.asarray(h_matrix, dtype=float)
    n_rules = h_matrix.shape[1]
    free = [f for f in range(n_rules) if f != baseline]
    h0 = h_matrix[:, baseline]
    h_free = h_matrix[:, free]

    def assemble(eta: np.ndarray) -> np.ndarray:
        omega = np.empty(n_rules)
        omega[baseline] = 1.0
        omega[free] = eta
        return omega

    closed_rank = np.linalg.matrix_rank(h_free) if h_matrix.size else 0
    if closed_rank == len(free):
        eta, *_ = np.linalg.lstsq(h_free, -h0, rcond=None)
        if np.all(eta >= floor):
            omega = assemble(eta)
            return CellWeights(
                cell_id=cell_id,
                omega=omega,
                residual_norm=float(np.linalg.norm(h_matrix @ omega)),
                active_constraints=(),
                converged=True,
                used_closed_form=True,
            )

    gram = h_free.T @ h_free
    rhs = h_free.T @ h0
    lam_max = float(np.linalg.eigvalsh(gram)[-1]) if gram.size else 0.0
    eta = np.ones(len(free))
    converged = True
    if lam_max > 0.0:
        step = 1.0 / lam_max
        converged = False
        for _ in range(PGD_MAX_ITER):
            new = np.maximum(eta - step * (gram @ eta + rhs), floor)
            movement = float(np.abs(new - eta).max())
            eta = new
            if movement < PGD_MOVEMENT_TOL:
                converged = True
                break
    omega = assemble(eta)
    at_floor = tuple(
        f for f, value in zip(free, eta) if value <= floor * (1 + 1e-9)
    )
    return CellWeights(
        cell_id=cell_id,
        omega=omega,
        residual_norm=float(np.linalg.norm(h_matrix @ omega)),
        active_constraints=at_floor,
        converged=converged,
        used_closed_form=False,
    )


# ---------------------------------------------------------------------------
# Second stage
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JTestResult:
    statistic: float
    dof: int
    p_value: float
    ridged: bool


@dataclass(frozen=True, eq=False)
class SecondStage:
    """Affine-gate coefficients recovered from cellwise log-weights.

    ``gamma`` has one row per rule in the reduced basis of the projected
    design (baseline row identically zero); ``basis`` maps reduced
    coefficients back to [intercept, features] space.
    """

    gamma: np.ndarray  # (F, r)
    basis: np.ndarray  # (1 + d, r)
    baseline: int
    design: np.ndarray  # (K, r) reduced design
    log_weights: np.ndarray  # (K, F) first-stage log weights
    residuals: np.ndarray  # (F, K)

    @property
    def rank(self) -> int:
        return self.design.shape[1]


def _reduced_design(centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    full = np.column_stack((np.ones(centroids.shape[0]), centroids))
    rank, _ = numerical_rank(full)
    _, _, vh = np.linalg.svd(full, full_matrices=False)
    basis = vh[:rank].T
    return full @ basis, basis


def second_stage(
    log_weights: np.ndarray,
    centroids: np.ndarray,
    baseline: int = 0,
    weights: np.ndarray | None = None,
    basis: np.ndarray | None = None,
) -> SecondStage:
    """Per-rule (weighted) least squares of log-weights on [1, centroid].

    ``weights``, when given, holds per-rule inverse-variance weight vectors
    of shape (F, K) for feasible GLS; the default is identity weighting.
    Collapses to exact inversion when the cell count equals the design rank.
    Pass a fixed ``basis`` to keep coefficients comparable across refits on
    subsets of the cells (as the bootstrap requires).
    """
    log_weights = np.asarray(log_weights, dtype=float)
    k_cells, n_rules = log_weights.shape
    centroids = np.asarray(centroids, dtype=float)
    if basis is None:
        design, basis = _reduced_design(centroids)
    else:
        design = np.column_stack((np.ones(k_cells), centroids)) @ basis
    rank = design.shape[1]
    if k_cells < rank:
        raise RankDeficientDesignError(
            f"{k_cells} cells cannot identify a rank-{rank} design"
        )
    gamma = np.zeros((n_rules, rank))
    residuals = np.zeros((n_rules, k_cells))
    for f in range(n_rules):
        if f == baseline:
            continue
        y = log_weights[:, f]
        if weights is None:
            coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        else:
            w = np.sqrt(np.maximum(weights[f], 0.0))
            coef, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
        gamma[f] = coef
        residuals[f] = y - design @ coef
    return SecondStage(
        gamma=gamma,
        basis=basis,
        baseline=baseline,
        design=design,
        log_weights=log_weights,
        residuals=residuals,
    )


def j_test(
    log_weights_f: np.ndarray,
    design: np.ndarray,
    variance_f: np.ndarray,
    ridge: float = 1e-10,
) -> JTestResult:
    """Minimum-distance overidentification test for one rule.

    Fits the efficient-weighted (inverse-variance) regression of the cell
    log-weights on the reduced design and forms J = u' V^{-1} u from its
    residuals; the variance argument is the finite-sample variance of the
    first-stage log-weights (e.g. from the menu bootstrap), so the sample
    size scaling is already absorbed. Chi-square reference with
    cells - rank degrees of freedom.
    """
    y = np.asarray(log_weights_f, dtype=float)
    var = np.asarray(variance_f, dtype=float).copy()
    ridged = False
    if np.any(var <= 0.0):
        var = var + ridge
        ridged = True
    if np.any(var <= 0.0):
        raise SingularVarianceError("nonpositive variance after ridging")
    w = 1.0 / var
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = y - design @ coef
    statistic = float(resid @ (w * resid))
    dof = y.size - design.shape[1]
    if dof < 1:
        raise RankDeficientDesignError("J-test needs cells > design rank")
    return JTestResult(
        statistic=statistic,
        dof=dof,
        p_value=float(stats.chi2.sf(statistic, dof)),
        ridged=ridged,
    )


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 100
    seed: int = 0


@dataclass(frozen=True, eq=False)
class TwoStepFit:
    """Complete two-step estimate with bootstrap inference and J-tests."""

    rule_names: tuple[str, ...]
    baseline: int
    stage: SecondStage
    cells: CellAssignment
    cell_ids: tuple[int, ...]  # qualifying cell indices used in estimation
    first_stage: tuple[CellWeights, ...]
    w_two_step: np.ndarray
    gamma_se: np.ndarray | None = None
    w_se: np.ndarray | None = None
    log_weight_var: np.ndarray | None = None  # (K, F) bootstrap variances
    j_tests: tuple[JTestResult | None, ...] = ()
    caveat: str = CAVEAT

    def to_gate_params(self, feature_names=()) -> GateParams:
        """Equivalent gate parameters in the original feature space."""
        full = self.stage.gamma @ self.stage.basis.T  # (F, 1 + d)
        return GateParams(
            alpha=full[:, 0].copy(),
            beta=full[:, 1:].copy(),
            rule_names=self.rule_names,
            feature_names=tuple(feature_names),
            normalized=True,
        )

    def to_csv(self, path, w_mse: np.ndarray | None = None) -> None:
        """Rule-level summary: two-step weights vs MSE-fit weights and J."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["rule", "w_two_step", "w_two_step_se", "w_mse", "difference",
                 "j_stat", "j_dof", "j_p_value"]
            )
            for f, name in enumerate(self.rule_names):
                j = self.j_tests[f] if self.j_tests else None
                w_ref = w_mse[f] if w_mse is not None else ""
                diff = self.w_two_step[f] - w_mse[f] if w_mse is not None else ""
                writer.writerow(
                    [
                        name,
                        repr(float(self.w_two_step[f])),
                        repr(float(self.w_se[f])) if self.w_se is not None else "",
                        repr(float(w_ref)) if w_ref != "" else "",
                        repr(float(diff)) if diff != "" else "",
                        repr(j.statistic) if j else "",
                        j.dof if j else "",
                        repr(j.p_value) if j else "",
                    ]
                )

    def to_json(self, path) -> None:
        doc = {
            "caveat": self.caveat,
            "rules": list(self.rule_names),
            "baseline": self.baseline,
            "gamma": self.stage.gamma.tolist(),
            "basis": self.stage.basis.tolist(),
            "gamma_se": self.gamma_se.tolist() if self.gamma_se is not None else None,
            "w_two_step": self.w_two_step.tolist(),
            "w_se": self.w_se.tolist() if self.w_se is not None else None,
            "j_tests": [
                None
                if j is None
                else {"statistic": j.statistic, "dof": j.dof, "p": j.p_value}
                for j in self.j_tests
            ],
            "cells_used": list(self.cell_ids),
            "first_stage_flags": [
                {
                    "cell": cw.cell_id,
                    "residual_norm": cw.residual_norm,
                    "at_floor": list(cw.active_constraints),
                    "converged": cw.converged,
                    "closed_form": cw.used_closed_form,
                }
                for cw in self.first_stage
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


def conditional_responsibilities(
    gamma: np.ndarray,
    basis: np.ndarray,
    features: np.ndarray,
    active: np.ndarray,
) -> np.ndarray:
    """Average conditional-on-activity weights from affine-index parameters."""
    aug = np.column_stack((np.ones(features.shape[0]), features))
    scores = aug @ basis @ gamma.T  # (T, F)
    q = np.exp(scores - scores.max(axis=1, keepdims=True))
    q /= q.sum(axis=1, keepdims=True)
    qa = q * active
    denom = qa.sum(axis=1, keepdims=True)
    keep = denom[:, 0] > 0.0
    q_tilde = np.zeros_like(qa)
    np.divide(qa, denom, out=q_tilde, where=denom > 0.0)
    return q_tilde[keep].mean(axis=0)


def _first_stage_log_weights(
    h_all: np.ndarray,
    member_lists: list[np.ndarray],
    two_sided: np.ndarray,
    baseline: int,
    floor: float,
) -> tuple[np.ndarray, list[CellWeights], np.ndarray]:
    """Cellwise solve; returns (K, F) log-weights, solutions, kept-row mask."""
    n_rules = h_all.shape[1]
    rows = []
    solutions: list[CellWeights] = []
    kept = np.zeros(len(member_lists), dtype=bool)
    for c, idx in enumerate(member_lists):
        use = idx[two_sided[idx]]
        if use.size == 0:
            continue
        cw = cell_weights(h_all[use], baseline=baseline, floor=floor, cell_id=c)
        solutions.append(cw)
        rows.append(np.log(cw.omega))
        kept[c] = True
    if rows:
        return np.array(rows), solutions, kept
    return np.empty((0, n_rules)), solutions, kept


def two_step_fit(
    features: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    choice_rates: np.ndarray,
    rule_names: tuple[str, ...],
    baseline: int = 10,  # A1 in the canonical order: active on every menu
    k_cells: int = 50,
    trim: float = 1e-4,
    floor: float = DEFAULT_FLOOR,
    seed: int = 0,
    bootstrap: BootstrapConfig | None = BootstrapConfig(),
    cells: CellAssignment | None = None,
) -> TwoStepFit:
    """Run the full two-step pipeline on one dataset.

    Only qualifying cells (at least rules-1 menus) enter estimation, per the
    sampling assumptions of the estimator. The default second stage uses
    identity weights; the J-test reruns it with inverse-variance weights
    from the bootstrap, which also supplies standard errors.
    """
    features = np.asarray(features, dtype=float)
    active = np.asarray(active, dtype=bool)
    left = np.asarray(left, dtype=bool)
    n_rules = active.shape[1]

    if cells is None:
        cells = build_cells(features, k=k_cells, seed=seed)
    min_size = n_rules - 1
    qualifying = [
        c for c in range(cells.n_cells) if cells.members[c].size >= min_size
    ]
    two_sided = (active & left).any(axis=1) & (active & ~left).any(axis=1)
    h_all = restriction_matrix(choice_rates, active, left, trim)

    member_lists = [cells.members[c] for c in qualifying]
    log_w, solutions, kept = _first_stage_log_weights(
        h_all, member_lists, two_sided, baseline, floor
    )
    cell_ids = tuple(np.array(qualifying)[kept].tolist())
    centroids = cells.centroids[list(cell_ids)]
    stage = second_stage(log_w, centroids, baseline=baseline)

    w_point = conditional_responsibilities(
        stage.gamma, stage.basis, features, active
    )

    gamma_se = w_se = log_var = None
    j_results: list[JTestResult | None] = [None] * n_rules
    if bootstrap is not None and bootstrap.resamples >= 2:
        gamma_se, w_se, log_var = _bootstrap(
            features,
            active,
            left,
            choice_rates,
            cells,
            cell_ids,
            centroids,
            baseline,
            trim,
            floor,
            stage,
            bootstrap,
        )
        for f in range(n_rules):
            if f == baseline:
                continue
            j_results[f] = j_test(log_w[:, f], stage.design, log_var[:, f])

    return TwoStepFit(
        rule_names=rule_names,
        baseline=baseline,
        stage=stage,
        cells=cells,
        cell_ids=cell_ids,
        first_stage=tuple(solutions),
        w_two_step=w_point,
        gamma_se=gamma_se,
        w_se=w_se,
        log_weight_var=log_var,
        j_tests=tuple(j_results),
    )


def _bootstrap(
    features: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    choice_rates: np.ndarray,
    cells: CellAssignment,
    cell_ids: tuple[int, ...],
    centroids: np.ndarray,
    baseline: int,
    trim: float,
    floor: float,
    stage: SecondStage,
    config: BootstrapConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Menu-level bootstrap with resamples mapped to the original centroids."""
    rng = np.random.default_rng(config.seed)
    n_menus, n_rules = active.shape
    k_cells = len(cell_ids)
    id_of = {c: pos for pos, c in enumerate(cell_ids)}
    two_sided = (active & left).any(axis=1) & (active & ~left).any(axis=1)

    gammas = []
    ws = []
    logs = np.full((config.resamples, k_cells, n_rules), np.nan)
    for b in range(config.resamples):
        draw = rng.integers(0, n_menus, n_menus)
        labels = cells.assign(features[draw])
        log_rows = np.full((k_cells, n_rules), np.nan)
        for pos, c in enumerate(cell_ids):
            idx = draw[labels == c]
            idx = idx[two_sided[idx]]
            if idx.size == 0:
                continue
            h = restriction_matrix(
                choice_rates[idx], active[idx], left[idx], trim
            )
            cw = cell_weights(h, baseline=baseline, floor=floor, cell_id=c)
            log_rows[pos] = np.log(cw.omega)
        logs[b] = log_rows
        have = ~np.isnan(log_rows).any(axis=1)
        if have.sum() < stage.rank:
            continue
        try:
            st = second_stage(
                log_rows[have],
                centroids[have],
                baseline=baseline,
                basis=stage.basis,
            )
        except RankDeficientDesignError:
            continue
        gammas.append(st.gamma)
        ws.append(
            conditional_responsibilities(st.gamma, st.basis, features, active)
        )

    gamma_se = np.std(np.array(gammas), axis=0, ddof=1)
    w_se = np.std(np.array(ws), axis=0, ddof=1)
    log_var = np.nanvar(logs, axis=0, ddof=1)
    return gamma_se, w_se, log_var
