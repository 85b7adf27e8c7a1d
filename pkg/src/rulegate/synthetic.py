"""Synthetic menus and choice data with known gate parameters.

The generator exists to exercise the identification and estimation results
at desk scale: it builds cells of menus that share an exact gate-feature
value (by direct feature override on the menus), with genuinely varied rule
indicators from randomly drawn lottery pairs, and samples binomial choice
frequencies around the model-implied probabilities (or copies them exactly
in noiseless mode).

Cells are grown until their stacked restriction rows reach the
codimension-one rank that the fixed-feature identification theorem needs;
a cell that cannot reach it within the try budget raises InfeasibleCell
with the rank it achieved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleCellError
from .gate import GateParams, predict
from .identification import numerical_rank, restriction_matrix
from .lotteries import Lottery, Menu, canonicalize
from .rules import N_RULES, RULES, big_m_for, evaluate_rule


@dataclass(frozen=True)
class SyntheticConfig:
    n_cells: int = 13
    menus_per_cell: int = 20
    n_features: int = 12
    feature_scale: float = 1.0
    payoff_low: int = -20
    payoff_high: int = 50
    max_support: int = 4
    max_tries_per_cell: int = 2000


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """Menus, indicators, exact cell features, and the generating truth."""

    menus: tuple[Menu, ...]
    features: np.ndarray  # (T, d) exact per-cell values
    active: np.ndarray  # (T, F) bool
    left: np.ndarray  # (T, F) bool
    p_true: np.ndarray
    p_hat: np.ndarray
    n_trials: int | None
    cell_labels: np.ndarray
    cell_features: np.ndarray  # (K, d)
    params: GateParams
    big_m: float

    @property
    def rule_names(self) -> tuple[str, ...]:
        return tuple(r.value for r in RULES)

    def choice_rates(self) -> np.ndarray:
        return self.p_hat


def random_lottery(rng: np.random.Generator, config: SyntheticConfig) -> Lottery:
    size = int(rng.integers(1, config.max_support + 1))
    outcomes = rng.choice(
        np.arange(config.payoff_low, config.payoff_high + 1),
        size=size,
        replace=False,
    ).astype(float)
    probs = rng.dirichlet(np.ones(size))
    return canonicalize(outcomes, probs)


def random_gate_params(
    rng: np.random.Generator,
    n_features: int = 12,
    n_rules: int = N_RULES,
    alpha_scale: float = 0.5,
    beta_scale: float = 0.3,
    normalized_baseline: int | None = None,
) -> GateParams:
    """Random affine gate; moderate scales keep the weights well interior."""
    alpha = rng.normal(0.0, alpha_scale, n_rules)
    beta = rng.normal(0.0, beta_scale / np.sqrt(n_features), (n_rules, n_features))
    normalized = False
    if normalized_baseline is not None:
        alpha -= alpha[normalized_baseline]
        beta -= beta[normalized_baseline]
        normalized = True
    return GateParams(
        alpha=alpha,
        beta=beta,
        rule_names=tuple(r.value for r in RULES),
        normalized=normalized,
    )


def generate_synthetic(
    params: GateParams,
    config: SyntheticConfig = SyntheticConfig(),
    n_trials: int | None = None,
    seed: int = 0,
) -> SyntheticData:
    """Draw a cell-structured dataset from the model.

    ``n_trials is None`` is the noiseless mode: observed frequencies equal
    the model probabilities exactly. Otherwise each menu's frequency is a
    binomial draw of that size. With the attention rules in the library
    every menu is two-sided by construction.
    """
    rng = np.random.default_rng(seed)
    cell_x = rng.normal(0.0, config.feature_scale, (config.n_cells, config.n_features))
    big_m = 10.0 * max(abs(config.payoff_low), abs(config.payoff_high)) + 1.0

    menus: list[Menu] = []
    active_rows: list[np.ndarray] = []
    left_rows: list[np.ndarray] = []
    labels: list[int] = []
    target_rank = N_RULES - 1

    for k in range(config.n_cells):
        cell_active: list[np.ndarray] = []
        cell_left: list[np.ndarray] = []
        cell_menus: list[Menu] = []
        tries = 0
        achieved = 0
        while True:
            need_more = len(cell_menus) < config.menus_per_cell or achieved < target_rank
            if not need_more:
                break
            tries += 1
            if tries > config.max_tries_per_cell:
                raise InfeasibleCellError(
                    f"cell {k} stuck below rank {target_rank} after {tries} draws",
                    achieved_rank=achieved,
                )
            menu = Menu(
                id=f"c{k}_m{len(cell_menus)}",
                left=random_lottery(rng, config),
                right=random_lottery(rng, config),
                feature_override=cell_x[k],
            )
            a_row = np.empty(N_RULES, dtype=bool)
            l_row = np.empty(N_RULES, dtype=bool)
            for i, rule in enumerate(RULES):
                outcome = evaluate_rule(rule, menu, 0.0, big_m)
                a_row[i] = outcome.active
                l_row[i] = outcome.left
            cell_menus.append(menu)
            cell_active.append(a_row)
            cell_left.append(l_row)
            if len(cell_menus) >= config.menus_per_cell:
                achieved = _cell_rank_now(
                    params, cell_x[k], cell_active, cell_left
                )
        menus.extend(cell_menus)
        active_rows.extend(cell_active)
        left_rows.extend(cell_left)
        labels.extend([k] * len(cell_menus))

    active = np.array(active_rows)
    left = np.array(left_rows)
    features = cell_x[np.array(labels)]
    p_true = predict(params, features, active, left).g

    if n_trials is None:
        p_hat = p_true.copy()
    else:
        p_hat = rng.binomial(n_trials, p_true) / n_trials

    menus = [
        Menu(
            id=m.id,
            left=m.left,
            right=m.right,
            choice_rate=float(p_hat[t]),
            n_trials=n_trials,
            feature_override=m.feature_override,
        )
        for t, m in enumerate(menus)
    ]
    return SyntheticData(
        menus=tuple(menus),
        features=features,
        active=active,
        left=left,
        p_true=p_true,
        p_hat=p_hat,
        n_trials=n_trials,
        cell_labels=np.array(labels),
        cell_features=cell_x,
        params=params,
        big_m=big_m,
    )


def _cell_rank_now(params, x, active_list, left_list) -> int:
    active = np.array(active_list)
    left = np.array(left_list)
    x_rows = np.tile(x, (active.shape[0], 1))
    p = predict(params, x_rows, active, left).g
    h = restriction_matrix(p, active, left, trim=1e-12)
    rank, _ = numerical_rank(h)
    return rank
