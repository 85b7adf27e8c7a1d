"""Cross-validation protocol, metrics, and frozen-parameter transfer.

The benchmark protocol draws repeated 90/10 train/test splits of the menus
and, within each split, runs two passes: Pass A carves a validation set out
of the training menus and scores each candidate learning rate on it; Pass B
retrains on the full training set at every candidate rate and scores the
held-out test set. The reported figure is the mean Pass-B test MSE at the
single learning rate whose mean Pass-A validation MSE is lowest, so test
data never influence the selection.

Transfer evaluation freezes both the fitted parameters and the rescale
factor of the source dataset; nothing is re-tuned on the target.
"""

from __future__ import annotations

import datetime
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import (
    DimensionMismatchError,
    LengthMismatchError,
    MissingChoiceRateError,
    MissingTrialsError,
)
from .features import GATE_FEATURE_NAMES, feature_matrix
from .gate import GateParams, TrainConfig, predict, train_gate
from .rules import RULES, RuleMatrix, build_rule_matrix


@dataclass(frozen=True)
class Metrics:
    mse: float
    mse_w: float | None = None


def metrics(preds, targets, trials=None) -> Metrics:
    """Mean squared error, plus the trial-weighted variant when counts exist.

    The weighted variant downweights menus whose frequency was estimated
    from few trials; with equal counts it equals the unweighted MSE.
    """
    g = np.asarray(preds, dtype=float)
    y = np.asarray(targets, dtype=float)
    if g.size != y.size:
        raise LengthMismatchError(f"{g.size} predictions vs {y.size} targets")
    sq = (g - y) ** 2
    out_w = None
    if trials is not None:
        n = np.asarray(trials, dtype=float)
        if n.size != y.size:
            raise LengthMismatchError(f"{n.size} trial counts vs {y.size} targets")
        out_w = float((n * sq).sum() / n.sum())
    return Metrics(mse=float(sq.mean()), mse_w=out_w)


@dataclass(frozen=True)
class SplitPlan:
    n_splits: int = 50
    train_fraction: float = 0.9
    inner_val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if not 0.0 < self.inner_val_fraction < 1.0:
            raise ValueError("inner_val_fraction must be in (0, 1)")

    def splits(self, n_menus: int):
        """Deterministic train/test index pairs, one per split."""
        rng = np.random.default_rng(self.seed)
        n_train = int(round(self.train_fraction * n_menus))
        out = []
        for _ in range(self.n_splits):
            perm = rng.permutation(n_menus)
            out.append((perm[:n_train], perm[n_train:]))
        return out

    def inner_split(self, train_idx: np.ndarray, split_number: int):
        """Sub-train / validation partition of one split's training menus."""
        rng = np.random.default_rng((self.seed, split_number, 1))
        perm = rng.permutation(train_idx.size)
        n_val = int(round(self.inner_val_fraction * train_idx.size))
        return train_idx[perm[n_val:]], train_idx[perm[:n_val]]


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Everything needed to reproduce and audit one cross-validated run."""

    config: dict
    lr_grid: tuple[float, ...]
    val_mse: np.ndarray  # (lrs, splits) Pass A
    test_mse: np.ndarray  # (lrs, splits) Pass B
    test_mse_w: np.ndarray | None  # (lrs, splits) or None without trials
    selected_lr: float
    mean_test_mse: float
    sd_test_mse: float
    mean_test_mse_w: float | None
    timestamp: str
    params: GateParams | None = None  # refit on the full dataset at selected lr

    def fold_deltas(self, other: "RunRecord") -> np.ndarray:
        """Paired per-split test-MSE differences (other minus this) at the
        respective selected learning rates."""
        i = self.lr_grid.index(self.selected_lr)
        j = other.lr_grid.index(other.selected_lr)
        return other.test_mse[j] - self.test_mse[i]

    def to_json(self, path) -> None:
        doc = {
            "config": self.config,
            "lr_grid": list(self.lr_grid),
            "val_mse": self.val_mse.tolist(),
            "test_mse": self.test_mse.tolist(),
            "test_mse_w": None
            if self.test_mse_w is None
            else self.test_mse_w.tolist(),
            "selected_lr": self.selected_lr,
            "mean_test_mse": self.mean_test_mse,
            "sd_test_mse": self.sd_test_mse,
            "mean_test_mse_w": self.mean_test_mse_w,
            "timestamp": self.timestamp,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


@dataclass(frozen=True, eq=False)
class ModelArrays:
    """Dataset reduced to the arrays the gate consumes."""

    z: np.ndarray
    active: np.ndarray
    left: np.ndarray
    targets: np.ndarray
    trials: np.ndarray | None
    rescale: float
    rule_names: tuple[str, ...]

    @classmethod
    def from_dataset(
        cls,
        dataset: Dataset,
        rule_matrix: RuleMatrix | None = None,
        epsilon: float = 0.0,
    ) -> "ModelArrays":
        menus = list(dataset.menus)
        if rule_matrix is None:
            rule_matrix = build_rule_matrix(menus, epsilon)
        if not dataset.has_targets():
            raise MissingChoiceRateError("cross-validation needs choice rates")
        return cls(
            z=feature_matrix(menus, dataset.rescale),
            active=rule_matrix.active,
            left=rule_matrix.left,
            targets=dataset.choice_rates(),
            trials=dataset.trial_counts() if dataset.has_trials() else None,
            rescale=dataset.rescale,
            rule_names=tuple(r.value for r in rule_matrix.rules),
        )


def run_cv(
    arrays: ModelArrays,
    plan: SplitPlan = SplitPlan(),
    config: TrainConfig = TrainConfig(),
    lr_grid: tuple[float, ...] | None = None,
    threads: int = 1,
    fit_full: bool = True,
) -> RunRecord:
    """Two-pass cross-validation of the gate over a learning-rate grid."""
    lr_grid = tuple(lr_grid if lr_grid is not None else config.lr_grid)
    z, active, left, y = arrays.z, arrays.active, arrays.left, arrays.targets
    splits = plan.splits(y.size)

    def one_split(args):
        s, (train_idx, test_idx) = args
        sub_idx, val_idx = plan.inner_split(train_idx, s)
        val_row = np.empty(len(lr_grid))
        test_row = np.empty(len(lr_grid))
        test_w_row = np.full(len(lr_grid), np.nan)
        for i, lr in enumerate(lr_grid):
            cfg = TrainConfig(
                learning_rate=lr,
                epochs=config.epochs,
                clip_norm=config.clip_norm,
                m_min=config.m_min,
                seed=config.seed,
                lr_grid=lr_grid,
            )
            # Pass A: validation score on the inner split.
            p_a, _ = train_gate(
                z[sub_idx], active[sub_idx], left[sub_idx], y[sub_idx], cfg
            )
            pred_val = predict(p_a, z[val_idx], active[val_idx], left[val_idx])
            val_row[i] = float(np.mean((pred_val.g - y[val_idx]) ** 2))
            # Pass B: retrain on the full training set, score the test set.
            p_b, _ = train_gate(
                z[train_idx], active[train_idx], left[train_idx], y[train_idx], cfg
            )
            pred_te = predict(p_b, z[test_idx], active[test_idx], left[test_idx])
            m = metrics(
                pred_te.g,
                y[test_idx],
                arrays.trials[test_idx] if arrays.trials is not None else None,
            )
            test_row[i] = m.mse
            if m.mse_w is not None:
                test_w_row[i] = m.mse_w
        return s, val_row, test_row, test_w_row

    jobs = list(enumerate(splits))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_split, jobs))
    else:
        results = [one_split(j) for j in jobs]

    val = np.empty((len(lr_grid), len(splits)))
    test = np.empty((len(lr_grid), len(splits)))
    test_w = np.empty((len(lr_grid), len(splits)))
    for s, val_row, test_row, test_w_row in results:
        val[:, s] = val_row
        test[:, s] = test_row
        test_w[:, s] = test_w_row

    # Selection reads Pass-A validation scores only.
    best = int(np.argmin(val.mean(axis=1)))
    selected_lr = lr_grid[best]
    have_w = arrays.trials is not None

    params = None
    if fit_full:
        cfg = TrainConfig(
            learning_rate=selected_lr,
            epochs=config.epochs,
            clip_norm=config.clip_norm,
            m_min=config.m_min,
            seed=config.seed,
            lr_grid=lr_grid,
        )
        params, _ = train_gate(
            z,
            active,
            left,
            y,
            cfg,
            rule_names=arrays.rule_names,
            feature_names=GATE_FEATURE_NAMES
            if z.shape[1] == len(GATE_FEATURE_NAMES)
            else tuple(f"z{i}" for i in range(z.shape[1])),
            rescale_factor=arrays.rescale,
        )

    return RunRecord(
        config={
            "n_splits": plan.n_splits,
            "train_fraction": plan.train_fraction,
            "inner_val_fraction": plan.inner_val_fraction,
            "seed": plan.seed,
            "epochs": config.epochs,
            "clip_norm": config.clip_norm,
            "m_min": config.m_min,
        },
        lr_grid=lr_grid,
        val_mse=val,
        test_mse=test,
        test_mse_w=test_w if have_w else None,
        selected_lr=selected_lr,
        mean_test_mse=float(test[best].mean()),
        sd_test_mse=float(test[best].std(ddof=1)) if len(splits) > 1 else 0.0,
        mean_test_mse_w=float(test_w[best].mean()) if have_w else None,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        params=params,
    )


DEFAULT_LEARNING_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def learning_curve(
    arrays: ModelArrays,
    plan: SplitPlan = SplitPlan(),
    config: TrainConfig = TrainConfig(),
    fractions: tuple[float, ...] = DEFAULT_LEARNING_FRACTIONS,
) -> dict[float, tuple[float, float]]:
    """Test MSE as a function of the training fraction used.

    Within each split the test set stays fixed; the gate trains on the
    leading fraction of a fixed shuffle of the training menus. Returns
    fraction -> (mean test MSE, sd).
    """
    z, active, left, y = arrays.z, arrays.active, arrays.left, arrays.targets
    splits = plan.splits(y.size)
    table = {}
    for frac in fractions:
        scores = []
        for s, (train_idx, test_idx) in enumerate(splits):
            rng = np.random.default_rng((plan.seed, s, 2))
            perm = rng.permutation(train_idx.size)
            take = train_idx[perm[: max(1, int(round(frac * train_idx.size)))]]
            params, _ = train_gate(
                z[take], active[take], left[take], y[take], config
            )
            pred = predict(params, z[test_idx], active[test_idx], left[test_idx])
            scores.append(float(np.mean((pred.g - y[test_idx]) ** 2)))
        scores = np.array(scores)
        table[frac] = (
            float(scores.mean()),
            float(scores.std(ddof=1)) if scores.size > 1 else 0.0,
        )
    return table


@dataclass(frozen=True)
class PortabilityReport:
    mse_menu: float
    brier_trial: float
    logloss_trial: float
    n_menus: int
    n_trials: int


LOGLOSS_CLIP = 1e-9


def portability(
    params: GateParams,
    target: Dataset,
    rule_matrix: RuleMatrix | None = None,
) -> PortabilityReport:
    """Frozen-parameter evaluation on an independent dataset.

    Applies the rescale factor stored in the parameters; re-deriving a
    factor from the target data is exactly the mistake this guards against,
    so parameters without a recorded factor are rejected. Trial-level Brier
    and log-loss expand each menu's frequency into its binary choices
    (predictions are clipped away from 0/1 for the log-loss).
    """
    if params.rescale_factor is None:
        raise DimensionMismatchError(
            "parameters carry no rescale factor; refit with one before transfer"
        )
    menus = list(target.menus)
    if rule_matrix is None:
        rule_matrix = build_rule_matrix(menus)
    if tuple(r.value for r in rule_matrix.rules) != tuple(params.rule_names):
        raise DimensionMismatchError(
            "rule library of the matrix does not match the fitted parameters"
        )
    if not target.has_targets():
        raise MissingChoiceRateError("portability needs observed choice rates")
    if not target.has_trials():
        raise MissingTrialsError("trial-level metrics need per-menu trial counts")

    z = feature_matrix(menus, params.rescale_factor)
    pred = predict(params, z, rule_matrix.active, rule_matrix.left)
    y = target.choice_rates()
    n = target.trial_counts()

    mse_menu = float(np.mean((pred.g - y) ** 2))
    k_left = y * n
    k_right = n - k_left
    brier = float(((pred.g - 1.0) ** 2 @ k_left + pred.g**2 @ k_right) / n.sum())
    g = np.clip(pred.g, LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP)
    logloss = float(-(k_left @ np.log(g) + k_right @ np.log1p(-g)) / n.sum())
    return PortabilityReport(
        mse_menu=mse_menu,
        brier_trial=brier,
        logloss_trial=logloss,
        n_menus=len(menus),
        n_trials=int(n.sum()),
    )
