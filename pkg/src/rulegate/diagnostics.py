"""Rule-level and model-level summary diagnostics.

Covers concentration of responsibility weights (Herfindahl and its
reciprocal, the effective number of rules), refit-and-compare ablation,
comparative statics of rule weights along menu covariates, completeness
against published benchmark scores, permutation-fit restrictiveness, and
cross-fitted top-k library selection.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDenominatorError, NotSimplexError
from .features import decile_bins
from .gate import GateParams, TrainConfig, predict, responsibilities, train_gate
from .rules import ATTENTION_RULES, RULE_FAMILIES, RuleId

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConcentrationReport:
    hhi: float
    n_eff: float
    weights: np.ndarray


def concentration(weights) -> ConcentrationReport:
    """Herfindahl concentration of responsibility weights, HHI = sum w^2."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < -SIMPLEX_TOL) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise NotSimplexError(
            f"weights sum to {w.sum()!r} with min {w.min()!r}; not a simplex point"
        )
    hhi = float(w @ w)
    return ConcentrationReport(hhi=hhi, n_eff=1.0 / hhi, weights=w)


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AblationEntry:
    rule: RuleId
    phi: float  # relative out-of-sample MSE deterioration
    delta_mse: float  # mean paired per-fold MSE increase
    delta_se: float
    sigma_n: float  # relative change in the effective number of rules
    fold_deltas: np.ndarray


@dataclass(frozen=True, eq=False)
class AblationReport:
    full_mse: float
    full_n_eff: float
    entries: tuple[AblationEntry, ...]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rule", "phi", "delta_mse", "delta_se", "sigma_n"])
            for e in self.entries:
                writer.writerow(
                    [e.rule.value, repr(e.phi), repr(e.delta_mse),
                     repr(e.delta_se), repr(e.sigma_n)]
                )


def _cv_splits(n: int, n_splits: int, train_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    n_train = int(round(train_fraction * n))
    for _ in range(n_splits):
        perm = rng.permutation(n)
        yield perm[:n_train], perm[n_train:]


def ablation_report(
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    rules: tuple[RuleId, ...],
    config: TrainConfig,
    n_splits: int = 10,
    train_fraction: float = 0.9,
    seed: int = 0,
) -> AblationReport:
    """Refit-and-compare ablation over the non-attention rules.

    Per split, the gate is trained on the train menus with the full library
    and with each candidate rule removed; phi is the mean paired test-MSE
    increase relative to the full-library mean. The attention rules are
    excluded: they anchor decisiveness at every menu, and dropping them
    would conflate behavioral content with guard degeneracy. The refits are
    shared with the concentration-impact statistic, which compares the
    effective number of rules after averaging fold-level responsibility
    weights.
    """
    candidates = [r for r in rules if r not in ATTENTION_RULES]
    splits = list(_cv_splits(targets.size, n_splits, train_fraction, seed))

    full_mse = np.empty(len(splits))
    full_w = np.zeros((len(splits), len(rules)))
    drop_mse = {r: np.empty(len(splits)) for r in candidates}
    drop_w = {r: np.zeros((len(splits), len(rules) - 1)) for r in candidates}

    for s, (tr, te) in enumerate(splits):
        params, _ = train_gate(z[tr], active[tr], left[tr], targets[tr], config)
        pred = predict(params, z[te], active[te], left[te])
        full_mse[s] = float(np.mean((pred.g - targets[te]) ** 2))
        full_w[s], _ = responsibilities(params, z, active, left)
        for r in candidates:
            keep = [i for i, rr in enumerate(rules) if rr is not r]
            params_r, _ = train_gate(
                z[tr], active[tr][:, keep], left[tr][:, keep], targets[tr], config
            )
            pred_r = predict(
                params_r, z[te], active[te][:, keep], left[te][:, keep]
            )
            drop_mse[r][s] = float(np.mean((pred_r.g - targets[te]) ** 2))
            drop_w[r][s], _ = responsibilities(
                params_r, z, active[:, keep], left[:, keep]
            )

    base = float(full_mse.mean())
    n_eff_full = concentration(full_w.mean(axis=0)).n_eff
    entries = []
    for r in candidates:
        deltas = drop_mse[r] - full_mse
        n_eff_r = concentration(drop_w[r].mean(axis=0)).n_eff
        entries.append(
            AblationEntry(
                rule=r,
                phi=float(deltas.mean() / base),
                delta_mse=float(deltas.mean()),
                delta_se=float(deltas.std(ddof=1) / np.sqrt(len(splits)))
                if len(splits) > 1
                else 0.0,
                sigma_n=float((n_eff_r - n_eff_full) / n_eff_full),
                fold_deltas=deltas,
            )
        )
    return AblationReport(
        full_mse=base, full_n_eff=n_eff_full, entries=tuple(entries)
    )


# ---------------------------------------------------------------------------
# Comparative statics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StaticsReport:
    """Per-bin mean rule weights along one covariate.

    ``effective`` conditions on activity; ``latent`` is the raw gate output
    before the activity filter. Guard-hit menus are excluded from the bin
    means and counted.
    """

    covariate: str
    bin_edges_note: str
    effective: np.ndarray  # (bins, rules)
    latent: np.ndarray  # (bins, rules)
    counts: np.ndarray  # menus per bin
    n_guard_excluded: int
    degenerate_bins: bool

    def to_long_csv(self, path, rule_names) -> None:
        """Figure-ready long format: bin, rule, mean_weight, kind."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "rule", "mean_weight", "kind"])
            for kind, table in (("effective", self.effective), ("latent", self.latent)):
                for b in range(table.shape[0]):
                    for f, name in enumerate(rule_names):
                        writer.writerow([b, name, repr(float(table[b, f])), kind])


def comparative_statics(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    covariate_values: np.ndarray,
    covariate_name: str = "tc",
    k_bins: int = 10,
) -> StaticsReport:
    """Mean effective and latent rule weights across covariate bins."""
    pred = predict(params, z, active, left)
    keep = ~pred.guard_hit
    assignment = decile_bins(np.asarray(covariate_values, dtype=float), k_bins)
    n_bins = assignment.n_bins
    n_rules = params.n_rules
    effective = np.zeros((n_bins, n_rules))
    latent = np.zeros((n_bins, n_rules))
    counts = np.zeros(n_bins, dtype=int)
    for b in range(n_bins):
        mask = (assignment.bins == b) & keep
        counts[b] = int(mask.sum())
        if counts[b]:
            effective[b] = pred.q_tilde[mask].mean(axis=0)
            latent[b] = pred.q[mask].mean(axis=0)
    return StaticsReport(
        covariate=covariate_name,
        bin_edges_note=f"{n_bins} quantile bins, ties to lower bin",
        effective=effective,
        latent=latent,
        counts=counts,
        n_guard_excluded=int(pred.guard_hit.sum()),
        degenerate_bins=assignment.degenerate,
    )


# ---------------------------------------------------------------------------
# Completeness and restrictiveness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkScores:
    """External MSE constants for the completeness normalization.

    Defaults are the published cross-validated scores of the baseline
    expected-utility network and the strongest mixture benchmark; they are
    configuration inputs, not quantities this package computes.
    """

    baseline_mse: float = 0.02215
    flexible_mse: float = 0.01139


def completeness(model_mse: float, bench: BenchmarkScores = BenchmarkScores()) -> float:
    """Share of the baseline-to-flexible MSE gap closed by the model."""
    denom = bench.baseline_mse - bench.flexible_mse
    if denom <= 0.0:
        raise DegenerateDenominatorError(
            f"baseline {bench.baseline_mse} must exceed flexible {bench.flexible_mse}"
        )
    return (bench.baseline_mse - model_mse) / denom


class GatePermutationModel:
    """Default model adapter for restrictiveness: the rule-gating fit."""

    def __init__(self, config: TrainConfig):
        self.config = config

    def fit_predict_train(self, z, active, left, targets) -> np.ndarray:
        params, _ = train_gate(z, active, left, targets, self.config)
        return predict(params, z, active, left).g


class ConstantModel:
    """Best constant predictor; restrictiveness 1 by construction."""

    def fit_predict_train(self, z, active, left, targets) -> np.ndarray:
        return np.full(targets.size, targets.mean())


def restrictiveness(
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    model=None,
    n_splits: int = 10,
    train_fraction: float = 0.9,
    permutations: int = 10,
    seed: int = 0,
) -> float:
    """Permutation-fit restrictiveness.

    Per split and permutation: training targets are permuted across the
    training menus, the model is refit at its previously selected learning
    rate (no inner search), and its in-sample train MSE is divided by the
    train MSE of the best constant predictor for the permuted targets.
    Values near one mean the model cannot absorb structureless variation.
    """
    if permutations < 1:
        raise ValueError("need at least one permutation")
    if model is None:
        model = GatePermutationModel(TrainConfig())
    rng = np.random.default_rng(seed)
    ratios = []
    for tr, _ in _cv_splits(targets.size, n_splits, train_fraction, seed):
        for _ in range(permutations):
            perm = rng.permutation(tr.size)
            y_perm = targets[tr][perm]
            preds = model.fit_predict_train(
                z[tr], active[tr], left[tr], y_perm
            )
            model_mse = float(np.mean((preds - y_perm) ** 2))
            const_mse = float(np.mean((y_perm - y_perm.mean()) ** 2))
            ratios.append(model_mse / const_mse)
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# Cross-fitted library selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CrossfitRow:
    k: int
    mean_mse: float
    se_mse: float
    retention_pct: float


@dataclass(frozen=True, eq=False)
class CrossfitReport:
    selection_unit: str  # "rule" or "family"
    full_mse: float
    rows: tuple[CrossfitRow, ...]
    selection_frequency: dict  # unit name -> {k: frequency}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "mean_mse", "se_mse", "retention_pct"])
            for row in self.rows:
                writer.writerow(
                    [row.k, repr(row.mean_mse), repr(row.se_mse),
                     repr(row.retention_pct)]
                )

    def frequency_table(self) -> str:
        ks = sorted({k for v in self.selection_frequency.values() for k in v})
        lines = ["unit " + " ".join(f"top-{k}" for k in ks)]
        for unit, freqs in self.selection_frequency.items():
            lines.append(
                f"{unit} " + " ".join(f"{freqs.get(k, 0.0):.2f}" for k in ks)
            )
        return "\n".join(lines)


def crossfit_topk(
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    rules: tuple[RuleId, ...],
    k_values: tuple[int, ...],
    config: TrainConfig,
    families: dict[str, tuple[RuleId, ...]] | None = None,
    n_splits: int = 10,
    train_fraction: float = 0.9,
    seed: int = 0,
) -> CrossfitReport:
    """Cross-fitted top-k selection by training responsibility weight.

    Per fold: fit the full library on the train menus, rank rules (or
    families, by aggregate weight) on training responsibilities, refit the
    restricted gate, and evaluate out of sample. Retention is
    100 * [1 - (MSE_k - MSE_full) / MSE_full].
    """
    by_family = families is not None
    units = list(families) if by_family else [r.value for r in rules]
    splits = list(_cv_splits(targets.size, n_splits, train_fraction, seed))

    full_mse = np.empty(len(splits))
    sub_mse = {k: np.empty(len(splits)) for k in k_values}
    selected_count = {u: {k: 0 for k in k_values} for u in units}

    for s, (tr, te) in enumerate(splits):
        params, _ = train_gate(z[tr], active[tr], left[tr], targets[tr], config)
        pred = predict(params, z[te], active[te], left[te])
        full_mse[s] = float(np.mean((pred.g - targets[te]) ** 2))
        w_train, _ = responsibilities(params, z[tr], active[tr], left[tr])

        if by_family:
            scores = {
                name: float(sum(w_train[rules.index(r)] for r in members))
                for name, members in families.items()
            }
            ranked = sorted(scores, key=lambda u: -scores[u])
        else:
            order = np.argsort(-w_train, kind="stable")
            ranked = [rules[i].value for i in order]

        for k in k_values:
            chosen_units = ranked[:k]
            if by_family:
                keep_rules = {
                    r for u in chosen_units for r in families[u]
                }
            else:
                keep_rules = {r for r in rules if r.value in chosen_units}
            for u in chosen_units:
                selected_count[u][k] += 1
            keep = [i for i, r in enumerate(rules) if r in keep_rules]
            params_k, _ = train_gate(
                z[tr], active[tr][:, keep], left[tr][:, keep], targets[tr], config
            )
            pred_k = predict(
                params_k, z[te], active[te][:, keep], left[te][:, keep]
            )
            sub_mse[k][s] = float(np.mean((pred_k.g - targets[te]) ** 2))

    base = float(full_mse.mean())
    rows = []
    for k in sorted(k_values, reverse=True):
        mean_k = float(sub_mse[k].mean())
        se_k = (
            float(sub_mse[k].std(ddof=1) / np.sqrt(len(splits)))
            if len(splits) > 1
            else 0.0
        )
        rows.append(
            CrossfitRow(
                k=k,
                mean_mse=mean_k,
                se_mse=se_k,
                retention_pct=100.0 * (1.0 - (mean_k - base) / base),
            )
        )
    frequency = {
        u: {k: selected_count[u][k] / len(splits) for k in k_values}
        for u in units
    }
    return CrossfitReport(
        selection_unit="family" if by_family else "rule",
        full_mse=base,
        rows=tuple(rows),
        selection_frequency=frequency,
    )
