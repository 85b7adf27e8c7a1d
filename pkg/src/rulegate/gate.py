"""Softmax-gated mixture over rule recommendations, trained by MSE.

The gate maps menu features z to rule propensities q via a softmax over
affine scores. Prediction conditions on activity: only rules decisive at the
menu receive weight, so the predicted left-choice probability is

    g = sum_f q_f L_f / max(sum_f q_f A_f, m_min),

a convex combination of deterministic recommendations whenever the active
mass clears the small guard floor. Training minimizes full-batch mean squared
error with Adam and global-norm gradient clipping; gradients are exact
analytic derivatives (the guard branch passes no gradient through the max).

With the two attention rules in the library the active mass is bounded away
from zero, so the guard exists only to protect ablated libraries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NonFiniteLossError

DEFAULT_M_MIN = 1e-6
DEFAULT_LR_GRID = (0.001, 0.01, 0.1)

# Conventional optimizer constants; the objective is small enough that these
# never need tuning.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class GateParams:
    """Per-rule intercepts and feature slopes of the softmax gate.

    alpha has one entry per rule; beta one row per rule. ``normalized``
    records whether a baseline rule was pinned to (0, 0) (the MSE fit leaves
    the softmax over-parameterized; the two-step estimator normalizes).
    ``rescale_factor`` travels with the parameters so transfer evaluation can
    refuse to re-derive it.
    """

    alpha: np.ndarray
    beta: np.ndarray
    rule_names: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()
    rescale_factor: float | None = None
    m_min: float = DEFAULT_M_MIN
    normalized: bool = False

    def __post_init__(self):
        if self.beta.shape[0] != self.alpha.size:
            raise DimensionMismatchError(
                f"alpha has {self.alpha.size} rules, beta {self.beta.shape[0]}"
            )
        self.alpha.setflags(write=False)
        self.beta.setflags(write=False)

    @property
    def n_rules(self) -> int:
        return self.alpha.size

    @property
    def n_features(self) -> int:
        return self.beta.shape[1]

    def to_json(self, path) -> None:
        doc = {
            "format": "rulegate-gate-params",
            "version": 1,
            "rules": list(self.rule_names),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "feature_names": list(self.feature_names),
            "rescale_factor": self.rescale_factor,
            "m_min": self.m_min,
            "normalized": self.normalized,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "GateParams":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "rulegate-gate-params":
            raise ValueError(f"{path}: not a gate parameter document")
        return cls(
            alpha=np.array(doc["alpha"], dtype=float),
            beta=np.array(doc["beta"], dtype=float),
            rule_names=tuple(doc.get("rules", ())),
            feature_names=tuple(doc.get("feature_names", ())),
            rescale_factor=doc.get("rescale_factor"),
            m_min=doc.get("m_min", DEFAULT_M_MIN),
            normalized=doc.get("normalized", False),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1000
    clip_norm: float = 1.0
    m_min: float = DEFAULT_M_MIN
    seed: int = 0
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID


@dataclass(frozen=True, eq=False)
class Prediction:
    """Batched prediction: probabilities, latent and effective weights."""

    g: np.ndarray  # (T,) predicted left-choice probability
    q: np.ndarray  # (T, F) latent gate simplex
    q_tilde: np.ndarray  # (T, F) conditional-on-activity weights (0 on guard rows)
    guard_hit: np.ndarray  # (T,) bool


def _scores(params: GateParams, z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != params.n_features:
        raise DimensionMismatchError(
            f"features have dim {z.shape[1]}, gate expects {params.n_features}"
        )
    return params.alpha[None, :] + z @ params.beta.T


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gate_weights(params: GateParams, z: np.ndarray) -> np.ndarray:
    """Latent rule propensities q(z); rows on the simplex exactly."""
    return _softmax(_scores(params, z))


def _masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax restricted to masked-in columns; rows with empty mask -> 0.

    Computing the conditional weights this way (rather than q*A/m) keeps the
    prediction of a library extended by everywhere-inactive rules bit-exact.
    """
    neg = np.where(mask, scores, -np.inf)
    rowmax = neg.max(axis=1, keepdims=True)
    safe = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.where(mask, np.exp(neg - safe), 0.0)
    total = e.sum(axis=1, keepdims=True)
    out = np.zeros_like(e)
    np.divide(e, total, out=out, where=total > 0.0)
    return out


def predict(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    m_min: float | None = None,
) -> Prediction:
    """CA-mixture prediction for a batch of menus.

    ``active`` and ``left`` are (T, F) boolean indicator arrays. On rows
    where the active gate mass exceeds the guard floor, the prediction is
    exactly the mixture of recommendations under the conditional weights; on
    guard rows the left mass is divided by the floor, clamped to [0, 1], and
    the conditional weights are zeroed.
    """
    m_min = params.m_min if m_min is None else m_min
    scores = _scores(params, z)
    q = _softmax(scores)
    active = np.asarray(active, dtype=bool)
    left = np.asarray(left, dtype=bool)
    m = (q * active).sum(axis=1)
    guard = m <= m_min
    q_tilde = _masked_softmax(scores, active)
    q_tilde[guard] = 0.0
    g = (q_tilde * left).sum(axis=1)
    if np.any(guard):
        ell = (q * (active & left)).sum(axis=1)
        g[guard] = np.clip(ell[guard] / m_min, 0.0, 1.0)
    return Prediction(g=g, q=q, q_tilde=q_tilde, guard_hit=guard)


def _loss_and_grad(
    alpha: np.ndarray,
    beta: np.ndarray,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    m_min: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """MSE and its exact gradient in (alpha, beta).

    Non-guard rows: dg/ds_f = qt_f (L_f - g) for active f, zero otherwise.
    Guard rows: g = ell/m_min with the max treated as constant, so
    dg/ds_f = q_f (L_f - ell) / m_min, zeroed where the clamp binds.
    """
    t_count = targets.size
    scores = alpha[None, :] + z @ beta.T
    q = _softmax(scores)
    m = (q * active).sum(axis=1)
    guard = m <= m_min
    q_tilde = _masked_softmax(scores, active)
    q_tilde[guard] = 0.0
    lf = active & left
    g = (q_tilde * lf).sum(axis=1)

    dg_ds = q_tilde * (lf - g[:, None])
    if np.any(guard):
        ell = (q * lf).sum(axis=1)
        g_raw = ell / m_min
        g[guard] = np.clip(g_raw[guard], 0.0, 1.0)
        grad_rows = q * (lf - ell[:, None]) / m_min
        grad_rows[(g_raw > 1.0) | (g_raw < 0.0)] = 0.0
        dg_ds[guard] = grad_rows[guard]

    resid = g - targets
    loss = float(resid @ resid) / t_count
    dloss_ds = (2.0 / t_count) * resid[:, None] * dg_ds
    grad_alpha = dloss_ds.sum(axis=0)
    grad_beta = dloss_ds.T @ z
    return loss, grad_alpha, grad_beta


def mse_loss(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    m_min: float | None = None,
) -> float:
    pred = predict(params, z, active, left, m_min)
    resid = pred.g - targets
    return float(resid @ resid) / targets.size


def train_gate(
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig = TrainConfig(),
    rule_names: tuple[str, ...] = (),
    feature_names: tuple[str, ...] = (),
    rescale_factor: float | None = None,
) -> tuple[GateParams, np.ndarray]:
    """Fit the gate by full-batch Adam on MSE from the zero (uniform) start.

    Deterministic: zero initialization and full-batch gradients leave no
    randomness. Returns the fitted parameters and the per-epoch loss trace
    (entry e is the loss before update e; the final post-training loss is
    appended, so the trace has epochs + 1 entries).
    """
    z = np.asarray(z, dtype=float)
    active = np.asarray(active, dtype=bool)
    left = np.asarray(left, dtype=bool)
    targets = np.asarray(targets, dtype=float)
    if not (z.shape[0] == active.shape[0] == left.shape[0] == targets.size):
        raise DimensionMismatchError("feature/indicator/target rows must align")
    n_rules = active.shape[1]
    d = z.shape[1]

    alpha = np.zeros(n_rules)
    beta = np.zeros((n_rules, d))
    mom_a = np.zeros_like(alpha)
    mom_b = np.zeros_like(beta)
    vel_a = np.zeros_like(alpha)
    vel_b = np.zeros_like(beta)
    trace = np.empty(config.epochs + 1)

    for epoch in range(config.epochs):
        loss, ga, gb = _loss_and_grad(
            alpha, beta, z, active, left, targets, config.m_min
        )
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"loss diverged at epoch {epoch}; lower the learning rate"
            )
        trace[epoch] = loss

        norm = float(np.sqrt(ga @ ga + (gb * gb).sum()))
        if config.clip_norm > 0.0 and norm > config.clip_norm:
            scale = config.clip_norm / norm
            ga = ga * scale
            gb = gb * scale

        mom_a = ADAM_BETA1 * mom_a + (1 - ADAM_BETA1) * ga
        mom_b = ADAM_BETA1 * mom_b + (1 - ADAM_BETA1) * gb
        vel_a = ADAM_BETA2 * vel_a + (1 - ADAM_BETA2) * ga**2
        vel_b = ADAM_BETA2 * vel_b + (1 - ADAM_BETA2) * gb**2
        bc1 = 1 - ADAM_BETA1 ** (epoch + 1)
        bc2 = 1 - ADAM_BETA2 ** (epoch + 1)
        alpha = alpha - config.learning_rate * (mom_a / bc1) / (
            np.sqrt(vel_a / bc2) + ADAM_EPS
        )
        beta = beta - config.learning_rate * (mom_b / bc1) / (
            np.sqrt(vel_b / bc2) + ADAM_EPS
        )

    final, _, _ = _loss_and_grad(
        alpha, beta, z, active, left, targets, config.m_min
    )
    if not np.isfinite(final):
        raise NonFiniteLossError("loss diverged on the final epoch")
    trace[-1] = final
    params = GateParams(
        alpha=alpha,
        beta=beta,
        rule_names=rule_names,
        feature_names=feature_names,
        rescale_factor=rescale_factor,
        m_min=config.m_min,
    )
    return params, trace


def gradient_check(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    targets: np.ndarray,
    n_coords: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    m_min: float | None = None,
) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Checks ``n_coords`` randomly chosen coordinates of (alpha, beta). The
    batch should avoid guard-active menus; the guard's subgradient convention
    makes finite differences disagree there by construction.
    """
    m_min = params.m_min if m_min is None else m_min
    z = np.asarray(z, dtype=float)
    active = np.asarray(active, dtype=bool)
    left = np.asarray(left, dtype=bool)
    targets = np.asarray(targets, dtype=float)
    _, ga, gb = _loss_and_grad(
        params.alpha, params.beta, z, active, left, targets, m_min
    )
    analytic = np.concatenate((ga, gb.ravel()))
    theta = np.concatenate((params.alpha, params.beta.ravel()))
    n_rules = params.n_rules

    def loss_at(vec: np.ndarray) -> float:
        a = vec[:n_rules]
        b = vec[n_rules:].reshape(params.beta.shape)
        value, _, _ = _loss_and_grad(a, b, z, active, left, targets, m_min)
        return value

    rng = np.random.default_rng(seed)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    for c in coords:
        bumped = theta.copy()
        bumped[c] = theta[c] + step
        up = loss_at(bumped)
        bumped[c] = theta[c] - step
        down = loss_at(bumped)
        numeric = (up - down) / (2 * step)
        denom = max(abs(analytic[c]), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic[c] - numeric) / denom)
    return worst


def responsibilities(
    params: GateParams,
    z: np.ndarray,
    active: np.ndarray,
    left: np.ndarray,
    m_min: float | None = None,
) -> tuple[np.ndarray, int]:
    """Average conditional-on-activity weight per rule.

    Guard-hit menus are excluded from the average and their count returned.
    The weights sum to one over rules.
    """
    pred = predict(params, z, active, left, m_min)
    keep = ~pred.guard_hit
    n_guard = int(pred.guard_hit.sum())
    if not np.any(keep):
        return np.zeros(params.n_rules), n_guard
    return pred.q_tilde[keep].mean(axis=0), n_guard
