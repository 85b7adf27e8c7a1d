"""The twelve parameter-free decision rules and their menu-level indicators.

Each rule converts the two lotteries of a menu into a pair of perceived
lotteries and recommends the side whose perceived lottery strictly dominates
(first-order) the other. A rule is *active* (decisive) at a menu when that
comparison is strict in either direction; ``left`` records the recommended
side when active.

Five mechanism families:

* outcome simplification (``MMN`` worst case, ``MMA`` midrange, ``MMX`` best
  case, ``MAP`` most likely payoff),
* salience (``SAL`` most salient extreme comparison, ``SAL2`` second most
  salient),
* regret over the product coupling (``REG`` full negated-regret distribution,
  ``REGMED`` probability-weighted median regret),
* disappointment below the modal payoff (``DIS`` worst downside contrast,
  ``DISMED`` second-worst),
* one-sided attention defaults (``A1`` always left, ``A2`` always right),
  which perceive the ignored side as a sure payoff below everything in the
  data.

Payoffs enter in raw units: the contrast score is not scale-invariant, so
indicator patterns are specific to the dataset's monetary unit.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import StrataTooFineError
from .features import decile_bins
from .lotteries import (
    Dominance,
    Lottery,
    Menu,
    canonicalize,
    contrast,
    degenerate,
    fsd_compare,
    modal_payoff,
    product_state_space,
    weighted_median,
)


class RuleId(enum.Enum):
    """Rule identifiers in the fixed canonical order used for all indexing."""

    MMN = "MMn"
    MMA = "MMa"
    MMX = "MMx"
    MAP = "MAP"
    SAL = "SAL"
    SAL2 = "SAL2"
    REG = "REG"
    REGMED = "REGmed"
    DIS = "DIS"
    DISMED = "DISmed"
    A1 = "A1"
    A2 = "A2"


RULES: tuple[RuleId, ...] = tuple(RuleId)
N_RULES = len(RULES)
RULE_INDEX = {rule: i for i, rule in enumerate(RULES)}
ATTENTION_RULES = (RuleId.A1, RuleId.A2)

RULE_FAMILIES: dict[str, tuple[RuleId, ...]] = {
    "extremum": (RuleId.MMN, RuleId.MMA, RuleId.MMX, RuleId.MAP),
    "salience": (RuleId.SAL, RuleId.SAL2),
    "regret": (RuleId.REG, RuleId.REGMED),
    "disappointment": (RuleId.DIS, RuleId.DISMED),
    "attention": ATTENTION_RULES,
}


@dataclass(frozen=True)
class RuleOutcome:
    """Activity and recommendation of one rule at one menu."""

    active: bool
    left: bool

    def __post_init__(self):
        if self.left and not self.active:
            raise ValueError("left recommendation requires activity")


def _extreme_pairings(menu: Menu) -> list[tuple[float, float]]:
    """The 2x2 grid of extreme payoff pairings, fixed enumeration order.

    Order: (min1,min2), (min1,max2), (max1,min2), (max1,max2). Degenerate
    lotteries repeat entries; the indexed enumeration keeps four slots.
    """
    lo1, hi1 = menu.left.min(), menu.left.max()
    lo2, hi2 = menu.right.min(), menu.right.max()
    return [(lo1, lo2), (lo1, hi2), (hi1, lo2), (hi1, hi2)]


def _regret_values(menu: Menu) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-state regrets of each side under the product coupling."""
    states = product_state_space(menu.left, menu.right)
    x, y, p = states[:, 0], states[:, 1], states[:, 2]
    regret_left = np.maximum(y - x, 0.0)
    regret_right = np.maximum(x - y, 0.0)
    return regret_left, regret_right, p


def _downside_contrasts(lottery: Lottery) -> np.ndarray:
    """Contrasts of payoffs strictly below the modal payoff, descending."""
    mode = modal_payoff(lottery)
    downside = lottery.outcomes[lottery.outcomes < mode]
    scores = np.array([contrast(mode, float(z)) for z in downside])
    return np.sort(scores)[::-1]


def perceived_pair(
    rule: RuleId, menu: Menu, big_m: float
) -> tuple[Lottery, Lottery] | None:
    """Perceived lottery pair for ``rule`` at ``menu``.

    Returns None when the rule declares itself inactive before any dominance
    comparison (only SAL2 with exactly tied top salience scores).
    """
    left, right = menu.left, menu.right

    if rule is RuleId.MMN:
        return degenerate(left.min()), degenerate(right.min())
    if rule is RuleId.MMX:
        return degenerate(left.max()), degenerate(right.max())
    if rule is RuleId.MMA:
        return (
            degenerate(0.5 * (left.min() + left.max())),
            degenerate(0.5 * (right.min() + right.max())),
        )
    if rule is RuleId.MAP:
        return degenerate(modal_payoff(left)), degenerate(modal_payoff(right))

    if rule is RuleId.SAL or rule is RuleId.SAL2:
        pairs = _extreme_pairings(menu)
        scores = [contrast(a, b) for a, b in pairs]
        top = int(np.argmax(scores))  # ties -> smallest enumeration index
        if rule is RuleId.SAL:
            a, b = pairs[top]
            return degenerate(a), degenerate(b)
        ranked = sorted(scores, reverse=True)
        if ranked[0] == ranked[1]:
            return None  # no well-defined second comparison
        second = min(
            k for k, s in enumerate(scores) if s == ranked[1] and k != top
        )
        a, b = pairs[second]
        return degenerate(a), degenerate(b)

    if rule is RuleId.REG:
        regret_left, regret_right, p = _regret_values(menu)
        return (
            canonicalize(-regret_left, p),
            canonicalize(-regret_right, p),
        )
    if rule is RuleId.REGMED:
        regret_left, regret_right, p = _regret_values(menu)
        return (
            degenerate(-weighted_median(regret_left, p)),
            degenerate(-weighted_median(regret_right, p)),
        )

    if rule is RuleId.DIS or rule is RuleId.DISMED:
        perceived = []
        for lottery in (left, right):
            scores = _downside_contrasts(lottery)
            if scores.size == 0:
                level = 0.0
            elif rule is RuleId.DIS or scores.size == 1:
                level = float(scores[0])
            else:
                level = float(scores[1])
            perceived.append(degenerate(-level))
        return perceived[0], perceived[1]

    if rule is RuleId.A1:
        return left, degenerate(-big_m)
    if rule is RuleId.A2:
        return degenerate(-big_m), right

    raise ValueError(f"unknown rule {rule!r}")


def evaluate_rule(
    rule: RuleId, menu: Menu, epsilon: float = 0.0, big_m: float = 1.0
) -> RuleOutcome:
    """Activity and recommendation of one rule at one menu.

    ``epsilon >= 0`` is the dominance gap required for activity; a negative
    ``epsilon`` is the all-active sentinel: every rule is declared active and
    recommendations follow strict FSD at gap zero (rules without a strict
    verdict then count as not recommending left).
    """
    all_active = epsilon < 0.0
    pair = perceived_pair(rule, menu, big_m)
    if pair is None:
        return RuleOutcome(active=all_active, left=False)
    verdict = fsd_compare(pair[0], pair[1], max(epsilon, 0.0))
    if all_active:
        return RuleOutcome(active=True, left=verdict is Dominance.LEFT_STRICT)
    active = verdict in (Dominance.LEFT_STRICT, Dominance.RIGHT_STRICT)
    return RuleOutcome(active=active, left=verdict is Dominance.LEFT_STRICT)


@dataclass(frozen=True, eq=False)
class RuleMatrix:
    """Precomputed per-menu, per-rule indicators.

    ``active`` and ``left`` are boolean arrays of shape (menus, rules), with
    columns in the canonical order of ``rules``. ``big_m`` strictly exceeds
    every |payoff| in the menus it was built from.
    """

    menu_ids: tuple[str, ...]
    active: np.ndarray
    left: np.ndarray
    epsilon: float
    big_m: float
    rules: tuple[RuleId, ...] = RULES

    def __post_init__(self):
        self.active.setflags(write=False)
        self.left.setflags(write=False)

    @property
    def n_menus(self) -> int:
        return len(self.menu_ids)

    @property
    def n_rules(self) -> int:
        return len(self.rules)

    def activity_counts(self) -> dict[RuleId, int]:
        counts = self.active.sum(axis=0)
        return {rule: int(counts[i]) for i, rule in enumerate(self.rules)}

    def two_sided(self) -> np.ndarray:
        """Per menu: some active rule recommends left and some right."""
        left_side = (self.active & self.left).any(axis=1)
        right_side = (self.active & ~self.left).any(axis=1)
        return left_side & right_side

    def restrict(self, keep) -> "RuleMatrix":
        """Sub-library view with the canonical ordering preserved."""
        keep = set(keep)
        idx = [i for i, r in enumerate(self.rules) if r in keep]
        return RuleMatrix(
            menu_ids=self.menu_ids,
            active=self.active[:, idx].copy(),
            left=self.left[:, idx].copy(),
            epsilon=self.epsilon,
            big_m=self.big_m,
            rules=tuple(self.rules[i] for i in idx),
        )

    def to_csv(self, path) -> None:
        """Snapshot CSV: menu_id plus <rule>_active, <rule>_left as 0/1."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["menu_id"]
            for rule in self.rules:
                header += [f"{rule.value}_active", f"{rule.value}_left"]
            writer.writerow(header)
            for t, menu_id in enumerate(self.menu_ids):
                row = [menu_id]
                for i in range(self.n_rules):
                    row += [int(self.active[t, i]), int(self.left[t, i])]
                writer.writerow(row)


def big_m_for(menus: list[Menu]) -> float:
    """Penalty payoff for the attention rules: 10 * max|payoff| + 1.

    Any payoff strictly below the dataset minimum yields identical
    indicators; this choice is fixed for reproducibility.
    """
    peak = max((m.max_abs_payoff() for m in menus), default=0.0)
    return 10.0 * peak + 1.0


def build_rule_matrix(menus: list[Menu], epsilon: float = 0.0) -> RuleMatrix:
    """Evaluate all twelve rules on all menus."""
    big_m = big_m_for(menus)
    active = np.zeros((len(menus), N_RULES), dtype=bool)
    left = np.zeros((len(menus), N_RULES), dtype=bool)
    for t, menu in enumerate(menus):
        for i, rule in enumerate(RULES):
            outcome = evaluate_rule(rule, menu, epsilon, big_m)
            active[t, i] = outcome.active
            left[t, i] = outcome.left
    return RuleMatrix(
        menu_ids=tuple(m.id for m in menus),
        active=active,
        left=left,
        epsilon=epsilon,
        big_m=big_m,
    )


def menu_complexity(menu: Menu) -> int:
    """Count of nonzero outcomes across both supports (padding-free size)."""
    return int(np.count_nonzero(menu.left.outcomes)) + int(
        np.count_nonzero(menu.right.outcomes)
    )


def placebo_permute(
    matrix: RuleMatrix, menus: list[Menu], strata: int = 10, seed: int = 0
) -> RuleMatrix:
    """Scramble each rule's (active, left) pairs across menus within strata.

    Strata are quantile bins of menu complexity. Each non-attention rule is
    permuted independently within each stratum, so per-stratum marginal
    activity and recommendation rates are preserved exactly while the
    menu-to-indicator mapping is destroyed. A1/A2 are left untouched.
    """
    complexity = np.array([menu_complexity(m) for m in menus], dtype=float)
    if strata == 1:
        bins = np.zeros(len(menus), dtype=int)
    else:
        bins = decile_bins(complexity, strata).bins
    rng = np.random.default_rng(seed)
    active = matrix.active.copy()
    left = matrix.left.copy()
    for b in np.unique(bins):
        members = np.flatnonzero(bins == b)
        if members.size < 2:
            raise StrataTooFineError(
                f"stratum {b} has {members.size} menus; need at least 2"
            )
        for i, rule in enumerate(matrix.rules):
            if rule in ATTENTION_RULES:
                continue
            perm = rng.permutation(members.size)
            active[members, i] = matrix.active[members[perm], i]
            left[members, i] = matrix.left[members[perm], i]
    return RuleMatrix(
        menu_ids=matrix.menu_ids,
        active=active,
        left=left,
        epsilon=matrix.epsilon,
        big_m=matrix.big_m,
        rules=matrix.rules,
    )
