"""Independent reference implementation of the twelve rules.

Deliberately written in plain scalar Python against the rule definitions,
before and separately from the package implementation, so the two can be
cross-checked indicator by indicator. Shares nothing with the package except
the Menu/Lottery containers it reads plain lists out of.
"""

from __future__ import annotations


def ref_merge(outcomes, probs):
    """Canonical (sorted, merged, positive-mass) support as two lists."""
    acc = {}
    for z, p in zip(outcomes, probs):
        acc[z] = acc.get(z, 0.0) + p
    pairs = sorted((z, p) for z, p in acc.items() if p > 0.0)
    total = sum(p for _, p in pairs)
    return [z for z, _ in pairs], [p / total for _, p in pairs]


def ref_cdf(outcomes, probs, x):
    return sum(p for z, p in zip(outcomes, probs) if z <= x)


def ref_fsd(out_a, prob_a, out_b, prob_b, tol=1e-12):
    """Strict FSD of a over b via pointwise CDF comparison on the grid."""
    grid = sorted(set(out_a) | set(out_b))
    weakly_lower = all(
        ref_cdf(out_a, prob_a, x) <= ref_cdf(out_b, prob_b, x) + tol for x in grid
    )
    strictly_somewhere = any(
        ref_cdf(out_a, prob_a, x) < ref_cdf(out_b, prob_b, x) - tol for x in grid
    )
    return weakly_lower and strictly_somewhere


def ref_contrast(x, y):
    return abs(x - y) / (abs(x) + abs(y) + 1.0)


def ref_mode(outcomes, probs, tol=1e-12):
    best = max(probs)
    return max(z for z, p in zip(outcomes, probs) if p >= best - tol)


def ref_weighted_median(values, weights):
    pairs = sorted(zip(values, weights))
    total = sum(w for _, w in pairs)
    cum = 0.0
    for v, w in pairs:
        cum += w
        if cum / total >= 0.5 - 1e-12:
            return v
    return pairs[-1][0]


def _lists(lottery):
    return list(map(float, lottery.outcomes)), list(map(float, lottery.probs))


def _verdict(pair_a, pair_b):
    """(active, left) from a perceived lottery pair given as (outs, probs)."""
    a_over_b = ref_fsd(*pair_a, *pair_b)
    b_over_a = ref_fsd(*pair_b, *pair_a)
    return (a_over_b or b_over_a), a_over_b


def _regret_states(menu):
    lo, lp = _lists(menu.left)
    ro, rp = _lists(menu.right)
    states = []
    for x, px in zip(lo, lp):
        for y, py in zip(ro, rp):
            states.append((x, y, px * py))
    return states


def _downside(lottery):
    outs, probs = _lists(lottery)
    mode = ref_mode(outs, probs)
    return sorted(
        (ref_contrast(mode, z) for z in outs if z < mode), reverse=True
    )


def ref_rule(name, menu, big_m):
    """(active, left) for one rule at one menu, strict dominance at gap 0."""
    lo, lp = _lists(menu.left)
    ro, rp = _lists(menu.right)

    if name == "MMn":
        return _verdict(([min(lo)], [1.0]), ([min(ro)], [1.0]))
    if name == "MMx":
        return _verdict(([max(lo)], [1.0]), ([max(ro)], [1.0]))
    if name == "MMa":
        return _verdict(
            ([(min(lo) + max(lo)) / 2.0], [1.0]),
            ([(min(ro) + max(ro)) / 2.0], [1.0]),
        )
    if name == "MAP":
        return _verdict(([ref_mode(lo, lp)], [1.0]), ([ref_mode(ro, rp)], [1.0]))

    if name in ("SAL", "SAL2"):
        pairs = [
            (min(lo), min(ro)),
            (min(lo), max(ro)),
            (max(lo), min(ro)),
            (max(lo), max(ro)),
        ]
        scores = [ref_contrast(a, b) for a, b in pairs]
        top = scores.index(max(scores))
        if name == "SAL":
            a, b = pairs[top]
            return _verdict(([a], [1.0]), ([b], [1.0]))
        ranked = sorted(scores, reverse=True)
        if ranked[0] == ranked[1]:
            return False, False
        second = min(
            k for k, s in enumerate(scores) if s == ranked[1] and k != top
        )
        a, b = pairs[second]
        return _verdict(([a], [1.0]), ([b], [1.0]))

    if name == "REG":
        states = _regret_states(menu)
        neg_l = [(-max(y - x, 0.0), p) for x, y, p in states]
        neg_r = [(-max(x - y, 0.0), p) for x, y, p in states]
        la = ref_merge([v for v, _ in neg_l], [p for _, p in neg_l])
        ra = ref_merge([v for v, _ in neg_r], [p for _, p in neg_r])
        return _verdict(la, ra)
    if name == "REGmed":
        states = _regret_states(menu)
        med_l = ref_weighted_median(
            [max(y - x, 0.0) for x, y, _ in states], [p for _, _, p in states]
        )
        med_r = ref_weighted_median(
            [max(x - y, 0.0) for x, y, _ in states], [p for _, _, p in states]
        )
        return _verdict(([-med_l], [1.0]), ([-med_r], [1.0]))

    if name in ("DIS", "DISmed"):
        levels = []
        for lottery in (menu.left, menu.right):
            s = _downside(lottery)
            if not s:
                levels.append(0.0)
            elif name == "DIS" or len(s) == 1:
                levels.append(s[0])
            else:
                levels.append(s[1])
        return _verdict(([-levels[0]], [1.0]), ([-levels[1]], [1.0]))

    if name == "A1":
        return _verdict((lo, lp), ([-big_m], [1.0]))
    if name == "A2":
        return _verdict(([-big_m], [1.0]), (ro, rp))

    raise ValueError(name)


REF_RULE_NAMES = (
    "MMn", "MMa", "MMx", "MAP", "SAL", "SAL2",
    "REG", "REGmed", "DIS", "DISmed", "A1", "A2",
)
