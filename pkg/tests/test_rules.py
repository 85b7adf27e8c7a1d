"""Rule library: per-rule behavior, indicator matrix, placebo scrambling."""

import numpy as np
import pytest
from hypothesis import given, settings

from rulegate.errors import StrataTooFineError
from rulegate.lotteries import Menu, canonicalize, degenerate
from rulegate.rules import (
    ATTENTION_RULES,
    N_RULES,
    RULES,
    RuleId,
    RuleOutcome,
    big_m_for,
    build_rule_matrix,
    evaluate_rule,
    menu_complexity,
    placebo_permute,
)

from .conftest import lottery_from, menu_strategy, random_menu_np
from .reference_rules import REF_RULE_NAMES, ref_rule


def menu(left_out, left_p, right_out, right_p, ident="m"):
    return Menu(
        id=ident,
        left=canonicalize(left_out, left_p),
        right=canonicalize(right_out, right_p),
    )


class TestSingleRules:
    def test_mmn_prefers_better_worst_case(self):
        m = menu([0, 10], [0.5, 0.5], [1], [1.0])
        out = evaluate_rule(RuleId.MMN, m, big_m=101.0)
        assert out.active and not out.left  # worst cases 0 vs 1

    def test_a1_always_left(self):
        for m in (
            menu([0, 10], [0.5, 0.5], [1], [1.0]),
            menu([-5], [1.0], [-5], [1.0]),
        ):
            out = evaluate_rule(RuleId.A1, m, big_m=big_m_for([m]))
            assert out == RuleOutcome(active=True, left=True)
            out2 = evaluate_rule(RuleId.A2, m, big_m=big_m_for([m]))
            assert out2 == RuleOutcome(active=True, left=False)

    def test_map_upward_tie_break(self):
        m = menu([1, 2], [0.5, 0.5], [1.5], [1.0])
        out = evaluate_rule(RuleId.MAP, m, big_m=16.0)
        assert out.active and out.left  # modes 2 vs 1.5

    def test_dis_inactive_on_degenerate_pair(self):
        m = menu([3], [1.0], [7], [1.0])
        out = evaluate_rule(RuleId.DIS, m, big_m=71.0)
        assert not out.active  # both downside sets empty -> equal levels

    def test_sal2_inactive_on_exact_tie(self):
        # Symmetric menu: salience scores pair up exactly.
        m = menu([0, 10], [0.5, 0.5], [0, 10], [0.5, 0.5])
        out = evaluate_rule(RuleId.SAL2, m, big_m=101.0)
        assert not out.active

    def test_sal_tie_break_smallest_pairing_index(self):
        # All four pairings score 2/3; the smallest index is (min1, min2) =
        # (0, -2), so SAL recommends left. Any other tie-break flips it.
        m = menu([0], [1.0], [-2, 2], [0.5, 0.5])
        out = evaluate_rule(RuleId.SAL, m, big_m=21.0)
        assert out.active and out.left
        # And the tied top two leave SAL2 inactive.
        assert not evaluate_rule(RuleId.SAL2, m, big_m=21.0).active

    def test_regmed_uses_weighted_median_regret(self):
        m = menu([0, 10], [0.9, 0.1], [5], [1.0])
        # regret(left) states: (0,5)p.9 -> 5, (10,5)p.1 -> 0; median 5
        # regret(right): 0 w.p. .9, 5 w.p. .1; median 0 -> right preferred
        out = evaluate_rule(RuleId.REGMED, m, big_m=101.0)
        assert out.active and not out.left

    def test_left_implies_active_construction(self):
        with pytest.raises(ValueError):
            RuleOutcome(active=False, left=True)


class TestEpsilonDiscipline:
    def test_all_active_sentinel(self):
        m = menu([3], [1.0], [7], [1.0])
        for rule in RULES:
            out = evaluate_rule(rule, m, epsilon=-2.0, big_m=71.0)
            assert out.active
        # Recommendations still follow strict dominance where defined.
        assert evaluate_rule(RuleId.MMX, m, epsilon=-2.0, big_m=71.0).left is False
        assert evaluate_rule(RuleId.DIS, m, epsilon=-2.0, big_m=71.0).left is False

    @given(menu_strategy())
    @settings(max_examples=60, deadline=None)
    def test_raising_epsilon_shrinks_activity(self, m):
        big_m = big_m_for([m])
        for rule in RULES:
            active_levels = [
                evaluate_rule(rule, m, eps, big_m).active
                for eps in (0.0, 0.05, 0.2)
            ]
            # Once inactive, stays inactive at higher epsilon.
            for lo, hi in zip(active_levels, active_levels[1:]):
                assert lo or not hi

    def test_attention_rule_deactivates_at_large_epsilon(self):
        # Top payoff carries 0.05 mass: survival at the top is below 0.1.
        m = menu([0, 10], [0.95, 0.05], [1], [1.0])
        assert evaluate_rule(RuleId.A1, m, 0.0, 101.0).active
        assert not evaluate_rule(RuleId.A1, m, 0.1, 101.0).active


class TestReferenceAgreement:
    def test_200_menu_snapshot_matches_reference(self, rng):
        menus = [random_menu_np(rng, ident=f"m{t}") for t in range(200)]
        matrix = build_rule_matrix(menus)
        mismatches = []
        for t, m in enumerate(menus):
            for i, name in enumerate(REF_RULE_NAMES):
                expect = ref_rule(name, m, matrix.big_m)
                got = (bool(matrix.active[t, i]), bool(matrix.left[t, i]))
                if got != expect:
                    mismatches.append((m.id, name, got, expect))
        assert mismatches == []

    def test_rule_order_matches_reference(self):
        assert tuple(r.value for r in RULES) == REF_RULE_NAMES


class TestRuleMatrix:
    def test_degenerate_menu_all_simplification_rules_left(self):
        matrix = build_rule_matrix([menu([1], [1.0], [0], [1.0], "d")])
        for rule in (RuleId.MMN, RuleId.MMA, RuleId.MMX, RuleId.MAP):
            i = RULES.index(rule)
            assert matrix.active[0, i] and matrix.left[0, i]

    def test_attention_columns_constant(self, rng):
        menus = [random_menu_np(rng, ident=f"a{t}") for t in range(40)]
        matrix = build_rule_matrix(menus)
        i1, i2 = RULES.index(RuleId.A1), RULES.index(RuleId.A2)
        assert matrix.active[:, i1].all() and matrix.left[:, i1].all()
        assert matrix.active[:, i2].all() and not matrix.left[:, i2].any()

    def test_big_m_strictly_exceeds_payoffs(self, rng):
        menus = [random_menu_np(rng, ident=f"b{t}") for t in range(10)]
        matrix = build_rule_matrix(menus)
        peak = max(m.max_abs_payoff() for m in menus)
        assert matrix.big_m > peak

    def test_left_implies_active(self, rng):
        menus = [random_menu_np(rng, ident=f"c{t}") for t in range(60)]
        matrix = build_rule_matrix(menus)
        assert not np.any(matrix.left & ~matrix.active)

    def test_csv_round_trip_layout(self, tmp_path, rng):
        menus = [random_menu_np(rng, ident=f"e{t}") for t in range(5)]
        matrix = build_rule_matrix(menus)
        path = tmp_path / "indicators.csv"
        matrix.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0].startswith("menu_id,MMn_active,MMn_left")
        assert len(lines) == 6

    def test_restrict_preserves_order(self, rng):
        menus = [random_menu_np(rng, ident=f"f{t}") for t in range(8)]
        matrix = build_rule_matrix(menus)
        sub = matrix.restrict([RuleId.SAL, RuleId.MMN, RuleId.A1])
        assert sub.rules == (RuleId.MMN, RuleId.SAL, RuleId.A1)
        np.testing.assert_array_equal(
            sub.active[:, 0], matrix.active[:, RULES.index(RuleId.MMN)]
        )

    def test_rescaling_does_not_touch_indicators(self, rng):
        # Rules see raw payoffs; feature rescaling happens elsewhere.
        menus = [random_menu_np(rng, ident=f"g{t}") for t in range(30)]
        matrix = build_rule_matrix(menus)
        again = build_rule_matrix(menus)
        np.testing.assert_array_equal(matrix.active, again.active)
        np.testing.assert_array_equal(matrix.left, again.left)


class TestRegInvariance:
    def test_reg_depends_only_on_marginals(self):
        # Same marginal lotteries presented with different pre-canonical
        # orderings and split mass; product construction must not care.
        m1 = menu([0, 10], [0.5, 0.5], [2, 6], [0.5, 0.5])
        m2 = menu([10, 0, 0], [0.5, 0.25, 0.25], [6, 2], [0.5, 0.5])
        for rule in (RuleId.REG, RuleId.DIS):
            a = evaluate_rule(rule, m1, big_m=101.0)
            b = evaluate_rule(rule, m2, big_m=101.0)
            assert a == b


class TestPlaceboPermute:
    def test_preserves_marginals_within_strata(self, rng):
        menus = [random_menu_np(rng, ident=f"p{t}") for t in range(120)]
        matrix = build_rule_matrix(menus)
        strata = 4
        scrambled = placebo_permute(matrix, menus, strata=strata, seed=7)
        complexity = np.array([menu_complexity(m) for m in menus])
        from rulegate.features import decile_bins

        bins = decile_bins(complexity.astype(float), strata).bins
        for b in np.unique(bins):
            idx = bins == b
            np.testing.assert_array_equal(
                matrix.active[idx].sum(axis=0), scrambled.active[idx].sum(axis=0)
            )
            np.testing.assert_array_equal(
                (matrix.active[idx] & matrix.left[idx]).sum(axis=0),
                (scrambled.active[idx] & scrambled.left[idx]).sum(axis=0),
            )

    def test_attention_untouched_and_pairs_move_together(self, rng):
        menus = [random_menu_np(rng, ident=f"q{t}") for t in range(60)]
        matrix = build_rule_matrix(menus)
        scrambled = placebo_permute(matrix, menus, strata=2, seed=3)
        for rule in ATTENTION_RULES:
            i = RULES.index(rule)
            np.testing.assert_array_equal(matrix.active[:, i], scrambled.active[:, i])
            np.testing.assert_array_equal(matrix.left[:, i], scrambled.left[:, i])
        # left implies active even after scrambling: pairs moved jointly
        assert not np.any(scrambled.left & ~scrambled.active)

    def test_strata_too_fine(self, rng):
        menus = [random_menu_np(rng, ident=f"s{t}") for t in range(3)]
        matrix = build_rule_matrix(menus)
        with pytest.raises(StrataTooFineError):
            placebo_permute(matrix, menus, strata=3, seed=0)

    def test_single_stratum_is_global_permutation(self, rng):
        menus = [random_menu_np(rng, ident=f"u{t}") for t in range(50)]
        matrix = build_rule_matrix(menus)
        scrambled = placebo_permute(matrix, menus, strata=1, seed=11)
        np.testing.assert_array_equal(
            matrix.active.sum(axis=0), scrambled.active.sum(axis=0)
        )
        assert matrix.n_menus == scrambled.n_menus
