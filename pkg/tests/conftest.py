"""Shared fixtures and strategies."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from rulegate.lotteries import Lottery, Menu, canonicalize


def lottery_from(outcomes, weights) -> Lottery:
    w = np.asarray(weights, dtype=float)
    return canonicalize(outcomes, w / w.sum())


@st.composite
def lottery_strategy(draw, max_support: int = 5, payoff_range: int = 20):
    """Small lotteries with integer payoffs and rational probabilities."""
    size = draw(st.integers(1, max_support))
    outcomes = draw(
        st.lists(
            st.integers(-payoff_range, payoff_range),
            min_size=size,
            max_size=size,
            unique=True,
        )
    )
    weights = draw(st.lists(st.integers(1, 9), min_size=size, max_size=size))
    return lottery_from(outcomes, weights)


@st.composite
def menu_strategy(draw, max_support: int = 4):
    left = draw(lottery_strategy(max_support=max_support))
    right = draw(lottery_strategy(max_support=max_support))
    return Menu(id="m", left=left, right=right)


def random_lottery_np(rng: np.random.Generator, max_support=5, payoff_range=20):
    size = int(rng.integers(1, max_support + 1))
    outcomes = rng.choice(
        np.arange(-payoff_range, payoff_range + 1), size=size, replace=False
    ).astype(float)
    weights = rng.integers(1, 10, size).astype(float)
    return canonicalize(outcomes, weights / weights.sum())


def random_menu_np(rng: np.random.Generator, ident="m", max_support=4):
    return Menu(
        id=ident,
        left=random_lottery_np(rng, max_support),
        right=random_lottery_np(rng, max_support),
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260810)
