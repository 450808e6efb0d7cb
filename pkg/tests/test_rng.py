"""Reproducibility and independence guarantees of the seeded rng streams."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from wicrep.rng import Rng


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_same_seed_same_stream(seed):
    a = Rng(seed).integers(0, 1000, size=20)
    b = Rng(seed).integers(0, 1000, size=20)
    np.testing.assert_array_equal(a, b)


def test_child_is_order_independent():
    r1 = Rng(7)
    r2 = Rng(7)
    _ = r1.uniform(size=100)  # advancing the parent must not affect children
    np.testing.assert_array_equal(
        r1.child(3).integers(0, 10**6, size=10),
        r2.child(3).integers(0, 10**6, size=10),
    )


def test_children_differ_from_parent_and_each_other():
    r = Rng(7)
    draws = {tuple(r.child(k).integers(0, 10**9, size=8)) for k in range(20)}
    assert len(draws) == 20


def test_nested_children_addressable():
    a = Rng(3).child(1).child(2).uniform(size=5)
    b = Rng(3).child(1).child(2).uniform(size=5)
    np.testing.assert_array_equal(a, b)


def test_split_continues_numbering():
    r = Rng(11)
    first = r.split(2)
    second = r.split(2)
    direct = [Rng(11).child(i) for i in range(4)]
    for got, want in zip(first + second, direct):
        np.testing.assert_array_equal(
            got.integers(0, 10**6, size=4), want.integers(0, 10**6, size=4)
        )


def test_integers_bounds():
    draws = Rng(0).integers(2, 5, size=1000)
    assert draws.min() >= 2 and draws.max() <= 4


def test_permutation_is_permutation():
    p = Rng(1).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


def test_choice_without_replacement():
    c = Rng(2).choice(10, size=10)
    assert sorted(c.tolist()) == list(range(10))


def test_keep_mask_rate():
    m = Rng(3).keep_mask((100, 100), 0.3)
    assert abs(m.mean() - 0.7) < 0.02
    assert m.dtype == np.bool_
