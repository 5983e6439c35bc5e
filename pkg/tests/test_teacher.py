import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from relkg.teacher import project


def simplex_grid(step=1e-3):
    k = int(round(1 / step))
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    pts = np.stack([i[keep], j[keep], k - i[keep] - j[keep]], axis=1) / k
    return pts


GRID = simplex_grid()


def grid_minimizer(p, penalties, C):
    """argmin_t KL(t || p) + C * E_t[penalty] over a step-1e-3 simplex grid."""
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(GRID > 0, GRID * (np.log(GRID) - np.log(p)), 0.0).sum(axis=1)
    return GRID[np.argmin(kl + C * GRID @ penalties)]


def test_worked_example():
    t = project(np.array([0.5, 0.5]), np.array([0.0, 3.62]), C=1.0)
    assert t[0] == pytest.approx(0.9739, abs=1e-4)
    assert t[1] == pytest.approx(0.0261, abs=1e-4)
    assert t[0] == pytest.approx(1 / (1 + math.exp(-3.62)), abs=1e-12)


def test_c_zero_is_identity():
    p = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(project(p, np.array([1.0, 5.0, 0.0]), C=0.0), p)


def test_equal_penalties_leave_p():
    p = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(project(p, np.full(3, 2.5)), p, atol=1e-15)


@pytest.mark.parametrize("p, pen, C", [
    ([0.2, 0.5, 0.3], [0.0, 3.62, 1.0], 1.0),
    ([0.6, 0.3, 0.1], [3.34, 0.0, 0.48], 0.5),
    ([1 / 3, 1 / 3, 1 / 3], [0.0, 0.0, 6.96], 2.0),
    ([0.05, 0.05, 0.9], [0.0, 1.43, 3.0], 1.0),
])
def test_matches_grid_search(p, pen, C):
    p, pen = np.array(p), np.array(pen)
    assert np.max(np.abs(project(p, pen, C) - grid_minimizer(p, pen, C))) < 5e-3


dists = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6).map(lambda x: np.array(x) / sum(x))


@given(dists, st.data(), st.floats(0.0, 5.0))
def test_normalized_full_support(p, data, C):
    pen = np.array(data.draw(st.lists(st.floats(0, 50), min_size=len(p), max_size=len(p))))
    t = project(p, pen, C)
    assert abs(t.sum() - 1) < 1e-9
    assert (t > 0).all()


@given(dists, st.data(), st.floats(0.01, 5.0))
def test_monotone_in_penalty(p, data, C):
    pen = np.array(data.draw(st.lists(st.floats(0, 5), min_size=len(p), max_size=len(p))))
    t = project(p, pen, C)
    ratio = t / p
    for a in range(len(p)):
        for b in range(len(p)):
            if pen[a] < pen[b] - 1e-6:
                assert ratio[a] > ratio[b]


@given(dists, st.data())
def test_small_c_keeps_argmax(p, data):
    top = np.sort(p)[-2:]
    assume(top[1] - top[0] > 1e-3)
    pen = np.array(data.draw(st.lists(st.floats(0, 10), min_size=len(p), max_size=len(p))))
    assert np.argmax(project(p, pen, C=1e-6)) == np.argmax(p)


def test_batched_rows():
    p = np.array([[0.5, 0.5], [0.9, 0.1]])
    t = project(p, np.array([[0.0, 3.62], [0.0, 0.0]]))
    np.testing.assert_allclose(t[1], p[1])
    np.testing.assert_allclose(t[0], project(p[0], np.array([0.0, 3.62])))


def test_errors():
    with pytest.raises(ValueError):
        project(np.array([0.5, 0.5]), np.array([0.0, 1.0]), C=-1)
    with pytest.raises(ValueError):
        project(np.array([0.5, 0.5]), np.array([-1.0, 1.0]))
    with pytest.raises(ValueError, match="zero"):
        project(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
