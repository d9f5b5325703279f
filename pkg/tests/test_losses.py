import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_triplet.embed_net import l2_normalize
from adaptive_triplet.errors import DegeneratePairError, InvalidInputError
from adaptive_triplet.losses import (
    LossWeights,
    MarginMode,
    RegressionKind,
    combined_loss,
    regression_loss,
    triplet_loss,
    triplet_loss_grads,
)
from oracles import central_diff, max_rel_err

dist = st.floats(0, 2, allow_nan=False)
margin = st.floats(0, 2, allow_nan=False)


@pytest.mark.parametrize(
    "d_ap, d_an, m, expected",
    [(0.3, 0.9, 0.5, 0.0), (0.9, 0.3, 0.5, 1.1), (0.4, 0.4, 0.0, 0.0)],
)
def test_triplet_loss_examples(d_ap, d_an, m, expected):
    assert triplet_loss(d_ap, d_an, m) == pytest.approx(expected, abs=1e-15)


def test_triplet_loss_rejects_negative_distance():
    with pytest.raises(InvalidInputError):
        triplet_loss(-0.1, 0.5, 0.2)
    with pytest.raises(InvalidInputError):
        triplet_loss(0.1, math.inf, 0.2)


@given(dist, dist, margin)
def test_triplet_loss_zero_iff_ordered(d_ap, d_an, m):
    loss = triplet_loss(d_ap, d_an, m)
    assert loss >= 0
    assert (loss == 0) == (d_ap - d_an + m <= 0)


@given(dist, dist, margin, st.floats(0, 1))
def test_triplet_loss_monotone(d_ap, d_an, m, delta):
    base = triplet_loss(d_ap, d_an, m)
    assert triplet_loss(d_ap + delta, d_an, m) >= base
    assert triplet_loss(d_ap, d_an, m + delta) >= base
    assert triplet_loss(d_ap, d_an + delta, m) <= base


def test_grads_inactive_hinge_zero():
    loss, g_a, g_p, g_n = triplet_loss_grads([1, 0], [0.99, 0.141], [-1, 0], 0.2)
    assert loss == 0
    assert not (np.any(g_a) or np.any(g_p) or np.any(g_n))


def test_grads_axes_example():
    # sqrt(2) - 2 + 0.1 < 0 -> hinge off
    loss, g_a, g_p, g_n = triplet_loss_grads([1, 0], [0, 1], [-1, 0], 0.1)
    assert loss == 0
    assert not (np.any(g_a) or np.any(g_p) or np.any(g_n))


def test_grads_active_closed_form():
    e_a, e_p, e_n = np.array([1.0, 0]), np.array([0, 1.0]), np.array([0.8, 0.6])
    loss, g_a, g_p, g_n = triplet_loss_grads(e_a, e_p, e_n, 0.5)
    d_ap, d_an = np.sqrt(2), np.linalg.norm(e_a - e_n)
    assert loss == pytest.approx(d_ap - d_an + 0.5)
    np.testing.assert_allclose(g_p, -(e_a - e_p) / d_ap)
    np.testing.assert_allclose(g_n, (e_a - e_n) / d_an)
    np.testing.assert_allclose(g_a, (e_a - e_p) / d_ap - (e_a - e_n) / d_an)


def test_grads_match_finite_differences():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 100:
        dim = int(rng.integers(2, 9))
        e = [l2_normalize(rng.normal(size=dim)) for _ in range(3)]
        m = float(rng.uniform(0, 2))
        loss, *grads = triplet_loss_grads(*e, m)
        if not loss > 1e-3:
            continue
        for k in range(3):
            def f():
                return triplet_loss(np.linalg.norm(e[0] - e[1]), np.linalg.norm(e[0] - e[2]), m)
            assert max_rel_err(grads[k], central_diff(f, e[k])) < 1e-4
        checked += 1


def test_degenerate_pair_raises():
    e = np.array([1.0, 0.0])
    with pytest.raises(DegeneratePairError):
        triplet_loss_grads(e, e.copy(), l2_normalize([0.9, 0.2]), 0.5)
    # coincident but inactive is fine
    loss, *_ = triplet_loss_grads(e, e.copy(), np.array([0.0, 1.0]), 0.0)
    assert loss == 0


@pytest.mark.parametrize("m", [0.0, 0.5, 1.0])
def test_zero_loss_is_reachable(m):
    # anchor and positive coincide, negative at the antipode: d_an = 2 >= m
    e_a = np.array([1.0, 0.0, 0.0])
    assert triplet_loss(0.0, np.linalg.norm(e_a + e_a), m) == 0


@pytest.mark.parametrize("kind", list(RegressionKind))
def test_regression_zero_residual(kind):
    assert regression_loss(3.0, 3.0, kind) == (0.0, 0.0)


def test_regression_examples():
    assert regression_loss(3.5, 3.0, "mae") == (0.5, 1.0)
    assert regression_loss(3.5, 3.0, "mse") == (0.25, 1.0)
    assert regression_loss(2.5, 3.0, "mae") == (0.5, -1.0)


@pytest.mark.parametrize("kind", list(RegressionKind))
def test_regression_derivative_finite_difference(kind):
    for pred in (-1.3, 0.2, 2.7):
        h = 1e-6
        num = (regression_loss(pred + h, 0.7, kind)[0] - regression_loss(pred - h, 0.7, kind)[0]) / (2 * h)
        assert regression_loss(pred, 0.7, kind)[1] == pytest.approx(num, rel=1e-6)


def test_combined_examples():
    assert combined_loss(0.2, 0.4, LossWeights(1, 0.5)) == pytest.approx(0.4)
    assert combined_loss(0.2, 0.4, LossWeights(1, 0)) == 0.2
    assert combined_loss(0.2, 0.4, LossWeights(0, 1)) == 0.4


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 3))
def test_combined_is_linear(t1, t2, r1, r2, a):
    w = LossWeights(a, 0.3)
    assert combined_loss(t1 + t2, r1 + r2, w) == pytest.approx(
        combined_loss(t1, r1, w) + combined_loss(t2, r2, w), rel=1e-12, abs=1e-12
    )


def test_weights_validation():
    with pytest.raises(InvalidInputError):
        LossWeights(0, 0)
    with pytest.raises(InvalidInputError):
        LossWeights(-1, 1)


def test_margin_mode_validation():
    assert MarginMode.fixed(0.5).is_fixed
    assert not MarginMode.adaptive().is_fixed
    with pytest.raises(InvalidInputError):
        MarginMode.fixed(-0.1)
    with pytest.raises(InvalidInputError):
        MarginMode.fixed(2.5)
    with pytest.raises(InvalidInputError):
        MarginMode("sometimes")
