"""Tests for the feature interaction and the loss."""

import numpy as np
import pytest

from src.core.errors import ShapeError
from src.model.config import InteractionKind, interaction_width
from src.model.dlrm import bce_loss
from src.model.interaction import interaction, interaction_backward, lower_pairs


def _inputs(rng, n=3, S=3, E=4):
    bottom = rng.standard_normal((n, E)).astype(np.float32)
    emb = [rng.standard_normal((n, E)).astype(np.float32) for _ in range(S)]
    return bottom, emb


def test_dot_output_layout(rng):
    bottom, emb = _inputs(rng, n=2, S=1)
    out = interaction(bottom, emb)

    assert out.shape == (2, interaction_width(1, 4))
    np.testing.assert_array_equal(out[:, :4], bottom)
    np.testing.assert_allclose(out[:, 4], (bottom * emb[0]).sum(axis=1), rtol=1e-6)


def test_lower_pairs_are_row_major():
    li, lj = lower_pairs(4)
    assert list(zip(li, lj)) == [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]


def test_widths():
    assert interaction_width(8, 64) == 100
    assert interaction_width(26, 128) == 479
    assert interaction_width(3, 4, InteractionKind.CAT) == 16


@pytest.mark.parametrize("kind", list(InteractionKind))
def test_backward_matches_finite_differences(rng, kind):
    bottom, emb = _inputs(rng)
    G = rng.standard_normal(interaction(bottom, emb, kind).shape).astype(np.float32)
    d_bottom, d_emb = interaction_backward(G, bottom, emb, kind)

    def f(b, e):
        return float(np.sum(interaction(b, e, kind).astype(np.float64) * G))

    eps = 1e-2
    for i in range(bottom.shape[0]):
        for k in range(bottom.shape[1]):
            up, down = bottom.copy(), bottom.copy()
            up[i, k] += eps
            down[i, k] -= eps
            assert d_bottom[i, k] == pytest.approx((f(up, emb) - f(down, emb)) / (2 * eps),
                                                   abs=1e-3, rel=1e-3)
    for t in range(len(emb)):
        for i in range(bottom.shape[0]):
            up = [e.copy() for e in emb]
            down = [e.copy() for e in emb]
            up[t][i, 0] += eps
            down[t][i, 0] -= eps
            assert d_emb[t][i, 0] == pytest.approx((f(bottom, up) - f(bottom, down)) / (2 * eps),
                                                   abs=1e-3, rel=1e-3)


def test_shape_checks(rng):
    bottom, emb = _inputs(rng)
    with pytest.raises(ShapeError):
        interaction(bottom, emb + [np.zeros((3, 5), dtype=np.float32)])
    with pytest.raises(ShapeError):
        interaction_backward(np.zeros((3, 2), dtype=np.float32), bottom, emb)


def test_bce_loss_and_gradient():
    loss, grad = bce_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(np.log(2), rel=1e-6)
    np.testing.assert_allclose(grad, [-1.0, 1.0], rtol=1e-6)


def test_bce_loss_is_finite_at_saturation():
    loss, grad = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))
