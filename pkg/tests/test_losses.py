import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ncpu.losses import (LossWeights, composite_loss, entropy_reg, grad_mag_sq_noisncl,
                         grad_mag_sq_sup, grad_noisncl, grad_sup_ncl, ldce, noisncl,
                         pair_loss_matrix, representation_term, self_ncl, sup_ncl)
from ncpu.numerics import DegenerateVectorError, finite_diff_grad, relative_error, softmax


def random_pair(rng, dim, max_cos=0.99):
    while True:
        q = rng.standard_normal(dim) * rng.uniform(0.2, 5.0)
        k = rng.standard_normal(dim) * rng.uniform(0.2, 5.0)
        c = q @ k / np.linalg.norm(q) / np.linalg.norm(k)
        if c <= max_cos:
            return q, k, c


def unit_at_cos(c, dim=3):
    """Unit vectors (e0, v) with <e0, v> = c."""
    u = np.zeros(dim)
    u[0] = 1.0
    v = np.zeros(dim)
    v[0], v[1] = c, math.sqrt(max(1.0 - c * c, 0.0))
    return u, v


def test_ldce_examples():
    assert ldce([1.0, 0.0], [1.0, 0.0]) == pytest.approx(0.0, abs=1e-11)
    assert ldce([0.5, 0.5], [1.0, 0.0]) == pytest.approx(math.log(2.0))
    assert ldce([0.8, 0.2], [0.6, 0.4]) == pytest.approx(0.777661295762166, rel=1e-14)
    # a hard zero is clamped, not infinite
    assert ldce([0.0, 1.0], [1.0, 0.0]) == pytest.approx(-math.log(1e-12))


def test_pair_loss_examples():
    e0, e1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert self_ncl(e0, 3 * e0) == 0.0
    assert self_ncl(e0, e1) == pytest.approx(2.0)
    assert self_ncl(e0, -e0) == pytest.approx(4.0)
    assert sup_ncl(e0, e1, False) == 0.0
    assert sup_ncl(e0, e0, True) == 0.0
    u, v = unit_at_cos(0.5)
    assert sup_ncl(u, v, True) == pytest.approx(1.0)
    assert noisncl(e0, e0, True) == 0.0
    assert noisncl(e0, e1, True) == pytest.approx(2.0)
    assert noisncl(e0, -e0, True) == pytest.approx(2.8284271247461903)
    assert noisncl(e0, -e0, False) == 0.0


def test_pair_losses_reject_zero():
    for fn in (lambda: self_ncl([0.0, 0.0], [1.0, 0.0]),
               lambda: sup_ncl([1.0, 0.0], [0.0, 0.0], True),
               lambda: noisncl([0.0, 0.0], [1.0, 0.0], True),
               lambda: grad_noisncl([0.0, 0.0], [1.0, 0.0])):
        with pytest.raises(DegenerateVectorError):
            fn()


vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@given(vec3, vec3)
def test_loss_ranges(q, k):
    assert 0.0 <= sup_ncl(q, k, True) <= 4.0 + 1e-12
    assert 0.0 <= noisncl(q, k, True) <= 2.0 * math.sqrt(2.0) + 1e-12
    assert 0.0 <= self_ncl(q, k) <= 4.0 + 1e-12


def test_grad_examples():
    q = np.array([1.0, 0.0, 0.0])
    k = np.array([0.0, 2.0, 0.0])
    k_t = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(grad_sup_ncl(q, k), -2 * k_t)
    np.testing.assert_allclose(grad_noisncl(q, k), -k_t)
    np.testing.assert_allclose(grad_sup_ncl(q, 4 * q), 0.0, atol=1e-15)


def test_grads_match_finite_differences(rng):
    for _ in range(200):
        dim = int(rng.integers(2, 17))
        q, k, _ = random_pair(rng, dim)
        num_sup = finite_diff_grad(lambda t: sup_ncl(t, k, True), q)
        num_noi = finite_diff_grad(lambda t: noisncl(t, k, True), q)
        assert relative_error(grad_sup_ncl(q, k), num_sup) <= 1e-5
        assert relative_error(grad_noisncl(q, k), num_noi) <= 1e-5


def test_grads_orthogonal_to_q(rng):
    for _ in range(100):
        q, k, _ = random_pair(rng, 6)
        q_t = q / np.linalg.norm(q)
        assert abs(grad_sup_ncl(q, k) @ q_t) < 1e-10
        assert abs(grad_noisncl(q, k) @ q_t) < 1e-10


def test_magnitude_formulas(rng):
    e0 = np.array([1.0, 0.0])
    assert grad_mag_sq_sup(e0, [0.0, 1.0]) == pytest.approx(4.0)
    assert grad_mag_sq_sup(e0, [2.0, 0.0]) == pytest.approx(0.0)
    assert grad_mag_sq_sup(e0, [-2.0, 0.0]) == pytest.approx(0.0)
    assert grad_mag_sq_noisncl(e0, [0.0, 1.0]) == pytest.approx(1.0)
    assert grad_mag_sq_noisncl(e0, [-1.0, 0.0]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        grad_mag_sq_noisncl(e0, [3.0, 0.0])
    for _ in range(200):
        q, k, c = random_pair(rng, 5)
        nq2 = q @ q
        g_s, g_n = grad_sup_ncl(q, k), grad_noisncl(q, k)
        assert g_s @ g_s == pytest.approx(4.0 * (1.0 - c * c) / nq2, rel=1e-10, abs=1e-12)
        assert g_n @ g_n == pytest.approx((1.0 + c) / nq2, rel=1e-8, abs=1e-12)
        assert grad_mag_sq_sup(q, k) == pytest.approx(g_s @ g_s, rel=1e-10, abs=1e-12)
        assert grad_mag_sq_noisncl(q, k) == pytest.approx(g_n @ g_n, rel=1e-8, abs=1e-12)


def test_magnitude_orderings():
    q = np.array([2.0, 0.0, 0.0])
    cosines = np.linspace(-0.95, 0.95, 39)
    mags_n = [grad_mag_sq_noisncl(q, unit_at_cos(c)[1]) for c in cosines]
    # clean (more aligned) pairs dominate under the square-root loss
    assert np.all(np.diff(mags_n) > 0)
    mags_s = [grad_mag_sq_sup(q, unit_at_cos(c)[1]) for c in cosines]
    sq = cosines ** 2
    for i in range(len(cosines)):
        for j in range(len(cosines)):
            if sq[i] > sq[j] + 1e-12:
                assert mags_s[i] < mags_s[j]


def test_regioned_inequality():
    for c in np.linspace(0.0, 1.0, 101):
        u, v = unit_at_cos(c)
        assert noisncl(u, v, True) >= sup_ncl(u, v, True) - 1e-12
    for c in (0.0, 1.0):
        u, v = unit_at_cos(c)
        assert noisncl(u, v, True) == pytest.approx(sup_ncl(u, v, True), abs=1e-12)
    u, v = unit_at_cos(-0.5)
    assert noisncl(u, v, True) < sup_ncl(u, v, True)


def test_entropy_reg():
    assert entropy_reg([[0.5, 0.5]] * 4) == pytest.approx(-math.log(2.0))
    assert -1e-10 < entropy_reg([[1.0, 0.0]] * 3) <= 0.0
    assert entropy_reg([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(-math.log(2.0))
    with pytest.raises(ValueError):
        entropy_reg(np.empty((0, 2)))


def test_pair_loss_matrix_unknown_kind():
    with pytest.raises(ValueError):
        pair_loss_matrix(np.ones((2, 2)), np.ones((2, 2)), "cosine")


def test_representation_term_matches_pairwise_loop(rng):
    q, k = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    labels = np.array([0, 1, 0, 0, 1])
    M = labels[:, None] == labels[None, :]
    value, _ = representation_term(q, k, M)
    expected = np.mean([np.mean([noisncl(q[i], k[j], True) for j in range(5) if M[i, j]])
                        for i in range(5)])
    assert value == pytest.approx(expected, rel=1e-12)
    value_sup, _ = representation_term(q, k, M, "sup")
    expected_sup = np.mean([np.mean([sup_ncl(q[i], k[j], True) for j in range(5) if M[i, j]])
                            for i in range(5)])
    assert value_sup == pytest.approx(expected_sup, rel=1e-12)


def test_representation_term_gradient(rng):
    q, k = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    M = rng.random((6, 6)) < 0.5
    np.fill_diagonal(M, True)
    for kind in ("noisncl", "sup"):
        _, g = representation_term(q, k, M, kind)
        num = finite_diff_grad(lambda t: representation_term(t, k, M, kind)[0], q)
        assert relative_error(g, num) < 1e-6


def test_representation_term_identical_embeddings_is_zero():
    q = np.tile([1.0, 2.0, 3.0], (4, 1))
    value, _ = representation_term(q, 2.0 * q, np.ones((4, 4), dtype=bool))
    assert value == pytest.approx(0.0, abs=1e-12)


def test_representation_term_needs_pairs():
    with pytest.raises(ValueError):
        representation_term(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), dtype=bool))


def hand_batch():
    logits = np.array([[2.0, -1.0], [0.3, 0.1], [-0.5, 1.5], [0.0, 0.0]])
    targets = np.array([[1.0, 0.0], [0.2, 0.8], [0.0, 1.0], [0.6, 0.4]])
    obs = np.array([True, False, False, False])
    q = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0], [-1.0, 1.0]])
    k = np.array([[1.0, 0.2], [0.0, 1.0], [0.5, 0.5], [-1.0, 0.0]])
    M = np.array([[1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 1, 0], [1, 0, 0, 1]], dtype=bool)
    return logits, targets, obs, q, k, M


def test_composite_loss_hand_batch():
    logits, targets, obs, q, k, M = hand_batch()
    w = LossWeights(w_r=2.0, w_ent=0.5)
    bd, _, _ = composite_loss(logits, targets, obs, q, k, M, w)
    # independent recomputation with scalar math only
    probs = [[1 / (1 + math.exp(b - a)), 1 / (1 + math.exp(a - b))] for a, b in logits]
    ce = [-(t[0] * math.log(p[0]) + t[1] * math.log(p[1])) for p, t in zip(probs, targets)]
    ldce_p = ce[0]
    ldce_u = (ce[1] + ce[2] + ce[3]) / 3
    rep = 0.0
    for i in range(4):
        js = [j for j in range(4) if M[i, j]]
        losses = []
        for j in js:
            c = sum(a * b for a, b in zip(q[i], k[j])) / math.hypot(*q[i]) / math.hypot(*k[j])
            losses.append(2 * math.sqrt(1 - c))
        rep += sum(losses) / len(losses) / 4
    pbar = [sum(p[c] for p in probs) / 4 for c in (0, 1)]
    ent = sum(x * math.log(x) for x in pbar)
    assert bd.ldce_p == pytest.approx(ldce_p, rel=1e-12)
    assert bd.ldce_u == pytest.approx(ldce_u, rel=1e-12)
    assert bd.rep == pytest.approx(rep, rel=1e-12)
    assert bd.ent == pytest.approx(ent, rel=1e-12)
    assert bd.total == pytest.approx(ldce_p + ldce_u + 2.0 * rep + 0.5 * ent, abs=1e-10)
    assert set(bd.as_dict()) == {"ldce_p", "ldce_u", "rep", "ent", "total"}


def test_composite_loss_zero_weights_is_pure_ldce():
    logits, targets, obs, q, k, M = hand_batch()
    bd, _, g_q = composite_loss(logits, targets, obs, q, k, M, LossWeights(0.0, 0.0))
    assert bd.total == bd.ldce_p + bd.ldce_u
    assert bd.rep == 0.0 and bd.ent == 0.0 and g_q is None


def test_composite_loss_single_perfect_positive(caplog):
    with caplog.at_level(logging.INFO, logger="ncpu.losses"):
        bd, _, _ = composite_loss(np.array([[40.0, 0.0]]), np.array([[1.0, 0.0]]),
                                  np.array([True]), weights=LossWeights(0.0, 0.0))
    assert bd.total == pytest.approx(0.0, abs=1e-12)
    assert bd.ldce_u == 0.0
    assert "no U members" in caplog.text


def test_composite_gradients(rng):
    logits, targets, obs, q, k, M = hand_batch()
    w = LossWeights(w_r=3.0, w_ent=2.0)
    _, g_logits, g_q = composite_loss(logits, targets, obs, q, k, M, w)
    num_l = finite_diff_grad(lambda z: composite_loss(z, targets, obs, q, k, M, w)[0].total, logits)
    num_q = finite_diff_grad(lambda t: composite_loss(logits, targets, obs, t, k, M, w)[0].total, q)
    assert relative_error(g_logits, num_l) < 1e-6
    assert relative_error(g_q, num_q) < 1e-6


def test_composite_rep_gradient_is_linear_in_w_r():
    logits, targets, obs, q, k, M = hand_batch()
    _, _, g1 = composite_loss(logits, targets, obs, q, k, M, LossWeights(1.0, 0.0))
    _, _, g2 = composite_loss(logits, targets, obs, q, k, M, LossWeights(2.0, 0.0))
    np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-14)


def test_composite_empty_batch():
    with pytest.raises(ValueError):
        composite_loss(np.empty((0, 2)), np.empty((0, 2)), np.empty(0, dtype=bool))


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(w_r=-1.0)
    with pytest.raises(ValueError):
        LossWeights(w_ent=float("nan"))


def test_softmax_gradient_of_ldce_sums_to_zero():
    # d/dz of -s.log softmax(z) is f - s, which sums to 0 for a probability target
    logits, targets, obs, *_ = hand_batch()
    _, g, _ = composite_loss(logits, targets, obs, weights=LossWeights(0.0, 0.0))
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)
    assert softmax(logits).shape == g.shape
