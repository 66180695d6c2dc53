import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncpu import pudata
from ncpu.pudata import AugConfig, augment, pair_sets, pu_split


def test_gaussians_same_seed_identical():
    a = pudata.gen_gaussians(50, 3, 4.0, 1.0, seed=7)
    b = pudata.gen_gaussians(50, 3, 4.0, 1.0, seed=7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_gaussians_zero_separation_indistinguishable():
    X, y = pudata.gen_gaussians(20000, 2, 0.0, 1.0, seed=1)
    # best linear rule on the separating axis is at chance
    acc = np.mean((X[:, 0] > 0) == (y == 0))
    assert abs(acc - 0.5) < 0.02
    assert pudata.gaussian_bayes_error(0.0, 1.0) == 0.5


def test_gaussian_bayes_error_matches_monte_carlo():
    closed = pudata.gaussian_bayes_error(4.0, 1.0)
    assert closed == pytest.approx(0.0227501319, abs=1e-9)
    # Monte Carlo oracle: the optimal rule is the sign of the first coordinate
    X, y = pudata.gen_gaussians(100_000, 2, 4.0, 1.0, seed=3)
    mc_error = np.mean((X[:, 0] > 0) != (y == 0))
    se = np.sqrt(closed * (1 - closed) / len(y))
    assert abs(mc_error - closed) < 4 * se


@pytest.mark.parametrize("args", [(0, 2, 4, 1), (5, 0, 4, 1), (5, 2, 4, 0), (5, 2, -1, 1)])
def test_gaussians_invalid(args):
    with pytest.raises(ValueError):
        pudata.gen_gaussians(*args, seed=0)


def test_moons_noise_zero_on_unit_arcs():
    X, y = pudata.gen_two_moons(300, 0.0, seed=0)
    r0 = np.hypot(X[y == 0, 0], X[y == 0, 1])
    r1 = np.hypot(X[y == 1, 0] - 1.0, X[y == 1, 1] - 0.5)
    np.testing.assert_allclose(r0, 1.0, atol=1e-9)
    np.testing.assert_allclose(r1, 1.0, atol=1e-9)
    assert np.all(X[y == 0, 1] >= 0) and np.all(X[y == 1, 1] <= 0.5)


def test_moons_same_seed_identical_and_seeds_differ():
    a, _ = pudata.gen_two_moons(40, 0.2, seed=5)
    b, _ = pudata.gen_two_moons(40, 0.2, seed=5)
    c, _ = pudata.gen_two_moons(40, 0.2, seed=6)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_moons_one_nearest_neighbor_oracle():
    Xtr, ytr = pudata.gen_two_moons(500, 0.1, seed=10)
    Xte, yte = pudata.gen_two_moons(500, 0.1, seed=11)
    d2 = ((Xte[:, None, :] - Xtr[None, :, :]) ** 2).sum(axis=2)
    pred = ytr[np.argmin(d2, axis=1)]
    assert np.mean(pred == yte) >= 0.95


def _pool(n=100):
    return pudata.gen_gaussians(n, 2, 4.0, 1.0, seed=0)


def test_pu_split_prior_zero_gives_all_negative_u():
    ds = pu_split(*_pool(), n_p=10, n_u=50, pi_p=0.0, seed=0)
    assert np.all(ds.truth[~ds.observed_p] == 1)
    assert np.all(ds.truth[ds.observed_p] == 0)


def test_pu_split_rounding_and_audit():
    ds = pu_split(*_pool(), n_p=5, n_u=10, pi_p=0.4, seed=1)
    assert int(np.sum(ds.truth[~ds.observed_p] == 0)) == 4
    audit = ds.audit()
    assert audit == {"n_p": 5, "n_u": 10, "positives_in_u": 4,
                     "expected_positives_in_u": 4, "p_all_positive": True}
    np.testing.assert_array_equal(ds.pu_labels()[:5], 0)
    np.testing.assert_array_equal(ds.pu_labels()[5:], -1)


def test_pu_split_draws_without_replacement():
    X, y = _pool(60)
    ds = pu_split(X, y, n_p=20, n_u=80, pi_p=0.5, seed=2)
    rows = {tuple(r) for r in ds.X}
    assert len(rows) == 100


def test_pu_split_pool_too_small_names_counts():
    with pytest.raises(ValueError, match="need 60 positives and 20 negatives"):
        pu_split(*_pool(50), n_p=40, n_u=40, pi_p=0.5, seed=0)


def test_pu_split_invalid_prior():
    with pytest.raises(ValueError):
        pu_split(*_pool(), n_p=5, n_u=10, pi_p=1.0, seed=0)


def test_augment_identity(rng):
    X = rng.standard_normal((5, 3))
    out = augment(X, AugConfig(0.0, 0.0), rng)
    np.testing.assert_array_equal(out, X)
    assert out is not X


def test_augment_monte_carlo_mean(rng):
    x = np.array([1.5, -2.0, 0.25])
    sigma = 0.3
    draws = augment(np.tile(x, (10_000, 1)), AugConfig(sigma, 0.0), rng)
    assert np.all(np.abs(draws.mean(axis=0) - x) <= 3 * sigma / 100)


def test_augment_two_draws_differ(rng):
    X = rng.standard_normal((4, 3))
    cfg = AugConfig(0.1, 0.1)
    assert not np.array_equal(augment(X, cfg, rng), augment(X, cfg, rng))


def test_augment_dropout_rate(rng):
    out = augment(np.ones((20_000, 2)), AugConfig(0.0, 0.25), rng)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert abs(np.mean(out == 0.0) - 0.25) < 0.01


def test_aug_config_invalid():
    with pytest.raises(ValueError):
        AugConfig(-0.1, 0.0)
    with pytest.raises(ValueError):
        AugConfig(0.1, 1.0)


def test_pair_sets_single_sample():
    np.testing.assert_array_equal(pair_sets(np.array([1])), [[True]])


def test_pair_sets_label_mode():
    M = pair_sets(np.array([0, 1, 0, 1]))
    expected = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=bool)
    np.testing.assert_array_equal(M, expected)


def test_pair_sets_hard_similarity_equals_label_mode(rng):
    labels = rng.integers(0, 2, 12)
    M = pair_sets(labels, "similarity", f_neg=labels.astype(float), sim_threshold=0.5)
    np.testing.assert_array_equal(M, pair_sets(labels))


def test_pair_sets_similarity_brute_force():
    f = np.array([0.9, 0.1, 0.5, 0.95])
    expected = np.zeros((4, 4), dtype=bool)
    for i, j in itertools.product(range(4), repeat=2):
        agreement = f[i] * f[j] + (1 - f[i]) * (1 - f[j])
        expected[i, j] = i == j or agreement >= 0.2
    M = pair_sets(np.zeros(4, dtype=int), "similarity", f_neg=f, sim_threshold=0.2)
    np.testing.assert_array_equal(M, expected)
    # 0.9 vs 0.1 gives 0.18 and 0.1 vs 0.95 gives 0.14: both excluded
    assert not M[0, 1] and not M[1, 3] and M[0, 2]


def test_pair_sets_unknown_mode():
    with pytest.raises(ValueError):
        pair_sets(np.array([0, 1]), mode="cosine")


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1))
def test_pair_sets_reflexive_and_symmetric(f, threshold):
    f = np.array(f)
    M = pair_sets(np.zeros(len(f), dtype=int), "similarity", f_neg=f, sim_threshold=threshold)
    assert np.all(np.diag(M))
    np.testing.assert_array_equal(M, M.T)


def test_pairing_labels_force_positive():
    probs = np.array([[0.2, 0.8], [0.9, 0.1], [0.3, 0.7]])
    labels = pudata.pairing_labels(np.array([True, False, False]), probs)
    np.testing.assert_array_equal(labels, [0, 0, 1])


def test_dataset_round_trip(tmp_path):
    ds = pu_split(*_pool(), n_p=7, n_u=30, pi_p=0.3, seed=4)
    path = pudata.write_dataset(ds, tmp_path / "d.csv")
    back = pudata.read_dataset(path)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.observed_p, ds.observed_p)
    np.testing.assert_array_equal(back.truth, ds.truth)
    np.testing.assert_array_equal(back.ids, ds.ids)
    assert (back.pi_p, back.seed) == (ds.pi_p, ds.seed)


def test_dataset_without_truth_hides_labels(tmp_path):
    ds = pu_split(*_pool(), n_p=7, n_u=30, pi_p=0.3, seed=4)
    path = pudata.write_dataset(ds, tmp_path / "d.csv", include_truth=False)
    assert "truth" not in open(path).read().splitlines()[1]
    back = pudata.read_dataset(path)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.truth, -1)
    assert back.audit()["positives_in_u"] is None


def test_read_dataset_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="not an ncpu-dataset"):
        pudata.read_dataset(path)
