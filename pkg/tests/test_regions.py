import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmplan.constraints import FunctionConstraint, LinearConstraint, TaskSpaceConstraint, TsrConstraint, Unconstrained
from cmplan.errors import NumericalError
from cmplan.kinematics import ArmModel
from cmplan.regions import (LOG_D_FLOOR, Codebook, CholeskyDecoder, OptimizerParams, decode, fit_codebook,
                            load_paths, loss_and_gradient, loss_gradient, markov_bound_check, mc_loss,
                            reparam_sample, update_distribution)

INF = math.inf


def book(n, k=1, rng=None, spread=1.0):
    dec = CholeskyDecoder(n)
    rng = rng or np.random.default_rng(0)
    return Codebook(n, rng.normal(size=(k, dec.d)) * spread)


def linear_expected_g(g, A, b):
    """Closed-form E[G] for F = A q - b under N(mu, Sigma)."""
    r = A @ g.mu - b
    return float(r @ r + np.trace(A @ g.cov @ A.T))


def test_latent_layout():
    assert CholeskyDecoder(7).d == 35
    assert CholeskyDecoder(2).d == 5


def test_zero_latent_is_standard_normal():
    g = CholeskyDecoder(3).decode(np.zeros(9))
    assert np.array_equal(g.mu, np.zeros(3))
    assert np.array_equal(g.L, np.eye(3))
    assert np.array_equal(g.D, np.ones(3))
    assert np.allclose(g.cov, np.eye(3))


def test_log_two_gives_doubled_scale():
    dec = CholeskyDecoder(3)
    z = np.random.default_rng(1).normal(size=dec.d)
    z[-3:] = math.log(2.0)
    g = dec.decode(z)
    assert np.allclose(g.D, 2.0)
    assert np.allclose(g.cov, 4.0 * g.L @ g.L.T)


def test_decode_dimension_mismatch():
    with pytest.raises(ValueError):
        CholeskyDecoder(3).decode(np.zeros(8))


def test_decode_always_spd_1000_random():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        dec = CholeskyDecoder(n)
        z = rng.normal(size=dec.d)
        assert np.linalg.eigvalsh(dec.decode(z).cov).min() > 0


def test_decoder_sensitivity_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        dec = CholeskyDecoder(n)
        z = rng.normal(size=dec.d)
        gm, gL, gD = rng.normal(size=n), rng.normal(size=(n, n)), rng.normal(size=n)

        def phi(v):
            g = dec.decode(v)
            return gm @ g.mu + np.sum(np.tril(gL, -1) * g.L) + gD @ g.D

        analytic = dec.pullback(z, gm, gL, gD)
        h = 1e-6
        fd = np.array([(phi(z + h * e) - phi(z - h * e)) / (2 * h) for e in np.eye(dec.d)])
        assert np.max(np.abs(analytic - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_encode_decode_round_trip():
    dec = CholeskyDecoder(4)
    rng = np.random.default_rng(4)
    L = np.tril(rng.normal(size=(4, 4)), -1) + np.eye(4)
    z = dec.encode(rng.normal(size=4), L, rng.uniform(0.1, 2, 4))
    assert np.allclose(dec.encode(*(lambda g: (g.mu, g.L, g.D))(dec.decode(z))), z)


def test_reparam_examples():
    g = CholeskyDecoder(3).decode(np.concatenate([[1.0, 2.0, 3.0], [0.5, -0.2, 0.1], np.log([0.3, 0.4, 0.5])]))
    assert np.array_equal(reparam_sample(g, np.zeros(3)), g.mu)
    diag = CholeskyDecoder(3).decode(np.concatenate([[1.0, 2.0, 3.0], np.zeros(3), np.log([0.3, 0.4, 0.5])]))
    assert np.allclose(reparam_sample(diag, [0, 1, 0]), diag.mu + [0, 0.4, 0])


def test_reparam_covariance_statistical():
    rng = np.random.default_rng(5)
    g = book(4, rng=rng).region(0)
    samples = reparam_sample(g, rng.standard_normal((100_000, 4)))
    assert np.linalg.norm(np.cov(samples.T) - g.cov) <= 0.05 * np.linalg.norm(g.cov)


def test_mc_loss_degenerate_on_manifold():
    c = np.array([0.2, -0.4, 1.0])
    cb = Codebook(3, [CholeskyDecoder(3).encode(c, None, np.full(3, math.exp(-20)))])
    F = LinearConstraint(np.eye(3), c)
    eps = np.random.default_rng(6).standard_normal((256, 3))
    assert mc_loss(cb, cb.latent(0), F, eps) <= 1e-12
    assert np.linalg.norm(loss_gradient(cb, cb.latent(0), F, eps)) <= 1e-6


def test_mc_loss_closed_form_within_three_standard_errors():
    rng = np.random.default_rng(7)
    cb = book(3, rng=rng, spread=0.5)
    c = rng.normal(size=3)
    F = LinearConstraint(np.eye(3), c)
    z = cb.latent(0)
    g = cb.region(0)
    qs = g.sample(rng.standard_normal((10_000, 3)))
    G = F.squared_residual_batch(qs)
    est = G.mean()
    assert mc_loss(cb, z, F, rng.standard_normal((1, 3))) >= 0
    exact = float(np.sum((g.mu - c) ** 2) + np.trace(g.cov))
    assert abs(est - exact) <= 3 * G.std() / math.sqrt(len(G))


def test_mc_loss_single_zero_sample_is_g_at_mean():
    cb = book(3, rng=np.random.default_rng(8))
    F = LinearConstraint([[1.0, 2.0, -1.0]], [0.3])
    assert mc_loss(cb, cb.latent(0), F, np.zeros((1, 3))) == pytest.approx(F.squared_residual(cb.region(0).mu))


def test_mc_loss_rejects_empty_batch():
    cb = book(2)
    with pytest.raises(ValueError):
        mc_loss(cb, cb.latent(0), Unconstrained(2), np.zeros((0, 2)))


def test_gradient_mu_block_hand_chain_rule():
    rng = np.random.default_rng(9)
    cb = book(4, rng=rng, spread=0.5)
    A, b = rng.normal(size=(2, 4)), rng.normal(size=2)
    F = LinearConstraint(A, b)
    eps = rng.standard_normal((32, 4))
    g = cb.region(0)
    qs = g.sample(eps)
    want = (2 / 32) * sum(A.T @ (A @ q - b) for q in qs)
    assert np.allclose(loss_gradient(cb, cb.latent(0), F, eps)[:4], want, atol=1e-12)


def _fd_gradient(cb, z, F, eps, h=1e-6):
    return np.array([(mc_loss(cb, z + h * e, F, eps) - mc_loss(cb, z - h * e, F, eps)) / (2 * h)
                     for e in np.eye(cb.d)])


def test_gradient_matches_finite_differences_tsr(seven_link):
    rng = np.random.default_rng(10)
    F = TaskSpaceConstraint(seven_link, TsrConstraint(bounds=[[0.6, 0.6], [-INF, INF], [0.3, 0.3]]))
    dec = CholeskyDecoder(7)
    z = dec.encode(rng.uniform(-1, 1, 7), np.tril(rng.normal(size=(7, 7)) * 0.2, -1) + np.eye(7),
                   rng.uniform(0.05, 0.3, 7))
    cb = Codebook(7, [z])
    eps = rng.standard_normal((16, 7))
    analytic = loss_gradient(cb, z, F, eps)
    fd = _fd_gradient(cb, z, F, eps)
    assert np.linalg.norm(analytic - fd) <= 1e-3 * np.linalg.norm(fd)


def test_update_pulls_linear_region_to_target():
    rng = np.random.default_rng(11)
    c = np.array([0.5, -0.5, 0.2])
    dec = CholeskyDecoder(3)
    z0 = dec.encode(c + [0.6, -0.4, 0.3], None, np.full(3, 0.4))
    cb = Codebook(3, [z0])
    F = LinearConstraint(np.eye(3), c)
    z1 = update_distribution(cb, z0, F, OptimizerParams(), rng=rng)
    g0, g1 = dec.decode(z0), dec.decode(z1)
    assert np.linalg.norm(g1.mu - c) <= 0.05
    assert np.trace(g1.cov) < np.trace(g0.cov)
    assert linear_expected_g(g1, np.eye(3), c) < linear_expected_g(g0, np.eye(3), c)


def test_update_stationary_point_one_iteration():
    c = np.array([0.1, 0.2])
    z = CholeskyDecoder(2).encode(c, None, np.full(2, math.exp(-20)))
    cb = Codebook(2, [z])
    hist = []
    out = update_distribution(cb, z, LinearConstraint(np.eye(2), c), OptimizerParams(), history=hist)
    assert len(hist) == 1
    assert np.linalg.norm(out - z) < OptimizerParams().delta_stop


def test_update_unconstrained_returns_unchanged():
    cb = book(3)
    z = cb.latent(0)
    assert np.allclose(update_distribution(cb, z, Unconstrained(3)), z)


def test_update_near_manifold_does_not_degrade():
    rng = np.random.default_rng(12)
    A, b = np.array([[1.0, 1.0, 1.0]]), np.array([0.3])
    mu = np.array([0.1, 0.1, 0.1])
    dec = CholeskyDecoder(3)
    z0 = dec.encode(mu, None, np.full(3, 0.01))
    z1 = update_distribution(Codebook(3, [z0]), z0, LinearConstraint(A, b), OptimizerParams(), rng=rng)
    assert linear_expected_g(dec.decode(z1), A, b) <= 1.1 * linear_expected_g(dec.decode(z0), A, b)


def test_update_reduces_closed_form_on_linear_family():
    rng = np.random.default_rng(13)
    improved = 0
    for trial in range(100):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, n + 1))
        A, b = rng.normal(size=(k, n)), rng.normal(size=k)
        dec = CholeskyDecoder(n)
        z0 = dec.encode(rng.normal(size=n), np.tril(rng.normal(size=(n, n)) * 0.3, -1) + np.eye(n),
                        rng.uniform(0.05, 0.5, n))
        z1 = update_distribution(Codebook(n, [z0]), z0, LinearConstraint(A, b),
                                 OptimizerParams(eta=0.01), rng=np.random.default_rng(trial))
        improved += linear_expected_g(dec.decode(z1), A, b) < linear_expected_g(dec.decode(z0), A, b)
    assert improved >= 95


def test_update_raises_on_nonfinite():
    F = FunctionConstraint(2, 1, lambda q: [np.inf], jac=lambda q: [[0.0, 0.0]])
    cb = book(2)
    with pytest.raises(NumericalError):
        update_distribution(cb, cb.latent(0), F)


def test_update_does_not_mutate_codebook():
    cb = book(3, k=2)
    before = cb.latents.copy()
    update_distribution(cb, cb.latent(1), LinearConstraint(np.eye(3), np.zeros(3)))
    assert np.array_equal(cb.latents, before)


def test_markov_bound_any_region():
    rng = np.random.default_rng(14)
    arm = ArmModel.uniform(4, 0.5)
    F = TaskSpaceConstraint(arm, TsrConstraint(bounds=[[1.0, 1.0], [-INF, INF], [0, 0]]))
    for _ in range(5):
        cb = book(4, rng=rng, spread=0.5)
        for delta in (0.01, 0.1, 1.0):
            chk = markov_bound_check(cb, cb.latent(0), F, delta, 100_000, rng)
            assert chk.holds()


def test_markov_zero_constraint():
    cb = book(3)
    chk = markov_bound_check(cb, cb.latent(0), Unconstrained(3), 0.1, 1000, np.random.default_rng(0))
    assert chk.lhs == 0.0 and chk.rhs == 0.0


def test_markov_huge_threshold():
    cb = book(3)
    F = LinearConstraint(np.eye(3), np.zeros(3))
    chk = markov_bound_check(cb, cb.latent(0), F, 1e12, 1000, np.random.default_rng(0))
    assert chk.lhs == 0.0


def test_markov_rejects_nonpositive_threshold():
    cb = book(2)
    with pytest.raises(ValueError):
        markov_bound_check(cb, cb.latent(0), Unconstrained(2), 0.0, 10)


def lloyd_oracle(data, centroids, max_iter=1000):
    """Plain Lloyd iteration from given centroids until assignments stop changing."""
    labels = None
    for _ in range(max_iter):
        d = ((data[:, None, :] - centroids[None]) ** 2).sum(-1)
        new = d.argmin(1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = np.array([data[labels == i].mean(0) for i in range(len(centroids))])
    return centroids


def test_fit_single_repeated_point():
    p = [0.3, -0.2]
    cb = fit_codebook([[p] * 10], 1)
    g = cb.region(0)
    assert np.allclose(g.mu, p)
    assert np.allclose(g.D, 0.05)
    assert np.array_equal(g.L, np.eye(2))


def test_fit_two_clusters_matches_lloyd_oracle():
    rng = np.random.default_rng(15)
    a = rng.normal([0, 0, 0], 0.1, (60, 3))
    b = rng.normal([5, 5, 5], 0.1, (40, 3))
    cb = fit_codebook([a, b], 2, seed=3)
    oracle = lloyd_oracle(np.vstack([a, b]), np.array([[1.0, 1.0, 1.0], [4.0, 4.0, 4.0]]))
    got = cb.means()[np.argsort(cb.means()[:, 0])]
    assert np.max(np.abs(got - oracle)) <= 1e-6


def _min_mahalanobis(cb, data):
    return np.array([[np.sqrt((np.linalg.solve(cb.region(i).scale_tril, x - cb.region(i).mu) ** 2).sum())
                      for i in range(cb.size)] for x in data]).min(axis=1)


def test_fit_regions_cover_tight_clusters():
    rng = np.random.default_rng(16)
    centres = rng.uniform(-2, 2, (6, 3))
    paths = [c + rng.normal(0, 0.02, (30, 3)) for c in centres]
    cb = fit_codebook(paths, 6, seed=0)
    assert np.all(_min_mahalanobis(cb, np.vstack(paths)) <= 3.0)


@pytest.mark.xfail(strict=True, reason="diagonal per-cluster std regions leave k-means tails uncovered; see decisions ledger")
def test_fit_regions_cover_path_dataset():
    rng = np.random.default_rng(16)
    paths = [np.cumsum(rng.normal(0, 0.1, (40, 4)), axis=0) for _ in range(5)]
    cb = fit_codebook(paths, 8, seed=0)
    assert np.all(_min_mahalanobis(cb, np.vstack(paths)) <= 3.0)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_codebook([[[0.0, 0.0]] * 3], 2)
    with pytest.raises(ValueError):
        fit_codebook([], 1)


def test_fit_deterministic_per_seed():
    rng = np.random.default_rng(17)
    paths = [rng.normal(size=(50, 3))]
    assert np.array_equal(fit_codebook(paths, 5, seed=1).latents, fit_codebook(paths, 5, seed=1).latents)


def test_codebook_json_round_trip(tmp_path):
    cb = book(3, k=4)
    cb.save(tmp_path / "cb.json")
    data = json.loads((tmp_path / "cb.json").read_text())
    assert data["n"] == 3 and data["d"] == 9 and len(data["regions"]) == 4
    assert np.array_equal(Codebook.load(tmp_path / "cb.json").latents, cb.latents)
    assert cb.goal_index == 4
    with pytest.raises(IndexError):
        cb.latent(4)


def test_load_paths(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps([[[0, 0], [1, 1]], [[2, 2]]]))
    paths = load_paths(tmp_path / "p.json")
    assert len(paths) == 2 and paths[0].shape == (2, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_log_d_floor_blocks_gradient(seed):
    rng = np.random.default_rng(seed)
    dec = CholeskyDecoder(3)
    z = rng.normal(size=dec.d)
    z[-1] = LOG_D_FLOOR - 1.0
    cb = Codebook(3, [z])
    _, grad = loss_and_gradient(cb, z, LinearConstraint(np.eye(3), np.zeros(3)), rng.standard_normal((8, 3)))
    assert grad[-1] == 0.0
    assert decode(cb, z).D[-1] == pytest.approx(math.exp(LOG_D_FLOOR))
