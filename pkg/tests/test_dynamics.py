import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mirrorcbx.core import Objective, OptimizerParams, ResamplingConfig, SchedulerConfig
from mirrorcbx.dynamics import (BatchState, anisotropic_noise, compute_consensus,
                                compute_consensus_partial, compute_polarized_consensus,
                                consensus_weights, discrepancy_update, ess_alpha, initialize_state,
                                isotropic_noise, mirrorcbo_step, multiply_alpha,
                                resample_if_stalled, run)
from mirrorcbx.errors import ConfigurationError, StepError
from mirrorcbx.mirror_maps import (BallMap, ElasticNetMap, NegLogEntropyMap, ProjectionMap,
                                   QuadraticMap, Sphere)
from mirrorcbx.objectives import ackley_objective, half_norm_squared


def square():
    return Objective(lambda X: np.einsum("ij,ij->i", X, X), name="square")


# consensus

def test_consensus_single_particle():
    x = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(compute_consensus(x, [3.0], 7.0), x[0])


def test_consensus_small_alpha_is_mean():
    X = np.random.default_rng(0).standard_normal((30, 3))
    E = np.random.default_rng(1).uniform(0, 100, 30)
    np.testing.assert_allclose(compute_consensus(X, E, 1e-12), X.mean(axis=0), atol=1e-9)


def test_consensus_two_point_oracle():
    m = compute_consensus(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), 1.0)
    expected = math.exp(-1) / (1 + math.exp(-1))
    assert m[0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.26894, abs=1e-5)


@given(arrays(np.float64, (8, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, 8, elements=st.floats(0, 1e3)), st.floats(1e-6, 1e8))
@settings(max_examples=60, deadline=None)
def test_consensus_in_convex_hull(X, E, alpha):
    w = consensus_weights(E, alpha)
    assert abs(w.sum() - 1.0) <= 1e-12
    m = compute_consensus(X, E, alpha)
    assert np.all(m >= X.min(axis=0) - 1e-12) and np.all(m <= X.max(axis=0) + 1e-12)


def test_consensus_large_alpha_is_argmin():
    X = np.random.default_rng(2).standard_normal((50, 4))
    E = np.einsum("ij,ij->i", X, X)
    np.testing.assert_allclose(compute_consensus(X, E, 1e15), X[np.argmin(E)], atol=1e-9)


def test_consensus_weights_no_cancellation():
    # equal energies scaled by a huge alpha must still give exactly equal weights
    w = consensus_weights(np.full(4, 0.5), 1e6)
    assert np.all(w == w[0])


def test_partial_consensus_full_batch():
    X = np.random.default_rng(3).standard_normal((10, 2))
    E = np.arange(10.0)
    m, _ = compute_consensus_partial(X, E, 2.0, BatchState(10), np.random.default_rng(0))
    np.testing.assert_allclose(m, compute_consensus(X, E, 2.0), atol=1e-14)


def test_partial_consensus_single_particle():
    X = np.random.default_rng(4).standard_normal((6, 2))
    m, st_ = compute_consensus_partial(X, np.zeros(6), 1.0, BatchState(1), np.random.default_rng(0))
    assert any(np.array_equal(m, x) for x in X)
    assert len(st_.indices) == 5


def test_partial_consensus_permutation_bookkeeping():
    X = np.arange(10.0)[:, None]
    rng = np.random.default_rng(5)
    state = BatchState(3)
    seen = []
    for _ in range(3):
        m, state = compute_consensus_partial(X, np.zeros(10), 1e-12, state, rng)
        seen.append(state.indices.copy())
    used = set(range(10)) - set(seen[-1].tolist())
    assert len(used) == 9 and len(seen[-1]) == 1


def test_partial_consensus_rejects_big_batch():
    with pytest.raises(ConfigurationError):
        compute_consensus_partial(np.zeros((3, 1)), np.zeros(3), 1.0, BatchState(4),
                                  np.random.default_rng(0))


def test_polarized_wide_kernel_is_global():
    X = np.random.default_rng(6).standard_normal((20, 2))
    E = np.einsum("ij,ij->i", X, X)
    P = compute_polarized_consensus(X, E, 1.0, 1e12)
    np.testing.assert_allclose(P, np.tile(compute_consensus(X, E, 1.0), (20, 1)), atol=1e-6)


def test_polarized_single_particle():
    X = np.array([[0.3, 0.4]])
    np.testing.assert_array_equal(compute_polarized_consensus(X, [1.0], 5.0, 0.2), X)


def test_polarized_clusters_stay_local():
    r = np.random.default_rng(7)
    A = 10 + 0.05 * r.standard_normal((10, 2))
    B = -10 + 0.05 * r.standard_normal((10, 2))
    X = np.vstack([A, B])
    P = compute_polarized_consensus(X, r.uniform(0, 1, 20), 1.0, 0.1)
    for block, rows in ((A, P[:10]), (B, P[10:])):
        assert np.all(rows >= block.min(axis=0) - 1e-12) and np.all(rows <= block.max(axis=0) + 1e-12)


# noise

def test_isotropic_noise_examples():
    np.testing.assert_array_equal(isotropic_noise(np.zeros(3), 0.5, np.ones(3)), np.zeros(3))
    np.testing.assert_allclose(isotropic_noise(np.array([3.0, 4.0]), 1.0, np.array([1.0, 0.0])), [5, 0])
    z = np.array([0.3, -1.2, 2.0])
    r = np.array([1.0, 2.0, -2.0])
    assert np.linalg.norm(isotropic_noise(r, 0.25, z)) == pytest.approx(0.5 * 3.0 * np.linalg.norm(z))


def test_anisotropic_noise_examples():
    np.testing.assert_array_equal(anisotropic_noise(np.array([2.0, 0.0]), 4.0, np.ones(2)), [4.0, 0.0])
    out = anisotropic_noise(np.array([0.0, 1.0]), 1.0, np.array([123.0, 2.0]))
    assert out[0] == 0.0


# schedulers

def test_multiply_alpha_examples():
    assert multiply_alpha(1.0, 1.05, 10.0) == 1.05
    assert multiply_alpha(10.0, 1.05, 10.0) == 10.0
    assert multiply_alpha(3.0, 1.0, 10.0) == 3.0


@given(st.floats(1e-8, 1e10), st.floats(1.0, 2.0))
def test_multiply_alpha_monotone(alpha, eta):
    assert multiply_alpha(alpha, eta, 1e12) >= min(alpha, 1e12)


def test_ess_equal_energies_returns_max():
    assert ess_alpha(np.full(5, 2.0), 0.5, 1e6) == 1e6


def _e(J, a, eta):
    w = np.exp(-a * J)
    return w.sum() ** 2 - eta * J.size * np.sum(w * w)


def test_ess_negative_across_bracket_returns_lower_end():
    J = np.array([0.0, 100.0, 200.0])
    assert _e(J, 1.0, 0.99) < 0 and _e(J, 1e6, 0.99) < 0
    assert ess_alpha(J, 0.99, 1e6, bracket=(1.0, 1e6)) == 1.0


def test_ess_tends_to_lower_end_as_eta_grows():
    J = np.array([0.0, 1.0, 3.0])
    alphas = [ess_alpha(J, 1 - 10.0 ** -k, 1e6, bisection_tol=1e-12) for k in (2, 4, 6, 8)]
    assert all(a > b for a, b in zip(alphas, alphas[1:]))
    assert alphas[-1] < 1e-3


def test_ess_two_particle_grid_oracle():
    J = np.array([0.0, 1.0])
    alpha = ess_alpha(J, 0.5, 1e6, bisection_tol=1e-12)
    grid = np.linspace(0.01, 50, 2_000_001)
    e = (1 + np.exp(-grid)) ** 2 - 0.5 * 2 * (1 + np.exp(-2 * grid))
    root = grid[np.argmin(np.abs(e))]
    assert alpha == pytest.approx(root, abs=1e-4)


def test_discrepancy_update_examples():
    assert discrepancy_update(1.0, 0.25, 1.0, 0.9, 1.1, 0.0, 10.0) == pytest.approx(0.9)
    assert discrepancy_update(1.0, 1.0, 1.0, 0.9, 1.1, 0.0, 10.0) == pytest.approx(1.1)


@given(st.floats(0.01, 1.0), st.floats(0, 10), st.floats(0.1, 2))
def test_discrepancy_update_clamped(lam, J, delta):
    out = discrepancy_update(lam, J, delta, 0.5, 2.0, 0.01, 1.0)
    assert 0.01 <= out <= 1.0


# resampling

def _state(hist, tol, N=4, d=2):
    params = OptimizerParams(tau=0.5, resampling=ResamplingConfig(0.3, 2, 0.5, tol))
    st_ = initialize_state(np.zeros((N, d)), QuadraticMap(), params)
    st_.history = deque(np.asarray(h, dtype=float) for h in hist)
    return st_


def test_resampling_fires_on_constant_history():
    s = _state([[1.0, 1.0]] * 4, 1e-5)
    before = s.dual.copy()
    assert resample_if_stalled(s, mirror_map=QuadraticMap())
    assert not np.array_equal(s.dual, before)
    assert s.sigma_indep == pytest.approx(0.15)
    np.testing.assert_array_equal(s.primal, s.dual)


def test_resampling_quiet_when_moving():
    s = _state([[10e-5 * j, 0.0] for j in range(4)], 1e-5)
    assert not resample_if_stalled(s, mirror_map=QuadraticMap())


def test_resampling_infinite_tol_always_fires():
    s = _state([[float(j), 0.0] for j in range(4)], math.inf)
    assert resample_if_stalled(s, mirror_map=QuadraticMap())


def test_resampling_needs_full_history():
    s = _state([[1.0, 1.0]] * 3, 1e-5)
    assert not resample_if_stalled(s, mirror_map=QuadraticMap())


# steps and runs

MAPS = [QuadraticMap(), ElasticNetMap(0.3), NegLogEntropyMap(), ProjectionMap(Sphere()), BallMap()]


@pytest.mark.parametrize("mmap", MAPS, ids=lambda m: m.kind)
def test_collapsed_ensemble_is_fixed_point(mmap):
    p = {"neg_log_entropy": [0.2, 0.3, 0.5], "projection": [0.0, 0.6, 0.8]}.get(mmap.kind, [0.1, -0.4, 0.3])
    x0 = np.tile(p, (6, 1))
    params = OptimizerParams(tau=0.3, sigma=2.0, alpha=5.0, k_max=3)
    s = initialize_state(x0, mmap, params, seed=1)
    y0 = s.dual.copy()
    for _ in range(3):
        mirrorcbo_step(s, mmap, square())
    np.testing.assert_array_equal(s.dual, y0)
    assert s.k == 3


def test_two_particle_hand_computation():
    params = OptimizerParams(tau=0.1, sigma=0.0, alpha=1e15)
    s = initialize_state(np.array([[0.0], [1.0]]), QuadraticMap(), params)
    mirrorcbo_step(s, QuadraticMap(), square())
    np.testing.assert_allclose(s.primal.ravel(), [0.0, 0.9], atol=1e-15)


@pytest.mark.parametrize("mmap", MAPS[:3], ids=lambda m: m.kind)
def test_primal_matches_inverse_of_dual(mmap):
    rng = np.random.default_rng(8)
    x0 = rng.dirichlet(np.ones(3), 20) if mmap.kind == "neg_log_entropy" else rng.standard_normal((20, 3))
    params = OptimizerParams(tau=0.1, sigma=0.8, alpha=10.0, noise="anisotropic")
    s = initialize_state(x0, mmap, params)
    for _ in range(10):
        mirrorcbo_step(s, mmap, square())
        np.testing.assert_array_equal(s.primal, mmap.inverse(s.dual))


def test_best_energy_non_increasing():
    params = OptimizerParams(tau=0.1, sigma=1.0, alpha=10.0, k_max=50)
    x0 = np.random.default_rng(9).standard_normal((20, 3)) * 3
    s = initialize_state(x0, QuadraticMap(), params)
    tr = run(s, lambda st_, J: mirrorcbo_step(st_, QuadraticMap(), J), ackley_objective(3))
    be = tr.column("best_energy")
    assert np.all(np.diff(be) <= 0)


def test_run_k_max_zero():
    params = OptimizerParams(k_max=0)
    s = initialize_state(np.ones((3, 2)), QuadraticMap(), params)
    tr = run(s, lambda st_, J: mirrorcbo_step(st_, QuadraticMap(), J), square())
    assert tr.rows == [] and tr.n_iterations == 0
    np.testing.assert_array_equal(tr.final_consensus, [1.0, 1.0])


def test_run_deterministic_and_stride():
    def once():
        params = OptimizerParams(tau=0.1, sigma=1.0, alpha=10.0, k_max=25, record_stride=10,
                                 scheduler=SchedulerConfig("multiply", 1.1, 1e5))
        x0 = np.random.default_rng(10).standard_normal((15, 2))
        s = initialize_state(x0, QuadraticMap(), params, seed=4)
        return run(s, lambda st_, J: mirrorcbo_step(st_, QuadraticMap(), J), ackley_objective(2),
                   target=np.zeros(2))
    a, b = once(), once()
    assert a == b
    assert [r["iter"] for r in a.rows] == [0, 10, 20, 24]


def test_nan_objective_reports_particle():
    bad = Objective(lambda X: np.where(X[:, 0] > 0, np.nan, 0.0))
    params = OptimizerParams(k_max=2)
    s = initialize_state(np.array([[-1.0], [1.0]]), QuadraticMap(), params)
    with pytest.raises(StepError) as err:
        run(s, lambda st_, J: mirrorcbo_step(st_, QuadraticMap(), J), bad)
    assert err.value.particle == 1 and err.value.iteration == 0


def test_ball_map_one_step_decay():
    # antithetic ensemble inside the unit ball keeps the consensus at the origin
    r = np.random.default_rng(11)
    half = r.uniform(-0.5, 0.5, (500, 2))
    Y = np.vstack([half, -half])
    mmap = BallMap()
    params = OptimizerParams(tau=0.1, sigma=0.0, alpha=1e6)
    s = initialize_state(None, mmap, params, dual0=Y)
    from mirrorcbx.diagnostics import lyapunov_V
    v0 = lyapunov_V(s.dual, mmap, np.zeros(2))
    mirrorcbo_step(s, mmap, half_norm_squared(2))
    assert np.linalg.norm(s.consensus) <= 1e-3
    assert lyapunov_V(s.dual, mmap, np.zeros(2)) / v0 == pytest.approx(0.81, rel=1e-6)
