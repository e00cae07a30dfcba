import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mirrorcbx.errors import (DegenerateConstraintError, DimensionError, DomainError,
                              ProjectionError)
from mirrorcbx.mirror_maps import (Ball, BallMap, ElasticNetMap, Hyperplane, LinfSphere,
                                   NegLogEntropyMap, PreconditionedMap, ProjectionMap, Quadric,
                                   QuadraticMap, Sphere, Stiefel, bregman_distance, make_constraint,
                                   make_mirror_map, map_forward, map_inverse, project_ball,
                                   project_hyperplane, project_linf_sphere, project_quadric,
                                   project_sphere, project_stiefel, shrink, simplex_inverse)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


# shrink

def test_shrink_formula():
    np.testing.assert_array_equal(shrink([2.0, -0.5, 0.3], 1.0), [1.0, 0.0, 0.0])


def test_shrink_zero_is_identity():
    y = np.array([0.3, -2.0, 0.0])
    np.testing.assert_array_equal(shrink(y, 0.0), y)


def test_shrink_rejects_negative():
    with pytest.raises(DomainError):
        shrink([1.0], -0.1)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_shrink_matches_grid_prox(lam):
    grid = np.linspace(-5.0, 5.0, 100_001)
    ys = np.random.default_rng(0).uniform(-4.5, 4.5, 25)
    for y in ys:
        x_grid = grid[np.argmin(0.5 * (grid - y) ** 2 + lam * np.abs(grid))]
        assert abs(shrink(y, lam) - x_grid) <= 1e-4 + 1e-12


# simplex

def test_simplex_inverse_symmetric():
    np.testing.assert_allclose(simplex_inverse([0.0, 0.0]), [0.5, 0.5])


@given(arrays(np.float64, 5, elements=st.floats(-700, 700)))
@settings(max_examples=50, deadline=None)
def test_simplex_inverse_on_simplex(y):
    x = simplex_inverse(y)
    assert abs(x.sum() - 1.0) < 1e-12
    assert np.all(x >= 0) and np.all(np.isfinite(x))


def test_simplex_inverse_of_log_is_identity():
    x = np.random.default_rng(1).dirichlet(np.ones(6))
    for c in (-3.0, 0.0, 12.5):
        np.testing.assert_allclose(simplex_inverse(np.log(x) + c), x, atol=1e-12)


# projections

def test_hyperplane_projection_formula():
    np.testing.assert_allclose(project_hyperplane(np.zeros(3), [1, 1, 1], 2.0), [2 / 3] * 3)


def test_hyperplane_projection_degenerate():
    with pytest.raises(DegenerateConstraintError):
        project_hyperplane(np.ones(2), [0.0, 0.0], 1.0)


def test_sphere_projection_examples():
    np.testing.assert_allclose(project_sphere([3.0, 4.0]), [0.6, 0.8])
    np.testing.assert_array_equal(project_sphere([0.0, 0.0]), [1.0, 0.0])


def test_ball_projection_examples():
    np.testing.assert_array_equal(project_ball([0.5, 0.0]), [0.5, 0.0])
    np.testing.assert_array_equal(project_ball([2.0, 0.0]), [1.0, 0.0])


def test_linf_sphere_examples():
    np.testing.assert_array_equal(project_linf_sphere([0.5, 2.0]), [0.5, 1.0])
    np.testing.assert_array_equal(project_linf_sphere([0.2, 0.3]), [0.2, 1.0])
    np.testing.assert_array_equal(project_linf_sphere([0.0, 0.0]), [1.0, 1.0])


def test_linf_sphere_matches_grid_nearest_point():
    t = np.linspace(-1, 1, 20_001)
    boundary = np.concatenate([np.stack([t, np.ones_like(t)], 1), np.stack([t, -np.ones_like(t)], 1),
                               np.stack([np.ones_like(t), t], 1), np.stack([-np.ones_like(t), t], 1)])
    z = np.array([0.2, 0.3])
    best = boundary[np.argmin(np.linalg.norm(boundary - z, axis=1))]
    np.testing.assert_allclose(project_linf_sphere(z), best, atol=1e-4)


def test_stiefel_projection_examples():
    np.testing.assert_allclose(project_stiefel(np.diag([2.0, 3.0])), np.eye(2), atol=1e-15)
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((5, 3)))
    np.testing.assert_allclose(project_stiefel(Q), Q, atol=1e-12)


def test_stiefel_procrustes_optimality():
    r = np.random.default_rng(3)
    X = r.standard_normal((6, 3))
    P = project_stiefel(X)
    np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-10)
    for _ in range(100):
        W, _ = np.linalg.qr(r.standard_normal((6, 3)))
        assert np.linalg.norm(X - P) <= np.linalg.norm(X - W) + 1e-12


def test_stiefel_projection_rank_deficient():
    with pytest.raises(ProjectionError):
        project_stiefel(np.ones((4, 2)))
    with pytest.raises(DimensionError):
        project_stiefel(np.ones((2, 3)))


def test_quadric_sphere_cross_oracle():
    Z = np.random.default_rng(4).standard_normal((100, 4)) * 3
    out = project_quadric(Z, np.eye(4), np.zeros(4), -1.0)
    np.testing.assert_allclose(out, project_sphere(Z), atol=1e-8)


def test_quadric_parabola():
    p = project_quadric(np.array([0.0, 1.0]), np.diag([1.0, 0.0]), np.array([0.0, -1.0]), 0.0)
    np.testing.assert_allclose(np.abs(p), [1 / np.sqrt(2), 0.5], atol=1e-7)
    # brute force along the curve
    s = np.linspace(-2, 2, 400_001)
    d = np.hypot(s, s * s - 1.0)
    assert abs(np.hypot(p[0], p[1] - 1.0) - d.min()) < 1e-8


def test_quadric_fixed_point():
    z = np.array([0.6, 0.8, 0.0])
    np.testing.assert_allclose(project_quadric(z, np.eye(3), np.zeros(3), -1.0), z, atol=1e-8)


def test_quadric_symmetrizes():
    q = Quadric([[1.0, 2.0], [0.0, 1.0]], c_Q=-1.0)
    np.testing.assert_array_equal(q.Q, q.Q.T)


def test_quadric_hyperboloid_residual():
    q = Quadric(np.diag([1.0, 1.0, -1.0]), c_Q=1.0)  # two sheets
    Z = np.random.default_rng(5).standard_normal((50, 3)) * 2
    P = q.project(Z)
    assert np.max(np.abs(q.g(P))) <= 1e-8


CONSTRAINTS = [Hyperplane([1.0, -2.0, 0.5], 0.7), Sphere(), Ball(), LinfSphere(), Stiefel(3, 1),
               Quadric(np.diag([1.0, 2.0, 0.5]), np.array([0.1, 0.0, -0.2]), -1.0)]


@pytest.mark.parametrize("c", CONSTRAINTS, ids=lambda c: type(c).__name__)
@given(vec3)
@settings(max_examples=40, deadline=None)
def test_projection_idempotent(c, z):
    assume(np.linalg.norm(z) > 1e-6)  # the origin is rank deficient for Stiefel
    p = c.project(z[None, :])
    np.testing.assert_allclose(c.project(p), p, atol=1e-10 * (1 + np.abs(p).max()))


def test_stiefel_flatten_is_column_major():
    s = Stiefel(3, 2)
    X = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(s.flatten(X), [0, 2, 4, 1, 3, 5])
    np.testing.assert_array_equal(s.unflatten(s.flatten(X)), X)


def test_make_constraint_unknown():
    with pytest.raises(Exception):
        make_constraint({"kind": "torus"})


# mirror maps

def test_quadratic_inverse_identity():
    y = np.random.default_rng(6).standard_normal((4, 3))
    np.testing.assert_array_equal(map_inverse(QuadraticMap(), y), y)


def test_preconditioned_inverse():
    np.testing.assert_allclose(map_inverse(PreconditionedMap(np.diag([4.0, 2.0])), [4.0, 2.0]), [1, 1])


def test_elastic_net_round_trip():
    m = ElasticNetMap(1.0)
    x = np.array([0.5, -2.0, 0.0])
    np.testing.assert_array_equal(map_forward(m, x), [1.5, -3.0, 0.0])
    np.testing.assert_allclose(map_inverse(m, map_forward(m, x)), x)


def test_neg_log_entropy_round_trip():
    m = NegLogEntropyMap()
    x = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(m.inverse(m.forward(x)), x, atol=1e-12)
    with pytest.raises(DomainError):
        m.forward(np.array([0.5, 0.6]))


def test_projection_map_forward_off_set():
    m = ProjectionMap(Sphere())
    with pytest.raises(DomainError):
        m.forward(np.array([2.0, 0.0]))
    np.testing.assert_array_equal(m.forward(np.array([0.0, 1.0])), [0.0, 1.0])


@pytest.mark.parametrize("spec", [
    {"kind": "quadratic"}, {"kind": "preconditioned", "H": [[2.0, 0.0], [0.0, 1.0]]},
    {"kind": "elastic_net", "lam": 0.5}, {"kind": "neg_log_entropy"}, {"kind": "ball"},
    {"kind": "projection", "set": {"kind": "sphere"}},
])
def test_inverse_forward_round_trip(spec):
    m = make_mirror_map(spec)
    x = np.array([0.6, 0.8]) if spec["kind"] in ("projection", "ball") else np.array([0.25, 0.75])
    np.testing.assert_allclose(m.inverse(m.forward(x)), x, atol=1e-10)


@pytest.mark.parametrize("m", [ElasticNetMap(0.7), NegLogEntropyMap()], ids=["elastic", "simplex"])
def test_inverse_is_nonexpansive(m):
    r = np.random.default_rng(7)
    Y, Yh = r.standard_normal((500, 4)) * 3, r.standard_normal((500, 4)) * 3
    lhs = np.linalg.norm(m.inverse(Y) - m.inverse(Yh), axis=1)
    assert np.all(lhs <= (1 + 1e-9) * np.linalg.norm(Y - Yh, axis=1))


# Bregman distances

def test_bregman_quadratic_value():
    assert bregman_distance(QuadraticMap(), np.array([1.0, 0.0]), np.array([3.0, 0.0])) == 2.0


def test_bregman_ball_closed_form():
    m = BallMap()
    assert bregman_distance(m, np.zeros(2), np.array([0.5, 0.0])) == pytest.approx(0.125, abs=1e-15)
    assert bregman_distance(m, np.zeros(2), np.array([2.0, 0.0])) == pytest.approx(1.5, abs=1e-15)


def test_bregman_infinite_off_domain():
    m = ProjectionMap(Sphere())
    assert bregman_distance(m, np.array([2.0, 0.0]), np.array([1.0, 1.0])) == np.inf


def test_bregman_sandwich_quadratic():
    r = np.random.default_rng(8)
    m = QuadraticMap()
    X, Y = r.standard_normal((1000, 4)), r.standard_normal((1000, 4)) * 2
    D = np.array([bregman_distance(m, x, y) for x, y in zip(X, Y)])
    np.testing.assert_allclose(D, 0.5 * np.sum((Y - X) ** 2, axis=1), atol=1e-10)


def test_bregman_sandwich_linear_subspace():
    r = np.random.default_rng(9)
    normal = np.array([1.0, 2.0, -1.0, 0.5])
    m = ProjectionMap(Hyperplane(normal, 0.0))
    X = project_hyperplane(r.standard_normal((1000, 4)), normal, 0.0)
    Y = r.standard_normal((1000, 4)) * 2
    D = np.array([bregman_distance(m, x, y) for x, y in zip(X, Y)])
    P = m.inverse(Y)
    np.testing.assert_allclose(D, 0.5 * np.sum((P - X) ** 2, axis=1), atol=1e-10)


@given(vec3, vec3)
@settings(max_examples=50, deadline=None)
def test_bregman_nonnegative(x, y):
    x = simplex_inverse(x)
    assert bregman_distance(NegLogEntropyMap(), x, y) >= 0.0
    assert bregman_distance(ElasticNetMap(1.0), x, y) >= 0.0
