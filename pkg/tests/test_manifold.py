import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_point
from fennet.errors import DegenerateCoreError, DimensionError
from fennet.manifold import (
    TangentVector,
    TuckerPoint,
    ambient,
    evaluate,
    fix_signs,
    gram_inverse,
    load_point,
    project_tangent,
    reconstruction_error,
    retract,
    save_point,
    shosvd,
    tangent_inner,
    transport,
    zero_tangent,
)
from fennet.tensor import fnorm, inner, matricize, mode_product


def literal_value(P):
    """Reference evaluation through generic mode products."""
    X = mode_product(P.core, 1, P.phi)
    X = mode_product(X, 2, P.phi)
    return mode_product(X, 3, P.G)


def random_tangent(P, rng):
    return project_tangent(P, rng.standard_normal(P.shape))


# -- points ---------------------------------------------------------------

def test_point_rejects_non_orthonormal_factor(rng):
    B = np.ones((1, 1, 1, 1))
    with pytest.raises(ValueError):
        TuckerPoint(B, np.array([[2.0], [0.0]]), np.array([[1.0]]))
    with pytest.raises(DimensionError):
        TuckerPoint(np.ones((2, 2, 1, 1)), np.array([[1.0], [0.0]]), np.array([[1.0]]))


def test_point_is_immutable(small_point):
    with pytest.raises(ValueError):
        small_point.core[0, 0, 0, 0] = 1.0


def test_evaluate_examples(small_point, rng):
    Z = TuckerPoint(np.zeros_like(small_point.core), small_point.phi, small_point.G)
    assert not evaluate(Z).any()
    B = rng.standard_normal((3, 3, 4, 2))
    np.testing.assert_allclose(evaluate(TuckerPoint(B, np.eye(3), np.eye(4))), B, atol=0)
    P = random_point(6, 3, 7, 4, 3, seed=3)
    assert fnorm(evaluate(P)) == pytest.approx(fnorm(P.core), rel=1e-10)
    np.testing.assert_allclose(evaluate(P), literal_value(P), atol=1e-12)


# -- shosvd ---------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_shosvd_reconstructs_manifold_points(seed):
    P = random_point(6, 2, 7, 3, 2, seed=seed)
    X = evaluate(P)
    Q = shosvd(X, 2, 3)
    assert fnorm(evaluate(Q) - X) <= 1e-10 * fnorm(X)


def test_shosvd_zero_tensor():
    Q = shosvd(np.zeros((3, 3, 4, 2)), 2, 2)
    assert not Q.core.any()
    assert not evaluate(Q).any()


def test_shosvd_symmetric_input_uses_mode1_vectors(rng):
    T = rng.standard_normal((5, 5, 6, 2))
    T = T + T.transpose(1, 0, 2, 3)
    Q = shosvd(T, 3, 4)
    U = fix_signs(np.linalg.svd(matricize(T, 1), full_matrices=False)[0][:, :3])
    np.testing.assert_allclose(Q.phi, U, atol=1e-10)


def test_shosvd_is_bit_deterministic(rng):
    T = rng.standard_normal((5, 5, 6, 2))
    a, b = shosvd(T, 3, 4), shosvd(T.copy(), 3, 4)
    assert a.phi.tobytes() == b.phi.tobytes() and a.core.tobytes() == b.core.tobytes()


def test_sign_convention():
    U = fix_signs(np.array([[0.6, 0.5], [-0.8, -0.5]]))
    # largest entry of column 0 is -0.8 -> flipped; column 1 ties -> first entry decides
    np.testing.assert_array_equal(U, [[-0.6, 0.5], [0.8, -0.5]])


def test_reconstruction_error_monotone_in_ranks(rng):
    T = rng.standard_normal((5, 5, 6, 2))
    by_s = [reconstruction_error(T, s, 4) for s in range(1, 6)]
    by_K = [reconstruction_error(T, 3, K) for K in range(1, 7)]
    assert all(b <= a + 1e-10 for a, b in zip(by_s, by_s[1:]))
    assert all(b <= a + 1e-10 for a, b in zip(by_K, by_K[1:]))


def test_shosvd_rank_errors():
    with pytest.raises(DimensionError):
        shosvd(np.zeros((3, 3, 4, 1)), 4, 2)
    with pytest.raises(DimensionError):
        shosvd(np.zeros((3, 3, 4, 1)), 2, 5)
    with pytest.raises(DimensionError):
        shosvd(np.zeros((3, 4, 4, 1)), 2, 2)


# -- tangent projection ---------------------------------------------------

@pytest.mark.parametrize("coupled", [True, False])
def test_projection_idempotent_and_side_conditions(small_point, rng, coupled):
    P = small_point
    xi = project_tangent(P, rng.standard_normal(P.shape), coupled=coupled)
    assert xi.side_condition_defect <= 1e-10
    again = project_tangent(P, ambient(xi), coupled=coupled)
    assert fnorm(ambient(again) - ambient(xi)) <= 1e-10 * fnorm(ambient(xi))
    for a, b in ((again.core, xi.core), (again.phi1, xi.phi1), (again.phi2, xi.phi2), (again.G, xi.G)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_projection_is_orthogonal(rng):
    P = random_point(5, 2, 6, 3, 2, seed=11)
    A = rng.standard_normal(P.shape)
    xi = project_tangent(P, A)
    residual = A - ambient(xi)
    assert fnorm(ambient(xi)) <= fnorm(A)
    scale = fnorm(A)
    for _ in range(20):
        eta = random_tangent(P, rng)
        assert abs(inner(residual, ambient(eta))) <= 1e-9 * scale * fnorm(ambient(eta))


def test_projection_self_adjoint(small_point, rng):
    P = small_point
    A, B = rng.standard_normal(P.shape), rng.standard_normal(P.shape)
    lhs = inner(ambient(project_tangent(P, A)), B)
    rhs = inner(A, ambient(project_tangent(P, B)))
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_projection_identity_when_manifold_fills_space(rng):
    B = rng.standard_normal((3, 3, 4, 2))
    phi = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    G = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    P = TuckerPoint(B, phi, G)
    A = rng.standard_normal(P.shape)
    np.testing.assert_allclose(ambient(project_tangent(P, A)), A, atol=1e-10)


def test_point_is_tangent_at_itself(small_point):
    xi = project_tangent(small_point, evaluate(small_point))
    np.testing.assert_allclose(ambient(xi), evaluate(small_point), atol=1e-10)
    np.testing.assert_allclose(xi.core, small_point.core, atol=1e-12)


def test_ambient_norm_splits_into_terms(small_point, rng):
    xi = random_tangent(small_point, rng)
    P = small_point
    terms = [
        TangentVector(xi.core, 0 * xi.phi1, 0 * xi.phi2, 0 * xi.G, P),
        TangentVector(0 * xi.core, xi.phi1, 0 * xi.phi2, 0 * xi.G, P),
        TangentVector(0 * xi.core, 0 * xi.phi1, xi.phi2, 0 * xi.G, P),
        TangentVector(0 * xi.core, 0 * xi.phi1, 0 * xi.phi2, xi.G, P),
    ]
    total = sum(fnorm(ambient(t)) ** 2 for t in terms)
    assert fnorm(ambient(xi)) ** 2 == pytest.approx(total, rel=1e-10)
    assert not ambient(zero_tangent(P)).any()


def test_tangent_inner_matches_ambient(small_point, rng):
    a, b = random_tangent(small_point, rng), random_tangent(small_point, rng)
    assert tangent_inner(a, b) == pytest.approx(inner(ambient(a), ambient(b)), rel=1e-10)


def test_tangent_arithmetic(small_point, rng):
    a, b = random_tangent(small_point, rng), random_tangent(small_point, rng)
    np.testing.assert_allclose(ambient(a + 2.0 * b), ambient(a) + 2 * ambient(b), atol=1e-12)
    np.testing.assert_allclose(ambient(a - b), ambient(a) - ambient(b), atol=1e-12)
    other = random_point(4, 2, 6, 3, 2, seed=99)
    with pytest.raises(ValueError):
        a + zero_tangent(other)


def test_degenerate_core_detected():
    B = np.zeros((2, 2, 1, 1))
    B[0, 0, 0, 0] = 1.0  # mode-1 unfolding has rank 1 < s
    P = TuckerPoint(B, np.eye(3)[:, :2], np.eye(2)[:, :1])
    with pytest.raises(DegenerateCoreError):
        project_tangent(P, np.ones(P.shape))
    with pytest.raises(DegenerateCoreError):
        gram_inverse(np.zeros((2, 2)))


def test_gram_inverse_regularizes_ill_conditioned():
    M = np.diag([1.0, 1e-13])
    inv = gram_inverse(M)
    assert np.all(np.isfinite(inv))
    assert inv[1, 1] < 1e13


# -- retraction and transport ---------------------------------------------

def test_retract_zero_step(small_point, rng):
    xi = random_tangent(small_point, rng)
    Q = retract(small_point, xi, 0.0)
    X = evaluate(small_point)
    assert fnorm(evaluate(Q) - X) <= 1e-10 * fnorm(X)


def test_retract_core_direction_stays_representable(small_point, rng):
    P = small_point
    core_dir = TangentVector(rng.standard_normal(P.core.shape), np.zeros_like(P.phi),
                             np.zeros_like(P.phi), np.zeros_like(P.G), P)
    gamma = 0.1
    Q = retract(P, core_dir, gamma)
    assert fnorm(evaluate(Q) - (evaluate(P) + gamma * ambient(core_dir))) <= 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2.0, 2.0))
def test_retraction_output_is_a_valid_point(seed, gamma):
    P = random_point(5, 2, 6, 3, 2, seed=seed)
    xi = random_tangent(P, np.random.default_rng(seed))
    Q = retract(P, xi, gamma)
    assert np.linalg.norm(Q.phi.T @ Q.phi - np.eye(2)) <= 1e-10
    assert np.linalg.norm(Q.G.T @ Q.G - np.eye(3)) <= 1e-10


def test_transport(small_point, rng):
    P = small_point
    xi = random_tangent(P, rng)
    same = transport(P, P, xi)
    assert fnorm(ambient(same) - ambient(xi)) <= 1e-10 * fnorm(ambient(xi))
    assert not ambient(transport(P, P, zero_tangent(P))).any()
    Q = retract(P, random_tangent(P, rng), 0.3)
    moved = transport(P, Q, xi)
    assert moved.base is Q
    assert fnorm(ambient(moved)) <= fnorm(ambient(xi)) + 1e-12
    assert moved.side_condition_defect <= 1e-10


def test_point_save_load(tmp_path, small_point):
    save_point(small_point, tmp_path)
    Q = load_point(tmp_path)
    assert Q.core.tobytes() == small_point.core.tobytes()
    assert Q.phi.tobytes() == small_point.phi.tobytes()
    assert Q.G.tobytes() == small_point.G.tobytes()
