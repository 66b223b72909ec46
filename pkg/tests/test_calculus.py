import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from hopflab import analysis as an
from hopflab.calculus import (FDConfig, DegenerateFrameError, check_tangent,
                              connection_coeffs, ddir, geodesic, gradient,
                              laplace_beltrami, levi_civita, parallel_transport,
                              pullback_derivative, rough_laplacian, tangent_basis)
from hopflab.maps import hopf_map, parse_descriptor
from hopflab.quaternion import hopf_field, hopf_frame, random_s2, random_s3

P3 = random_s3(10, seed=11)


def _linear(e):
    return lambda Q: np.asarray(Q) @ e


@pytest.mark.parametrize("cfg", [FDConfig(0.01, 2), FDConfig(0.05, 2)])
def test_fdconfig_validation(cfg):
    assert cfg.halved().h == cfg.h / 2
    with pytest.raises(ValueError):
        FDConfig(0.2, 2)
    with pytest.raises(ValueError):
        FDConfig(0.01, 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-10, 10))
def test_geodesic_stays_on_sphere(seed, t):
    p = random_s3(1, seed=seed)[0]
    v = tangent_basis(p)[0]
    assert abs(np.linalg.norm(geodesic(p, v, t)) - 1) < 1e-14


def test_geodesic_special_times_and_validation():
    p = P3[0]
    v = tangent_basis(p)[1]
    assert np.allclose(geodesic(p, v, 0.0), p)
    assert np.allclose(geodesic(p, v, np.pi / 2), v)
    assert np.allclose(geodesic(p, v, 2 * np.pi), p)
    with pytest.raises(ValueError):
        geodesic(p, 2 * v, 0.1)
    with pytest.raises(ValueError):
        geodesic(p, (v + p) / np.sqrt(2), 0.1)


def test_check_tangent_rejects_normal_component():
    p = P3[0]
    with pytest.raises(ValueError):
        check_tangent(p, p)
    v = tangent_basis(p)[0]
    assert np.allclose(check_tangent(p, v), v)


def test_ddir_examples():
    p = P3[1]
    v = tangent_basis(p)[0]
    assert ddir(lambda Q: np.ones(np.shape(Q)[:-1]), p, v) == 0.0
    e = p.copy()
    assert abs(ddir(_linear(e), p, v)) < 1e-12
    f = hopf_map()
    lam = lambda Q: an.singular_values(f, Q)[0]
    for w in tangent_basis(p):
        assert abs(ddir(lam, p, w)) < 1e-10
    # linear in v
    assert np.isclose(ddir(_linear(P3[2]), p, 3 * v), 3 * ddir(_linear(P3[2]), p, v))


def test_laplacian_of_linear_functions():
    e = np.array([0.3, -0.2, 0.5, 0.7])
    for p in P3:
        assert abs(laplace_beltrami(_linear(e), p) + 3 * p @ e) < 1e-8
    e2 = np.array([0.2, -0.6, 0.3])
    for y in random_s2(10, seed=12):
        assert abs(laplace_beltrami(_linear(e2), y) + 2 * y @ e2) < 1e-8
    assert abs(laplace_beltrami(lambda Q: np.full(np.shape(Q)[:-1], 2.5), P3[0])) < 1e-9


@pytest.mark.parametrize("order", [2, 4])
def test_laplacian_convergence_order(order):
    # quadratic field: Delta(x0 x1) = -8 x0 x1 on S^3
    phi = lambda Q: Q[..., 0] * Q[..., 1]
    p = P3[3]
    exact = -8 * p[0] * p[1]
    h = 0.08
    err = [abs(laplace_beltrami(phi, p, None, FDConfig(s, order)) - exact)
           for s in (h, h / 2)]
    assert np.log2(err[0] / err[1]) >= order - 0.5


def test_laplacian_frame_rotation_invariance():
    phi = lambda Q: np.sin(Q[..., 0]) * Q[..., 2] + Q[..., 3] ** 3
    cfg = FDConfig(1e-3, 4)
    for i, p in enumerate(P3):
        R = Rotation.random(random_state=i).as_matrix()
        frame = R @ tangent_basis(p)
        diff = laplace_beltrami(phi, p, frame, cfg) - laplace_beltrami(phi, p, None, cfg)
        assert abs(diff) < 1e-8


def test_parallel_transport_is_isometric():
    rng = np.random.default_rng(13)
    p = P3[4]
    basis = tangent_basis(p)
    w = basis[0]
    for t in rng.uniform(-3, 3, 10):
        a, b = rng.normal(size=(2, 3)) @ basis
        ta, tb = (parallel_transport(x, p, w, t) for x in (a, b))
        q = geodesic(p, w, t)
        assert abs(ta @ tb - a @ b) < 1e-14
        assert abs(ta @ q) < 1e-14
        # the velocity is transported to the velocity
        assert np.allclose(parallel_transport(w, p, w, t), -np.sin(t) * p + np.cos(t) * w)
    assert np.allclose(parallel_transport(basis[1], p, w, 0.0), basis[1])


def test_levi_civita_of_geodesic_velocity_vanishes():
    p = P3[5]
    w = tangent_basis(p)[1]

    def velocity(Q):
        # unit velocity of the great circle through p and w, as a field near it
        t = np.arctan2(Q @ w, Q @ p)
        return -np.sin(t)[..., None] * p + np.cos(t)[..., None] * w

    assert np.linalg.norm(levi_civita(velocity, p, w)) < 1e-10


def test_hopf_field_derivative_and_connection_sign():
    # nabla_{jp}(ip) = i j p = kp; <nabla_{kp} jp, ip> = <j k p, i p> = 1
    for p in P3:
        a = hopf_frame(p)
        assert np.allclose(levi_civita(hopf_field, p, a[0]), a[1], atol=1e-10)
        omega = connection_coeffs(hopf_frame, p)
        assert abs(omega[0, 2, 1] - 1.0) < 1e-10
        assert np.max(np.abs(omega + np.transpose(omega, (1, 0, 2)))) < 1e-8


def test_connection_consistent_with_hessian_of_hopf():
    # lambda * omega_13(alpha_2) equals b4_32 in the same frame
    f = hopf_map()
    p = P3[6]
    hs = an.hessian(f, p)
    omega = connection_coeffs(hopf_frame, p)
    assert abs(2.0 * omega[0, 2, 1] - hs.b[0, 2, 1]) < 1e-6


def test_parallel_frame_has_no_connection_along_its_direction():
    p = P3[7]
    basis = tangent_basis(p)
    w = basis[0]

    def frame(Q):
        t = np.arctan2(Q @ w, Q @ p)
        return parallel_transport(basis, p, w, t[..., None])

    dA = levi_civita(lambda Q: frame(Q)[..., 1, :], p, w)
    assert np.linalg.norm(dA) < 1e-9


def test_discontinuous_frame_is_rejected():
    def jumpy(Q):
        F = hopf_frame(Q)
        flip = np.where((Q[..., 0] > P3[8][0]), 1.0, -1.0)[..., None, None]
        return F * flip

    with pytest.raises(DegenerateFrameError):
        connection_coeffs(jumpy, P3[8])


def _field(c):
    return lambda Q: c - (Q @ c)[..., None] * Q


def test_levi_civita_metric_compatibility():
    rng = np.random.default_rng(14)
    X, Y = _field(rng.normal(size=4)), _field(rng.normal(size=4))
    for p in P3[:5]:
        v = tangent_basis(p)[2]
        lhs = ddir(lambda Q: np.sum(X(Q) * Y(Q), axis=-1), p, v)
        rhs = levi_civita(X, p, v) @ Y(p) + X(p) @ levi_civita(Y, p, v)
        assert abs(lhs - rhs) < 1e-9


def test_pullback_derivative_compatibility_and_hessian():
    f = parse_descriptor("mobius:1,0.5,0.2i,1")
    rng = np.random.default_rng(15)
    c1, c2 = rng.normal(size=(2, 3))
    W1 = lambda Q: _field(c1)(f.eval(Q))
    W2 = lambda Q: _field(c2)(f.eval(Q))
    p = P3[9]
    basis = tangent_basis(p)
    v = basis[0]
    lhs = ddir(lambda Q: np.sum(W1(Q) * W2(Q), axis=-1), p, v)
    rhs = (pullback_derivative(W1, p, v, f) @ W2(p)
           + W1(p) @ pullback_derivative(W2, p, v, f))
    assert abs(lhs - rhs) < 1e-8
    zero = lambda Q: np.zeros(np.shape(Q)[:-1] + (3,))
    assert np.all(pullback_derivative(zero, p, v, f) == 0)

    # W = df(transported e_j) along the geodesic in direction e_i gives B(e_i, e_j)
    vec, _ = an.hessian_vectors(f, p, basis)
    for i in range(3):
        for j in range(3):
            def W(Q, i=i, j=j):
                t = np.arctan2(Q @ basis[i], Q @ p)
                moved = parallel_transport(basis[j], p, basis[i], t)
                return f.differential(Q, moved)
            got = pullback_derivative(W, p, basis[i], f)
            assert np.allclose(got, vec[i, j], atol=1e-6)


def test_gradient_and_rough_laplacian_of_hopf_field():
    e = np.array([1.0, 2.0, 0.0, -1.0])
    p = P3[0]
    assert np.allclose(gradient(_linear(e), p), e - (p @ e) * p, atol=1e-10)
    z = hopf_field(p)
    assert np.allclose(rough_laplacian(hopf_field, p), -2 * z, atol=1e-7)
