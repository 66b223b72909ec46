"""Quaternion algebra on plain 4-vectors and the Hopf map S^3 -> S^2.

Quaternions are stored as ``(..., 4)`` float arrays in the basis ``1, i, j, k``.
Every function broadcasts over leading axes.  The 2-sphere is identified with
the unit sphere of ``span{1, j, k}``, so points of S^2 are 3-vectors holding the
``1``, ``j`` and ``k`` components.
"""

import numpy as np

UNIT_TOL = 1e-12

ONE = np.array([1.0, 0.0, 0.0, 0.0])
I = np.array([0.0, 1.0, 0.0, 0.0])
J = np.array([0.0, 0.0, 1.0, 0.0])
K = np.array([0.0, 0.0, 0.0, 1.0])


def qmul(a, b):
    """Hamilton product with i^2 = j^2 = k^2 = ijk = -1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    b0, b1, b2, b3 = np.moveaxis(b, -1, 0)
    return np.stack([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ], axis=-1)


def conj(a):
    a = np.array(a, dtype=float)
    a[..., 1:] *= -1.0
    return a


def tilde(a):
    """Anti-automorphism fixing 1, j, k and sending i to -i."""
    a = np.array(a, dtype=float)
    a[..., 1] *= -1.0
    return a


def qnorm(a):
    return np.linalg.norm(np.asarray(a, dtype=float), axis=-1)


def left_mul(unit, x):
    """Complex structures J_1, J_2, J_3 are left multiplication by i, j, k."""
    return qmul(np.broadcast_to(unit, np.shape(x)), x)


def as_s3_point(q, tol=UNIT_TOL):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ValueError(f"S^3 points are 4-vectors, got shape {q.shape}")
    err = np.max(np.abs(qnorm(q) - 1.0))
    if err > tol:
        raise ValueError(f"point is off the unit 3-sphere by {err:.3e}")
    return q


def as_s2_point(y, tol=UNIT_TOL):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != 3:
        raise ValueError(f"S^2 points are 3-vectors, got shape {y.shape}")
    err = np.max(np.abs(np.linalg.norm(y, axis=-1) - 1.0))
    if err > tol:
        raise ValueError(f"point is off the unit 2-sphere by {err:.3e}")
    return y


def _jk_part(q):
    # components of a quaternion in span{1, j, k}
    return q[..., [0, 2, 3]]


def hopf_pi(p):
    """Hopf map pi(p) = tilde(p) p, returned as a point of the unit S^2.

    The closed form is ``(x0^2 + x1^2 - x2^2 - x3^2, 2(x0 x2 + x1 x3),
    2(x0 x3 - x1 x2))``.  The map has singular values (2, 2, 0); the Riemannian
    submersion onto the sphere of radius 1/2 is ``0.5 * hopf_pi``.
    """
    p = np.asarray(p, dtype=float)
    x0, x1, x2, x3 = np.moveaxis(p, -1, 0)
    return np.stack([
        x0 * x0 + x1 * x1 - x2 * x2 - x3 * x3,
        2.0 * (x0 * x2 + x1 * x3),
        2.0 * (x0 * x3 - x1 * x2),
    ], axis=-1)


def hopf_pi_quaternion(p):
    """tilde(p) * p as a full quaternion; its i-component vanishes."""
    p = np.asarray(p, dtype=float)
    return qmul(tilde(p), p)


def hopf_differential(p, v):
    """d(pi)_p(v) = tilde(v) p + tilde(p) v, restricted to span{1, j, k}."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return _jk_part(qmul(tilde(v), p) + qmul(tilde(p), v))


def hopf_frame(p):
    """Global orthonormal frame (j p, k p, i p) of T_p S^3.

    Returns an array of shape ``(..., 3, 4)``; the last vector is the Hopf
    field spanning the kernel of d(pi).
    """
    p = np.asarray(p, dtype=float)
    return np.stack([left_mul(J, p), left_mul(K, p), left_mul(I, p)], axis=-2)


def hopf_field(p):
    """Standard Hopf vector field zeta(p) = i p."""
    return left_mul(I, np.asarray(p, dtype=float))


def random_s3(n, seed=None, rng=None):
    """Uniform sample of S^3 from normalized Gaussian 4-vectors."""
    rng = np.random.default_rng(seed) if rng is None else rng
    x = rng.normal(size=(n, 4))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_s2(n, seed=None, rng=None):
    rng = np.random.default_rng(seed) if rng is None else rng
    x = rng.normal(size=(n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
