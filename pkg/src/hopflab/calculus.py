"""Intrinsic calculus on the round spheres S^2 and S^3 by finite differences.

Points are unit vectors in R^{n+1} and tangent vectors are ambient vectors
orthogonal to their base point.  Derivatives are taken along explicit great
circles, so the only discretization is the one-dimensional stencil.

Field handles are callables that accept an array of points of shape
``(..., n+1)`` and return values with the same leading shape.  They must be
side-effect free.  ``vectorize_field`` adapts a pointwise callable.

Sign convention: the Laplace-Beltrami operator is the trace of the Hessian,
so linear functions on S^3 satisfy ``Delta <q, e> = -3 <q, e>``.
"""

from dataclasses import dataclass

import numpy as np

TANGENCY_TOL = 1e-8
UNIT_TOL = 1e-10


class DegenerateFrameError(ValueError):
    """A frame field is not smooth enough near the base point."""


@dataclass(frozen=True)
class FDConfig:
    """Step (radians along a geodesic) and central-difference order."""

    h: float = 5e-3
    order: int = 4
    richardson: bool = False

    def __post_init__(self):
        if not 0.0 < self.h < 0.1:
            raise ValueError(f"step h must lie in (0, 0.1), got {self.h}")
        if self.order not in (2, 4):
            raise ValueError(f"order must be 2 or 4, got {self.order}")

    def halved(self):
        return FDConfig(self.h / 2, self.order, self.richardson)


FIRST = FDConfig(1e-3, 4)
SECOND = FDConfig(5e-3, 4)

_STENCILS = {
    (1, 2): (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    (1, 4): (np.array([-2.0, -1.0, 1.0, 2.0]),
             np.array([1.0, -8.0, 8.0, -1.0]) / 12.0),
    (2, 2): (np.array([-1.0, 0.0, 1.0]), np.array([1.0, -2.0, 1.0])),
    (2, 4): (np.array([-2.0, -1.0, 0.0, 1.0, 2.0]),
             np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0),
}


def stencil(deriv, order):
    return _STENCILS[(deriv, order)]


def vectorize_field(fn):
    """Wrap a pointwise callable so it accepts ``(..., n)`` point arrays."""

    def field(points):
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, points.shape[-1])
        vals = np.array([np.asarray(fn(q), dtype=float) for q in flat])
        return vals.reshape(points.shape[:-1] + vals.shape[1:])

    return field


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def project_tangent(base, v):
    base = np.asarray(base, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - _dot(v, base)[..., None] * base


def check_tangent(base, v, tol=TANGENCY_TOL):
    """Project ``v`` onto the tangent space at ``base``.

    Raises ``ValueError`` when the normal component exceeds ``tol``; that
    means the caller passed a vector attached to the wrong point.
    """
    base = np.asarray(base, dtype=float)
    v = np.asarray(v, dtype=float)
    normal = np.max(np.abs(_dot(v, base)))
    if normal > tol:
        raise ValueError(f"vector is not tangent: normal component {normal:.3e}")
    return project_tangent(base, v)


def _check_unit(x, what):
    err = np.max(np.abs(np.linalg.norm(x, axis=-1) - 1.0))
    if err > UNIT_TOL:
        raise ValueError(f"{what} must have unit norm (off by {err:.3e})")


def tangent_basis(p):
    """Deterministic orthonormal basis of T_p S^n, shape ``(..., n, n+1)``.

    On S^3 this is the global frame (j p, k p, i p).  On S^2 the basis is
    built from the coordinate axis least aligned with p.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] == 4:
        from .quaternion import hopf_frame
        return hopf_frame(p)
    if p.shape[-1] != 3:
        raise ValueError("only S^2 and S^3 are supported")
    axis = np.argmin(np.abs(p), axis=-1)
    ref = np.eye(3)[axis]
    e1 = project_tangent(p, ref)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(p, e1)
    return np.stack([e1, e2], axis=-2)


def geodesic(p, v, t):
    """Great circle ``cos(t) p + sin(t) v`` through p with unit velocity v."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_unit(p, "base point")
    _check_unit(v, "velocity")
    if np.max(np.abs(_dot(p, v))) > TANGENCY_TOL:
        raise ValueError("velocity must be orthogonal to the base point")
    return _geodesic(p, v, t)


def _geodesic(p, v, t):
    t = np.asarray(t, dtype=float)[..., None]
    return np.cos(t) * p + np.sin(t) * v


def parallel_transport(v, p, w, t):
    """Transport v from p along the great circle with unit velocity w.

    The component along w turns with the circle; the rest is constant.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    return _transport(v, p, w, t)


def _transport(v, p, w, t):
    t = np.asarray(t, dtype=float)[..., None]
    a = _dot(v, w)[..., None]
    return v + a * ((np.cos(t) - 1.0) * w - np.sin(t) * p)


def _offsets(cfg, deriv):
    offs, wts = stencil(deriv, cfg.order)
    return offs * cfg.h, wts / cfg.h ** deriv


def _along(phi, p, dirs, cfg, deriv):
    """Derivatives of ``phi`` along geodesics from p with unit velocities dirs.

    ``dirs`` has shape ``(m, n)``; returns shape ``(m,) + value_shape``.
    """
    if cfg.richardson:
        plain = FDConfig(cfg.h, cfg.order)
        coarse = _along(phi, p, dirs, plain, deriv)
        fine = _along(phi, p, dirs, plain.halved(), deriv)
        r = 2.0 ** cfg.order
        return (r * fine - coarse) / (r - 1.0)
    offs, wts = _offsets(cfg, deriv)
    pts = _geodesic(p, dirs[:, None, :], offs[None, :])
    vals = np.asarray(phi(pts), dtype=float)
    return np.einsum("ms...,s->m...", vals, wts)


def ddir(phi, p, v, cfg=FIRST):
    """d/dt phi(geodesic(p, v, t)) at t = 0, with error O(h^order).

    ``v`` need not be unit; the result is linear in v.
    """
    p = np.asarray(p, dtype=float)
    v = check_tangent(p, v)
    speed = np.linalg.norm(v)
    if speed == 0.0:
        return 0.0 * np.asarray(phi(p[None]))[0]
    d = _along(phi, p, (v / speed)[None], cfg, 1)[0]
    return speed * d


def gradient(phi, p, frame=None, cfg=FIRST):
    """Riemannian gradient of a scalar field as an ambient tangent vector."""
    p = np.asarray(p, dtype=float)
    frame = tangent_basis(p) if frame is None else np.asarray(frame, dtype=float)
    d = _along(phi, p, frame, cfg, 1)
    return d @ frame


def second_dir(phi, p, v, cfg=SECOND):
    """(phi o gamma)''(0) along the unit-speed geodesic with velocity v."""
    p = np.asarray(p, dtype=float)
    v = check_tangent(p, v)
    _check_unit(v, "direction")
    return _along(phi, p, v[None], cfg, 2)[0]


def _check_frame(p, frame):
    frame = np.asarray(frame, dtype=float)
    gram = frame @ frame.T
    if np.max(np.abs(gram - np.eye(len(frame)))) > 1e-10:
        raise ValueError("frame is not orthonormal")
    check_tangent(p, frame)
    return frame


def laplace_beltrami(phi, p, frame=None, cfg=SECOND):
    """Sum of second derivatives along geodesics in an orthonormal frame.

    Geodesics have zero acceleration, so each term is a diagonal entry of the
    Hessian and the sum is frame independent up to O(h^order).
    """
    p = np.asarray(p, dtype=float)
    frame = tangent_basis(p) if frame is None else _check_frame(p, frame)
    return np.sum(_along(phi, p, frame, cfg, 2), axis=0)


def levi_civita(X, p, v, cfg=FIRST):
    """Covariant derivative of the tangent field X along v at p."""
    p = np.asarray(p, dtype=float)
    return project_tangent(p, ddir(X, p, v, cfg))


def pullback_derivative(W, p, v, f, cfg=FIRST):
    """Derivative of a section W of f^* TS^2 along v, projected at f(p).

    ``f`` is a callable from S^3 points to S^2 points (or anything with an
    ``eval`` method).
    """
    p = np.asarray(p, dtype=float)
    fp = (f.eval if hasattr(f, "eval") else f)(p)
    return project_tangent(fp, ddir(W, p, v, cfg))


def connection_coeffs(frame_field, p, cfg=FIRST, tol=1e-6):
    """omega[i, j, k] = <nabla_{a_k} a_i, a_j> for a frame field a.

    ``frame_field`` maps points ``(..., 4)`` to frames ``(..., 3, 4)``.  The
    result is antisymmetric in (i, j); a residual above ``tol`` means the
    frame is not smooth at p and raises ``DegenerateFrameError``.
    """
    p = np.asarray(p, dtype=float)
    a = np.asarray(frame_field(p[None]), dtype=float)[0]
    _check_frame(p, a)
    # dA[k, i, :] = D_{a_k} a_i
    dA = _along(frame_field, p, a, cfg, 1)
    omega = np.einsum("kix,jx->ijk", dA, a)
    asym = np.max(np.abs(omega + np.transpose(omega, (1, 0, 2))))
    if asym > tol:
        raise DegenerateFrameError(
            f"connection coefficients not antisymmetric (residual {asym:.3e})")
    return 0.5 * (omega - np.transpose(omega, (1, 0, 2)))


def covariant_hessian_diag(Z, p, frame, cfg=SECOND):
    """Second covariant derivatives (nabla^2 Z)(a_k, a_k) for each frame vector.

    Components of Z are taken in the frame transported along each geodesic,
    differentiated twice, and reassembled at p.  Returns shape ``(m, n)``.
    """
    p = np.asarray(p, dtype=float)
    frame = np.asarray(frame, dtype=float)
    basis = tangent_basis(p)
    if cfg.richardson:
        plain = FDConfig(cfg.h, cfg.order)
        coarse = covariant_hessian_diag(Z, p, frame, plain)
        fine = covariant_hessian_diag(Z, p, frame, plain.halved())
        r = 2.0 ** cfg.order
        return (r * fine - coarse) / (r - 1.0)
    offs, wts = _offsets(cfg, 2)
    out = []
    for w in frame:
        pts = _geodesic(p, w, offs)
        eb = _transport(basis[None, :, :], p, w, offs[:, None])
        comps = np.einsum("sx,sbx->sb", Z(pts), eb)
        out.append(np.einsum("sb,s->b", comps, wts) @ basis)
    return np.array(out)


def rough_laplacian(Z, p, frame=None, cfg=SECOND):
    """Trace of the second covariant derivative of a tangent vector field."""
    p = np.asarray(p, dtype=float)
    frame = tangent_basis(p) if frame is None else _check_frame(p, frame)
    return np.sum(covariant_hessian_diag(Z, p, frame, cfg), axis=0)
