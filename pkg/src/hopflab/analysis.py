"""Pointwise analysis of a map S^3 -> S^2.

Conventions for the adapted frame (alpha_1, alpha_2, alpha_3; beta_4, beta_5):

* ``df(alpha_1) = lambda beta_4``, ``df(alpha_2) = mu beta_5``,
  ``df(alpha_3) = 0`` with ``lambda >= mu >= 0``;
* ``beta_5 = f x beta_4``, so (beta_4, beta_5) is positively oriented on S^2
  and the signed 2-dilation ``v = det[f, df alpha_1, df alpha_2]`` is >= 0;
* ``det[p, alpha_1, alpha_2, alpha_3] > 0`` (outward-normal orientation).

When ``lambda - mu < 1e-6 max(1, lambda)`` the horizontal frame is not
determined by the spectrum.  Then alpha_1 is the normalized horizontal part of
a fixed coordinate axis of R^4 (the axis with the largest horizontal part at the
base point) and the ``degenerate`` flag is set.  For the Hopf map this
reproduces the global frame (j p, k p, i p) up to a rotation of the horizontal
plane, under which the Hessian components are unchanged.
"""

from dataclasses import dataclass, field

import numpy as np

from . import calculus
from .calculus import FDConfig, _geodesic, _transport, tangent_basis

GAP_TOL = 1e-6
SYMMETRY_TOL = 1e-4
CONSISTENCY_TOL = 1e-7
TINY = 1e-12

_AXES = np.eye(4)


class NumericalQualityError(ArithmeticError):
    """A computed quantity failed an internal consistency check."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SingularData:
    point: np.ndarray
    image: np.ndarray
    lam: float
    mu: float
    alpha: np.ndarray
    beta: np.ndarray
    degenerate: bool
    reference: int

    @property
    def lambda_(self):
        return self.lam


@dataclass(frozen=True)
class ScalarInvariants:
    u: float
    v: float
    w: float
    rho: float
    d2: float


@dataclass(frozen=True)
class HessianTensor:
    """b[c, i, j] = <B(alpha_i, alpha_j), beta_c>, c = 0, 1 for beta_4, beta_5."""

    b: np.ndarray
    vectors: np.ndarray
    symmetry_residual: float
    singular: SingularData = field(repr=False)

    @property
    def norm2(self):
        return float(np.sum(self.vectors ** 2))

    @property
    def trace(self):
        return np.einsum("iic->c", self.vectors)

    @property
    def degenerate(self):
        return self.singular.degenerate


@dataclass(frozen=True)
class TensionResult:
    vector: np.ndarray
    extrinsic: np.ndarray
    norm: float
    extrinsic_norm: float
    discrepancy: float


# -- differential and singular values -----------------------------------------

def _jacobian(f, P, cfg=None, use_analytic=True):
    """Columns df(e_i) for the global frame e of T S^3; shape (..., 3, 3)."""
    P = np.asarray(P, dtype=float)
    E = tangent_basis(P)
    cols = f.differential(P[..., None, :], E, cfg, use_analytic)
    return np.swapaxes(cols, -1, -2), E


def differential(f, p, cfg=None, use_analytic=True):
    """df_p as a (3, 4) matrix acting on tangent vectors at p."""
    M, E = _jacobian(f, p, cfg, use_analytic)
    return M @ E


def singular_values(f, P, cfg=None, use_analytic=True):
    """(lambda, mu) at a batch of points."""
    M, _ = _jacobian(f, P, cfg, use_analytic)
    s = np.linalg.svd(M, compute_uv=False)
    return s[..., 0], s[..., 1]


def energy_density(f, P, cfg=None, use_analytic=True):
    M, _ = _jacobian(f, P, cfg, use_analytic)
    return np.sum(M ** 2, axis=(-1, -2))


def _cross4(a, b, c):
    m = np.stack([a, b, c], axis=-2)
    cols = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]
    return np.stack([(-1) ** i * np.linalg.det(m[..., cols[i]]) for i in range(4)],
                    axis=-1)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _unit(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def adapted_frames(f, P, cfg=None, use_analytic=True, reference=None, align=None):
    """Vectorized adapted frames.

    Returns ``lam, mu, alpha (..., 3, 4), beta (..., 2, 3), degenerate,
    reference``.  ``reference`` locks the coordinate axis used at degenerate
    points and ``align`` (an ambient 4-vector) fixes the sign of alpha_1 at
    non-degenerate points; both keep nearby frames continuous.
    """
    P = np.asarray(P, dtype=float)
    FP = f.eval(P)
    M, E = _jacobian(f, P, cfg, use_analytic)
    A = M @ E
    _, S, Vt = np.linalg.svd(M)
    lam, mu = S[..., 0], S[..., 1]
    V = Vt @ E
    a3 = V[..., 2, :]
    degenerate = lam - mu < GAP_TOL * np.maximum(1.0, lam)

    horiz = _AXES - _dot(_AXES, P[..., None, :])[..., None] * P[..., None, :]
    horiz = horiz - _dot(horiz, a3[..., None, :])[..., None] * a3[..., None, :]
    if reference is None:
        reference = np.argmax(np.linalg.norm(horiz, axis=-1), axis=-1)
    ref = np.broadcast_to(np.asarray(reference), lam.shape)
    a1_deg = _unit(np.take_along_axis(horiz, ref[..., None, None], axis=-2)[..., 0, :])
    a1 = V[..., 0, :]
    key = _AXES[ref] if align is None else np.broadcast_to(align, a1.shape)
    a1 = np.where((_dot(a1, key) < 0)[..., None], -a1, a1)
    a1 = np.where(degenerate[..., None], a1_deg, a1)

    da1 = np.einsum("...cx,...x->...c", A, a1)
    n1 = np.linalg.norm(da1, axis=-1, keepdims=True)
    fallback = tangent_basis(FP)[..., 0, :]
    b4 = np.where(n1 > TINY, da1 / np.where(n1 > TINY, n1, 1.0), fallback)
    b5 = np.cross(FP, b4)

    a2 = _unit(_cross4(P, a1, a3))
    da2 = np.einsum("...cx,...x->...c", A, a2)
    a2 = np.where((_dot(da2, b5) < 0)[..., None], -a2, a2)
    det = np.linalg.det(np.stack([P, a1, a2, a3], axis=-2))
    a3 = np.where((det < 0)[..., None], -a3, a3)
    alpha = np.stack([a1, a2, a3], axis=-2)
    beta = np.stack([b4, b5], axis=-2)
    return lam, mu, alpha, beta, degenerate, ref


def svd(f, p, cfg=None, use_analytic=True, reference=None):
    """Singular values and adapted frames at one point."""
    p = np.asarray(p, dtype=float)
    lam, mu, alpha, beta, deg, ref = adapted_frames(
        f, p[None], cfg, use_analytic, reference)
    return SingularData(p, f.eval(p), float(lam[0]), float(mu[0]), alpha[0],
                        beta[0], bool(deg[0]), int(ref[0]))


def frame_field(f, sd, cfg=None, use_analytic=True):
    """Adapted frames near ``sd.point``, continuous with the frame at it."""

    def frames(Q):
        Q = np.asarray(Q, dtype=float)
        return adapted_frames(f, Q, cfg, use_analytic, sd.reference, sd.alpha[0])[2]

    return frames


def invariants(f, p, cfg=None, use_analytic=True, sd=None):
    """u, signed v, w, rho and D2 at p."""
    sd = svd(f, p, cfg, use_analytic) if sd is None else sd
    A = differential(f, p, cfg, use_analytic)
    v = float(np.linalg.det(np.stack([sd.image, A @ sd.alpha[0], A @ sd.alpha[1]])))
    lam, mu = sd.lam, sd.mu
    d2 = lam * mu
    if abs(abs(v) - d2) > CONSISTENCY_TOL * max(1.0, d2):
        raise NumericalQualityError(
            "2-dilation from the pullback area form disagrees with lambda*mu",
            v=v, lam=lam, mu=mu)
    u = lam * lam + mu * mu
    return ScalarInvariants(u=u, v=v, w=(lam - mu) ** 2, rho=lam * lam - mu * mu,
                            d2=d2)


# -- second order ---------------------------------------------------------------

def _bilinear(f, P, E, cfg, use_analytic=True):
    """B(E_i, E_j) at a batch of points; E is orthonormal, shape (..., m, 4).

    E_j is parallel transported along the geodesic with velocity E_i and the
    pushed-forward vector is differentiated, so df(nabla_{E_i} E_j) vanishes.
    Returns the raw (unsymmetrized) array of shape (..., m, m, 3).
    """
    offs, wts = calculus.stencil(1, cfg.order)
    t = offs * cfg.h
    Pi = P[..., None, None, :]                      # (..., 1, 1, 4)
    Ei = E[..., :, None, :]                         # (..., m, 1, 4)
    pts = _geodesic(Pi, Ei, t)                      # (..., m, S, 4)
    Ej = E[..., None, None, :, :]                   # (..., 1, 1, m, 4)
    moved = _transport(Ej, Pi[..., None, :], Ei[..., None, :], t[:, None])
    vals = f.differential(pts[..., None, :], moved, None, use_analytic)
    d = np.einsum("...isjc,s->...ijc", vals, wts / cfg.h)
    fp = f.eval(P)[..., None, None, :]
    return d - np.sum(d * fp, axis=-1, keepdims=True) * fp


def _bilinear_cfg(f, P, E, cfg, use_analytic=True):
    if cfg.richardson:
        plain = FDConfig(cfg.h, cfg.order)
        r = 2.0 ** cfg.order
        return (r * _bilinear(f, P, E, plain.halved(), use_analytic)
                - _bilinear(f, P, E, plain, use_analytic)) / (r - 1.0)
    return _bilinear(f, P, E, cfg, use_analytic)


def hessian_vectors(f, p, frame=None, cfg=calculus.SECOND, use_analytic=True):
    """Symmetrized B(e_i, e_j) in a frame at p and the symmetry residual."""
    p = np.asarray(p, dtype=float)
    frame = tangent_basis(p) if frame is None else np.asarray(frame, dtype=float)
    raw = _bilinear_cfg(f, p, frame, cfg, use_analytic)
    sym = 0.5 * (raw + np.swapaxes(raw, -2, -3))
    resid = float(np.max(np.abs(raw - np.swapaxes(raw, -2, -3)))) if raw.size else 0.0
    return sym, resid


def hessian(f, p, cfg=calculus.SECOND, use_analytic=True, sd=None, strict=True):
    """Hessian components in the adapted frame.

    Raises ``NumericalQualityError`` when the symmetry residual exceeds 1e-4,
    which signals a step size that is too large or too small.
    """
    p = np.asarray(p, dtype=float)
    sd = svd(f, p, None, use_analytic) if sd is None else sd
    vec, resid = hessian_vectors(f, p, sd.alpha, cfg, use_analytic)
    if strict and resid > SYMMETRY_TOL:
        raise NumericalQualityError(
            f"Hessian symmetry residual {resid:.3e} exceeds {SYMMETRY_TOL}; "
            f"adjust the step (h = {cfg.h})", symmetry_residual=resid)
    b = np.einsum("ijx,cx->cij", vec, sd.beta)
    return HessianTensor(b, vec, resid, sd)


def tension(f, p, cfg=calculus.SECOND, use_analytic=True):
    """Trace of B and the extrinsic form Delta f + |df|^2 f."""
    p = np.asarray(p, dtype=float)
    vec, _ = hessian_vectors(f, p, None, cfg, use_analytic)
    tau = np.einsum("iic->c", vec)
    lap = calculus.laplace_beltrami(f.eval, p, None, cfg)
    u = float(energy_density(f, p, None, use_analytic))
    ext = lap + u * f.eval(p)
    return TensionResult(tau, ext, float(np.linalg.norm(tau)),
                         float(np.linalg.norm(ext)), float(np.linalg.norm(tau - ext)))


def nabla_hessian(f, p, frame=None, cfg=calculus.SECOND, use_analytic=True):
    """(nabla_{e_k} B)(e_i, e_j) as ambient vectors, shape (3, 3, 3, 3).

    The frame is extended by parallel transport along each geodesic, so the
    terms B(nabla e_i, e_j) vanish at p.
    """
    p = np.asarray(p, dtype=float)
    frame = tangent_basis(p) if frame is None else np.asarray(frame, dtype=float)
    if cfg.richardson:
        plain = FDConfig(cfg.h, cfg.order)
        r = 2.0 ** cfg.order
        return (r * nabla_hessian(f, p, frame, plain.halved(), use_analytic)
                - nabla_hessian(f, p, frame, plain, use_analytic)) / (r - 1.0)
    offs, wts = calculus.stencil(1, cfg.order)
    t = offs * cfg.h
    pts = _geodesic(p, frame[:, None, :], t)                  # (3, S, 4)
    moved = _transport(frame[None, None, :, :], p, frame[:, None, None, :],
                       t[None, :, None])                     # (3, S, 3, 4)
    raw = _bilinear(f, pts, moved, cfg, use_analytic)        # (3, S, 3, 3, 3)
    B = 0.5 * (raw + np.swapaxes(raw, -2, -3))
    d = np.einsum("ksijc,s->kijc", B, wts / cfg.h)
    fp = f.eval(p)
    return d - np.sum(d * fp, axis=-1, keepdims=True) * fp


def hessian_gradient_norms(f, p, cfg=calculus.SECOND, use_analytic=True):
    """(|B|^2, |nabla B|^2) at p."""
    vec, _ = hessian_vectors(f, p, None, cfg, use_analytic)
    nb = nabla_hessian(f, p, None, cfg, use_analytic)
    return float(np.sum(vec ** 2)), float(np.sum(nb ** 2))


def codazzi_residual(f, p, X, Y, Z, cfg=calculus.SECOND, use_analytic=True):
    """|(nabla_X B)(Y, Z) - (nabla_Z B)(X, Y) - curvature terms|."""
    p = np.asarray(p, dtype=float)
    frame = tangent_basis(p)
    X, Y, Z = (calculus.check_tangent(p, w) @ frame.T for w in (X, Y, Z))
    nb = nabla_hessian(f, p, frame, cfg, use_analytic)
    lhs = (np.einsum("k,i,j,kijc->c", X, Y, Z, nb)
           - np.einsum("k,i,j,kijc->c", Z, X, Y, nb))
    A = differential(f, p, None, use_analytic)
    dX, dY, dZ = (A @ (c @ frame) for c in (X, Y, Z))
    rhs = (np.dot(X, Y) - np.dot(dX, dY)) * dZ - (np.dot(Y, Z) - np.dot(dY, dZ)) * dX
    return float(np.linalg.norm(lhs - rhs))


def estbh_check(g, p, cfg=calculus.SECOND, sigma_cfg=calculus.FIRST):
    """Both sides of |B_h|^2 = 16 (sigma^2 + 4 |grad sigma|^2) for h = g o pi.

    The right side uses the conformal factor of g and its gradient on S^2 by
    finite differences at pi(p).
    """
    from .maps import compose_with_hopf
    from .quaternion import hopf_pi

    if g.conformal_factor is None:
        raise ValueError("g must be conformal and supply its conformal factor")
    h = compose_with_hopf(g)
    vec, _ = hessian_vectors(h, p, None, cfg)
    lhs = float(np.sum(vec ** 2))
    y = hopf_pi(np.asarray(p, dtype=float))
    sigma = float(g.conformal_factor(y))
    grad = calculus.gradient(g.conformal_factor, y, None, sigma_cfg)
    rhs = 16.0 * (sigma ** 2 + 4.0 * float(np.dot(grad, grad)))
    return lhs, rhs


def analyze_point(f, p, cfg=calculus.SECOND, use_analytic=True):
    """Per-point record with the JSON schema used by reports."""
    p = np.asarray(p, dtype=float)
    sd = svd(f, p, None, use_analytic)
    inv = invariants(f, p, None, use_analytic, sd)
    hs = hessian(f, p, cfg, use_analytic, sd, strict=False)
    nb = nabla_hessian(f, p, sd.alpha, cfg, use_analytic)
    tau = hs.trace
    return {
        "point": [float(x) for x in p],
        "lambda": sd.lam,
        "mu": sd.mu,
        "u": inv.u,
        "v": inv.v,
        "w": inv.w,
        "rho": inv.rho,
        "B_norm2": hs.norm2,
        "gradB_norm2": float(np.sum(nb ** 2)),
        "tension_norm": float(np.linalg.norm(tau)),
        "degenerate": sd.degenerate,
        "symmetry_residual": hs.symmetry_residual,
    }
