"""Two-sided numerical checks of Bochner-type identities for harmonic maps.

Every left side is a finite-difference derivative of a scalar field or frame
field; every right side is algebra on the Hessian components at the base
point.  Both sides at one point share a single ``SingularData`` so that frame
signs cannot differ between them.

Identities that are only meaningful where lambda > mu are skipped (flagged,
with no numbers) at degenerate points.  Harmonicity is a precondition; a map
whose tension exceeds ``HARMONIC_TOL`` raises ``PreconditionError``.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from . import calculus
from .calculus import DegenerateFrameError, FDConfig, SECOND

HARMONIC_TOL = 1e-5
SINGULAR_TOL = 1e-6
DEFAULT_TOL = 1e-3
FRAME_TOL = 1e-3


class PreconditionError(ValueError):
    """The map does not satisfy the hypothesis of the identity at this point."""

    def __init__(self, message, measured=None):
        super().__init__(message)
        self.measured = measured


@dataclass
class IdentityReport:
    name: str
    point: np.ndarray
    lhs: object = None
    rhs: object = None
    abs_residual: float = None
    rel_residual: float = None
    h_used: float = None
    degenerate_skipped: bool = False
    status: str = "ok"
    note: str = ""
    extras: dict = field(default_factory=dict)

    def passed(self, tol=DEFAULT_TOL):
        return self.status != "ok" or self.rel_residual < tol

    def to_json(self):
        def conv(x):
            if x is None:
                return None
            x = np.asarray(x, dtype=float)
            return float(x) if x.ndim == 0 else [float(y) for y in x.ravel()]

        return {
            "name": self.name,
            "point": conv(self.point),
            "lhs": conv(self.lhs),
            "rhs": conv(self.rhs),
            "abs_residual": self.abs_residual,
            "rel_residual": self.rel_residual,
            "h_used": self.h_used,
            "degenerate_skipped": self.degenerate_skipped,
            "status": self.status,
            "note": self.note,
            "extras": {k: conv(v) for k, v in sorted(self.extras.items())},
        }


def compare(name, p, lhs, rhs, h, **extras):
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    diff = float(np.max(np.abs(lhs - rhs)))
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return IdentityReport(name, np.asarray(p, dtype=float), lhs, rhs, diff,
                          diff / scale, h, extras=extras)


def skipped(name, p, h, note):
    return IdentityReport(name, np.asarray(p, dtype=float), h_used=h,
                          degenerate_skipped=True, status="skipped", note=note)


def _first(cfg):
    # gradients use a step five times smaller than second derivatives
    return FDConfig(cfg.h / 5.0, cfg.order, cfg.richardson)


@dataclass
class _Local:
    f: object
    p: np.ndarray
    cfg: FDConfig
    sd: an.SingularData
    b: np.ndarray           # b[c, i, j]
    vectors: np.ndarray     # B(alpha_i, alpha_j) as ambient vectors

    @property
    def lam(self):
        return self.sd.lam

    @property
    def mu(self):
        return self.sd.mu

    def along(self, phi):
        """alpha_k(phi) for k = 1, 2, 3."""
        return calculus._along(phi, self.p, self.sd.alpha, _first(self.cfg), 1)

    def laplacian(self, phi):
        return float(calculus.laplace_beltrami(phi, self.p, None, self.cfg))


def _local(f, p, cfg, harmonic=True):
    p = np.asarray(p, dtype=float)
    sd = an.svd(f, p)
    if harmonic:
        vec, _ = an.hessian_vectors(f, p, sd.alpha, SECOND)
        tau = float(np.linalg.norm(np.einsum("iic->c", vec)))
        if tau > HARMONIC_TOL * max(1.0, float(np.sqrt(np.sum(vec ** 2)))):
            raise PreconditionError(f"map is not harmonic at p: |tau| = {tau:.3e}",
                                    measured=tau)
    vec, _ = an.hessian_vectors(f, p, sd.alpha, cfg)
    b = np.einsum("ijx,cx->cij", vec, sd.beta)
    return _Local(f, p, cfg, sd, b, vec)


def _fields(f):
    def lam(Q):
        return an.singular_values(f, Q)[0]

    def mu(Q):
        return an.singular_values(f, Q)[1]

    def u(Q):
        return an.energy_density(f, Q)

    def d2(Q):
        s = an.singular_values(f, Q)
        return s[0] * s[1]

    return lam, mu, u, d2


def _mixed_sum(b):
    # sum_k (b4_1k b5_2k - b5_1k b4_2k)
    return float(np.sum(b[0, 0] * b[1, 1] - b[1, 0] * b[0, 1]))


# -- identities ---------------------------------------------------------------------

def verify_lemma71(f, p, cfg=SECOND):
    """First-order identities linking derivatives of lambda, mu and the frame
    to Hessian components.  Returns five reports."""
    loc = _local(f, p, cfg, harmonic=False)
    lam_f, mu_f, _, _ = _fields(f)
    b, lam, mu, h = loc.b, loc.lam, loc.mu, cfg.h
    out = [compare("lemma71_dlambda", p, loc.along(lam_f), b[0, 0], h),
           compare("lemma71_dmu", p, loc.along(mu_f), b[1, 1], h)]
    try:
        omega = calculus.connection_coeffs(
            an.frame_field(f, loc.sd), loc.p, _first(cfg), FRAME_TOL)
    except DegenerateFrameError as exc:
        names = ["lemma71_omega13", "lemma71_omega23", "lemma71_omega12"]
        return out + [skipped(n, p, h, str(exc)) for n in names]
    out.append(compare("lemma71_omega13", p, lam * omega[0, 2], b[0, 2], h))
    out.append(compare("lemma71_omega23", p, mu * omega[1, 2], b[1, 2], h))
    if loc.sd.degenerate:
        out.append(skipped("lemma71_omega12", p, h, "lambda = mu"))
    else:
        out.append(compare("lemma71_omega12", p, (lam ** 2 - mu ** 2) * omega[0, 1],
                           lam * b[0, 1] + mu * b[1, 0], h))
    return out


def verify_lapu(f, p, cfg=SECOND):
    """Laplacian and gradient of the energy density.

    lhs and rhs are ``[Delta u, alpha_1(u), alpha_2(u), alpha_3(u)]``.
    """
    loc = _local(f, p, cfg)
    _, _, u_f, _ = _fields(f)
    b, lam, mu = loc.b, loc.lam, loc.mu
    u = lam ** 2 + mu ** 2
    lhs = [loc.laplacian(u_f), *loc.along(u_f)]
    grad = 2.0 * (lam * b[0, 0] + mu * b[1, 1])
    rhs = [2.0 * np.sum(b ** 2) + 4.0 * (u - (lam * mu) ** 2), *grad]
    return compare("lapu", p, lhs, rhs, cfg.h)


def _singular_denominators(loc, name):
    if loc.mu < SINGULAR_TOL:
        return skipped(name, loc.p, loc.cfg.h, f"mu = {loc.mu:.3e} below {SINGULAR_TOL}")
    return None


def verify_lapv(f, p, cfg=SECOND):
    """Laplacian and gradient of the 2-dilation lambda * mu."""
    loc = _local(f, p, cfg)
    skip = _singular_denominators(loc, "lapv")
    if skip:
        return skip
    _, _, _, d2_f = _fields(f)
    b, lam, mu = loc.b, loc.lam, loc.mu
    lhs = [loc.laplacian(d2_f), *loc.along(d2_f)]
    grad = mu * b[0, 0] + lam * b[1, 1]
    lap = (lam * mu * (4.0 - lam ** 2 - mu ** 2) + 2.0 * _mixed_sum(b)
           + mu / lam * np.sum(b[0, 2] ** 2) + lam / mu * np.sum(b[1, 2] ** 2))
    rep = compare("lapv", p, lhs, [lap, *grad], cfg.h)
    rep.extras["degenerate_frame"] = float(loc.sd.degenerate)
    return rep


def verify_lapw(f, p, cfg=SECOND):
    """Half Laplacian and gradient of w = (lambda - mu)^2."""
    loc = _local(f, p, cfg)
    skip = _singular_denominators(loc, "lapw")
    if skip:
        return skip
    lam_f, mu_f, _, _ = _fields(f)

    def w_f(Q):
        return (lam_f(Q) - mu_f(Q)) ** 2

    b, lam, mu = loc.b, loc.lam, loc.mu
    w = (lam - mu) ** 2
    lhs = [0.5 * loc.laplacian(w_f), *loc.along(w_f)]
    grad = 2.0 * (lam - mu) * (b[0, 0] - b[1, 1])
    half_lap = (w * (lam * mu + 2.0) + np.sum(b ** 2) - 2.0 * _mixed_sum(b)
                - mu / lam * np.sum(b[0, 2] ** 2) - lam / mu * np.sum(b[1, 2] ** 2))
    rep = compare("lapw", p, lhs, [half_lap, *grad], cfg.h)
    rep.extras["degenerate_frame"] = float(loc.sd.degenerate)
    return rep


def verify_laprho(f, p, cfg=SECOND):
    """Half Laplacian of rho = lambda^2 - mu^2 where rho > 0."""
    loc = _local(f, p, cfg)
    lam, mu, b = loc.lam, loc.mu, loc.b
    rho = lam ** 2 - mu ** 2
    if loc.sd.degenerate or rho < SINGULAR_TOL:
        return skipped("laprho", p, cfg.h, f"rho = {rho:.3e}; not smooth-positive")
    lam_f, mu_f, _, _ = _fields(f)

    def rho_f(Q):
        return lam_f(Q) ** 2 - mu_f(Q) ** 2

    cross = np.sum((lam * b[0, 1] + mu * b[1, 0]) ** 2)
    rhs = (2.0 * rho + 2.0 / rho * cross
           + np.sum(b[:, 0, 0] ** 2) - np.sum(b[:, 1, 1] ** 2)
           + 2.0 * b[0, 0, 2] ** 2 - 2.0 * b[1, 1, 2] ** 2
           + b[0, 2, 2] ** 2 - b[1, 2, 2] ** 2)
    return compare("laprho", p, 0.5 * loc.laplacian(rho_f), rhs, cfg.h)


def verify_lemma72(f, p, cfg=SECOND):
    """Half Laplacians of lambda^2 and mu^2 separately; returns two reports."""
    loc = _local(f, p, cfg)
    lam, mu, b = loc.lam, loc.mu, loc.b
    if loc.sd.degenerate or mu < SINGULAR_TOL:
        note = f"lambda = {lam:.3e}, mu = {mu:.3e}"
        return [skipped("lemma72_lambda", p, cfg.h, note),
                skipped("lemma72_mu", p, cfg.h, note)]
    lam_f, mu_f, _, _ = _fields(f)
    cross = np.sum((lam * b[0, 1] + mu * b[1, 0]) ** 2) / (lam ** 2 - mu ** 2)
    rhs_l = ((2.0 - mu ** 2) * lam ** 2 + cross + np.sum(b[:, 0, :] ** 2)
             + np.sum(b[0, 2] ** 2))
    rhs_m = ((2.0 - lam ** 2) * mu ** 2 - cross + np.sum(b[:, 1, :] ** 2)
             + np.sum(b[1, 2] ** 2))
    lhs_l = 0.5 * loc.laplacian(lambda Q: lam_f(Q) ** 2)
    lhs_m = 0.5 * loc.laplacian(lambda Q: mu_f(Q) ** 2)
    return [compare("lemma72_lambda", p, lhs_l, rhs_l, cfg.h),
            compare("lemma72_mu", p, lhs_m, rhs_m, cfg.h)]


def verify_hopf_field(zeta, p, cfg=SECOND, frame=None):
    """Harmonic unit vector field equation Delta zeta + |grad zeta|^2 zeta = 0.

    ``zeta`` maps points ``(..., 4)`` to unit tangent vectors.  The report
    compares the rough Laplacian with ``-|grad zeta|^2 zeta``; extras hold
    ``grad_norm2`` and, in the frame (frame_1, frame_2, zeta), the values of
    phi = -grad zeta on the first two vectors.
    """
    p = np.asarray(p, dtype=float)
    z = np.asarray(zeta(p[None]), dtype=float)[0]
    if abs(np.linalg.norm(z) - 1.0) > 1e-8:
        raise PreconditionError("zeta must be a unit field", np.linalg.norm(z))
    basis = calculus.tangent_basis(p) if frame is None else np.asarray(frame)
    first = _first(cfg)
    grads = np.array([calculus.levi_civita(zeta, p, e, first) for e in basis])
    norm2 = float(np.sum(grads ** 2))
    lap = calculus.rough_laplacian(zeta, p, basis, cfg)
    rep = compare("hopf_field", p, lap, -norm2 * z, cfg.h, grad_norm2=norm2)
    rep.extras["phi"] = -grads
    return rep


def verify_koszul_horizontal(f, p, X=None, Y=None, cfg=SECOND):
    """B(X, Y) for horizontal X, Y against the conformal-dilation formula.

    Defaults to all pairs from (alpha_1, alpha_2); lhs and rhs are stacked
    3-vectors.
    """
    loc = _local(f, p, cfg)
    lam, mu = loc.lam, loc.mu
    if not loc.sd.degenerate:
        raise PreconditionError(
            f"map is not weakly conformal at p: w = {(lam - mu) ** 2:.3e}",
            measured=(lam - mu) ** 2)
    if lam < SINGULAR_TOL:
        return skipped("koszul", p, cfg.h, f"lambda = {lam:.3e}: not a submersion")
    alpha = loc.sd.alpha
    if X is None:
        pairs = [(alpha[0], alpha[0]), (alpha[0], alpha[1]), (alpha[1], alpha[1])]
    else:
        pairs = [(calculus.check_tangent(p, X), calculus.check_tangent(p, Y))]
    lam_f = _fields(f)[0]
    dlog = calculus._along(lambda Q: np.log(lam_f(Q)), loc.p, alpha,
                           _first(cfg), 1)
    grad_log = dlog @ alpha
    A = an.differential(f, loc.p)
    lhs, rhs = [], []
    for x, y in pairs:
        hx, hy = alpha[:2] @ x, alpha[:2] @ y
        if abs(x @ alpha[2]) > 1e-8 or abs(y @ alpha[2]) > 1e-8:
            raise ValueError("X and Y must be horizontal")
        lhs.append(np.einsum("i,j,ijc->c", hx, hy, loc.vectors[:2, :2]))
        rhs.append(float(x @ grad_log) * (A @ y) + float(y @ grad_log) * (A @ x)
                   - float(x @ y) * (A @ grad_log))
    return compare("koszul", p, np.concatenate(lhs), np.concatenate(rhs), cfg.h)


def verify_fiber_tension(f, p, cfg=SECOND):
    """Tension equals -df of the geodesic curvature of the fibres.

    Needs a weakly conformal submersion; the check does not assume harmonicity.
    """
    loc = _local(f, p, cfg, harmonic=False)
    if not loc.sd.degenerate:
        raise PreconditionError("map is not weakly conformal at p",
                                measured=(loc.lam - loc.mu) ** 2)
    if loc.lam < SINGULAR_TOL:
        return skipped("fiber_tension", p, cfg.h, "not a submersion")
    frames = an.frame_field(f, loc.sd)

    def zeta(Q):
        return frames(Q)[..., 2, :]

    curv = calculus.levi_civita(zeta, loc.p, loc.sd.alpha[2], _first(cfg))
    tau = np.einsum("iic->c", loc.vectors)
    return compare("fiber_tension", p, tau, -(an.differential(f, loc.p) @ curv), cfg.h)


# -- batches ------------------------------------------------------------------------

VERIFIERS = {
    "lemma71": verify_lemma71,
    "lapu": verify_lapu,
    "lapv": verify_lapv,
    "lapw": verify_lapw,
    "laprho": verify_laprho,
    "lemma72": verify_lemma72,
    "koszul": verify_koszul_horizontal,
    "fiber_tension": verify_fiber_tension,
}

BATTERY = ["lapu", "lapv", "lapw", "lemma71", "koszul"]


def run_one(name, f, p, cfg=SECOND):
    """Run a verifier and always return a list of reports.

    Precondition failures become reports with status ``precondition_failed``.
    """
    try:
        out = VERIFIERS[name](f, p, cfg=cfg)
    except PreconditionError as exc:
        rep = IdentityReport(name, np.asarray(p, dtype=float), h_used=cfg.h,
                             status="precondition_failed", note=str(exc))
        if exc.measured is not None:
            rep.extras["measured"] = exc.measured
        return [rep]
    return out if isinstance(out, list) else [out]


def run_batch(f, points, names=BATTERY, cfg=SECOND, threads=1):
    """Reports for every (point, verifier), ordered by point index then name."""
    points = np.asarray(points, dtype=float)

    def work(p):
        return [rep for name in names for rep in run_one(name, f, p, cfg)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, points))
    else:
        chunks = [work(p) for p in points]
    return [rep for chunk in chunks for rep in chunk]


def summarize(reports):
    """Rows (name, n_points, max_rel_residual, n_skipped) in first-seen order."""
    rows = {}
    for rep in reports:
        row = rows.setdefault(rep.name, {"name": rep.name, "n_points": 0,
                                         "max_rel_residual": None, "n_skipped": 0})
        row["n_points"] += 1
        if rep.status != "ok":
            row["n_skipped"] += 1
        elif row["max_rel_residual"] is None or rep.rel_residual > row["max_rel_residual"]:
            row["max_rel_residual"] = rep.rel_residual
    return list(rows.values())


def summary_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "n_points", "max_rel_residual", "n_skipped"])
    for r in rows:
        m = r["max_rel_residual"]
        writer.writerow([r["name"], r["n_points"], "" if m is None else repr(m),
                         r["n_skipped"]])
    return buf.getvalue()
