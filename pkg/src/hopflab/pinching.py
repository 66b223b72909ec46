"""Sampled evaluation of the pinching hypotheses for harmonic maps S^3 -> S^2.

A sampled check can falsify a hypothesis that must hold everywhere, or support
it; it never proves it.  Verdicts are ``satisfied``, ``violated`` or
``vacuous`` (a structural precondition such as totally geodesic fibres fails).
"""

from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from .bochner import PreconditionError
from .calculus import SECOND

STRICT_EPS = 1e-9
NONSTRICT_TOL = 1e-6
FIBER_TOL = 1e-5
HARMONIC_TOL = 1e-5
CONSTANCY_TOL = 1e-6
RELATION_TOL = 1e-6

THEOREMS = ("A1", "A2", "C", "B-constant-u", "B-constant-d2", "B-custom-W")


class RelationNotSatisfied(ValueError):
    """The supplied relation W(lambda, mu) = 0 fails on the samples."""

    def __init__(self, message, max_abs):
        super().__init__(message)
        self.max_abs = max_abs


@dataclass
class PinchReport:
    theorem: str
    a_param: float
    min_margin: float
    argmin: list
    n_samples: int
    verdict: str
    note: str = ""
    extras: dict = field(default_factory=dict)
    margins: np.ndarray = field(default=None, repr=False)

    def to_json(self):
        return {
            "theorem": self.theorem,
            "a_param": self.a_param,
            "min_margin": self.min_margin,
            "argmin": self.argmin,
            "n_samples": self.n_samples,
            "verdict": self.verdict,
            "note": self.note,
            "extras": dict(sorted(self.extras.items())),
        }


@dataclass(frozen=True)
class RelationW:
    """A C^1 relation W(x, y) = 0 between lambda and mu with its partials."""

    W: object
    Wx: object
    Wy: object


def _pointwise(f, p, cfg):
    p = np.asarray(p, dtype=float)
    lam, mu = an.singular_values(f, p)
    vec, _ = an.hessian_vectors(f, p, None, cfg)
    return float(lam * mu), float(np.sum(vec ** 2))


def margin_A(f, p, a, cfg=SECOND):
    """D2 (D2 + a) - |B|^2 at p."""
    d2, b2 = _pointwise(f, p, cfg)
    return d2 * (d2 + a) - b2


def margin_C(f, p, cfg=SECOND):
    """2 D2 (D2 + 2) - |B|^2 at p."""
    d2, b2 = _pointwise(f, p, cfg)
    return 2.0 * d2 * (d2 + 2.0) - b2


def fiber_curvature(f, p, cfg=SECOND):
    """|B(zeta, zeta)| for the unit kernel direction zeta at p."""
    sd = an.svd(f, p)
    vec, _ = an.hessian_vectors(f, p, sd.alpha[2:], cfg)
    return float(np.linalg.norm(vec[0, 0]))


def _tension(f, p, cfg=SECOND):
    vec, _ = an.hessian_vectors(f, p, None, cfg)
    return float(np.linalg.norm(np.einsum("iic->c", vec)))


def _points(f, n, seed, sampler):
    return np.asarray((sampler or f.sample)(n, seed), dtype=float)


def scan(f, theorem, n=1000, seed=0, a=None, cfg=SECOND, sampler=None):
    """Evaluate the margin of theorem A1, A2 or C at n sampled points."""
    if theorem not in ("A1", "A2", "C"):
        raise ValueError(f"scan handles A1, A2 and C, not {theorem!r}")
    if theorem == "A1":
        a = 0.0 if a is None else float(a)
        if not 0.0 <= a < 2.0:
            raise ValueError(f"A1 needs a in [0, 2), got {a}")
    elif theorem == "A2":
        a = 2.0
    else:
        a = None
    P = _points(f, n, seed, sampler)
    if theorem == "C":
        margins = np.array([margin_C(f, p, cfg) for p in P])
    else:
        margins = np.array([margin_A(f, p, a, cfg) for p in P])
    i = int(np.argmin(margins))
    rep = PinchReport(theorem, a, float(margins[i]), [float(x) for x in P[i]], len(P),
                      "", margins=margins)
    rep.extras["max_margin"] = float(np.max(margins))
    if theorem == "C":
        curv = max(fiber_curvature(f, p, cfg) for p in P)
        rep.extras["max_fiber_curvature"] = curv
        if curv >= FIBER_TOL:
            rep.verdict = "vacuous"
            rep.note = f"fibres not totally geodesic: max |B(zeta, zeta)| = {curv:.3e}"
            return rep
    if theorem == "A2":
        ok = rep.min_margin > STRICT_EPS
    else:
        ok = rep.min_margin >= -NONSTRICT_TOL
    rep.verdict = "satisfied" if ok else "violated"
    return rep


def _check_harmonic(f, P, cfg):
    tau = max(_tension(f, p, cfg) for p in P)
    if tau > HARMONIC_TOL:
        raise PreconditionError(f"map is not harmonic: max |tau| = {tau:.3e}", tau)
    return tau


def check_thmB(f, relation="constant-u", n=1000, seed=0, cfg=SECOND, sampler=None,
               tol=CONSTANCY_TOL):
    """Sampled check of the singular-value relation hypothesis.

    ``relation`` is ``"constant-u"``, ``"constant-d2"`` or a ``RelationW``.
    For the builtin modes the margin is ``tol * max(1, max) - spread``.  For a
    custom relation it is ``min |mu Wx + lambda Wy|`` over the samples.
    """
    P = _points(f, n, seed, sampler)
    tau = _check_harmonic(f, P, cfg)
    lam, mu = an.singular_values(f, P)
    if isinstance(relation, RelationW):
        wv = np.asarray(relation.W(lam, mu), dtype=float)
        worst = float(np.max(np.abs(wv)))
        if worst > RELATION_TOL * max(1.0, float(np.max(lam ** 2))):
            raise RelationNotSatisfied(
                f"W(lambda, mu) is not zero on the samples: max |W| = {worst:.3e}", worst)
        transv = np.abs(mu * relation.Wx(lam, mu) + lam * relation.Wy(lam, mu))
        i = int(np.argmin(transv))
        rep = PinchReport("B-custom-W", None, float(transv[i]), [float(x) for x in P[i]],
                          len(P), "satisfied" if transv[i] > RELATION_TOL else "violated",
                          margins=transv)
        rep.extras.update(max_abs_W=worst, max_tension=tau)
    else:
        if relation == "constant-u":
            vals, theorem = lam ** 2 + mu ** 2, "B-constant-u"
        elif relation == "constant-d2":
            vals, theorem = lam * mu, "B-constant-d2"
        else:
            raise ValueError(f"unknown relation {relation!r}")
        spread = float(np.max(vals) - np.min(vals))
        allowed = tol * max(1.0, float(np.max(vals)))
        i = int(np.argmax(np.abs(vals - np.median(vals))))
        rep = PinchReport(theorem, None, allowed - spread, [float(x) for x in P[i]],
                          len(P), "satisfied" if spread < allowed else "violated",
                          margins=allowed - np.abs(vals - np.median(vals)))
        rep.extras.update(spread=spread, min_value=float(np.min(vals)),
                          max_value=float(np.max(vals)), max_tension=tau)
    if rep.verdict == "satisfied":
        rep.note = "Hopf fibration candidate (possibly constant)"
        rep.extras.update(lambda_mean=float(np.mean(lam)), mu_mean=float(np.mean(mu)))
    return rep


def margins_csv(rep):
    """Per-point margins as CSV text (index, margin)."""
    lines = ["index,margin"]
    lines += [f"{i},{m!r}" for i, m in enumerate(rep.margins.tolist())]
    return "\n".join(lines) + "\n"
