"""Maps S^3 -> S^2: the Hopf map, conformal maps of S^2 composed with it,
seeded perturbations, and a textual/JSON descriptor grammar for all of them.

Self-maps of S^2 given by rational functions are evaluated in homogeneous
coordinates on CP^1.  Each point uses whichever of the two stereographic charts
(from the north pole, ``z``, or from the south pole, ``1/z``) keeps the local
coordinate inside the unit disk, so no point of the sphere needs a special
case.
"""

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ellipj, ellipk

from . import calculus
from .quaternion import hopf_differential, hopf_pi, random_s3

RESULTANT_TOL = 1e-8


class DescriptorError(ValueError):
    """Unparseable or invalid map descriptor."""


@dataclass(frozen=True)
class SphereMap:
    """An evaluatable map S^3 -> S^2.

    ``eval`` and ``analytic_differential`` are vectorized over leading axes:
    ``eval(P)`` with ``P`` of shape ``(..., 4)`` returns ``(..., 3)`` and
    ``analytic_differential(P, V)`` returns ``df_P(V)``.
    """

    eval: Callable
    analytic_differential: Optional[Callable] = None
    label: str = ""
    descriptor: dict = field(default_factory=dict)
    sampler: Optional[Callable] = None

    def __call__(self, p):
        return self.eval(p)

    def differential(self, p, v, cfg=None, use_analytic=True):
        if use_analytic and self.analytic_differential is not None:
            return self.analytic_differential(p, v)
        return fd_differential(self.eval, p, v, cfg or calculus.FIRST)

    def sample(self, n, seed):
        """Sample points of S^3 where the map is defined and smooth."""
        if self.sampler is not None:
            return self.sampler(n, seed)
        return random_s3(n, seed)

    def to_json(self):
        return json.dumps(self.descriptor, sort_keys=True)


def fd_differential(fn, p, v, cfg=calculus.FIRST):
    """Central differences of ``fn`` along great circles through p.

    Vectorized over leading axes of ``p`` and ``v`` (which must broadcast);
    the result is projected onto the tangent space at ``fn(p)``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    p, v = np.broadcast_arrays(p, v)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(speed > 0, speed, 1.0)
    u = v / safe
    offs, wts = calculus.stencil(1, cfg.order)
    t = offs * cfg.h
    pts = (np.cos(t)[:, None] * p[..., None, :]
           + np.sin(t)[:, None] * u[..., None, :])
    vals = fn(pts)
    d = np.einsum("...sc,s->...c", vals, wts / cfg.h)
    return calculus.project_tangent(fn(p), d) * speed


@dataclass(frozen=True)
class S2Map:
    """A self-map of S^2 with differential and, when conformal, its factor."""

    eval: Callable
    differential: Callable
    conformal_factor: Optional[Callable] = None
    label: str = ""
    descriptor: dict = field(default_factory=dict)

    def __call__(self, y):
        return self.eval(y)


@dataclass(frozen=True)
class MobiusMap:
    """m(z) = (a z + b) / (c z + d)."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if abs(det) <= 1e-12:
            raise DescriptorError(f"Mobius map is singular: ad - bc = {det}")

    def as_rational(self):
        return RationalMap((self.b, self.a), (self.d, self.c))


def _trim(coeffs):
    c = [complex(x) for x in coeffs]
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return tuple(c)


@dataclass(frozen=True)
class RationalMap:
    """r(z) = P(z) / Q(z), coefficients in ascending powers of z."""

    numerator: tuple
    denominator: tuple

    def __post_init__(self):
        num = _trim(self.numerator)
        den = _trim(self.denominator)
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "denominator", den)
        if all(x == 0 for x in den):
            raise DescriptorError("denominator is identically zero")
        if all(x == 0 for x in num) and len(den) == 1:
            return
        rn = np.roots(num[::-1]) if len(num) > 1 else np.array([])
        rd = np.roots(den[::-1]) if len(den) > 1 else np.array([])
        scale = max(1.0, *(abs(x) for x in np.concatenate([rn, rd, [0]])))
        for x in rn:
            for y in rd:
                if abs(x - y) < RESULTANT_TOL * scale:
                    raise DescriptorError(
                        f"numerator and denominator share the root {x:.6g}")

    @property
    def degree(self):
        return max(len(self.numerator), len(self.denominator)) - 1

    def homogeneous(self):
        """Coefficients padded to the common degree."""
        n = self.degree + 1
        num = np.zeros(n, dtype=complex)
        den = np.zeros(n, dtype=complex)
        num[:len(self.numerator)] = self.numerator
        den[:len(self.denominator)] = self.denominator
        return num, den


def _polyval(coeffs, s):
    # Horner, ascending coefficients, value and derivative
    val = np.zeros_like(s)
    der = np.zeros_like(s)
    for c in coeffs[::-1]:
        der = der * s + val
        val = val * s + c
    return val, der


def _source_chart(x):
    """Local coordinate, chart flag and d(coordinate) as a function of v."""
    x1, x2, x3 = np.moveaxis(x, -1, 0)
    south = x3 <= 0
    dn = np.where(south, 1.0 - x3, 1.0)
    ds = np.where(south, 1.0, 1.0 + x3)
    z = (x1 + 1j * x2) / dn
    zeta = (x1 - 1j * x2) / ds
    s = np.where(south, z, zeta)

    def dcoord(v):
        v1, v2, v3 = np.moveaxis(v, -1, 0)
        dz = (v1 + 1j * v2) / dn + (x1 + 1j * x2) * v3 / dn ** 2
        dzeta = (v1 - 1j * v2) / ds - (x1 - 1j * x2) * v3 / ds ** 2
        return np.where(south, dz, dzeta)

    return s, south, dcoord


def _target_point(T, w_chart):
    a, b = T.real, T.imag
    D = 1.0 + a * a + b * b
    y_w = np.stack([2 * a, 2 * b, a * a + b * b - 1.0], axis=-1) / D[..., None]
    y_o = np.stack([2 * a, -2 * b, 1.0 - a * a - b * b], axis=-1) / D[..., None]
    return np.where(w_chart[..., None], y_w, y_o)


def _target_jacobian(T, w_chart, dT):
    a, b = T.real, T.imag
    da, db = dT.real, dT.imag
    D = 1.0 + a * a + b * b
    D2 = D * D
    sgn = np.where(w_chart, 1.0, -1.0)
    # w chart: y = (2a, 2b, |T|^2 - 1)/D; the other chart flips y2 and y3
    y1 = ((2 * D - 4 * a * a) * da - 4 * a * b * db) / D2
    y2 = (-4 * a * b * da + (2 * D - 4 * b * b) * db) / D2
    y3 = (4 * a * da + 4 * b * db) / D2
    return np.stack([y1, sgn * y2, sgn * y3], axis=-1)


def rational_on_sphere(r, conjugate=False):
    """Conjugate a rational map by stereographic projection from (0, 0, 1).

    Returns an ``S2Map`` whose conformal factor is
    ``|r'(z)| (1 + |z|^2) / (1 + |r(z)|^2)``, evaluated in whichever charts
    are well conditioned.  ``conjugate=True`` composes with complex
    conjugation on the target (the orientation-reversing variant).
    """
    if isinstance(r, MobiusMap):
        r = r.as_rational()
    num, den = r.homogeneous()
    sgn = -1.0 if conjugate else 1.0

    def local(x):
        x = np.asarray(x, dtype=float)
        s, south, dcoord = _source_chart(x)
        # in the south chart the homogeneous polys read P(s), Q(s);
        # in the north chart they read s^n P(1/s), i.e. reversed coefficients
        P, dP = _polyval(num, s)
        Q, dQ = _polyval(den, s)
        Pr, dPr = _polyval(num[::-1], s)
        Qr, dQr = _polyval(den[::-1], s)
        P = np.where(south, P, Pr)
        dP = np.where(south, dP, dPr)
        Q = np.where(south, Q, Qr)
        dQ = np.where(south, dQ, dQr)
        w_chart = np.abs(P) <= np.abs(Q)
        A = np.where(w_chart, P, Q)
        dA = np.where(w_chart, dP, dQ)
        Bd = np.where(w_chart, Q, P)
        dB = np.where(w_chart, dQ, dP)
        T = A / Bd
        dTds = (dA * Bd - A * dB) / Bd ** 2
        return s, T, dTds, w_chart, dcoord

    def ev(x):
        _, T, _, w_chart, _ = local(x)
        y = _target_point(T, w_chart)
        y[..., 1] *= sgn
        return y

    def diff(x, v):
        _, T, dTds, w_chart, dcoord = local(x)
        dy = _target_jacobian(T, w_chart, dTds * dcoord(np.asarray(v, dtype=float)))
        dy[..., 1] *= sgn
        return dy

    def sigma(x):
        s, T, dTds, _, _ = local(x)
        return np.abs(dTds) * (1.0 + np.abs(s) ** 2) / (1.0 + np.abs(T) ** 2)

    label = "conj " if conjugate else ""
    desc = {"kind": "rational", "numerator": _cpairs(r.numerator),
            "denominator": _cpairs(r.denominator), "conjugate": bool(conjugate)}
    return S2Map(ev, diff, sigma, label + _rational_label(r), desc)


def mobius_on_sphere(m, conjugate=False):
    """Mobius transformation acting on S^2, with its conformal factor."""
    g = rational_on_sphere(m.as_rational(), conjugate)
    desc = {"kind": "mobius", "coefficients": _cpairs((m.a, m.b, m.c, m.d)),
            "conjugate": bool(conjugate)}
    label = f"{'conj ' if conjugate else ''}mobius({m.a},{m.b},{m.c},{m.d})"
    return S2Map(g.eval, g.differential, g.conformal_factor, label, desc)


def _rational_label(r):
    return f"rational({list(r.numerator)}/{list(r.denominator)})"


def _cpairs(cs):
    return [[float(complex(c).real), float(complex(c).imag)] for c in cs]


def identity_s2():
    return mobius_on_sphere(MobiusMap(1, 0, 0, 1))


def equivariant_harmonic(c=0.5):
    """Local harmonic map of S^2 that is not conformal.

    In polar angle theta and longitude phi it sends ``(theta, phi)`` to
    ``(alpha(theta), phi)`` with ``alpha = pi/2 + am(sqrt(1+c) t | 1/(1+c))``
    and ``t = log tan(theta/2)``.  The Jacobi amplitude solves
    ``alpha_tt = sin(alpha) cos(alpha)``, which is the harmonic map equation
    for this ansatz.  The map is smooth away from the poles and has distinct
    singular values ``sqrt(sin^2 alpha + c) / sin theta`` and
    ``sin alpha / sin theta``.
    """
    if c <= 0:
        raise DescriptorError("equivariant map needs c > 0")
    k = np.sqrt(1.0 + c)
    m = 1.0 / (1.0 + c)

    def parts(y):
        y = np.asarray(y, dtype=float)
        y1, y2, y3 = np.moveaxis(y, -1, 0)
        u = -k * np.arctanh(y3)
        sn, cn, dn, _ = ellipj(u, m)
        rho = np.sqrt(y1 * y1 + y2 * y2)
        return y1, y2, y3, sn, cn, dn, rho

    def ev(y):
        y1, y2, y3, sn, cn, dn, rho = parts(y)
        return np.stack([cn * y1 / rho, cn * y2 / rho, -sn], axis=-1)

    def diff(y, v):
        y1, y2, y3, sn, cn, dn, rho = parts(y)
        v1, v2, v3 = np.moveaxis(np.asarray(v, dtype=float), -1, 0)
        du = -k * v3 / (1.0 - y3 * y3)
        dcn = -sn * dn * du
        dsn = cn * dn * du
        drho = (y1 * v1 + y2 * v2) / rho
        e1 = y1 / rho
        e2 = y2 / rho
        de1 = v1 / rho - y1 * drho / rho ** 2
        de2 = v2 / rho - y2 * drho / rho ** 2
        return np.stack([dcn * e1 + cn * de1, dcn * e2 + cn * de2, -dsn], axis=-1)

    desc = {"kind": "equivariant", "c": float(c)}
    return S2Map(ev, diff, None, f"equivariant(c={c})", desc)


def equivariant_domain(c, fraction=0.8, max_height=0.8):
    """Largest |y3| on which the equivariant map keeps sin(alpha) > 0."""
    k = np.sqrt(1.0 + c)
    K = ellipk(1.0 / (1.0 + c))
    return min(max_height, float(np.tanh(fraction * K / k)))


def hopf_map():
    """The Hopf map with its closed-form differential."""
    return SphereMap(hopf_pi, hopf_differential, "hopf", {"kind": "hopf"})


def constant_map(value=(0.0, 0.0, 1.0)):
    raw = [float(x) for x in value]
    value = np.asarray(raw) / np.linalg.norm(raw)

    def ev(p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(value, p.shape[:-1] + (3,)).copy()

    def diff(p, v):
        shape = np.broadcast_shapes(np.shape(p), np.shape(v))
        return np.zeros(shape[:-1] + (3,))

    return SphereMap(ev, diff, "constant",
                     {"kind": "constant", "value": raw})


def compose_with_hopf(g):
    """g o pi for a self-map g of S^2; the chain rule supplies d(g o pi)."""
    if g is None:
        return hopf_map()

    def ev(p):
        return g.eval(hopf_pi(p))

    def diff(p, v):
        return g.differential(hopf_pi(p), hopf_differential(p, v))

    desc = dict(g.descriptor)
    kind = desc.pop("kind")
    desc = {"kind": f"{kind}∘hopf", **desc}
    sampler = None
    if kind == "equivariant":
        sampler = _band_sampler(equivariant_domain(desc["c"]))
    return SphereMap(ev, diff, f"{g.label} ∘ hopf", desc, sampler)


def _band_sampler(height):
    def sample(n, seed):
        rng = np.random.default_rng(seed)
        out = []
        while sum(len(x) for x in out) < n:
            q = random_s3(2 * n, rng=rng)
            out.append(q[np.abs(hopf_pi(q)[:, 2]) < height])
        return np.concatenate(out)[:n]
    return sample


def _perturbation_field(seed):
    rng = np.random.default_rng(seed)
    c0 = rng.normal(size=3)
    C = rng.normal(size=(3, 3))
    T = rng.normal(size=(3, 3, 3))
    T = 0.5 * (T + np.transpose(T, (0, 2, 1)))
    # sup |V| over the unit sphere is at most 1
    scale = np.linalg.norm(c0) + np.linalg.norm(C, 2) + np.linalg.norm(T)
    return c0 / scale, C / scale, T / scale


def perturb(f, seed, amplitude):
    """normalize(f + amplitude * V(f)) for a seeded quadratic field V on R^3."""
    if amplitude < 0:
        raise DescriptorError("amplitude must be non-negative")
    c0, C, T = _perturbation_field(seed)
    amp = float(amplitude)

    def V(y):
        return c0 + y @ C.T + np.einsum("abc,...b,...c->...a", T, y, y)

    def ev(p):
        y = f.eval(p)
        if amp == 0.0:
            return y
        G = y + amp * V(y)
        return G / np.linalg.norm(G, axis=-1, keepdims=True)

    diff = None
    if f.analytic_differential is not None:
        def diff(p, v):
            y = f.eval(p)
            dy = f.analytic_differential(p, v)
            if amp == 0.0:
                return dy
            G = y + amp * V(y)
            dG = dy + amp * (dy @ C.T + 2.0 * np.einsum("abc,...b,...c->...a", T, y, dy))
            nG = np.linalg.norm(G, axis=-1, keepdims=True)
            g = G / nG
            return (dG - np.sum(dG * g, axis=-1, keepdims=True) * g) / nG

    desc = {"kind": "perturbed", "base": f.descriptor, "amplitude": amp,
            "seed": int(seed)}
    return SphereMap(ev, diff, f"perturbed({f.label}, {amp}, {seed})", desc,
                     f.sampler)


# -- descriptors -------------------------------------------------------------

def _parse_complex(tok):
    tok = tok.strip().replace("i", "j")
    try:
        return complex(tok)
    except ValueError:
        raise DescriptorError(f"bad complex coefficient {tok!r}") from None


def _parse_list(text):
    if not text.strip():
        raise DescriptorError("empty coefficient list")
    return [_parse_complex(t) for t in text.split(",")]


def parse_descriptor(text):
    """Build a SphereMap from the text grammar.

    ``hopf``, ``constant``, ``mobius:a,b,c,d``, ``rational:p0,p1,.../q0,...``
    (ascending powers), ``perturbed:<base>,<amplitude>,<seed>`` and
    ``equivariant:c``.  The ``mobiusbar``/``rationalbar`` variants conjugate
    the target.  Every non-Hopf map except ``constant`` is composed with the
    Hopf map.
    """
    text = text.strip()
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    try:
        if head == "hopf" and not rest:
            return hopf_map()
        if head == "constant":
            if rest:
                vals = [float(x) for x in rest.split(",")]
                if len(vals) != 3:
                    raise DescriptorError("constant needs three coordinates")
                return constant_map(vals)
            return constant_map()
        if head in ("mobius", "mobiusbar"):
            cs = _parse_list(rest)
            if len(cs) != 4:
                raise DescriptorError("mobius needs four coefficients a,b,c,d")
            g = mobius_on_sphere(MobiusMap(*cs), conjugate=head.endswith("bar"))
            return compose_with_hopf(g)
        if head in ("rational", "rationalbar"):
            num, sep, den = rest.partition("/")
            if not sep:
                raise DescriptorError("rational needs numerator/denominator")
            r = RationalMap(tuple(_parse_list(num)), tuple(_parse_list(den)))
            return compose_with_hopf(rational_on_sphere(r, head.endswith("bar")))
        if head == "equivariant":
            return compose_with_hopf(equivariant_harmonic(float(rest) if rest else 0.5))
        if head == "perturbed":
            base, amp, seed = rest.rsplit(",", 2)
            return perturb(parse_descriptor(base), int(seed), float(amp))
    except DescriptorError:
        raise
    except ValueError as exc:
        raise DescriptorError(f"cannot parse {text!r}: {exc}") from None
    raise DescriptorError(f"unknown map descriptor {text!r}")


def _unpairs(pairs):
    return tuple(complex(re, im) for re, im in pairs)


def map_from_json(desc):
    """Inverse of ``SphereMap.descriptor`` (accepts a dict or JSON text)."""
    if isinstance(desc, str):
        desc = json.loads(desc)
    kind = desc.get("kind")
    if kind == "hopf":
        return hopf_map()
    if kind == "constant":
        return constant_map(desc.get("value", (0.0, 0.0, 1.0)))
    if kind == "mobius∘hopf":
        m = MobiusMap(*_unpairs(desc["coefficients"]))
        return compose_with_hopf(mobius_on_sphere(m, desc.get("conjugate", False)))
    if kind == "rational∘hopf":
        r = RationalMap(_unpairs(desc["numerator"]), _unpairs(desc["denominator"]))
        return compose_with_hopf(rational_on_sphere(r, desc.get("conjugate", False)))
    if kind == "equivariant∘hopf":
        return compose_with_hopf(equivariant_harmonic(desc["c"]))
    if kind == "perturbed":
        return perturb(map_from_json(desc["base"]), desc["seed"], desc["amplitude"])
    raise DescriptorError(f"unknown map kind {kind!r}")
