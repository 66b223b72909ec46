import numpy as np
import pytest

from hopflab import analysis as an
from hopflab.calculus import FDConfig, tangent_basis
from hopflab.maps import (DescriptorError, MobiusMap, RationalMap, compose_with_hopf,
                          constant_map, equivariant_harmonic, fd_differential,
                          hopf_map, identity_s2, map_from_json, mobius_on_sphere,
                          parse_descriptor, perturb, rational_on_sphere)
from hopflab.quaternion import hopf_field, hopf_frame, random_s2, random_s3

MOBIUS = [MobiusMap(1, 0.5, 0.2j, 1), MobiusMap(2, 0, 0, 1), MobiusMap(1, 1, 0, 1),
          MobiusMap(0.3 + 1j, -0.4, 0.7j, 1.1)]
DESCRIPTORS = ["hopf", "constant", "constant:1,2,2", "mobius:1,0.5,0.2i,1",
               "mobiusbar:2,0,0,1", "rational:0,0,1/1,0.3", "rationalbar:1,0,1/0,1",
               "equivariant:0.5", "perturbed:hopf,0.3,4",
               "perturbed:mobius:2,0,0,1,0.1,2"]


def _fd_singular_values(g, Y, h=1e-5):
    """Singular values of dg on S^2 from central differences (oracle)."""
    out = []
    for y in Y:
        E = tangent_basis(y)
        cols = [(g.eval(np.cos(h) * y + np.sin(h) * e)
                 - g.eval(np.cos(h) * y - np.sin(h) * e)) / (2 * h) for e in E]
        out.append(np.linalg.svd(np.stack(cols, axis=1), compute_uv=False))
    return np.array(out)


@pytest.mark.parametrize("text", DESCRIPTORS)
def test_maps_land_on_unit_sphere(text):
    f = parse_descriptor(text)
    P = f.sample(10_000, 21)
    assert np.max(np.abs(np.linalg.norm(f.eval(P), axis=1) - 1)) < 1e-12


@pytest.mark.parametrize("text", [d for d in DESCRIPTORS if d != "constant"])
def test_analytic_differential_matches_finite_differences(text):
    f = parse_descriptor(text)
    P = f.sample(50, 22)
    V = hopf_frame(P)
    for a in range(3):
        exact = f.differential(P, V[:, a])
        fd = fd_differential(f.eval, P, V[:, a], FDConfig(1e-3, 4))
        assert np.max(np.abs(exact - fd)) < 1e-8 * max(1, np.max(np.abs(exact)))


def test_hopf_map_examples():
    f = hopf_map()
    P = random_s3(1000, seed=23)
    lam, mu = an.singular_values(f, P)
    assert np.allclose(lam, 2, atol=1e-12) and np.allclose(mu, 2, atol=1e-12)
    assert np.std(lam) < 1e-9 and np.std(mu) < 1e-9
    assert np.max(np.abs(f.differential(P, hopf_field(P)))) < 1e-14


def test_identity_mobius_is_identity():
    g = identity_s2()
    Y = random_s2(200, seed=24)
    assert np.max(np.abs(g.eval(Y) - Y)) < 1e-14
    assert np.max(np.abs(g.conformal_factor(Y) - 1)) < 1e-14
    P = random_s3(100, seed=25)
    assert np.max(np.abs(compose_with_hopf(g).eval(P) - hopf_map().eval(P))) < 1e-14


@pytest.mark.parametrize("m", MOBIUS)
@pytest.mark.parametrize("conjugate", [False, True])
def test_mobius_conformal_factor_matches_fd_svd(m, conjugate):
    g = mobius_on_sphere(m, conjugate)
    Y = random_s2(100, seed=26)
    s = _fd_singular_values(g, Y)
    sigma = g.conformal_factor(Y)
    assert np.max(np.abs(s[:, 0] - sigma)) < 1e-7 * max(1, sigma.max())
    assert np.max(np.abs(s[:, 1] - sigma)) < 1e-7 * max(1, sigma.max())
    assert np.all(sigma > 0)


@pytest.mark.parametrize("m", MOBIUS[:2])
def test_non_isometric_mobius_stretches_and_shrinks(m):
    sigma = mobius_on_sphere(m).conformal_factor(random_s2(2000, seed=27))
    assert sigma.max() ** 2 > 1 > sigma.min() ** 2


def test_poles_are_regular():
    g = mobius_on_sphere(MobiusMap(1, 1, 0, 1))
    poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    out = g.eval(poles)
    assert np.all(np.isfinite(out))
    # m(inf) = inf and m(0) = 1 (stereo(1) = (1, 0, 0))
    assert np.allclose(out, [[0, 0, 1], [1, 0, 0]], atol=1e-14)
    assert np.all(np.isfinite(g.conformal_factor(poles)))


def test_rational_branch_point_and_reduction():
    g = rational_on_sphere(RationalMap((0, 0, 1), (1,)))
    south = np.array([0.0, 0.0, -1.0])  # z = 0
    assert abs(g.conformal_factor(south)) < 1e-14
    assert np.allclose(g.eval(south), south)
    m = MobiusMap(1, 0.5, 0.2j, 1)
    r = rational_on_sphere(RationalMap((0.5, 1), (1, 0.2j)))
    Y = random_s2(100, seed=28)
    assert np.max(np.abs(r.eval(Y) - mobius_on_sphere(m).eval(Y))) < 1e-13
    assert np.max(np.abs(r.conformal_factor(Y) - mobius_on_sphere(m).conformal_factor(Y))) < 1e-13


def test_rational_conformal_factor_matches_fd_svd():
    g = rational_on_sphere(RationalMap((0, 0, 1), (1, 0.3)))
    Y = random_s2(100, seed=29)
    s = _fd_singular_values(g, Y)
    sigma = g.conformal_factor(Y)
    assert np.max(np.abs(s - sigma[:, None])) < 1e-7 * max(1, sigma.max())


def test_degenerate_rational_and_mobius_rejected():
    with pytest.raises(DescriptorError):
        MobiusMap(1, 2, 2, 4)
    with pytest.raises(DescriptorError):
        RationalMap((1, 1), (2, 2))      # common root at -1
    with pytest.raises(DescriptorError):
        RationalMap((1,), (0,))


@pytest.mark.parametrize("m", MOBIUS)
def test_composition_is_harmonic_and_weakly_conformal(m):
    f = compose_with_hopf(mobius_on_sphere(m))
    P = random_s3(50, seed=30)
    lam, mu = an.singular_values(f, P)
    assert np.max(np.abs(lam - mu)) < 1e-7 * max(1, lam.max())
    fine = FDConfig(2.5e-3, 4)
    for p in P:
        tau = an.tension(f, p)
        assert tau.norm < 1e-6 * max(1.0, np.sqrt(an.hessian(f, p).norm2))
        assert tau.discrepancy < 1e-5
        assert an.tension(f, p, fine).norm < 1e-6
        sd = an.svd(f, p)
        vec, _ = an.hessian_vectors(f, p, sd.alpha[2:])
        assert np.linalg.norm(vec[0, 0]) < 1e-6


def test_composition_with_rational_is_weakly_conformal():
    f = parse_descriptor("rational:0,0,1/1,0.3")
    lam, mu = an.singular_values(f, random_s3(500, seed=31))
    assert np.max(np.abs(lam - mu)) < 1e-7 * max(1, lam.max())


def test_perturb_examples():
    f = hopf_map()
    P = random_s3(200, seed=32)
    assert np.array_equal(perturb(f, 3, 0.0).eval(P), f.eval(P))
    g = perturb(f, 3, 0.1)
    assert np.max(np.abs(np.linalg.norm(g.eval(P), axis=1) - 1)) < 1e-12
    u = an.energy_density(g, P)
    assert u.max() - u.min() > 1e-3
    with pytest.raises(DescriptorError):
        perturb(f, 3, -1.0)


def test_equivariant_map_is_harmonic_but_not_conformal():
    f = compose_with_hopf(equivariant_harmonic(0.5))
    P = f.sample(20, 33)
    lam, mu = an.singular_values(f, P)
    assert np.all(lam - mu > 1e-3)
    for p in P:
        assert an.tension(f, p).norm < 1e-6


@pytest.mark.parametrize("text", DESCRIPTORS)
def test_descriptor_json_round_trip(text):
    f = parse_descriptor(text)
    g = map_from_json(f.to_json())
    P = random_s3(50, seed=34)
    if f.sampler is not None:
        P = f.sample(50, 34)
    assert g.descriptor == f.descriptor
    assert np.array_equal(g.eval(P), f.eval(P))


def test_constant_map():
    f = constant_map()
    P = random_s3(10, seed=35)
    assert np.all(f.differential(P, hopf_frame(P)[:, 0]) == 0)
    assert np.allclose(f.eval(P), [0, 0, 1])


@pytest.mark.parametrize("bad", ["", "hopff", "mobius:1,2,3", "mobius:1,x,0,1",
                                 "rational:1,2", "constant:1,2", "perturbed:hopf,0.1",
                                 "mobius:1,2,2,4", "equivariant:-1"])
def test_bad_descriptors(bad):
    with pytest.raises(DescriptorError):
        parse_descriptor(bad)
