import csv
import io

import numpy as np
import pytest

from hopflab import analysis as an
from hopflab import flow
from hopflab.maps import constant_map, hopf_map, parse_descriptor, perturb

HOPF = hopf_map()


@pytest.fixture(scope="module")
def cloud():
    c = flow.sample_s3(4000, 0)
    flow.calibrate(c)
    return c


def test_sample_s3_basic_properties():
    a = flow.sample_s3(1000, 5)
    b = flow.sample_s3(1000, 5)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.laplacian_rows, b.laplacian_rows)
    assert np.max(np.abs(np.linalg.norm(a.points, axis=1) - 1)) < 1e-14
    assert np.linalg.norm(a.points.mean(axis=0)) < 4 / np.sqrt(a.n)
    assert a.k >= flow.MIN_NEIGHBORS and np.all(a.weights > 0)
    with pytest.raises(ValueError):
        flow.sample_s3(499, 0)
    with pytest.raises(ValueError):
        flow.build_cloud(a.points, k=4)


def test_kernel_weights_symmetric_on_mutual_edges():
    c = flow.sample_s3(600, 6)
    w = {}
    for i in range(c.n):
        for j, wij in zip(c.neighbors[i], c.weights[i]):
            w[(i, int(j))] = wij
    mutual = [(i, j) for (i, j) in w if (j, i) in w]
    assert len(mutual) > 0.5 * len(w)
    assert max(abs(w[(i, j)] - w[(j, i)]) for i, j in mutual) < 1e-15


def test_calibration(cloud):
    cal = flow.calibrate(cloud)
    assert cal.scale > 0 and cal.residual < 0.1
    assert abs(cal.degree2_eigenvalue + 8) < 0.25 * 8
    assert cloud.calibration_residual == cal.residual


def test_coarse_cloud_fails_calibration():
    c = flow.sample_s3(500, 0, k=8)
    with pytest.raises(flow.CalibrationError):
        flow.calibrate(c)
    assert c.calibration_residual > flow.CALIBRATION_LIMIT


def test_constant_fields_are_in_the_kernel(cloud):
    ones = np.ones(cloud.n)
    assert np.max(np.abs(flow.apply_laplacian(cloud, ones))) < 1e-9
    assert np.max(np.abs(flow.jacobians(cloud, np.ones((cloud.n, 3))))) < 1e-9


def test_default_step_is_below_the_stability_bound(cloud):
    rho = flow.spectral_radius(cloud)
    dt = flow.default_dt(cloud)
    assert dt * rho <= flow.STABILITY_FACTOR + 1e-12
    assert dt <= flow.DT_FACTOR * cloud.epsilon ** 2
    assert flow.spectral_radius(cloud) == rho


def test_hopf_is_stationary(cloud):
    state = flow.initial_state(cloud, HOPF.eval(cloud.points))
    e0 = state.energy
    assert abs(e0 - 0.5 * 8 * flow.S3_VOLUME) < 0.05 * e0
    for _ in range(20):
        state = flow.flow_step(cloud, state)
    E = np.array(state.energy_history)
    assert np.max(np.abs(np.diff(E))) < 1e-6 * e0
    assert state.rejections == 0


def test_constant_map_is_an_exact_fixed_point(cloud):
    F0 = constant_map().eval(cloud.points)
    state = flow.initial_state(cloud, F0)
    for _ in range(3):
        state = flow.flow_step(cloud, state)
    assert np.array_equal(state.F, F0)
    assert state.energy_history == [0.0] * 4


def test_accepted_steps_respect_energy_tolerance(cloud):
    state = flow.initial_state(cloud, perturb(HOPF, 3, 0.3).eval(cloud.points))
    for _ in range(30):
        state = flow.flow_step(cloud, state)
        assert np.max(np.abs(np.linalg.norm(state.F, axis=1) - 1)) < 1e-12
    E = np.array(state.energy_history)
    assert np.all(np.diff(E) <= flow.ENERGY_TOL * E[0])
    assert E[-1] < E[0]


@pytest.mark.xfail(strict=True, reason="the fixed point of the discrete flow sits slightly "
                   "above the minimum of the discrete energy, so after the fast initial "
                   "decay the energy creeps up by sub-tolerance amounts")
def test_energy_strictly_decreases_over_first_100_steps(cloud):
    state = flow.initial_state(cloud, perturb(HOPF, 3, 0.3).eval(cloud.points))
    for _ in range(100):
        state = flow.flow_step(cloud, state)
    assert np.all(np.diff(state.energy_history) < 0)


def test_stagnation_error(cloud, monkeypatch):
    state = flow.initial_state(cloud, perturb(HOPF, 3, 0.3).eval(cloud.points))
    calls = iter(range(1, 10 ** 6))
    monkeypatch.setattr(flow, "energy", lambda c, F: state.energy + next(calls))
    with pytest.raises(flow.StagnationError):
        flow.flow_step(cloud, state)


def test_estimator_on_hopf(cloud):
    lam, mu = flow.estimate_singular_values(cloud, HOPF.eval(cloud.points))
    good = (np.abs(lam - 2) < 0.3) & (np.abs(mu - 2) < 0.3)
    assert np.mean(good) >= 0.9
    assert flow.estimate_singular_values(cloud, HOPF.eval(cloud.points), 0) == (lam[0], mu[0])


def test_estimator_on_constant_map(cloud):
    lam, mu = flow.estimate_singular_values(cloud, constant_map().eval(cloud.points))
    assert np.nanmax(np.abs(lam)) < 1e-9 and np.nanmax(np.abs(mu)) < 1e-9


@pytest.mark.parametrize("text", ["mobius:1,0.5,0.2i,1", "mobius:2,0,0,1"])
def test_d2_estimator_matches_analytic(cloud, text):
    f = parse_descriptor(text)
    lam, mu = flow.estimate_singular_values(cloud, f.eval(cloud.points))
    alam, amu = an.singular_values(f, cloud.points)
    exact = alam * amu
    assert np.mean(np.abs(lam * mu - exact) <= 0.15 * exact) >= 0.9


def test_discrete_laplacian_matches_analytic_tension_route(cloud):
    # Delta f = tau - |df|^2 f; the tangential remainder tau is small next to
    # |df|^2 f, so the comparison is made on the full Laplacian
    f = perturb(HOPF, 3, 0.3)
    F = f.eval(cloud.points)
    lap = flow.apply_laplacian(cloud, F)
    idx = np.arange(0, cloud.n, 200)
    exact = np.array([an.tension(f, cloud.points[i]).extrinsic
                      - an.energy_density(f, cloud.points[i]) * F[i] for i in idx])
    err = np.linalg.norm(lap[idx] - exact, axis=1)
    assert np.median(err) < 0.05 * np.median(np.linalg.norm(exact, axis=1))


def test_run_flow_hopf(cloud):
    res = flow.run_flow(HOPF, steps=10, cloud=cloud)
    assert res.diagnostics[-1]["u_spread"] < 0.2
    assert res.diagnostics[-1]["tension_rms"] < 1e-6


def test_run_flow_perturbed_decreases_energy_and_spread(cloud):
    res = flow.run_flow(perturb(HOPF, 3, 0.2), steps=60, cloud=cloud, stride=25)
    d = res.diagnostics
    assert d[-1]["energy"] <= d[0]["energy"]
    assert d[-1]["u_spread"] < d[0]["u_spread"]
    assert [s.steps for s in res.snapshots] == [0, 25, 50, 60]


def test_run_flow_constant_map(cloud):
    res = flow.run_flow(constant_map(), steps=3, cloud=cloud)
    for row in res.diagnostics:
        assert all(row[key] == 0 for key in ("energy", "u_spread", "d2_spread",
                                               "tension_rms"))


def test_run_flow_is_bitwise_deterministic():
    f = perturb(HOPF, 1, 0.2)
    a = flow.run_flow(f, n=800, seed=4, steps=5)
    b = flow.run_flow(f, n=800, seed=4, steps=5)
    assert np.array_equal(a.state.F, b.state.F)
    assert a.diagnostics == b.diagnostics
    assert flow.diagnostics_csv(a.diagnostics) == flow.diagnostics_csv(b.diagnostics)


def test_csv_columns():
    res = flow.run_flow(HOPF, n=600, seed=2, steps=2)
    rows = list(csv.reader(io.StringIO(flow.diagnostics_csv(res.diagnostics))))
    assert rows[0] == ["step", "time", "energy", "u_spread", "d2_spread"]
    assert len(rows) == 4
    snap = list(csv.reader(io.StringIO(flow.snapshot_csv(res.cloud, res.state))))
    assert snap[0] == flow.SNAPSHOT_COLUMNS and len(snap) == 601
