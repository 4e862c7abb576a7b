import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmix.dynamics import BoundaryValues, FlowReversalWarning, homogeneous_reduce, steady_state
from gasmix.network import load_network, refine
from gasmix.simulator import (
    BoundaryProfiles,
    PeriodicProfile,
    SeriesTable,
    SimulationError,
    SimulationOptions,
    consistency_study,
    constant_controls,
    interpolate,
    linepack_residuals,
    simulate,
    simulate_homogeneous,
)

from conftest import SIGMA1, SIGMA2, data_path, pipe_network

HOUR = 3600.0
DAY = 24 * HOUR


# -- periodic profiles ---------------------------------------------------------------


def test_interpolate_midpoint_and_wrap():
    prof = PeriodicProfile([0.0, 12 * HOUR], [1.0, 2.0], DAY)
    assert interpolate(prof, 6 * HOUR) == pytest.approx(1.5)
    assert interpolate(prof, 18 * HOUR) == pytest.approx(1.5)
    assert interpolate(prof, DAY) == pytest.approx(1.0)
    np.testing.assert_allclose(prof(np.array([0.0, 3 * HOUR, 30 * HOUR])), [1.0, 1.25, 1.5])


def test_vector_profile_shapes():
    prof = PeriodicProfile([0.0, HOUR], [[1.0, 10.0], [3.0, 30.0]], 2 * HOUR)
    assert prof.dim == 2
    np.testing.assert_allclose(prof(0.5 * HOUR), [2.0, 20.0])
    assert prof(np.array([0.0, 0.5 * HOUR])).shape == (2, 2)


def test_profile_rejects_bad_samples():
    with pytest.raises(ValueError):
        PeriodicProfile([0.0, 2.0, 1.0], [1.0, 2.0, 3.0], 10.0)
    with pytest.raises(ValueError):
        PeriodicProfile([0.0, 10.0], [1.0, 2.0], 10.0)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_profile_reproduces_samples_and_stays_in_hull(values, frac):
    n = len(values)
    times = np.arange(n) * 10.0
    prof = PeriodicProfile(times, values, 10.0 * n)
    np.testing.assert_allclose(prof(times), values, atol=1e-12)
    v = float(prof(frac * 10.0 * n))
    assert min(values) - 1e-12 <= v <= max(values) + 1e-12


# -- simulation ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def fixture_steady():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    w = np.zeros(net.num_withdrawal)
    ids = [n.id for n in net.withdrawal_nodes]
    for nid, val in ((2, 80.0), (3, 50.0), (4, 90.0)):
        w[ids.index(nid)] = val
    bv = BoundaryValues.from_pressure([5e6], [0.1], w, SIGMA1, SIGMA2)
    ratios = [1.2, 1.1]
    x0 = steady_state(net, bv, ratios, SIGMA1, SIGMA2)
    traj = simulate(net, BoundaryProfiles.constant(bv, DAY), PeriodicProfile.constant(ratios, DAY), x0, DAY)
    return net, bv, x0, traj


def test_steady_boundary_gives_constant_trajectory(fixture_steady):
    _, _, x0, traj = fixture_steady
    rel = np.abs(traj.total_density - x0.total_density) / x0.total_density
    assert np.max(rel) <= 1e-6
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(DAY)


def test_linepack_identity_on_constant_run(fixture_steady):
    net, bv, _, traj = fixture_steady
    assert np.max(linepack_residuals(net, traj, BoundaryProfiles.constant(bv, DAY))) <= 1e-5


@pytest.mark.filterwarnings("ignore::gasmix.dynamics.FlowReversalWarning")
def test_zero_hydrogen_stays_exactly_zero():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    nw = net.num_withdrawal
    times = np.arange(24) * HOUR
    w = np.zeros((24, nw))
    w[:, 0] = 60 + 20 * np.sin(2 * np.pi * times / DAY)
    bnd = BoundaryProfiles.from_pressure(times, np.full(24, 5e6), np.zeros(24), w, DAY, SIGMA1, SIGMA2)
    x0 = steady_state(net, bnd.at(0.0), [1.2, 1.1], SIGMA1, SIGMA2)
    traj = simulate(net, bnd, PeriodicProfile.constant([1.2, 1.1], DAY), x0, DAY)
    assert np.all(traj.rho2 == 0.0)
    assert np.all(traj.table().eta2 == 0.0)


def test_withdrawal_step_settles_at_new_steady_state():
    net = pipe_network(20.0)
    w0, w1 = 100.0, 160.0
    period = 1e12
    bnd = BoundaryProfiles.from_pressure(
        [0.0, 600.0], [5e6, 5e6], [0.1, 0.1], [[w0], [w1]], period, SIGMA1, SIGMA2)
    x0 = steady_state(net, bnd.at(0.0), None, SIGMA1, SIGMA2)
    T = 12 * HOUR
    traj = simulate(net, bnd, None, x0, T, SimulationOptions(rtol=1e-8))
    target = steady_state(net, bnd.at(T), None, SIGMA1, SIGMA2)
    assert traj.flux[-1, 0] == pytest.approx(target.flux[0], rel=1e-3)
    inlet = traj.flux[:, 0]
    assert np.all(np.diff(inlet) >= -1e-6 * w1)
    assert inlet[-1] > w0


def test_missing_controls_rejected(fixture_steady):
    net, bv, x0, _ = fixture_steady
    with pytest.raises(ValueError):
        simulate(net, BoundaryProfiles.constant(bv, DAY), None, x0, DAY)


def test_collapse_raises_simulation_error():
    net = pipe_network(50.0)
    bv = BoundaryValues.from_pressure([5e6], [0.0], [400.0], SIGMA1, SIGMA2)
    x0 = steady_state(net, BoundaryValues.from_pressure([5e6], [0.0], [100.0], SIGMA1, SIGMA2), None)
    with pytest.raises(SimulationError) as info:
        simulate(net, BoundaryProfiles.constant(bv, DAY), None, x0, DAY)
    assert info.value.time > 0


def test_constant_controls_helper():
    net = load_network(data_path("four_node_network.yaml"))
    prof = constant_controls(net, DAY, 1.3)
    np.testing.assert_allclose(prof(5.0), [1.3, 1.3])
    assert constant_controls(pipe_network(), DAY) is None


def test_table_csv_round_trip(fixture_steady, tmp_path):
    _, _, _, traj = fixture_steady
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "t_s"
    assert header[1] == "p_node_2" and any(h.startswith("eta2_node_") for h in header)
    assert header[-1] == f"phi_edge_{traj.edge_ids[-1]}"
    back = SeriesTable.from_csv(path)
    table = traj.table()
    np.testing.assert_array_equal(back.times, table.times)
    np.testing.assert_array_equal(back.pressure, table.pressure)
    np.testing.assert_array_equal(back.flux, table.flux)


# -- reduced-model equivalence and grid refinement -------------------------------------


def _uniform_mixture_run(alpha2, rtol=1e-8):
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    nw = net.num_withdrawal
    times = np.arange(24) * HOUR
    ids = [n.id for n in net.withdrawal_nodes]
    w = np.zeros((24, nw))
    for nid, base in ((2, 70.0), (3, 45.0), (4, 80.0)):
        w[:, ids.index(nid)] = base * (1 + 0.3 * np.sin(2 * np.pi * times / DAY))
    bnd = BoundaryProfiles.from_pressure(times, np.full(24, 5e6), np.full(24, alpha2), w, DAY, SIGMA1, SIGMA2)
    ratios = [1.25, 1.15]
    x0 = steady_state(net, bnd.at(0.0), ratios, SIGMA1, SIGMA2)
    ctrl = PeriodicProfile.constant(ratios, DAY)
    opts = SimulationOptions(rtol=rtol, atol=1e-12, include_steps=False)
    traj = simulate(net, bnd, ctrl, x0, DAY, opts)
    hom = homogeneous_reduce(net, alpha2, SIGMA1, SIGMA2)
    s_tot = PeriodicProfile(bnd.s1.sample_times, bnd.s1.values + bnd.s2.values, DAY)
    t_h, rho_h = simulate_homogeneous(hom, s_tot, bnd.w, ctrl, x0.total_density, DAY, opts)
    return traj, t_h, rho_h


def test_homogeneous_equivalence_with_hydrogen():
    traj, t_h, rho_h = _uniform_mixture_run(0.1)
    np.testing.assert_array_equal(traj.times, t_h)
    assert np.max(np.abs(traj.total_density - rho_h) / rho_h) <= 1e-5
    np.testing.assert_allclose(traj.eta2, 0.1, rtol=1e-6)


def test_homogeneous_equivalence_without_hydrogen():
    traj, t_h, rho_h = _uniform_mixture_run(0.0)
    assert np.all(traj.rho2 == 0.0)
    np.testing.assert_array_equal(traj.times, t_h)
    assert np.max(np.abs(traj.rho1 - rho_h) / rho_h) <= 1e-5


def test_consistency_study_converges():
    T = 12 * HOUR
    ts = np.linspace(0, T, 25)[:-1]
    w = 150 + 60 * np.sin(2 * np.pi * ts / T)
    bnd = BoundaryProfiles.from_pressure(ts, np.full(ts.size, 5e6), np.full(ts.size, 0.1), w[:, None], T,
                                         SIGMA1, SIGMA2)
    res = consistency_study(pipe_network(50.0), [10e3, 5e3, 2.5e3], 625.0, bnd, T)
    assert np.all(np.diff(res.pressure_errors) < 0)
    assert np.all(np.diff(res.flux_errors) < 0)
    assert np.all(res.pressure_orders >= 0.8) and np.all(res.flux_orders >= 0.8)


def test_consistency_steady_boundary_flux_error_vanishes():
    T = 6 * HOUR
    bnd = BoundaryProfiles.constant(BoundaryValues.from_pressure([5e6], [0.1], [150.0], SIGMA1, SIGMA2), T)
    res = consistency_study(pipe_network(50.0), [10e3, 5e3], 2.5e3, bnd, T)
    assert np.max(res.flux_errors) <= 1e-6


def test_reversal_warning_is_emitted_once():
    net = pipe_network(10.0)
    period = 4 * HOUR
    bnd = BoundaryProfiles.from_pressure([0.0, HOUR], [5e6, 5e6], [0.0, 0.0], [[0.0], [0.0]], period,
                                         SIGMA1, SIGMA2)
    x0 = steady_state(net, bnd.at(0.0), None, SIGMA1, SIGMA2)
    x0.rho1[0] *= 1.01
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        simulate(net, bnd, None, x0, HOUR)
    assert sum(issubclass(c.category, FlowReversalWarning) for c in caught) == 1
