import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmix.dynamics import (
    BoundaryValues,
    MixtureModel,
    MixtureState,
    SteadyStateError,
    density_rhs,
    homogeneous_reduce,
    linepack_balance,
    mixture_sound_speed_sq,
    nodal_concentration,
    pressure,
    solve_edge_flux,
    steady_state,
)
from gasmix.network import incidence, load_network, refine

from conftest import SIGMA1, SIGMA2, chain_network, data_path, pipe_network


# -- equation of state and composition --------------------------------------------


def test_pressure_oracles():
    assert pressure(0.0, 0.0, SIGMA1, SIGMA2) == 0.0
    assert pressure(43.67, 0.0, SIGMA1, SIGMA2) == pytest.approx(5.0e6, rel=1e-3)
    assert pressure(40.0, 1.0, SIGMA1, SIGMA2) == pytest.approx(6.412e6, rel=1e-4)


def test_concentration_oracles():
    assert nodal_concentration(np.array([36.0]), np.array([4.0]))[0] == pytest.approx(0.1)
    np.testing.assert_array_equal(nodal_concentration(np.array([3.0, 5.0]), np.zeros(2)), 0.0)
    assert nodal_concentration(np.array([2.5]), np.array([2.5]))[0] == pytest.approx(0.5)


def test_state_rejects_negative_density():
    with pytest.raises(ValueError):
        MixtureState(np.array([-1.0]), np.array([0.0]), np.zeros(1))


@pytest.mark.parametrize("alpha2, expected", [(0.0, SIGMA1**2), (1.0, SIGMA2**2), (0.1, 2.5 * SIGMA1**2)])
def test_mixture_sound_speed(alpha2, expected):
    assert mixture_sound_speed_sq(alpha2, SIGMA1, SIGMA2) == pytest.approx(expected, rel=1e-12)
    model = homogeneous_reduce(pipe_network(), alpha2, SIGMA1, SIGMA2)
    assert model.sound_speed**2 == pytest.approx(expected, rel=1e-12)


# -- edge flux ---------------------------------------------------------------------


def _pure_pipe_boundary(s1, w=0.0):
    return BoundaryValues(np.array([s1]), np.array([0.0]), np.array([w]))


def test_edge_flux_forward_oracle():
    phi = solve_edge_flux(pipe_network(), np.array([40.0]), np.zeros(1), _pure_pipe_boundary(45.0))
    assert phi[0] == pytest.approx(456.2715, abs=1e-3)


def test_edge_flux_reverse_oracle():
    phi = solve_edge_flux(pipe_network(), np.array([45.0]), np.zeros(1), _pure_pipe_boundary(40.0))
    assert phi[0] == pytest.approx(-483.949, abs=1e-3)


def test_edge_flux_zero_drop():
    phi = solve_edge_flux(pipe_network(), np.array([42.0]), np.zeros(1), _pure_pipe_boundary(42.0))
    assert phi[0] == 0.0


@given(rho_in=st.floats(10.0, 80.0), rho_out=st.floats(10.0, 80.0), h2=st.floats(0.0, 0.3))
@settings(max_examples=80, deadline=None)
def test_edge_flux_zeroes_momentum_residual(rho_in, rho_out, h2):
    net = pipe_network()
    model = MixtureModel(net, SIGMA1, SIGMA2)
    bv = BoundaryValues(np.array([rho_in * (1 - h2)]), np.array([rho_in * h2]), np.zeros(1))
    r1, r2 = np.array([rho_out * (1 - h2)]), np.array([rho_out * h2])
    phi = model.edge_flux(r1, r2, bv)
    mu_in, mu_out = net.ratio_vectors()
    res = model.momentum(r1, r2, bv.s1, bv.s2, phi, mu_in, mu_out)
    assert abs(float(np.ravel(res)[0])) <= 1e-12 * 12e6


# -- density right-hand side ---------------------------------------------------------


def test_zero_hydrogen_gives_zero_hydrogen_rate():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    model = MixtureModel(net, SIGMA1, SIGMA2)
    nw = net.num_withdrawal
    rng = np.random.default_rng(3)
    bv = BoundaryValues(np.array([44.0]), np.array([0.0]), rng.uniform(0, 80, nw))
    _, d2 = density_rhs(model, rng.uniform(35, 45, nw), np.zeros(nw), bv, [1.2, 1.1])
    np.testing.assert_array_equal(d2, 0.0)


def test_chain_linepack_telescopes():
    net = chain_network(5)
    model = MixtureModel(net, SIGMA1, SIGMA2)
    rng = np.random.default_rng(5)
    r1 = rng.uniform(35, 45, 5)
    r2 = 0.05 * r1
    w = np.zeros(5)
    w[-1] = 150.0
    bv = BoundaryValues(np.array([46.0]), np.array([2.3]), w)
    d1, d2 = density_rhs(model, r1, r2, bv)
    phi = solve_edge_flux(net, r1, r2, bv)
    F = incidence(net).mass_matrix()
    area_flux_in = phi[0]
    eta_out = r2[-1] / (r1[-1] + r2[-1])
    alpha2 = 2.3 / 48.3
    total2 = float(np.sum(F @ d2))
    assert total2 == pytest.approx(alpha2 * area_flux_in - eta_out * w[-1], rel=1e-10, abs=1e-9)
    total1 = float(np.sum(F @ d1))
    assert total1 == pytest.approx((1 - alpha2) * area_flux_in - (1 - eta_out) * w[-1], rel=1e-10, abs=1e-9)


def test_linepack_balance_identity_on_fixture():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    model = MixtureModel(net, SIGMA1, SIGMA2)
    rng = np.random.default_rng(11)
    nw = net.num_withdrawal
    bv = BoundaryValues(np.array([40.0]), np.array([0.8]), rng.uniform(0, 60, nw))
    for rate, net_injection in linepack_balance(model, rng.uniform(35, 45, nw), rng.uniform(0.1, 1, nw),
                                                bv, [1.3, 1.05]):
        assert rate == pytest.approx(net_injection, rel=1e-12, abs=1e-9)


def test_rhs_jacobian_matches_finite_differences():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    model = MixtureModel(net, SIGMA1, SIGMA2)
    nw = net.num_withdrawal
    rng = np.random.default_rng(2)
    bv = BoundaryValues(np.array([42.0]), np.array([0.6]), rng.uniform(10, 60, nw))
    r = np.concatenate([rng.uniform(38, 44, nw), rng.uniform(0.3, 0.7, nw)])
    ratios = [1.2, 1.1]

    def f(y):
        d1, d2, _ = model.rhs(y[:nw], y[nw:], bv, ratios)
        return np.concatenate([d1, d2])

    J = model.rhs_jacobian(r[:nw], r[nw:], bv, ratios).toarray()
    h = 1e-6 * np.abs(r)
    Jfd = np.column_stack([(f(r + h[i] * e) - f(r - h[i] * e)) / (2 * h[i]) for i, e in enumerate(np.eye(2 * nw))])
    assert np.max(np.abs(J - Jfd)) <= 1e-6 * np.max(np.abs(Jfd))


# -- steady states -----------------------------------------------------------------


def test_steady_quiescent_network():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    nw = net.num_withdrawal
    bv = BoundaryValues.from_pressure(5e6, 0.1, np.zeros(nw), SIGMA1, SIGMA2)
    s = steady_state(net, bv, None, SIGMA1, SIGMA2)
    np.testing.assert_allclose(s.pressure(SIGMA1, SIGMA2), 5e6, rtol=1e-10)
    np.testing.assert_allclose(s.flux, 0.0, atol=1e-8)
    np.testing.assert_allclose(s.eta2, 0.1, rtol=1e-10)


def test_steady_single_pipe_inverts_flux_oracle():
    s = steady_state(pipe_network(), _pure_pipe_boundary(45.0, 456.2715), None, SIGMA1, SIGMA2)
    assert s.rho1[0] == pytest.approx(40.0, abs=1e-4)
    assert s.flux[0] == pytest.approx(456.2715, rel=1e-10)


def test_steady_residual_and_info():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    nw = net.num_withdrawal
    w = np.zeros(nw)
    w[:3] = [85.0, 52.0, 95.0]
    bv = BoundaryValues.from_pressure(5e6, 0.1, w, SIGMA1, SIGMA2)
    info = steady_state(net, bv, [1.3, 1.2], SIGMA1, SIGMA2, return_info=True)
    assert info.residual <= 1e-10
    model = MixtureModel(net, SIGMA1, SIGMA2)
    d1, d2, _ = model.rhs(info.state.rho1, info.state.rho2, bv, [1.3, 1.2])
    assert np.max(np.abs(np.concatenate([d1, d2]))) <= 1e-10 * np.max(info.state.rho1)


def test_steady_fails_for_impossible_demand():
    bv = _pure_pipe_boundary(45.0, 5_000.0)
    with pytest.raises(SteadyStateError):
        steady_state(pipe_network(), bv, None, SIGMA1, SIGMA2)


def test_fixture_mean_steady_state_within_pressure_box(fixture_doc, fixture_net):
    from gasmix.workflow import mean_steady_state

    state, ratios = mean_steady_state(fixture_doc, fixture_net)
    p = state.pressure(*fixture_doc.sigmas)
    assert np.all(p >= 5e6 - 1.0) and np.all(p <= 12e6)
    assert np.all((ratios >= 1.0) & (ratios <= 2.0))


def test_homogeneous_rhs_matches_total_of_mixture():
    net = chain_network(3)
    alpha2 = 0.1
    hom = homogeneous_reduce(net, alpha2, SIGMA1, SIGMA2)
    model = MixtureModel(net, SIGMA1, SIGMA2)
    rho = np.array([44.0, 42.0, 40.0])
    w = np.array([0.0, 30.0, 90.0])
    s_total = 46.0
    bv = BoundaryValues(np.array([s_total * (1 - alpha2)]), np.array([s_total * alpha2]), w)
    d1, d2, _ = model.rhs(rho * (1 - alpha2), rho * alpha2, bv)
    d, _ = hom.rhs(rho, np.array([s_total]), w)
    np.testing.assert_allclose(d1 + d2, d, rtol=1e-12, atol=1e-12)
