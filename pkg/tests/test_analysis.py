import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import expit, logit

from incentive_seeking.analysis import (MultipleEquilibria, NoEquilibrium, ResponseMap,
                                        build_response_map, damped_newton, density_rhs,
                                        dither_average_update, dynamic_oracle,
                                        equilibria_static, finite_difference_gradient,
                                        kappa_estimate, normalized_kappa, performance_index,
                                        phase_plane, reduced_cost, solve_equilibrium_dynamic,
                                        solve_equilibrium_static, static_oracle, viability_report)
from incentive_seeking.dither import DitherConfig
from incentive_seeking.plant import HighwayParams

P = HighwayParams()
PD = HighwayParams(eps0=0.1)


def velocity(rho, p=P):
    z = 4.0 / (p.rho_jam - p.rho_crit) * (rho - 0.5 * (p.rho_jam + p.rho_crit))
    return (p.v_free - p.v_jam) / (1.0 + math.exp(z)) + p.v_jam


def static_inflow_oracle(u, p=P):
    # with delta = 1 the travel-time terms cancel, so the inflow does not depend on rho
    return p.Q * expit(-(p.b * u + p.gamma_EL))


def free_flow_root(q):
    return brentq(lambda r: velocity(r) * r - q, 0.0, 45.0, xtol=1e-14)


# closed-form minimisers: inflow equals the outflow at the reference density
U_STAR_STATIC = (-logit(velocity(20.0) * 20.0 / P.Q) - P.gamma_EL) / P.b
U_STAR_DYNAMIC = (P.Q / 2 - velocity(20.0) * 20.0) / P.a_tilde


@pytest.fixture(scope="module")
def static_map():
    return build_response_map(P)


def test_closed_form_minimisers_are_as_expected():
    assert U_STAR_STATIC == pytest.approx(-5.746, abs=0.01)
    assert U_STAR_DYNAMIC == pytest.approx(-1.12, abs=0.01)


def test_performance_index():
    assert performance_index(20.0, 20.0) == 0.0
    assert performance_index(25.0, 20.0) == 25.0
    d = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(performance_index(20 + d, 20), performance_index(20 - d, 20))


@pytest.mark.parametrize("u", [-8.0, -5.746, 0.0, 3.0, 20.0])
def test_static_equilibrium_dual_route(u):
    rho = solve_equilibrium_static(u, P)
    assert rho == pytest.approx(free_flow_root(static_inflow_oracle(u)), abs=1e-9)
    assert abs(density_rhs(rho, u, P)) <= 1e-8


def test_static_equilibrium_examples():
    assert solve_equilibrium_static(-5.746, P) == pytest.approx(20.0, abs=0.05)
    assert solve_equilibrium_static(40.0, P) < 1e-4


def test_static_equilibrium_errors():
    with pytest.raises(NoEquilibrium):
        solve_equilibrium_static(-12.0, P)
    with pytest.raises(MultipleEquilibria) as info:
        solve_equilibrium_static(-11.0, P)
    assert len(info.value.roots) == 2
    assert len(equilibria_static(-11.0, P)) == 2


def test_static_forward_oracle_agrees():
    u = np.array([-8.0, 0.0, 10.0])
    sims, ok = static_oracle(u, P, np.linspace(0, 50, 5))
    assert ok.all()
    for i, ui in enumerate(u):
        np.testing.assert_allclose(sims[i], solve_equilibrium_static(ui, P), rtol=1e-3)


def test_dynamic_equilibrium_examples():
    q, rho = solve_equilibrium_dynamic(-1.12, PD)
    assert q == pytest.approx(1197.0, abs=1.0) and rho == pytest.approx(20.0, abs=0.1)
    q0, rho0 = solve_equilibrium_dynamic(0.0, PD)
    assert q0 == 1085.0
    assert rho0 == pytest.approx(free_flow_root(1085.0), abs=1e-8)
    for u in (-5.0, 2.0, 7.3):
        q, _ = solve_equilibrium_dynamic(u, PD)
        assert q == pytest.approx(PD.Q / 2 - PD.a_tilde * u)


def test_damped_newton_residual_and_forward_oracle():
    x = damped_newton(0.0, PD, [500.0, 5.0])
    assert x == pytest.approx([1085.0, free_flow_root(1085.0)])
    sims, ok = dynamic_oracle(np.array([0.0]), PD, np.array([[1085.0, 10.0], [0.0, 0.0]]))
    assert ok.all()
    np.testing.assert_allclose(sims[0], np.tile(x, (2, 1)), rtol=1e-3)


def test_static_map_minimiser(static_map):
    assert static_map.u_star == pytest.approx(U_STAR_STATIC, abs=1e-5)
    assert static_map.u_star == pytest.approx(-5.75, abs=0.05)
    assert static_map.phi_star <= 1e-4
    i = int(np.argmin(np.abs(static_map.u_grid - static_map.u_star)))
    du = static_map.du
    assert reduced_cost(static_map.u_star + du, P) >= static_map.phi_star
    assert reduced_cost(static_map.u_star - du, P) >= static_map.phi_star
    assert static_map.phi_tilde[i] >= static_map.phi_star


def test_static_map_is_monotone_where_defined(static_map):
    rho = static_map.ell_values[:, 0]
    ok = np.isfinite(rho)
    assert np.all(np.diff(rho[ok]) <= 0)


def test_composition_identity(static_map):
    for i in range(0, 801, 40):
        if not static_map.unique_equilibrium[i]:
            continue
        u = static_map.u_grid[i]
        direct = performance_index(solve_equilibrium_static(u, P), 20.0)
        assert abs(static_map.phi_tilde[i] - direct) <= 1e-12


def test_oracles_agree_on_unique_points(static_map):
    unique = static_map.unique_equilibrium
    assert unique.sum() > 400
    assert np.all(static_map.oracle_rel_err[unique] <= 1e-3)


def test_static_viability_verdicts_are_reported(static_map):
    report = viability_report(static_map)
    assert set(report) >= {"A1", "A2", "A3", "u_star", "gradient_lipschitz_est"}
    # the stable free-flow branch leaves [0, 50] below u = -11.4 (see the notes)
    assert report["A1"]["failing_u_range"][0] == -40.0
    lo, hi = report["A2"]["local_convex_interval"]
    assert lo < static_map.u_star < hi
    assert report["A3"]["kappa_local"] > 0


def test_non_convex_toy_map_is_rejected():
    u = np.linspace(-3, 3, 61)
    phi = np.sin(u)
    rmap = ResponseMap(u, phi[:, None], phi, -np.pi / 2, -1.0, kappa_estimate(phi, u[1] - u[0]),
                       np.ones(u.size, dtype=bool))
    report = viability_report(rmap)
    assert report["A2"]["verdict"] is False
    assert report["A3"]["verdict"] is False
    assert report["A1"]["verdict"] is True


def test_convex_toy_map_is_accepted():
    u = np.linspace(-1, 1, 21)
    phi = u ** 2
    rmap = ResponseMap(u, phi[:, None], phi, 0.0, 0.0, kappa_estimate(phi, 0.1),
                       np.ones(u.size, dtype=bool))
    report = viability_report(rmap)
    assert report["all_positive"]
    assert report["A3"]["kappa_est"] == pytest.approx(2.0)
    assert normalized_kappa(rmap) == pytest.approx(2.0 * 4 / 1)


def test_dynamic_map_minimiser():
    rmap = build_response_map(PD, variant="dynamic", rho_box=(0.0, 160.0), n_grid=161,
                              oracle=False)
    assert rmap.u_star == pytest.approx(-1.12, abs=0.05)
    assert rmap.u_star == pytest.approx(U_STAR_DYNAMIC, abs=1e-5)


def test_response_map_csv(static_map):
    lines = static_map.to_csv().splitlines()
    assert lines[0] == "u,rho,phi_tilde,unique"
    assert len(lines) == 802


def test_phase_plane_rows():
    rows = phase_plane(PD, 0.0, [0.0, 1085.0], [20.0])
    assert rows[1][3] == pytest.approx(0.0)
    assert rows[0][3] == pytest.approx(10 * 1085.0)


def test_dither_average_matches_second_order_expansion():
    # phi(u) = u^3: the period average of -k phi(u + a cos) (2/a) cos is -k(3u^2 + 3a^2/4)
    d = DitherConfig(eps_a=0.1)
    avg = dither_average_update(lambda v: v ** 3, 2.0, d, k=1.0)
    assert avg == pytest.approx(-(12.0 + 3 * 0.01 / 4), rel=1e-12)


def test_finite_difference_gradient():
    assert finite_difference_gradient(np.sin, 0.3) == pytest.approx(np.cos(0.3), rel=1e-10)


def test_build_response_map_validation():
    with pytest.raises(ValueError):
        build_response_map(P, n_grid=2)
