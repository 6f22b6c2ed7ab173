from dataclasses import replace

import numpy as np
import pytest

from incentive_seeking.analysis import solve_equilibrium_static
from incentive_seeking.controllers import ControllerGains
from incentive_seeking.dither import DitherConfig
from incentive_seeking.experiments import (EnsembleConfig, gamma_sweep, mse, run_ensemble,
                                           sample_gammas, step_size, sweep_table_csv, tmse,
                                           write_ensemble_outputs)
from incentive_seeking.hybrid import HybridTrace, TerminalReason
from incentive_seeking.plant import HighwayParams

P, G, D = HighwayParams(), ControllerGains(), DitherConfig()
U_STAR = -5.7452355


def flat_trace(values, t=(0.0, 1.0)):
    x = np.array([[v] for v in values], dtype=float)
    return HybridTrace(np.array(t), np.zeros(len(t), dtype=int), x, TerminalReason.HORIZON,
                       ("rho",))


def test_mse_examples():
    at_ref = [flat_trace([20.0, 20.0]) for _ in range(3)]
    assert mse(at_ref, 0.5) == 0.0
    assert mse([flat_trace([23.0, 23.0]), flat_trace([17.0, 17.0])], 0.3) == pytest.approx(9.0)
    single = flat_trace([10.0, 30.0])
    assert mse([single], 0.25) == pytest.approx((15.0 - 20.0) ** 2)
    with pytest.raises(ValueError):
        mse([single], 2.0)


def test_tmse_examples():
    t = np.linspace(0, 1, 11)
    assert tmse(np.full(11, 3.0), t) == pytest.approx(3.0)
    assert tmse(t, t) == pytest.approx(0.5)
    # hand-computed trapezoid: segments (0,1)->(1,3)->(3,0): 2 + 3 = 5 over t_f = 3
    assert tmse(np.array([1.0, 3.0, 0.0]), np.array([0.0, 1.0, 3.0])) == pytest.approx(5 / 3)
    with pytest.raises(ValueError):
        tmse(np.ones(3), np.array([0.0, 1.0, 2.0]), t_f=5.0)


def test_step_size_aligns_with_minutes():
    h, per_minute = step_size(D)
    assert per_minute == 84
    assert h * per_minute * 60 == pytest.approx(1.0)
    assert h <= D.eps_p / 50


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig("gisc", n_traj=0)
    with pytest.raises(ValueError):
        EnsembleConfig("newton")
    with pytest.raises(ValueError):
        EnsembleConfig("gisc", n_traj=2, rho0=(1.0,))


def test_sampling_is_seeded():
    a = EnsembleConfig("gisc", n_traj=5, seed=4).initial_densities()
    b = EnsembleConfig("hmisc", n_traj=5, seed=4).initial_densities()
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 4) & (a <= 30))


def test_near_equilibrium_start_stays_small():
    cfg = EnsembleConfig("gisc", n_traj=1, rho0=(20.0,), u0=U_STAR, t_final_min=60)
    res = run_ensemble(cfg, P, G, D)
    slope = (solve_equilibrium_static(U_STAR + 0.01, P)
             - solve_equilibrium_static(U_STAR - 0.01, P)) / 0.02
    assert res.mse_curve.max() <= (D.eps_a * slope) ** 2
    # frozen regression value of the measured peak
    assert res.mse_curve.max() == pytest.approx(1.4807e-3, rel=1e-3)
    assert res.tmse == pytest.approx(tmse(res.mse_curve, res.t_grid_min))


def test_ensemble_is_deterministic(tmp_path):
    cfg = EnsembleConfig("hmisc", n_traj=3, t_final_min=20, seed=7)
    a = run_ensemble(cfg, P, G, D)
    b = run_ensemble(cfg, P, G, D)
    np.testing.assert_array_equal(a.mse_curve, b.mse_curve)
    write_ensemble_outputs(a, tmp_path / "a")
    write_ensemble_outputs(b, tmp_path / "b")
    for name in ("traces/hmisc_000.csv", "traces/hmisc_002.csv", "mse_hmisc.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "traces/hmisc_000.csv").read_text().splitlines()[0]
    assert header == "t,j,rho,u_hat,u,p,tau,mu1,mu2,phi"


def test_sweep_degenerate_cases():
    base = EnsembleConfig("gisc", n_traj=2, t_final_min=10, seed=1)
    rows = gamma_sweep(base, P, G, D, n_values=3, n_seeds=2, spread=0.0,
                       controllers=("gisc", "fxisc"))
    assert all(r.gamma_EL == P.gamma_EL for r in rows)
    assert rows[0].tmse == rows[1].tmse == rows[2].tmse
    single = gamma_sweep(base, P, G, D, n_values=1, n_seeds=1, spread=0.1,
                         controllers=("gisc",), seed=3)
    g = sample_gammas(P.gamma_EL, 1, 0.1, 3)[0]
    ref = run_ensemble(replace(base, n_traj=1), P.replace(gamma_EL=g), G, D)
    assert single[0].tmse["gisc"] == ref.tmse
    assert sweep_table_csv(single).splitlines()[0] == "gamma_EL,tmse_gisc"


def test_sweep_threads_do_not_change_results():
    base = EnsembleConfig("gisc", n_traj=2, t_final_min=10, seed=1)
    kw = dict(n_values=4, n_seeds=2, spread=0.15, controllers=("gisc",))
    a = gamma_sweep(base, P, G, D, threads=1, **kw)
    b = gamma_sweep(base, P, G, D, threads=2, **kw)
    assert [r.tmse for r in a] == [r.tmse for r in b]


def test_gamma_samples_within_spread():
    g = sample_gammas(1.71781, 20, 0.15, 0)
    assert np.all(np.abs(g / 1.71781 - 1) <= 0.15)
    with pytest.raises(ValueError):
        sample_gammas(1.0, 3, 1.5, 0)
