import json

import pytest

from incentive_seeking.cli import main
from incentive_seeking.config import (ConfigError, apply_overrides, config_hash, load_preset,
                                      resolve)


def test_presets_resolve(static_cfg, dynamic_cfg):
    assert static_cfg.gains.k == 1.0 and static_cfg.gains.T == 20.0
    assert dynamic_cfg.params.eps0 == 0.1 and dynamic_cfg.gains.sigma == 1
    assert dynamic_cfg.dither.eps_a == 0.001
    assert static_cfg.analysis["q_box"] == [0.0, 2170.0]


def test_overrides_and_alias():
    raw = apply_overrides(load_preset("mnpass_static"), ["gains.k=0.5", "dither.eps_mu=0.02"])
    cfg = resolve(raw)
    assert cfg.gains.k == 0.5 and cfg.dither.eps_p == 0.02
    with pytest.raises(ConfigError):
        apply_overrides(raw, ["gains.k"])
    with pytest.raises(ConfigError):
        apply_overrides(raw, ["nothing.k=1"])
    with pytest.raises(ConfigError):
        resolve(apply_overrides(raw, ["gains.kk=1"]))
    with pytest.raises(ConfigError):
        resolve(apply_overrides(raw, ["plant.v_free=1"]))


def test_hash_is_stable_under_reordering_and_idempotent_override():
    raw = load_preset("mnpass_static")
    shuffled = json.loads(json.dumps(raw, sort_keys=True))
    shuffled["plant"] = dict(reversed(list(shuffled["plant"].items())))
    assert config_hash(resolve(raw)) == config_hash(resolve(shuffled))
    same = resolve(apply_overrides(raw, ["gains.k=1"]))
    assert config_hash(same) == config_hash(resolve(raw))
    assert config_hash(resolve(apply_overrides(raw, ["gains.k=2"]))) != config_hash(same)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("nope")


def test_cli_simulate_schema_and_idempotent_override(tmp_path):
    assert main(["simulate", "--controller", "gisc", "--t-final", "5",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--controller", "gisc", "--t-final", "5", "--set", "gains.k=1",
                 "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trace_gisc.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace_gisc.csv").read_bytes()
    assert a.decode().splitlines()[0] == "t,j,rho,u_hat,u,mu1,mu2,phi"
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]


def test_cli_rerun_from_manifest(tmp_path):
    assert main(["simulate", "--controller", "fxisc", "--t-final", "3", "--set", "gains.k=2",
                 "--out", str(tmp_path / "a")]) == 0
    manifest = tmp_path / "a" / "manifest.json"
    assert main(["simulate", "--controller", "fxisc", "--t-final", "3", "--preset",
                 str(manifest), "--out", str(tmp_path / "b")]) == 0
    assert ((tmp_path / "a" / "trace_fxisc.csv").read_bytes()
            == (tmp_path / "b" / "trace_fxisc.csv").read_bytes())


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_cli_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--controller", "newton", "--out", str(tmp_path)]) == 2
    assert "gisc, hmisc, fxisc" in capsys.readouterr().err
    assert main(["viability", "--set", "plant.v_free=1", "--out", str(tmp_path)]) == 2
    assert main(["ensemble", "--n", "0", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--controller", "gisc", "--set", "gains.k=1e308", "--t-final", "30",
                 "--out", str(tmp_path / "x")]) == 3
    assert "t=" in capsys.readouterr().err


def test_cli_ensemble_outputs(tmp_path):
    out = tmp_path / "e"
    assert main(["ensemble", "--controller", "hmisc", "--n", "2", "--t-final", "4",
                 "--out", str(out)]) == 0
    assert (out / "traces" / "hmisc_001.csv").exists()
    assert (out / "mse.csv").read_text().splitlines()[0] == "t,mse_hmisc"
    summary = json.loads((out / "summary.json").read_text())
    assert "config_hash" in summary and "hmisc" in summary["controllers"]


def test_cli_viability_dynamic_phase_plane(tmp_path):
    out = tmp_path / "v"
    code = main(["viability", "--preset", "mnpass_dynamic", "--set", "analysis.n_grid=41",
                 "--out", str(out)])
    assert code in (0, 1)
    lines = (out / "phase_plane.csv").read_text().splitlines()
    assert lines[0] == "u,q_EL,rho,dq_EL,drho"
    assert len(lines) == 1 + 3 * 21 * 21
    assert {float(l.split(",")[0]) for l in lines[1:]} == {-40.0, 0.0, 40.0}
    report = json.loads((out / "viability.json").read_text())
    assert report["variant"] == "dynamic"


def test_cli_sweep(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--n-values", "2", "--n-seeds", "1", "--t-final", "3",
                 "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text().splitlines()[0] == "gamma_EL,tmse_gisc,tmse_hmisc,tmse_fxisc"
