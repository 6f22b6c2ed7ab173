"""Command-line entry point: ``isc simulate|ensemble|sweep|viability``.

Exit codes: 0 success, 1 negative viability verdict, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import build_response_map, phase_plane, viability_report
from .config import ConfigError, apply_overrides, config_hash, load_preset, resolve
from .controllers import CONTROLLER_KINDS
from .experiments import (EnsembleConfig, EnsembleError, gamma_sweep,
                          run_ensemble, summary_json, sweep_table_csv, write_ensemble_outputs,
                          write_trace_csv)
from .hybrid import IntegrationError

EXIT_OK, EXIT_NEGATIVE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _load(args):
    raw = load_preset(args.preset)
    if "resolved" in raw:  # a manifest from an earlier run
        raw = raw["resolved"]
    raw = apply_overrides(raw, args.set or [])
    if args.seed is not None:
        raw["seed"] = args.seed
    return resolve(raw)


def _write_manifest(out: Path, command: str, cfg, artifacts: list[str], extra=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config_hash": config_hash(cfg),
        "resolved": cfg.to_dict(),
        "artifacts": artifacts,
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _ensemble_config(cfg, controller: str, n_traj=None, t_final=None) -> EnsembleConfig:
    ens = cfg.ensemble
    return EnsembleConfig(
        controller=controller, plant_variant=cfg.plant_variant,
        n_traj=int(ens["n_traj"] if n_traj is None else n_traj),
        rho0_range=tuple(float(v) for v in ens["rho0_range"]), u0=float(ens["u0"]),
        q_EL0=None if ens["q_EL0"] is None else float(ens["q_EL0"]),
        t_final_min=float(ens["t_final_min"] if t_final is None else t_final),
        seed=cfg.seed, random_phase=bool(ens["random_phase"]))


def _check_controller(name: str) -> None:
    if name not in CONTROLLER_KINDS:
        raise ConfigError(f"unknown controller {name!r}; valid kinds: {', '.join(CONTROLLER_KINDS)}")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    _check_controller(args.controller)
    out = Path(args.out or "runs/simulate")
    rho0 = args.rho0 if args.rho0 is not None else float(np.mean(cfg.ensemble["rho0_range"]))
    ens = replace(_ensemble_config(cfg, args.controller, 1, args.t_final), rho0=(rho0,))
    if args.u0 is not None:
        ens = replace(ens, u0=args.u0)
    trace_path = out / f"trace_{args.controller}.csv"
    _write_manifest(out, "simulate", cfg, [str(trace_path)],
                    {"controller": args.controller, "rho0": rho0, "u0": ens.u0,
                     "t_final_min": ens.t_final_min})
    res = run_ensemble(ens, cfg.params, cfg.gains, cfg.dither, cfg.rho_ref,
                       int(cfg.integrator["steps_per_period"]), int(cfg.integrator["j_max"]))
    write_trace_csv(res, 0, trace_path)
    print(f"wrote {trace_path}; final rho={res.final_rho[0]:.4f}, u_hat={res.final_u_hat[0]:.4f}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    kinds = [args.controller] if args.controller else list(cfg.ensemble["controllers"])
    for kind in kinds:
        _check_controller(kind)
    n = args.n if args.n is not None else int(cfg.ensemble["n_traj"])
    if n < 1:
        raise ConfigError(f"--n must be at least 1, got {n}")
    out = Path(args.out or "runs/ensemble")
    artifacts = [str(out / "traces"), str(out / "mse.csv"), str(out / "summary.json")]
    _write_manifest(out, "ensemble", cfg, artifacts, {"controllers": kinds, "n_traj": n})
    summaries, curves = {}, {}
    t_grid = None
    for kind in kinds:
        res = run_ensemble(_ensemble_config(cfg, kind, n, args.t_final), cfg.params, cfg.gains,
                           cfg.dither, cfg.rho_ref, int(cfg.integrator["steps_per_period"]),
                           int(cfg.integrator["j_max"]))
        summaries[kind] = write_ensemble_outputs(res, out)
        curves[kind] = res.mse_curve
        t_grid = res.t_grid_min
        print(f"{kind}: tmse={res.tmse:.6g} mse(t_f)={res.mse_curve[-1]:.6g}")
    with open(out / "mse.csv", "w") as fh:
        fh.write("t," + ",".join(f"mse_{k}" for k in kinds) + "\n")
        for i, t in enumerate(t_grid):
            fh.write(f"{t:.9g}," + ",".join(f"{curves[k][i]:.9g}" for k in kinds) + "\n")
    u_star = None
    if args.with_u_star:
        rmap = _response_map(cfg, oracle=False)
        u_star = rmap.u_star
    summary_json({"config_hash": config_hash(cfg), "u_star": u_star, "controllers": summaries},
                 out / "summary.json")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    sw = cfg.sweep
    n_values = args.n_values if args.n_values is not None else int(sw["n_values"])
    n_seeds = args.n_seeds if args.n_seeds is not None else int(sw["n_seeds"])
    spread = args.spread if args.spread is not None else float(sw["spread"])
    if n_values < 1 or n_seeds < 1 or not 0 <= spread < 1:
        raise ConfigError("need n_values >= 1, n_seeds >= 1 and spread in [0, 1)")
    out = Path(args.out or "runs/sweep")
    _write_manifest(out, "sweep", cfg, [str(out / "sweep.csv"), str(out / "summary.json")],
                    {"n_values": n_values, "n_seeds": n_seeds, "spread": spread})
    base = _ensemble_config(cfg, cfg.ensemble["controllers"][0], n_seeds, args.t_final)
    rows = gamma_sweep(base, cfg.params, cfg.gains, cfg.dither, n_values, n_seeds, spread,
                       cfg.ensemble["controllers"], cfg.rho_ref, cfg.seed, args.threads,
                       int(cfg.integrator["steps_per_period"]))
    sweep_table_csv(rows, out / "sweep.csv")
    kinds = list(cfg.ensemble["controllers"])
    wins = {k: sum(r.tmse[k] < r.tmse["gisc"] for r in rows)
            for k in kinds if k != "gisc" and "gisc" in kinds}
    summary_json({"config_hash": config_hash(cfg), "n_values": n_values,
                  "rows_beating_gisc": wins}, out / "summary.json")
    print(f"wrote {out / 'sweep.csv'}; rows beating gisc: {wins}")
    return EXIT_OK


def _finite_or_null(obj):
    """Replace NaN/inf by None so the report is strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite_or_null(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_null(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _response_map(cfg, oracle: bool = True):
    a = cfg.analysis
    return build_response_map(
        cfg.params, tuple(a["u_box"]), int(a["n_grid"]), cfg.plant_variant, cfg.rho_ref,
        rho_box=tuple(a["rho_box"]), theta_box=(tuple(a["rho_box"]), tuple(a["q_box"])),
        n_seeds=int(a["n_seeds"]), oracle=oracle)


def cmd_viability(args) -> int:
    cfg = _load(args)
    out = Path(args.out or "runs/viability")
    artifacts = [str(out / "response_map.csv"), str(out / "viability.json")]
    if cfg.plant_variant == "dynamic":
        artifacts.append(str(out / "phase_plane.csv"))
    _write_manifest(out, "viability", cfg, artifacts)
    rmap = _response_map(cfg)
    rmap.to_csv(out / "response_map.csv")
    report = viability_report(rmap)
    report["config_hash"] = config_hash(cfg)
    (out / "viability.json").write_text(
        json.dumps(_finite_or_null(report), indent=2, sort_keys=True, allow_nan=False) + "\n")
    if cfg.plant_variant == "dynamic":
        q = np.linspace(*cfg.analysis["q_box"], 21)
        rho = np.linspace(*cfg.analysis["rho_box"], 21)
        with open(out / "phase_plane.csv", "w") as fh:
            fh.write("u,q_EL,rho,dq_EL,drho\n")
            for u in (-40.0, 0.0, 40.0):
                for row in phase_plane(cfg.params, u, q, rho):
                    fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
    verdicts = {k: report[k]["verdict"] for k in ("A1", "A2", "A3")}
    print(f"u*={report['u_star']:.6g} verdicts={verdicts}")
    return EXIT_OK if report["all_positive"] else EXIT_NEGATIVE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", default="mnpass_static",
                        help="preset name, JSON file or run manifest (default: %(default)s)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a setting by dotted path, e.g. gains.k=0.5")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for initial-condition sampling")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")

    parser = argparse.ArgumentParser(prog="isc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="one closed-loop trajectory")
    p.add_argument("--controller", required=True, help="gisc, hmisc or fxisc")
    p.add_argument("--rho0", type=float, help="initial density [veh/mi]")
    p.add_argument("--u0", type=float, help="initial incentive")
    p.add_argument("--t-final", type=float, help="horizon [min]")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", parents=[common], help="ensemble runs and MSE curves")
    p.add_argument("--controller", help="single controller (default: the preset's list)")
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--t-final", type=float, help="horizon [min]")
    p.add_argument("--with-u-star", action="store_true",
                   help="also compute the optimal incentive for the summary")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("sweep", parents=[common], help="gamma_EL robustness sweep")
    p.add_argument("--n-values", type=int)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--t-final", type=float, help="horizon [min]")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("viability", parents=[common], help="response map and assumption checks")
    p.set_defaults(func=cmd_viability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IntegrationError, EnsembleError) as exc:
        print(f"integration error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # ConfigError and invariant violations of typed configs
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
