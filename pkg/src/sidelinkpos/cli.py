"""Command-line interface.

Subcommands: ``simulate`` (path list CSV), ``estimate`` (one observation to
JSON), ``bound`` (bound report JSON), ``run`` (experiment to results CSV) and
``summarize`` (results CSV to RMSE/CDF CSVs).

Exit codes: 0 success, 2 configuration or input error, 3 runtime error (for
``run``, rows written before the failure are kept).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bounds as bd
from . import estimators as est
from .geometry import ArrayConfig, BandPlan, SignalConfig, dbm_to_watts
from .harness import (
    ConfigError,
    ExperimentConfig,
    read_records,
    rows_to_csv,
    run_experiment,
    summarize,
    write_results,
)
from .scene import SCENES, GeometryError, Receiver, export_paths, generate_paths, import_paths
from .waveform import synthesize

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ESTIMATORS = {
    "MF": lambda obs, seed: est.mf_1d(obs) if obs.array.n_elements == 1 else est.mf_3d(obs),
    "CPD": lambda obs, seed: est.cpd_estimate(obs, seed=seed),
    "CPD-SA": lambda obs, seed: est.cpd_sa(obs, seed=seed),
    "ESPRIT2D": lambda obs, seed: est.esprit_2d(obs),
    "ESPRIT2D-SA": lambda obs, seed: est.esprit_2d_sa(obs),
    "ESPRIT1D": lambda obs, seed: est.esprit_1d(obs),
}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in np.asarray(x).tolist()] if isinstance(x, np.ndarray) \
            else [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _band_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("band plan and signal")
    g.add_argument("--carrier", type=float, default=5.9e9, help="first carrier (Hz)")
    g.add_argument("--bands", type=int, default=1, help="number of bands")
    g.add_argument("--separation", type=float, default=100e6, help="band separation (Hz)")
    g.add_argument("--subcarriers", type=int, default=167, help="subcarriers per band")
    g.add_argument("--spacing", type=float, default=120e3, help="subcarrier spacing (Hz)")
    g.add_argument("--tx-power-dbm", type=float, default=10.0)


def _array_args(p: argparse.ArgumentParser, default=(4, 2)):
    p.add_argument("--array", type=int, nargs=2, default=list(default), metavar=("NX", "NZ"),
                   help="receiver array size (half-wavelength spacing)")


def _position_args(p: argparse.ArgumentParser):
    p.add_argument("--scene", choices=sorted(SCENES), default="urban")
    p.add_argument("--position", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"),
                   help="CRU position (m)")


def _plan(args) -> tuple[BandPlan, SignalConfig]:
    bp = BandPlan.uniform(args.carrier, args.bands, args.separation, args.subcarriers, args.spacing)
    return bp, SignalConfig(tx_power=dbm_to_watts(args.tx_power_dbm))


def cmd_simulate(args) -> int:
    scene = SCENES[args.scene]()
    paths = generate_paths(scene, args.position, Receiver(args.receiver))
    if args.out:
        export_paths(paths, args.out)
    else:
        export_paths(paths, sys.stdout)
    return EXIT_OK


def cmd_estimate(args) -> int:
    bp, sig = _plan(args)
    try:
        with open(args.paths, newline="") as fh:
            paths = import_paths(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{args.paths}: {exc}") from None
    array = ArrayConfig.half_wavelength(*args.array, bp.wavelength)
    obs = synthesize(paths, array, bp, sig, args.seed,
                     noise_level=0.0 if args.noiseless else None)
    res = ESTIMATORS[args.algorithm](obs, args.seed)
    json.dump(_jsonable(res.to_dict()), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_bound(args) -> int:
    bp, sig = _plan(args)
    scene = SCENES[args.scene]()
    array = ArrayConfig.half_wavelength(*args.array, bp.wavelength)
    pr = generate_paths(scene, args.position, Receiver.AT_RSU)
    pc = generate_paths(scene, args.position, Receiver.AT_CRU)
    rep = bd.bound_report(pr, pc, scene.rsu, args.position, array, bp, sig)
    out = {
        "parameters": bd.observable_params(array),
        "fim": rep.fim, "bias": rep.bias, "channel_crb": rep.channel_crb,
        "sigma_toa_s2": rep.sigma_toa, "waa_cov": rep.waa_cov,
        "peb_los_m": rep.peb_los, "peb_nlos_m": rep.peb_nlos, "peb_waa_m": rep.peb_waa,
        "members_rsu": list(rep.members_rsu), "members_cru": list(rep.members_cru),
    }
    json.dump(_jsonable(out), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    n = write_results(run_experiment(cfg), args.out)
    print(f"wrote {n} records to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        records = read_records(args.input)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"{args.input}: {exc}") from None
    if not records:
        raise ConfigError(f"{args.input} holds no records")
    rmse_rows, cdf_rows = summarize(records)
    rows_to_csv(rmse_rows, args.rmse_out if args.rmse_out else sys.stdout)
    if args.cdf_out:
        rows_to_csv(cdf_rows, args.cdf_out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidelinkpos", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit the path list for one CRU position")
    _position_args(p)
    p.add_argument("--receiver", choices=[r.value for r in Receiver], default="AtRSU")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="synthesize one observation and estimate its channel")
    p.add_argument("--paths", required=True, help="path list CSV")
    p.add_argument("--algorithm", choices=sorted(ESTIMATORS), default="CPD-SA")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")
    _array_args(p)
    _band_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bound", help="bound report at one CRU position")
    _position_args(p)
    _array_args(p)
    _band_args(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("run", help="run an experiment config to a results CSV")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out", required=True, help="results CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="RMSE and CDF tables from a results CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--rmse-out", help="RMSE CSV (default: stdout)")
    p.add_argument("--cdf-out", help="CDF CSV")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, GeometryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, est.EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
