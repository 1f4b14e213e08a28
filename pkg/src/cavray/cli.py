"""Command-line interface: parameter inspection, scans, trace synthesis and
HMM analysis.

Commands write only into ``--out`` and finish by writing ``manifest.json``
(atomically, last) listing the command line, config snapshot, seed, tool
version and every output file.  Exit codes: 0 success, 2 config error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import classical, hmm, quantum
from .core import (
    AtomConfig,
    ConfigError,
    SystemParams,
    default_params,
    derived_summary,
    load_config,
    rabi_frequency,
    to_config,
)
from .trace import (
    LossScenario,
    TelegraphModel,
    model_meta,
    read_trace,
    synth_loss_scenario,
    synth_telegraph_trace,
    write_trace,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

SCAN_PRESETS = ("fig3a", "fig3b", "table")
SYNTH_PRESETS = ("fig2", "fig4d", "fig4e")

# Two-atom telegraph levels for the jump-rate presets: total detected rates
# 12/ms and 2/ms with the background folded into the low level.
_FIG4_LEVELS = dict(r_high=12e3, r_low=2e3, r_bg=0.0)
_FIG4_RATES = {"fig4d": 20.0, "fig4e": 4.0}   # 1/s; 5x contrast from z cooling

QUANTUM_HEADER = classical.SCAN_HEADER + ",n_p_quantum,p_exc,pop_plus,pop_minus"


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(config_path: str | None) -> tuple[SystemParams, AtomConfig]:
    if config_path is None:
        return default_params()
    if not Path(config_path).exists():
        raise _CliError(EXIT_IO, f"config file not found: {config_path}")
    return load_config(config_path)


def _write_manifest(out_dir: Path, argv: list[str], params: SystemParams,
                    cfg: AtomConfig, seed: int | None, outputs: list[str],
                    started: float, extra: dict | None = None):
    manifest = {
        "command": argv,
        "config": {
            "system_drive": to_config(params),
            "atoms": {"n_atoms": cfg.n_atoms, "phi_y": cfg.phi_y, "phi_z": cfg.phi_z},
        },
        "seed": seed,
        "version": __version__,
        "outputs": sorted(outputs),
        "wall_time_s": time.monotonic() - started,
    }
    if extra:
        manifest.update(extra)
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out_dir / "manifest.json")


def _subgrid_indices(n: int, n_sub: int) -> list[int]:
    if n_sub >= n:
        return list(range(n))
    if n_sub <= 1:
        return [0]
    return sorted({int(round(i * (n - 1) / (n_sub - 1))) for i in range(n_sub)})


def _quantum_row(args):
    params, point_axis, phi_y, phi_z, n_max, omega_l = args
    cfg = AtomConfig(n_atoms=2, phi_y=phi_y, phi_z=phi_z)
    _, obs = quantum.steady_observables(params, cfg, n_max=n_max, omega_l=omega_l)
    return (point_axis, phi_y, phi_z, obs.n_p, obs.p_exc, obs.pop_plus, obs.pop_minus)


def _write_quantum_csv(path: Path, params: SystemParams,
                       points: list[classical.ScanPoint], indices: list[int],
                       n_max: int, omega_l: float | None, jobs: int) -> float:
    """Quantum observables on a sub-grid next to the classical columns.
    Returns the maximum relative photon-number deviation."""
    tasks = [
        (params, points[i].axis_value, points[i].phi_y, points[i].phi_z, n_max, omega_l)
        for i in indices
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_quantum_row, tasks))
    else:
        rows = [_quantum_row(t) for t in tasks]

    fmt = classical.format_sig
    lines = ["# schema=1", QUANTUM_HEADER]
    max_rel = 0.0
    for i, row in zip(indices, rows):
        pt = points[i]
        _, _, _, n_p_q, p_exc, pop_p, pop_m = row
        max_rel = max(max_rel, abs(n_p_q - pt.result.n_p) / max(pt.result.n_p, 1e-6))
        lines.append(",".join([
            fmt(pt.axis_value), fmt(pt.phi_y), fmt(pt.phi_z),
            fmt(pt.result.n_p), fmt(pt.result.r_d / 1e3),
            fmt(n_p_q), fmt(p_exc), fmt(pop_p), fmt(pop_m),
        ]))
    path.write_text("\n".join(lines) + "\n")
    return max_rel


def _scan_grids(args, params: SystemParams, cfg: AtomConfig):
    """Yield (name, params, axis, grid, fixed_cfg, display_scale) per output."""
    fs_scale = args.free_space_scale
    if args.preset == "fig3a":
        grid = np.linspace(0.0, params.lambda_l / 2.0, args.num)
        fixed = AtomConfig(n_atoms=2, phi_y=cfg.phi_y, phi_z=0.0)
        scenarios = [
            ("fig3a_nominal", params, 1.0),
            ("fig3a_lossless", params.replace(kappa=1e-4 * params.gamma), 1.0),
            ("fig3a_freespace", params.replace(kappa=100.0 * params.gamma), fs_scale),
        ]
        for name, p_s, scale in scenarios:
            yield name, p_s, "delta_z", grid, fixed, scale
    elif args.preset == "fig3b":
        grid = np.linspace(0.0, 2.0 * math.pi, args.num)
        yield "fig3b", params, "phi_y", grid, AtomConfig(n_atoms=2), 1.0
    else:
        grid = np.linspace(args.start, args.stop, args.num)
        yield "scan", params, args.axis, grid, cfg, fs_scale


def cmd_scan(args, argv: list[str]) -> int:
    started = time.monotonic()
    params, cfg = _load(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    extra: dict = {}
    omega_l = None if args.drive_calibration == "field" else rabi_frequency(params)

    if args.preset == "table":
        one = classical.cavity_field_simple(params, 1)
        two = classical.cavity_field_simple(params, 2)
        fmt = classical.format_sig
        lines = ["# schema=1", "n_atoms,n_p,r_d_per_ms"]
        for n, res in ((1, one), (2, two)):
            lines.append(f"{n},{fmt(res.n_p)},{fmt(res.r_d / 1e3)}")
            print(f"{n} atom(s): n_p = {res.n_p:.4g}, R_D = {res.r_d / 1e3:.3g} /ms")
        (out_dir / "table.csv").write_text("\n".join(lines) + "\n")
        outputs.append("table.csv")
        _write_manifest(out_dir, argv, params, cfg, None, outputs, started)
        return EXIT_OK

    for name, p_s, axis, grid, fixed, scale in _scan_grids(args, params, cfg):
        points = classical.scan(p_s, axis, list(grid), fixed)
        csv_name = f"{name}.csv"
        classical.write_scan_csv(out_dir / csv_name, points, display_scale=scale)
        outputs.append(csv_name)
        if args.quantum:
            indices = _subgrid_indices(len(points), args.quantum_points)
            qcsv = f"{name}_quantum.csv"
            max_rel = _write_quantum_csv(out_dir / qcsv, p_s, points, indices,
                                         args.nmax, omega_l, args.jobs)
            outputs.append(qcsv)
            if args.compare_classical:
                extra.setdefault("max_rel_deviation", {})[name] = max_rel
                print(f"{name}: max relative n_p deviation (quantum vs classical) "
                      f"= {max_rel:.3e}")

    _write_manifest(out_dir, argv, params, cfg, None, outputs, started, extra)
    return EXIT_OK


def cmd_synth(args, argv: list[str]) -> int:
    started = time.monotonic()
    params, cfg = _load(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    meta: dict = {"preset": args.preset}

    if args.preset == "fig2":
        scenario = LossScenario()
        trace, regions = synth_loss_scenario(scenario, args.seed)
        meta.update(model_meta(scenario.telegraph))
        meta["regions"] = [
            {"label": r.label, "t_start_s": r.t_start, "t_end_s": r.t_end}
            for r in regions
        ]
    else:
        if args.preset in _FIG4_RATES:
            rate = _FIG4_RATES[args.preset]
            model = TelegraphModel(rate_cd=rate, rate_dc=rate, **_FIG4_LEVELS)
            duration, bin_width = 10.0, 50e-6
        else:
            model = TelegraphModel(rate_cd=args.rate_cd, rate_dc=args.rate_dc,
                                   r_high=args.r_high, r_low=args.r_low,
                                   r_bg=args.r_bg)
            duration, bin_width = args.duration, args.bin_width
        trace = synth_telegraph_trace(model, duration, bin_width, args.seed)
        meta.update(model_meta(model))

    write_trace(out_dir / "trace.csv", trace, meta)
    outputs += ["trace.csv", "trace.json"]
    _write_manifest(out_dir, argv, params, cfg, args.seed, outputs, started)
    return EXIT_OK


def cmd_analyze(args, argv: list[str]) -> int:
    started = time.monotonic()
    params, cfg = _load(args.config)
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise _CliError(EXIT_IO, f"trace file not found: {trace_path}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    trace, _ = read_trace(trace_path)
    init = None
    if args.init_means is not None:
        init = hmm.initial_guess(trace.counts)
        init.emit_means = np.array(sorted(args.init_means, reverse=True), dtype=float)
    result = hmm.baum_welch(trace, init=init, max_iter=args.max_iter, tol=args.tol)

    report = {
        "fitted": {
            "trans": result.fitted.trans.tolist(),
            "emit_means": result.fitted.emit_means.tolist(),
            "initial": result.fitted.initial.tolist(),
        },
        "rates_per_s": {
            "constructive_to_destructive": result.rates[0],
            "destructive_to_constructive": result.rates[1],
        },
        "rate_stderr_per_s": {
            "constructive_to_destructive": result.rate_stderr[0],
            "destructive_to_constructive": result.rate_stderr[1],
        },
        "log_likelihood": result.log_likelihood,
        "n_iter": result.n_iter,
        "degenerate": result.degenerate,
        "bin_width_s": trace.bin_width,
        "n_bins": int(len(trace.counts)),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    lines = ["# schema=1", "bin_index,t_start_s,p_constructive,p_destructive,viterbi_state"]
    fmt = classical.format_sig
    for i in range(len(trace.counts)):
        lines.append(",".join([
            str(i), repr(i * trace.bin_width),
            fmt(result.posteriors[i, 0]), fmt(result.posteriors[i, 1]),
            str(int(result.viterbi_path[i])),
        ]))
    (out_dir / "posteriors.csv").write_text("\n".join(lines) + "\n")

    outputs = ["report.json", "posteriors.csv"]
    _write_manifest(out_dir, argv, params, cfg, trace.seed, outputs, started)
    if result.degenerate:
        print("warning: degenerate fit (states collapse or mix memorylessly)")
    print(f"rates: cd = {result.rates[0]:.4g} /s, dc = {result.rates[1]:.4g} /s "
          f"(loglik {result.log_likelihood:.6g}, {result.n_iter} iterations)")
    return EXIT_OK


def cmd_params(args, argv: list[str]) -> int:
    params, cfg = _load(args.config)
    payload: dict = {
        "system_drive": to_config(params),
        "atoms": {"n_atoms": cfg.n_atoms, "phi_y": cfg.phi_y, "phi_z": cfg.phi_z},
    }
    if args.print_derived:
        payload["derived"] = derived_summary(params)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavray",
        description="Collective cavity Rayleigh scattering models and "
                    "photon-trace analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_params = sub.add_parser("params", help="echo a config and its derived quantities")
    p_params.add_argument("--config", help="TOML/JSON config path (default: built-in)")
    p_params.add_argument("--print-derived", action="store_true",
                          help="include tau, r^2, C, V, E_L, Omega_L")
    p_params.set_defaults(func=cmd_params)

    p_scan = sub.add_parser("scan", help="classical (and optionally quantum) scans")
    p_scan.add_argument("--config")
    p_scan.add_argument("--preset", choices=SCAN_PRESETS)
    p_scan.add_argument("--axis", choices=("delta_z", "phi_y"))
    p_scan.add_argument("--start", type=float)
    p_scan.add_argument("--stop", type=float)
    p_scan.add_argument("--num", type=int, default=201)
    p_scan.add_argument("--quantum", action="store_true",
                        help="add quantum observables on a sub-grid")
    p_scan.add_argument("--nmax", type=int, default=5, help="Fock cutoff")
    p_scan.add_argument("--quantum-points", type=int, default=11)
    p_scan.add_argument("--compare-classical", action="store_true",
                        help="report max relative quantum/classical deviation")
    p_scan.add_argument("--drive-calibration", choices=("field", "saturation"),
                        default="field")
    p_scan.add_argument("--free-space-scale", type=float, default=1.0,
                        help="display multiplier for the n_p/rate columns of the "
                             "free-space scenario (or of a custom scan)")
    p_scan.add_argument("--jobs", type=int, default=1)
    p_scan.add_argument("--out", required=True)
    p_scan.set_defaults(func=cmd_scan)

    p_synth = sub.add_parser("synth", help="synthesize photon-count traces")
    p_synth.add_argument("--config")
    p_synth.add_argument("--preset", choices=SYNTH_PRESETS)
    p_synth.add_argument("--rate-cd", type=float, default=5.0)
    p_synth.add_argument("--rate-dc", type=float, default=5.0)
    p_synth.add_argument("--r-high", type=float, default=12e3)
    p_synth.add_argument("--r-low", type=float, default=2e3)
    p_synth.add_argument("--r-bg", type=float, default=0.0)
    p_synth.add_argument("--duration", type=float, default=10.0)
    p_synth.add_argument("--bin-width", type=float, default=50e-6)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_an = sub.add_parser("analyze", help="two-state HMM analysis of a trace")
    p_an.add_argument("trace", help="trace CSV written by synth")
    p_an.add_argument("--config")
    p_an.add_argument("--init-means", type=float, nargs=2, metavar=("HIGH", "LOW"))
    p_an.add_argument("--max-iter", type=int, default=200)
    p_an.add_argument("--tol", type=float, default=1e-3)
    p_an.add_argument("--out", required=True)
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "scan" and args.preset is None:
        if args.axis is None or args.start is None or args.stop is None:
            parser.error("scan needs --preset or --axis with --start/--stop")
    try:
        return args.func(args, argv)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (quantum.SteadyStateError, classical.SingularConfigurationError,
            ArithmeticError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def run():  # console-script entry point
    raise SystemExit(main())
