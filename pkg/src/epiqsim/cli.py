"""Batch front door: subcommand dispatch and deterministic output layout.

Every run writes a ``run_manifest.json`` recording the config hash, the seed
(when one is in play), and library versions — enough to reproduce the outputs
byte for byte.  No timestamps, no hostnames: identical inputs give identical
bytes.  Floats in CSV output use one fixed format; JSON uses repr floats.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, ensemble, independence, uncertainty
from .config import ConfigError, load_config, parse_config
from .dynamics import EvolutionConfig, EvolutionResult, evolve
from .families import GradPower, PowerLaw, family_from_label
from .fields import (
    FLOAT_FMT,
    Grid1D,
    IntegrationError,
    free_potential,
    gaussian_fields,
    snapshot_csv,
    to_madelung,
    to_wavefunction,
    two_gaussian_fields,
)

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("time", "norm", "total_energy", "quantum_energy",
                      "correction_d")


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; that slot is reserved
    for numerical failures here, so route usage problems through ConfigError."""

    def error(self, message):
        raise ConfigError(message)


# --- deterministic writers ----------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _csv_table(columns: tuple[str, ...], rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(FLOAT_FMT % v for v in row))
    return "\n".join(lines) + "\n"


def _manifest(out_dir: Path, command: str, config_sha: str,
              seed: int | None = None, extra: dict | None = None) -> None:
    payload = {
        "command": command,
        "config_sha256": config_sha,
        "seed": seed,
        "versions": {
            "epiqsim": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        payload.update(extra)
    _write_json(out_dir / "run_manifest.json", payload)


def _args_sha(payload: dict) -> str:
    """Stand-in config hash for subcommands driven by flags alone."""
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()


def _write_evolution_outputs(out_dir: Path, result: EvolutionResult,
                             initial_psi) -> None:
    log = result.log.as_arrays()
    rows = zip(log["times"], log["norms"], log["total_energy"],
               log["quantum_energy"], log["correction_d"])
    _write_text(out_dir / "trajectory.csv", _csv_table(TRAJECTORY_COLUMNS, rows))
    snaps = result.snapshots or [
        (0.0, initial_psi),
        (float(log["times"][-1]), result.final),
    ]
    for index, (_, psi) in enumerate(snaps):
        _write_text(out_dir / f"snapshot_{index:04d}.csv",
                    snapshot_csv(to_madelung(psi, max_floored_fraction=1.0)))


# --- subcommands ---------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    fields = cfg.build_initial_fields()
    grid = fields.grid
    potential = cfg.build_potential(grid)
    family = cfg.build_family()
    ev = cfg.build_evolution()
    hbar, mass = cfg.physics()
    try:
        ev.validate_for(grid, hbar, mass)
    except ValueError as exc:
        raise ConfigError(f"[evolution] {exc}") from exc
    psi0 = to_wavefunction(fields)
    result = evolve(psi0, potential, family, ev)
    _write_evolution_outputs(out_dir, result, psi0)
    _manifest(out_dir, "simulate", cfg.sha256,
              extra={"integrator": ev.integrator, "n_steps": ev.n_steps,
                     "family": family.label()})
    logger.info("simulate: %d steps -> %s", ev.n_steps, out_dir)
    return 0


def _cmd_uncertainty(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    fields = cfg.build_initial_fields()
    family = cfg.build_family()
    report = uncertainty.analyze(fields, family)
    payload = report.as_dict()
    _write_json(out_dir / "uncertainty_report.json", payload)
    keys = list(payload)
    row = ",".join(
        FLOAT_FMT % payload[k] if isinstance(payload[k], float)
        else str(int(payload[k])) for k in keys
    )
    _write_text(out_dir / "uncertainty_report.csv",
                ",".join(keys) + "\n" + row + "\n")
    _manifest(out_dir, "uncertainty", cfg.sha256,
              extra={"family": family.label()})
    return 0


def _cmd_ensemble(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    fields = cfg.build_initial_fields()
    family = cfg.build_family()
    n, seed, xi_kind = cfg.ensemble_params()
    if args.n is not None:
        if args.n < 1:
            raise ConfigError("--n must be at least 1")
        n = args.n
    if args.seed is not None:
        seed = args.seed
    hbar, _ = cfg.physics()
    xi_dist = ensemble.XiDistribution(kind=xi_kind, hbar=hbar)
    samples = ensemble.draw_samples(fields, family, xi_dist, n, seed)
    estimate = ensemble.empirical_ms_error(samples, fields)
    report = uncertainty.analyze(fields, family)
    table = ensemble.conditional_mean_table(samples)
    payload = {
        "n": n,
        "seed": seed,
        "xi_kind": xi_kind,
        "family": family.label(),
        "ms_error": {"value": estimate.value, "se": estimate.se},
        "ms_error_predicted": report.ms_error_p,
        "conditional_mean": {
            "n_bins": int(table.centers.size),
            "populated_bins": int(np.sum(table.populated)),
        },
    }
    _write_json(out_dir / "samples_summary.json", payload)
    if args.raw_samples:
        rows = zip(samples.q, samples.xi, samples.p)
        _write_text(out_dir / "samples.csv", _csv_table(("q", "xi", "p"), rows))
    _manifest(out_dir, "ensemble", cfg.sha256, seed=seed,
              extra={"n": n, "xi_kind": xi_kind, "family": family.label()})
    return 0


def _cmd_classify(args) -> int:
    try:
        family = family_from_label(args.family)
    except ValueError as exc:
        raise ConfigError(f"--family: {exc}") from exc
    verdict = independence.classify(family)
    payload = verdict.as_dict()
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        _write_json(out_dir / "classify_verdict.json", payload)
        _manifest(out_dir, "classify", _args_sha({"family": args.family}))
    return 0


SWEEP_COLUMNS = ("lambda", "correction_c", "ms_error_p", "ms_error_q",
                 "fisher_q", "var_p", "var_q", "uncertainty_product")


def _sweep_row(config_text: str, lam: float) -> tuple[float, ...]:
    """One sweep point, self-contained so a worker process can run it."""
    cfg = parse_config(config_text)
    fields = cfg.build_initial_fields()
    family = dataclasses.replace(cfg.build_family(), lam=lam)
    report = uncertainty.analyze(fields, family)
    return (lam, report.correction_c, report.ms_error_p, report.ms_error_q,
            report.fisher_q, report.var_p, report.var_q,
            report.var_p * report.var_q)


def _worker_count() -> int:
    raw = os.environ.get("EPIQSIM_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError as exc:
        raise ConfigError(f"EPIQSIM_THREADS must be an integer, got '{raw}'") from exc
    if count < 1:
        raise ConfigError("EPIQSIM_THREADS must be at least 1")
    return count


def _parse_range(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError("--range must look like start:stop:count")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"--range: {exc}") from exc
    if count < 1:
        raise ConfigError("--range count must be at least 1")
    return np.linspace(start, stop, count)


def _cmd_sweep(args) -> int:
    if args.param != "lambda":
        raise ConfigError(f"unsupported sweep parameter '{args.param}'")
    config_path = Path(args.config)
    cfg = load_config(config_path)
    family = cfg.build_family()
    if not isinstance(family, (PowerLaw, GradPower)):
        raise ConfigError(
            "sweeping lambda needs a powerlaw or gradpower family, "
            f"got '{family.label()}'"
        )
    cfg.build_initial_fields()  # validate before forking workers
    values = _parse_range(args.range)
    config_text = config_path.read_text()
    workers = min(_worker_count(), len(values))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, [config_text] * len(values), values))
    else:
        rows = [_sweep_row(config_text, lam) for lam in values]
    out_dir = Path(args.out)
    _write_text(out_dir / "sweep.csv", _csv_table(SWEEP_COLUMNS, rows))
    _manifest(out_dir, "sweep", cfg.sha256,
              extra={"param": args.param, "range": args.range,
                     "family": family.label(), "workers": workers})
    logger.info("sweep: %d points with %d worker(s)", len(values), workers)
    return 0


# Built-in double-slit-style demo: packets leaving a screen, overlapping and
# interfering as they spread.  Parameters are fixed so two invocations with
# different families differ only in the family.
_DEMO = {
    "n_points": 512, "x_min": -20.0, "x_max": 20.0,
    "sigma_q": 0.6, "separation": 3.0,
    "dt": 2e-4, "t_final": 1.2, "snapshot_every": 600,
}


def _cmd_demo_slits(args) -> int:
    try:
        family = family_from_label(args.family)
    except ValueError as exc:
        raise ConfigError(f"--family: {exc}") from exc
    if args.slits not in (1, 2):
        raise ConfigError("--slits must be 1 or 2")
    out_dir = Path(args.out)
    grid = Grid1D(_DEMO["n_points"], _DEMO["x_min"], _DEMO["x_max"])
    if args.slits == 2:
        fields = two_gaussian_fields(grid, _DEMO["sigma_q"], _DEMO["separation"])
    else:
        fields = gaussian_fields(grid, _DEMO["sigma_q"])
    ev = EvolutionConfig(dt=_DEMO["dt"], t_final=_DEMO["t_final"],
                         snapshot_every=_DEMO["snapshot_every"],
                         log_every=_DEMO["snapshot_every"])
    psi0 = to_wavefunction(fields)
    result = evolve(psi0, free_potential(grid), family, ev)
    _write_evolution_outputs(out_dir, result, psi0)
    _manifest(out_dir, "demo-slits",
              _args_sha({"family": args.family, "slits": args.slits, **_DEMO}),
              extra={"family": family.label(), "slits": args.slits})
    return 0


# --- parser / entry point --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="epiqsim",
        description="Nonlinear wave dynamics and uncertainty relations "
                    "driven by configurable estimation-error families.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a configured scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("uncertainty", help="single-state uncertainty report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_uncertainty)

    p = sub.add_parser("ensemble", help="Monte Carlo momentum-value sampling")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="override sample count")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--raw-samples", action="store_true",
                   help="also write samples.csv (q, xi, p)")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("classify",
                       help="estimation-independence verdict for a family")
    p.add_argument("--family", required=True,
                   help="e.g. zero | powerlaw:1.0:0.5 | gradpower:-0.2:3 "
                        "| custom:EXPR")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("sweep", help="coupling sweep of the uncertainty report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True, help="only 'lambda' is supported")
    p.add_argument("--range", required=True, help="start:stop:count")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("demo-slits",
                       help="bundled interference demo (fixed scenario)")
    p.add_argument("--family", default="zero")
    p.add_argument("--slits", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_demo_slits)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("EPIQSIM_LOGLEVEL", "WARNING"))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except IntegrationError as exc:
        step = f" at step {exc.step}" if exc.step is not None else ""
        print(f"numerical failure{step}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
