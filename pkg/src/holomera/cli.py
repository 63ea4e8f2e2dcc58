"""Command-line runner: ``holomera run | validate | report``.

Exit codes: 0 success, 1 configuration error, 2 runtime error. The default
output root is ``$HOLOMERA_OUT`` (or ``./results``) joined with the scenario name.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .analysis import fit_critical_exponent, scaling_fit
from .scenarios import ConfigError, ExperimentConfig, estimate_cost, run_cell

OUT_ENV = "HOLOMERA_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
MANIFEST = "manifest.json"

log = logging.getLogger("holomera")


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def load_config(path, seed=None, noise=None, out=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(d, dict):
        if seed is not None:
            d["seed"] = seed
        if noise is not None:
            d["noise"] = noise
        if out is not None:
            d["out"] = out
    return ExperimentConfig.from_dict(d)


def output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(OUT_ENV, "results")) / cfg.scenario


def cell_key(g: float, t: int) -> str:
    return f"g{g!r}_T{t}"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows, cfg: ExperimentConfig) -> str:
    columns = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    buf.write(f"# scenario: {cfg.scenario}\n# config_hash: {cfg.config_hash()}\n# seed: {cfg.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _run_one(args):
    cfg_dict, g, t = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return g, t, run_cell(cfg, g, t)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Run all pending cells, then assemble the CSV and manifest."""
    out = output_dir(cfg)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST
    started = time.time()
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config_hash") != cfg.config_hash():
            log.info("config changed; discarding previous cells")
            manifest = {}
    done = manifest.get("cells", {})
    manifest.update({"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "code_version": code_version(),
                     "cells": done})

    def record(g, t, rows):
        key = cell_key(g, t)
        (cells_dir / f"{key}.json").write_text(json.dumps(rows, default=_json_default))
        done[key] = {"g": g, "T": t, "seed": cfg.cell_seed(g, t), "file": f"cells/{key}.json"}
        manifest_path.write_text(json.dumps(manifest, indent=2, default=_json_default))

    pending = [(g, t) for g, t in cfg.cell_list()
               if cell_key(g, t) not in done or not (out / done[cell_key(g, t)]["file"]).exists()]
    if len(pending) < len(cfg.cell_list()):
        log.info("skipping %d completed cells", len(cfg.cell_list()) - len(pending))
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for g, t, rows in pool.map(_run_one, [(cfg.to_dict(), g, t) for g, t in pending]):
                record(g, t, rows)
    else:
        for g, t in pending:
            log.info("cell g=%s T=%s", g, t)
            record(g, t, run_cell(cfg, g, t))

    rows = []
    for g, t in cfg.cell_list():
        rows += json.loads((out / done[cell_key(g, t)]["file"]).read_text())
    csv_path = out / f"{cfg.scenario}.csv"
    csv_path.write_text(rows_to_csv(rows, cfg))
    manifest["outputs"] = [csv_path.name]
    manifest["wall_time_s"] = manifest.get("wall_time_s", 0.0) + (time.time() - started)
    manifest["finished"] = datetime.now(timezone.utc).isoformat()
    manifest_path.write_text(json.dumps(manifest, indent=2, default=_json_default))
    return csv_path


def validate_config(cfg: ExperimentConfig) -> float:
    cost = estimate_cost(cfg)
    if cost > cfg.budget:
        raise ConfigError(f"budget: estimated cost {cost:.3g} exceeds budget {cfg.budget:.3g}")
    return cost


def report(out: Path) -> str:
    manifest = json.loads((out / MANIFEST).read_text())
    cfg = ExperimentConfig.from_dict(manifest["config"])
    rows = read_csv(out / manifest["outputs"][0])
    lines = [f"scenario {cfg.scenario}: {len(rows)} rows, {len(manifest['cells'])} cells, "
             f"wall time {manifest.get('wall_time_s', 0):.1f} s"]
    if cfg.scenario == "sweep_g":
        data = [(float(r["g"]), float(r["x"])) for r in rows if 0.5 <= float(r["g"]) <= 0.8 + 1e-9]
        if len(data) >= 3:
            fit = fit_critical_exponent(data, 0.8 + 1e-9)
            lines.append(f"critical exponent over g in [0.5, 0.8]: {fit.exponent:.4f} +- {fit.exponent_err:.4f}")
        for r in rows:
            lines.append(f"  g={float(r['g']):.2f}  E={float(r['energy']):.6f} (exact {float(r['energy_exact']):.6f})"
                         f"  <X>={float(r['x']):.4f}  <Z>={float(r['z']):.4f}")
    elif cfg.scenario in ("scaling_critical", "scaling_gapped"):
        pts = [(int(r["T"]), float(r["s2_ideal"])) for r in rows]
        for t, s in pts:
            lines.append(f"  T={t}  S2={s:.4f}")
        if len(pts) >= 3:
            lines.append(f"slope per layer: {scaling_fit(pts).slope:.4f}")
    elif cfg.scenario == "tomography":
        for r in rows:
            if int(r["index"]) < 2:
                lines.append(f"  g={r['g']} T={r['T']} i={r['index']}  zeta={float(r['zeta_rec']):.3f} "
                             f"(ideal {float(r['zeta_ideal']):.3f})  parity={float(r['parity_rec']):+.3f}")
    elif cfg.scenario == "noise_breakdown":
        for r in rows:
            lines.append(f"  g={r['g']} T={r['T']} {r['case']:<11} zeta0={float(r['zeta0_mean']):.4f}"
                         f"  infidelity={float(r['infidelity_mean']):.4f}")
    elif cfg.scenario == "calibrate_fit":
        for r in rows:
            lines.append(f"  {r['quantity']:<18} injected={float(r['injected']):.6g}  fitted={float(r['fitted']):.6g}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p = argparse.ArgumentParser(prog="holomera", description="MERA state preparation and tomography experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario", parents=[common])
    r.add_argument("--config", required=True, help="experiment config (JSON)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<scenario>)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--noise", help="'off', 'paper' or a calibration JSON path")
    v = sub.add_parser("validate", help="check a config and estimate its cost", parents=[common])
    v.add_argument("config", nargs="?")
    v.add_argument("--config", dest="config_flag")
    rep = sub.add_parser("report", help="summarize a finished run", parents=[common])
    rep.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "validate":
            path = args.config or args.config_flag
            if not path:
                raise ConfigError("no config given")
            cfg = load_config(path)
            cost = validate_config(cfg)
            print(f"OK: scenario={cfg.scenario} cells={len(cfg.cell_list())} estimated_cost={cost:.3g}")
            return EXIT_OK
        if args.command == "run":
            cfg = load_config(args.config, args.seed, args.noise, args.out)
            validate_config(cfg)
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            path = run_experiment(cfg, args.jobs)
            print(f"wrote {path}")
            return EXIT_OK
        if args.command == "report":
            out = Path(args.out)
            if not (out / MANIFEST).exists():
                raise ConfigError(f"{out} has no {MANIFEST}")
            print(report(out))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
