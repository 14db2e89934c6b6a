"""Command-line entry point: ``coopmimo run|sweep|fh-report|replay``."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import SimConfig, from_dict, parse_config
from .evaluation import (
    draw_large_scale, fronthaul_params, run_monte_carlo, trial_association, write_cdf_csv, write_results_csv,
)
from .exceptions import ConfigError
from .fronthaul import node_loads, write_trace_csv
from .geometry import CELL_EDGE, CELL_INSIDE
from .precoding import JOINT_PRECODERS

log = logging.getLogger("coopmimo")

SWEEP_ALPHAS = (-0.5, 0.0, 0.5)


def ensure_writable(out_dir) -> Path:
    """Create ``out_dir`` and prove it accepts files; raises OSError otherwise."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fd, probe = tempfile.mkstemp(dir=out, prefix=".probe")
    os.close(fd)
    os.unlink(probe)
    return out


def write_manifest(cfg: SimConfig, command: str, variants, path) -> None:
    doc = {
        "version": __version__,
        "command": command,
        "master_seed": cfg.master_seed,
        "variants": [[s, p, float(a)] for s, p, a in variants],
        "config": cfg.to_dict(),
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def run_command(cfg: SimConfig, out_dir, variants=None, command="run") -> int:
    """Simulate and write results.csv, the two CDF files, the FH trace and manifest.yaml."""
    out = ensure_writable(out_dir)
    variants = variants or [(cfg.scenario, cfg.precoder, cfg.alpha)]
    results = run_monte_carlo(cfg, variants)
    write_results_csv(results, out / "results.csv")
    write_cdf_csv(results, CELL_INSIDE, out / "cdf_cell_inside.csv")
    write_cdf_csv(results, CELL_EDGE, out / "cdf_cell_edge.csv")
    if cfg.fronthaul_enforce:
        write_trace_csv([row for r in results for row in r.fh_trace], out / "fh_trace.csv")
    write_manifest(cfg, command, variants, out / "manifest.yaml")
    return 0


def sweep_variants(scenarios, precoders, alphas):
    """Cartesian grid without the JPZF/non-FULL combinations."""
    return [
        (s, p, a)
        for s, p, a in itertools.product(scenarios, precoders, alphas)
        if p not in JOINT_PRECODERS or s == "full"
    ]


def fh_report(cfg: SimConfig, out_dir) -> int:
    """Per-node fronthaul loads before and after pruning; no SINR evaluation."""
    out = ensure_writable(out_dir)
    params = fronthaul_params(cfg)
    trace = []
    with open(out / "fh_loads.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("trial", "node_id", "kind", "served_initial", "F_initial", "served_final", "F_final", "F_limit"))
        for t in range(cfg.trials):
            layout, ap_links, bs_links = draw_large_scale(cfg, t)
            initial, final, rows = trial_association(ap_links, bs_links, cfg, cfg.scenario, cfg.precoder)
            trace.extend((t,) + r for r in rows)
            m = layout.n_ap
            n_ant = np.array([cfg.n_ant_ap] * m + [cfg.n_ant_bs] * layout.n_bs)
            f0 = node_loads(initial.merged, n_ant, params)
            f1 = node_loads(final.merged, n_ant, params)
            s0, s1 = initial.merged.sum(0), final.merged.sum(0)
            for n in range(len(n_ant)):
                w.writerow((t, n, "ap" if n < m else "bs", int(s0[n]), repr(float(f0[n])), int(s1[n]),
                            repr(float(f1[n])), repr(cfg.f_limit)))
    if cfg.fronthaul_enforce:
        write_trace_csv(trace, out / "fh_trace.csv")
    write_manifest(cfg, "fh-report", [(cfg.scenario, cfg.precoder, cfg.alpha)], out / "manifest.yaml")
    return 0


def _overrides(args) -> dict:
    o = {}
    if args.trials is not None:
        o["trials"] = args.trials
    if args.seed is not None:
        o["master_seed"] = args.seed
    if getattr(args, "scenario", None):
        o["scenario"] = args.scenario
    if getattr(args, "precoder", None):
        o["precoder"] = args.precoder
    if getattr(args, "alpha", None) is not None:
        o["alpha"] = args.alpha
    if getattr(args, "ap_mode", None):
        o["ap_mode"] = args.ap_mode
    if args.fading:
        o["fading"] = args.fading
    if args.fh_limit is not None:
        if args.fh_limit.lower() == "off":
            o["fronthaul_enforce"] = False
        else:
            try:
                o["f_limit"] = float(args.fh_limit)
            except ValueError:
                raise ConfigError(f"--fh-limit expects a bit rate or 'off', got {args.fh_limit!r}") from None
            o["fronthaul_enforce"] = True
    if args.workers is not None:
        o["workers"] = args.workers
    return o


def load_config(args) -> SimConfig:
    base = parse_config(args.config).to_dict() if args.config else {}
    base.update(_overrides(args))
    return from_dict(base)


def _common(p, single=True):
    p.add_argument("--config", type=Path, help="YAML config or run manifest")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fading", choices=("rayleigh", "rician"))
    p.add_argument("--fh-limit", metavar="BPS|off")
    p.add_argument("--workers", type=int)
    if single:
        p.add_argument("--scenario", choices=("mc", "het", "horizontal", "full"))
        p.add_argument("--precoder", choices=("mrt", "pzf", "mmse", "jpzf"))
        p.add_argument("--alpha", type=float)
        p.add_argument("--ap-mode", choices=("uniform", "cell-edge"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopmimo", description="Cooperative cellular/cell-free MIMO simulator")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="simulate one configuration"))
    sw = sub.add_parser("sweep", help="grid over scenario, precoder, alpha and AP placement")
    _common(sw, single=False)
    sw.add_argument("--scenarios", nargs="+", default=None, choices=("mc", "het", "horizontal", "full"))
    sw.add_argument("--precoders", nargs="+", default=None, choices=("mrt", "pzf", "mmse", "jpzf"))
    sw.add_argument("--alphas", nargs="+", type=float, default=list(SWEEP_ALPHAS))
    sw.add_argument("--ap-modes", nargs="+", default=None, choices=("uniform", "cell-edge"))
    _common(sub.add_parser("fh-report", help="fronthaul loads only"))
    rp = sub.add_parser("replay", help="re-run a manifest")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out", type=Path, required=True)
    return parser


def _replay(manifest: Path, out) -> int:
    doc = yaml.safe_load(manifest.read_text())
    if not isinstance(doc, dict) or "config" not in doc:
        raise ConfigError(f"{manifest} is not a run manifest")
    cfg = from_dict(doc["config"])
    command = doc.get("command", "run")
    if command == "fh-report":
        return fh_report(cfg, out)
    variants = [tuple(v) for v in doc.get("variants") or []] or None
    return run_command(cfg, out, variants, command=command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            return _replay(args.manifest, args.out)
        cfg = load_config(args)
        if args.command == "run":
            return run_command(cfg, args.out)
        if args.command == "fh-report":
            return fh_report(cfg, args.out)
        scenarios = args.scenarios or [cfg.scenario]
        precoders = args.precoders or [cfg.precoder]
        modes = args.ap_modes or [cfg.ap_mode]
        for mode in modes:
            out = args.out / mode.replace("-", "_") if len(modes) > 1 else args.out
            run_command(cfg.replace(ap_mode=mode), out, sweep_variants(scenarios, precoders, args.alphas), "sweep")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
