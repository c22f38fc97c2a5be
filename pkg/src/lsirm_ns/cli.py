"""Command line interface.

``simulate`` writes a synthetic data set with its truth and a ready-to-run
config. ``fit``, ``align``, ``cluster`` and ``report`` run the pipeline up to
that stage, reusing persisted stages in the output directory; ``pipeline``
runs everything. Exit status is 0 on success, 2 for configuration problems
and a distinct code per failing pipeline stage (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import DataConfig, GroupSpec, RunConfig, load_config, save_config
from .data import write_responses
from .errors import ConfigError, LsirmNsError
from .pipeline import PipelineError, run_pipeline
from .synth import simulate_groups

STOP_AT = {"fit": "fit", "align": "align", "cluster": "cluster", "report": "plots", "pipeline": "plots"}


def _parser():
    p = argparse.ArgumentParser(prog="lsirm-ns", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("-v", "--verbose", action="count", default=0)

    sim = sub.add_parser("simulate", help="write synthetic response data, truth and config")
    common(sim)
    sim.add_argument("--out", type=Path, required=True, help="directory for the data set")
    sim.add_argument("--groups", type=int, help="number of groups (1 or 2)")

    for name in STOP_AT:
        sp = sub.add_parser(name, help=f"run the pipeline through '{STOP_AT[name]}'")
        common(sp)
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="processes for chains and NS runs")
        sp.add_argument("--no-resume", action="store_true", help="recompute every stage")
        sp.add_argument("--no-plots", action="store_true", help="skip SVG output")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _simulate(args):
    cfg = _config(args)
    sim = cfg.simulate
    if args.groups is not None:
        sim = dataclasses.replace(sim, n_groups=args.groups)
    if sim.n_groups not in (1, 2):
        raise ConfigError("simulate supports one or two groups")
    out = args.out.resolve()
    out.mkdir(parents=True, exist_ok=True)
    groups, shared = simulate_groups(sim, cfg.seed)
    specs, truth = [], {"seed": cfg.seed, "items": shared, "groups": {}}
    for name, x, t in groups:
        path = write_responses(x, out / f"{name}.csv")
        specs.append(GroupSpec(name, str(path), "wide", True))
        truth["groups"][name] = t.to_dict()
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cfg = cfg.replace(simulate=sim, data=DataConfig(tuple(specs)))
    save_config(cfg, out / "config.toml", relative_to=out)
    print(f"wrote {len(groups)} group(s) to {out}; run: lsirm-ns pipeline --config {out / 'config.toml'} --out <dir>")


def main(argv=None):
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            _simulate(args)
            return 0
        cfg = _config(args)
        report = run_pipeline(
            cfg,
            args.out,
            resume=not args.no_resume,
            n_workers=args.workers,
            plots=False if args.no_plots else None,
            stop_after=STOP_AT[args.command],
        )
        if report is not None:
            print(f"report written to {args.out / 'report.json'}")
        else:
            print(f"stage '{STOP_AT[args.command]}' complete in {args.out}")
        return 0
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConfigError):
            return 2
        return exc.exit_code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LsirmNsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
