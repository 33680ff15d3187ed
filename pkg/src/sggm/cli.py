"""Command-line entry point.

Each subcommand reads and writes files in the ``--out`` directory, so the
steps can be chained:

    sggm gen-data --out run1
    sggm train --out run1
    sggm sample --out run1
    sggm eval --out run1

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The GRAPHDIFF_LOG environment variable sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .bounds import BOUND_COLUMNS, CONSTANT_NOTE, BoundInputs, write_bounds_csv
from .diffusion import active_channels
from .errors import ConfigError
from .evaluation import evaluate, write_eval_csv
from .graphs import GeneratorConfig
from .sampling import SamplerConfig, generate_arrays
from .score_net import load_checkpoint, sampling_score_fns, save_checkpoint
from .serialize import load_ensemble, save_ensemble
from .training import TrainResult, train, write_history_csv

log = logging.getLogger("sggm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _setup_logging():
    level = os.environ.get("GRAPHDIFF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _common(p):
    p.add_argument("--config", help="JSON config file layered on top of the preset")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--preset", default="desk", help="base preset (see `sggm presets`)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for experiment trials")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sggm", description="Score-based graph generation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("gen-data", "generate a dataset and its split"),
        ("train", "train score networks on the dataset in --out"),
        ("sample", "generate graphs from trained networks"),
        ("eval", "evaluate generated graphs against the test split"),
        ("run", "full pipeline for one condition"),
    ]:
        _common(sub.add_parser(name, help=helptext))
    p = sub.add_parser("bounds", help="bound breakdown table and (T, M) selection")
    _common(p)
    p.add_argument("--inputs", help="JSON file with bound inputs (n, f, lipschitz, h_x, h_a, sigma_x2, "
                                    "sigma_a2, eps_x2, eps_a2, T, M); default: measure from --out")
    p = sub.add_parser("experiment", help="run a scaling experiment")
    p.add_argument("name", choices=["structure-scaling", "feature-scaling"])
    _common(p)
    sub.add_parser("presets", help="list presets")
    return parser


def resolve_config(args) -> harness.ExperimentConfig:
    cfg = harness.preset(args.preset)
    if args.config:
        cfg = harness.load_config(args.config, cfg)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.out:
        overrides["output_dir"] = args.out
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return cfg.merged(overrides) if overrides else cfg


def _load_dataset(out: Path):
    path = out / "dataset.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run gen-data first")
    xs, as_, meta = load_ensemble(path)
    gen = GeneratorConfig(**meta["generator"])
    return harness.Dataset(xs, as_, meta["paradigm"], gen, meta["seed"], meta["normalize"])


def cmd_gen_data(cfg, out):
    data = harness.make_dataset(cfg.generator, cfg.paradigm, cfg.n_samples, cfg.master_seed, cfg.normalize)
    save_ensemble(data.x, data.a, out / "dataset.json", {
        "generator": cfg.generator.to_dict(), "paradigm": cfg.paradigm,
        "seed": cfg.master_seed, "normalize": cfg.normalize,
    })
    tr, va, te = harness.split_indices(cfg.n_samples, cfg.master_seed, cfg.split)
    harness.write_json({"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}, out / "split.json")
    harness.write_json(cfg.to_dict(), out / "config.json")
    print(f"wrote {cfg.n_samples} graphs to {out / 'dataset.json'}")


def cmd_train(cfg, out):
    data = _load_dataset(out)
    tr, va, _ = harness.split_indices(len(data.x), cfg.master_seed, cfg.split)
    result = train(data.x[tr], data.a[tr], data.paradigm, replace(cfg.train, seed=cfg.master_seed),
                   data.x[va], data.a[va])
    if result.theta is not None:
        save_checkpoint(result.theta, out / "theta.json")
    if result.phi is not None:
        save_checkpoint(result.phi, out / "phi.json")
    write_history_csv(result.history, out / "history.csv")
    print(f"best lr {result.best_lr}; validation losses {result.val_losses}")


def _load_heads(out, paradigm):
    diff_x, diff_a = active_channels(paradigm)
    theta = load_checkpoint(out / "theta.json") if diff_x else None
    phi = load_checkpoint(out / "phi.json") if diff_a else None
    return theta, phi


def cmd_sample(cfg, out):
    data = _load_dataset(out)
    _, _, te = harness.split_indices(len(data.x), cfg.master_seed, cfg.split)
    try:
        theta, phi = _load_heads(out, data.paradigm)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing checkpoint ({exc.filename}); run train first") from exc
    diff_x, diff_a = active_channels(data.paradigm)
    scfg = SamplerConfig(n=data.n, f=data.f, grid=cfg.grid, scheme=cfg.scheme, paradigm=data.paradigm,
                         t_stop=cfg.t_stop, fixed_x=None if diff_x else data.x[0],
                         fixed_a=None if diff_a else data.a[0])
    fns = sampling_score_fns(theta, phi)
    seed = [cfg.master_seed, 20]
    with np.errstate(over="ignore", invalid="ignore"):
        gx, ga = generate_arrays(fns, scfg, len(te), seed=seed)
    save_ensemble(gx, ga, out / "ensemble.json", {**scfg.metadata(), "seed": seed})
    print(f"wrote {len(gx)} generated graphs to {out / 'ensemble.json'}")


def cmd_eval(cfg, out):
    data = _load_dataset(out)
    _, _, te = harness.split_indices(len(data.x), cfg.master_seed, cfg.split)
    if not (out / "ensemble.json").exists():
        raise ConfigError(f"{out / 'ensemble.json'} not found; run sample first")
    gx, ga, _ = load_ensemble(out / "ensemble.json")
    diff_x, diff_a = active_channels(data.paradigm)
    report = evaluate(gx, ga, data.x[te], data.a[te], features=diff_x, structure=diff_a,
                      threshold=cfg.threshold)
    write_eval_csv([report.as_row(0, data.paradigm, cfg.master_seed)], out / "eval.csv")
    sys.stdout.write((out / "eval.csv").read_text())


def _inputs_from_file(path) -> BoundInputs:
    try:
        with open(path) as fh:
            d = json.load(fh)
        t, m = float(d.pop("T")), int(d.pop("M"))
        return BoundInputs.uniform(t_horizon=t, m=m, **d)
    except FileNotFoundError as exc:
        raise ConfigError(f"inputs file not found: {path}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad bound inputs in {path}: {exc}") from exc


def cmd_bounds(cfg, out, inputs_path):
    if inputs_path:
        inp = _inputs_from_file(inputs_path)
    else:
        data = _load_dataset(out)
        tr, _, _ = harness.split_indices(len(data.x), cfg.master_seed, cfg.split)
        theta, phi = _load_heads(out, data.paradigm)
        result = TrainResult(theta, phi)
        budget = harness.oracle_score_budget(data, tr, result, cfg.grid, cfg.eps_mc, [cfg.master_seed, 30])
        inp = harness.measured_bound_inputs(data, tr, budget, cfg)
    rows, selection = harness.bounds_table(inp)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(BOUND_COLUMNS)
    for row in rows:
        w.writerow(row[:2] + [repr(float(v)) for v in row[2:]])
    if selection is not None:
        print(f"# selected T={selection[0]!r} M={selection[1]} ({CONSTANT_NOTE})")
    else:
        print("# (T, M) selection needs positive score errors")
    if out is not None:
        write_bounds_csv(rows, out / "bounds.csv")


def cmd_experiment(cfg, out, name, threads):
    experiment = name.replace("-", "_")
    cfg = cfg.merged({"experiment": experiment})
    table = harness.run_experiment(cfg, experiment, threads)
    harness.save_experiment(table, cfg, out, experiment)
    sys.stdout.write((out / "summary.csv").read_text())


def cmd_presets():
    for name in sorted(harness.PRESETS):
        print(f"{name}: {json.dumps(harness.preset(name).to_dict(), sort_keys=True)}")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "presets":
            cmd_presets()
            return EXIT_OK
        cfg = resolve_config(args)
        needs_out = args.command != "bounds" or not args.inputs or args.out
        out = harness.ensure_output_dir(cfg.output_dir) if needs_out else None
        if args.command == "gen-data":
            cmd_gen_data(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "sample":
            cmd_sample(cfg, out)
        elif args.command == "eval":
            cmd_eval(cfg, out)
        elif args.command == "bounds":
            cmd_bounds(cfg, out, args.inputs)
        elif args.command == "run":
            files = harness.run_pipeline(cfg, out)
            for name in sorted(files):
                print(files[name])
        elif args.command == "experiment":
            cmd_experiment(cfg, out, args.name, args.threads)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"sggm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ValueError, OSError, KeyError) as exc:
        log.debug("failure", exc_info=True)
        print(f"sggm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
