"""Experiment orchestration: data, split, train, sample, evaluate, bound.

A condition is one (generator, N, F, normalize, paradigm) combination. Each
trial of a condition uses its own seed ``master_seed + trial`` and derives
every random stream from it, so trials can run in any order or in parallel and
still produce the same tables.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (BoundInputs, all_bound_rows, bound_feature_fixed_structure, bound_joint,
                     bound_structure_fixed_features, select_hyperparams, write_bounds_csv)
from .diffusion import FEATURE_ONLY, PARADIGMS, STRUCTURE_ONLY, TimeGrid, active_channels, diffuse
from .errors import ConfigError, GenerationError, ParameterError, SamplingError, TrainingError
from .evaluation import evaluate, write_eval_csv
from .graphs import GeneratorConfig, normalize_features, second_moment, spectral_norm
from .sampling import EXPONENTIAL_INTEGRATOR, SCHEMES, SamplerConfig, generate_arrays
from .score_net import analytic_gaussian_feature_score, sampling_score_fns, save_checkpoint
from .serialize import save_ensemble
from .training import TrainConfig, estimate_score_error, train, write_history_csv

log = logging.getLogger(__name__)

STRUCTURE_SCALING = "structure_scaling"
FEATURE_SCALING = "feature_scaling"
CUSTOM = "custom"
EXPERIMENTS = (STRUCTURE_SCALING, FEATURE_SCALING, CUSTOM)

TRIAL_COLUMNS = ("experiment", "generator", "n", "f", "normalize", "trial", "seed", "status", "metric",
                 "feature_kl", "degree_mmd", "h", "sigma2", "eps2", "lipschitz", "bound",
                 "config_hash", "version")
SUMMARY_COLUMNS = ("experiment", "generator", "n", "f", "normalize", "trials_ok", "trials_failed",
                   "metric_mean", "metric_sd", "bound_mean", "sigma2_mean", "eps2_mean",
                   "config_hash", "master_seed", "version")

# failures that cost one trial rather than the whole run
TRIAL_ERRORS = (TrainingError, SamplingError, GenerationError, ParameterError, FloatingPointError)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = CUSTOM
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    n_samples: int = 200
    split: tuple = (0.6, 0.2, 0.2)
    trials: int = 5
    horizon: float = 10.0
    steps: int = 200
    scheme: str = EXPONENTIAL_INTEGRATOR
    paradigm: str = STRUCTURE_ONLY
    train: TrainConfig = field(default_factory=TrainConfig)
    normalize: bool = False
    output_dir: str = "runs"
    master_seed: int = 0
    sizes: tuple = (10, 20, 30)
    feature_dims: tuple = (10, 25, 50)
    generators: tuple = ("regular", "barabasi_albert")
    feature_graph_size: int = 20
    lipschitz: float = 1.0
    t_stop: float = 0.01
    threshold: float = 0.5
    eps_mc: int = 8

    def __post_init__(self):
        for name in ("split", "sizes", "feature_dims", "generators"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if len(self.split) != 3 or any(s < 0 for s in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError("split must be three non-negative fractions summing to 1")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.n_samples < 10:
            raise ConfigError("n_samples must be at least 10")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"unknown paradigm {self.paradigm!r}")
        if not 0 < self.horizon or self.steps < 1:
            raise ConfigError("diffusion needs T > 0 and M >= 1")
        if self.lipschitz < 1:
            raise ConfigError("lipschitz must be at least 1")
        if self.train.t_max > self.horizon:
            raise ConfigError("train.t_max cannot exceed the diffusion horizon")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.horizon, self.steps)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["generator"] = self.generator.to_dict()
        d["train"] = dataclasses.asdict(self.train)
        d["diffusion"] = self.grid.to_dict()
        del d["horizon"], d["steps"]
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        known = {f.name for f in dataclasses.fields(cls)} | {"diffusion"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "diffusion" in d:
                diff = d.pop("diffusion")
                if diff.get("kind", "uniform") != "uniform":
                    raise ConfigError("only uniform diffusion grids are supported in configs")
                d["horizon"], d["steps"] = float(diff["T"]), int(diff["M"])
            if "generator" in d:
                d["generator"] = GeneratorConfig(**d["generator"])
            if "train" in d:
                d["train"] = TrainConfig(**d["train"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, KeyError, ParameterError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def merged(self, overrides: dict) -> "ExperimentConfig":
        """New config with nested ``overrides`` applied on top of this one."""
        base = self.to_dict()
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        return ExperimentConfig.from_dict(base)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _desk() -> ExperimentConfig:
    return ExperimentConfig()


PRESETS = {
    "desk": {},
    "paper-main": {
        "diffusion": {"T": 100.0, "M": 500, "kind": "uniform"},
        "train": {"hidden": 500, "t_max": 100.0},
        "sizes": [10, 30, 50],
        "feature_dims": [10, 30, 50],
        "feature_graph_size": 50,
    },
    "paper-appendix": {
        "diffusion": {"T": 50.0, "M": 500, "kind": "uniform"},
        "scheme": "euler_maruyama",
        "train": {"hidden": 500, "t_max": 50.0},
        "sizes": [10, 30, 50],
        "feature_dims": [10, 30, 50],
        "feature_graph_size": 50,
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return _desk().merged(PRESETS[name])


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return (base or _desk()).merged(data)


def version_string() -> str:
    """Package version, with the commit hash appended when run from a git checkout."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if sha.returncode == 0 and sha.stdout.strip():
            return f"v{__version__}-g{sha.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def ensure_output_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from exc
    return path


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    x: np.ndarray
    a: np.ndarray
    paradigm: str
    generator: GeneratorConfig
    seed: int
    normalize: bool

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def f(self) -> int:
        return self.x.shape[2]


def make_dataset(gen: GeneratorConfig, paradigm: str, n_samples: int, seed: int, normalize=False) -> Dataset:
    """Draw ``n_samples`` graphs; the frozen channel of the paradigm is shared by all of them.

    Structure-only data pair one feature matrix X* with independent
    adjacencies; feature-only data pair one adjacency A* with independent
    feature matrices; joint data vary both.
    """
    diff_x, diff_a = active_channels(paradigm)
    norm = normalize_features if normalize else (lambda m: m)
    if diff_x:
        xs = np.stack([norm(gen.features([seed, 13, i])) for i in range(n_samples)])
    else:
        xs = np.repeat(norm(gen.features([seed, 10]))[None], n_samples, axis=0)
    if diff_a:
        as_ = np.stack([gen.adjacency([seed, 11, i]) for i in range(n_samples)])
    else:
        as_ = np.repeat(gen.adjacency([seed, 12])[None], n_samples, axis=0)
    return Dataset(xs, as_, paradigm, gen, seed, normalize)


def split_indices(n_samples: int, master_seed: int, split=(0.6, 0.2, 0.2)):
    """Deterministic (train, val, test) index arrays from (n_samples, master_seed) alone."""
    perm = np.random.default_rng([n_samples, master_seed]).permutation(n_samples)
    n_train = int(round(split[0] * n_samples))
    n_val = int(round(split[1] * n_samples))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]), np.sort(perm[n_train + n_val:])


# ---------------------------------------------------------------- one condition

@dataclass
class ConditionResult:
    report: object
    bound_inputs: BoundInputs
    breakdowns: dict
    train_result: object
    generated: tuple
    metric: float
    h: float
    sigma2: float
    eps2: float


def _score_fns(result):
    return sampling_score_fns(result.theta, result.phi)


def oracle_score_budget(data: Dataset, tr, result, grid, n_mc, seed):
    """Score error of the trained heads against moment-matched Gaussian oracles."""
    diff_x, diff_a = active_channels(data.paradigm)
    xs, as_ = data.x[tr], data.a[tr]
    mx, vx = float(xs.mean()), float(xs.var())
    ma, va = float(as_.mean()), float(as_.var())

    def sample_fn(t, n, rng):
        idx = rng.integers(0, len(xs), size=n)
        x0, a0 = xs[idx], as_[idx]
        return (diffuse(x0, t, rng) if diff_x else x0), (diffuse(a0, t, rng) if diff_a else a0)

    fx, fa = _score_fns(result)
    feature = (fx, lambda x, a, t: analytic_gaussian_feature_score(mx, vx, x, t)) if diff_x else None
    structure = (fa, lambda x, a, t: analytic_gaussian_feature_score(ma, va, a, t)) if diff_a else None
    return estimate_score_error(sample_fn, grid, n_mc, seed, feature=feature, structure=structure)


def measured_bound_inputs(data: Dataset, tr, budget, cfg: ExperimentConfig) -> BoundInputs:
    xs, as_ = data.x[tr], data.a[tr]
    grid = cfg.grid
    return BoundInputs(
        n=data.n, f=data.f, lipschitz=cfg.lipschitz,
        h_x=second_moment(xs), h_a=second_moment(as_),
        sigma_x2=max(spectral_norm(x) ** 2 for x in _distinct(xs)),
        sigma_a2=max(spectral_norm(a) ** 2 for a in _distinct(as_)),
        eps_x2=budget.eps_x2, eps_a2=budget.eps_a2,
        t_horizon=grid.horizon, steps=tuple(grid.deltas),
    )


def _distinct(stack):
    # frozen channels repeat one matrix; no need to take its norm 120 times
    if len(stack) > 1 and np.all(stack == stack[0]):
        return stack[:1]
    return stack


def run_condition(cfg: ExperimentConfig, gen: GeneratorConfig, paradigm: str, normalize: bool,
                  seed: int) -> ConditionResult:
    """Generate, split, train, sample, evaluate and bound one condition for one trial seed."""
    data = make_dataset(gen, paradigm, cfg.n_samples, seed, normalize)
    tr, va, te = split_indices(cfg.n_samples, cfg.master_seed, cfg.split)
    tcfg = replace(cfg.train, seed=seed)
    result = train(data.x[tr], data.a[tr], paradigm, tcfg, data.x[va], data.a[va])

    diff_x, diff_a = active_channels(paradigm)
    scfg = SamplerConfig(n=data.n, f=data.f, grid=cfg.grid, scheme=cfg.scheme, paradigm=paradigm,
                         t_stop=cfg.t_stop,
                         fixed_x=None if diff_x else data.x[0], fixed_a=None if diff_a else data.a[0])
    with np.errstate(over="ignore", invalid="ignore"):
        gx, ga = generate_arrays(_score_fns(result), scfg, len(te), seed=[seed, 20])
    report = evaluate(gx, ga, data.x[te], data.a[te], features=diff_x, structure=diff_a,
                      threshold=cfg.threshold)

    budget = oracle_score_budget(data, tr, result, cfg.grid, cfg.eps_mc, [seed, 30])
    inp = measured_bound_inputs(data, tr, budget, cfg)
    breakdowns = {}
    if paradigm == STRUCTURE_ONLY:
        breakdowns["structure_only"] = bound_structure_fixed_features(inp, cfg.scheme)
        metric, h, sigma2, eps2 = report.degree_mmd, inp.h_a, inp.sigma_x2, inp.eps_a2
    elif paradigm == FEATURE_ONLY:
        breakdowns["feature_only"] = bound_feature_fixed_structure(inp, cfg.scheme)
        metric, h, sigma2, eps2 = report.feature_kl, inp.h_x, inp.sigma_a2, inp.eps_x2
    else:
        breakdowns["joint_x"], breakdowns["joint_a"] = bound_joint(inp, cfg.scheme)
        metric = report.feature_kl + report.degree_mmd
        h, sigma2, eps2 = inp.h_x + inp.h_a, float("nan"), inp.eps_x2 + inp.eps_a2
    return ConditionResult(report, inp, breakdowns, result, (gx, ga), metric, h, sigma2, eps2)


# ---------------------------------------------------------------- scaling experiments

def _cells(cfg: ExperimentConfig, experiment: str):
    if experiment == STRUCTURE_SCALING:
        for n in cfg.sizes:
            for kind in cfg.generators:
                gen = replace(cfg.generator, kind=kind, n=int(n))
                yield kind, gen, STRUCTURE_ONLY, False
    else:
        for f in cfg.feature_dims:
            for normalize in (False, True):
                gen = replace(cfg.generator, kind="regular", n=cfg.feature_graph_size, feature_dim=int(f))
                yield "regular", gen, FEATURE_ONLY, normalize


def _trial_task(args):
    cfg_dict, experiment, kind, gen_dict, paradigm, normalize, trial = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    gen = GeneratorConfig(**gen_dict)
    seed = cfg.master_seed + trial
    row = {"experiment": experiment, "generator": kind, "n": gen.n, "f": gen.feature_dim,
           "normalize": int(normalize), "trial": trial, "seed": seed}
    try:
        res = run_condition(cfg, gen, paradigm, normalize, seed)
    except TRIAL_ERRORS as exc:
        log.warning("trial %d of %s n=%d f=%d failed: %s", trial, kind, gen.n, gen.feature_dim, exc)
        nan = float("nan")
        row.update(status=f"failed:{type(exc).__name__}", metric=nan, feature_kl=nan, degree_mmd=nan,
                   h=nan, sigma2=nan, eps2=nan, lipschitz=cfg.lipschitz, bound=nan)
        return row
    bound = sum(b.total for b in res.breakdowns.values())
    row.update(status="ok", metric=res.metric, feature_kl=res.report.feature_kl,
               degree_mmd=res.report.degree_mmd, h=res.h, sigma2=res.sigma2, eps2=res.eps2,
               lipschitz=cfg.lipschitz, bound=bound)
    log.info("%s %s n=%d f=%d norm=%d trial=%d metric=%.6g", experiment, kind, gen.n, gen.feature_dim,
             normalize, trial, res.metric)
    return row


@dataclass
class ResultTable:
    rows: list
    summary: list

    def cell(self, **keys) -> list:
        """Trial rows matching every given column value."""
        return [r for r in self.rows if all(r[k] == v for k, v in keys.items())]

    def metrics(self, **keys) -> np.ndarray:
        return np.array([r["metric"] for r in sorted(self.cell(**keys), key=lambda r: r["trial"])])


def _summarize(rows, cfg, chash, version):
    groups = {}
    for r in rows:
        groups.setdefault((r["experiment"], r["generator"], r["n"], r["f"], r["normalize"]), []).append(r)
    out = []
    for key, rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]

        def stat(col, fn):
            vals = np.array([r[col] for r in ok], dtype=float)
            return float(fn(vals)) if len(vals) else float("nan")

        out.append(dict(zip(SUMMARY_COLUMNS[:5], key), trials_ok=len(ok), trials_failed=len(rs) - len(ok),
                        metric_mean=stat("metric", np.mean),
                        metric_sd=stat("metric", lambda v: v.std(ddof=1) if len(v) > 1 else 0.0),
                        bound_mean=stat("bound", np.mean), sigma2_mean=stat("sigma2", np.mean),
                        eps2_mean=stat("eps2", np.mean), config_hash=chash, master_seed=cfg.master_seed,
                        version=version))
    return out


def run_experiment(cfg: ExperimentConfig, experiment: str, threads: int = 1) -> ResultTable:
    if experiment not in (STRUCTURE_SCALING, FEATURE_SCALING):
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg_dict = cfg.to_dict()
    tasks = [(cfg_dict, experiment, kind, gen.to_dict(), paradigm, normalize, trial)
             for kind, gen, paradigm, normalize in _cells(cfg, experiment)
             for trial in range(cfg.trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_trial_task, tasks))
    else:
        rows = [_trial_task(t) for t in tasks]
    chash, version = cfg.config_hash(), version_string()
    for r in rows:
        r.update(config_hash=chash, version=version)
    return ResultTable(rows, _summarize(rows, cfg, chash, version))


def run_structure_scaling(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Structure-only generation across graph sizes and generators; metric is degree MMD."""
    return run_experiment(cfg, STRUCTURE_SCALING, threads)


def run_feature_scaling(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Feature-only generation on a fixed regular graph across feature sizes, raw and normalized; metric is Gaussian-fit KL."""
    return run_experiment(cfg, FEATURE_SCALING, threads)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_table(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, files, extra=None) -> Path:
    out_dir = Path(out_dir)
    entries = [{"file": name, "sha256": sha256_file(out_dir / name)} for name in sorted(files)]
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump({"files": entries, **(extra or {})}, fh, indent=2, sort_keys=True)
    return path


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def save_experiment(table: ResultTable, cfg: ExperimentConfig, out_dir, experiment: str) -> list:
    out = ensure_output_dir(out_dir)
    write_json(cfg.to_dict(), out / "config.json")
    write_table(table.rows, TRIAL_COLUMNS, out / "trials.csv")
    write_table(table.summary, SUMMARY_COLUMNS, out / "summary.csv")
    files = ["config.json", "trials.csv", "summary.csv"]
    write_manifest(out, files, {"experiment": experiment, "config_hash": cfg.config_hash(),
                                "master_seed": cfg.master_seed, "version": version_string()})
    return files + ["manifest.json"]


# ---------------------------------------------------------------- single pipeline

def run_pipeline(cfg: ExperimentConfig, out_dir=None) -> dict:
    """One condition end to end, with every artifact written to ``out_dir``.

    Writes the config snapshot, seeds, checkpoints, training history, the
    generated ensemble, the evaluation and bound tables, and a manifest of
    content hashes. Returns a mapping from artifact name to path.
    """
    out = ensure_output_dir(out_dir or cfg.output_dir)
    seed = cfg.master_seed
    res = run_condition(cfg, cfg.generator, cfg.paradigm, cfg.normalize, seed)
    tr, va, te = split_indices(cfg.n_samples, cfg.master_seed, cfg.split)

    files = {}

    def put(name):
        files[name] = out / name
        return out / name

    write_json(cfg.to_dict(), put("config.json"))
    write_json({"master_seed": cfg.master_seed, "trial_seed": seed,
                "split": {"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}},
               put("seeds.json"))
    if res.train_result.theta is not None:
        save_checkpoint(res.train_result.theta, put("theta.json"))
    if res.train_result.phi is not None:
        save_checkpoint(res.train_result.phi, put("phi.json"))
    write_history_csv(res.train_result.history, put("history.csv"))
    gx, ga = res.generated
    save_ensemble(gx, ga, put("ensemble.json"), {
        "scheme": cfg.scheme, "paradigm": cfg.paradigm, "T": cfg.horizon, "M": cfg.steps,
        "t_stop": cfg.t_stop, "seed": [seed, 20], "generator": cfg.generator.to_dict(),
    })
    write_eval_csv([res.report.as_row(0, cfg.paradigm, seed)], put("eval.csv"))
    write_bounds_csv([b.as_row(name, cfg.scheme) for name, b in res.breakdowns.items()], put("bounds.csv"))
    write_manifest(out, list(files), {"config_hash": cfg.config_hash(), "version": version_string()})
    files["manifest.json"] = out / "manifest.json"
    return files


def bounds_table(inp: BoundInputs):
    """All bound rows plus the (T, M) selection when score errors are positive."""
    rows = all_bound_rows(inp)
    selection = select_hyperparams(inp) if inp.eps_x2 > 0 and inp.eps_a2 > 0 else None
    return rows, selection
