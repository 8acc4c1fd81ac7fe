"""Experiment orchestration: config parsing, multi-seed runs, persistence
and metric aggregation."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from lfi_forge import __version__, bnn, streams
from lfi_forge.baselines import SummarySpec, abc_smc, mh_mcmc_ma2
from lfi_forge.inference import RoundAbortedError, RunConfig, run_inference
from lfi_forge.metrics import WeightedPopulation, emd, mmd2, mse
from lfi_forge.priors import DeltaSchedule
from lfi_forge.problems import make_problem
from lfi_forge.simulators import SSAConfig, TimeSeries

log = logging.getLogger(__name__)

METRIC_NAMES = ("emd", "log_mean_emd", "mmd2", "mse")

# (G, N, B) per problem
DEFAULT_ROUNDS = {"ma2": (6, 3000, 4), "lv": (8, 1000, 5)}


class ConfigError(ValueError):
    pass


@dataclass
class BCNNBlock:
    # None means the problem default (see DEFAULT_ROUNDS)
    G: int | None = None
    N: int | None = None
    B: int | None = None
    S: int = 100
    delta: DeltaSchedule = field(default_factory=DeltaSchedule)
    train: bnn.TrainConfig = field(default_factory=bnn.TrainConfig)


@dataclass
class SMCBlock:
    n_particles: int = 1000
    rounds: int = 8
    percentile: float = 20.0
    max_trials: int = 1_000_000


@dataclass
class MCMCBlock:
    steps: int = 100_000
    proposal_std: list = field(default_factory=lambda: [0.1, 0.05])
    burn_in: float = 0.2
    thin: int = 10
    seed: int = 0


@dataclass
class MetricsBlock:
    n_eval: int = 2000
    emd_bins: int = 32


@dataclass
class LVBlock:
    initial_state: list = field(default_factory=lambda: [50, 100])
    t_end: float = 50.0
    n_grid: int = 51
    max_events: int = 10_000_000


@dataclass
class MA2Block:
    length: int = 100


@dataclass
class ExperimentConfig:
    problem: str = "ma2"
    method: str = "bcnn"
    seeds: list = field(default_factory=lambda: [0])
    output: str = "runs"
    true_theta: list | None = None
    observation_seed: int = 12345
    observation_path: str | None = None
    bcnn: BCNNBlock | None = None
    smc: SMCBlock | None = None
    mcmc: MCMCBlock | None = None
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    lv: LVBlock = field(default_factory=LVBlock)
    ma2: MA2Block = field(default_factory=MA2Block)

    def validate(self):
        if self.problem not in ("ma2", "lv"):
            raise ConfigError(f"problem: unknown value {self.problem!r}")
        if self.method not in ("bcnn", "abc-smc", "mcmc-ref"):
            raise ConfigError(f"method: unknown value {self.method!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be a nonempty list of distinct integers")
        block = {"bcnn": "bcnn", "abc-smc": "smc", "mcmc-ref": "mcmc"}[self.method]
        if getattr(self, block) is None:
            raise ConfigError(f"{block}: section required for method {self.method!r}")
        if self.method == "mcmc-ref" and self.problem != "ma2":
            raise ConfigError("method: mcmc-ref is only available for ma2")
        if self.problem == "ma2" and self.method != "mcmc-ref" and self.mcmc is None:
            self.mcmc = MCMCBlock()
        if self.bcnn is not None:
            for name, default in zip("GNB", DEFAULT_ROUNDS[self.problem]):
                if getattr(self.bcnn, name) is None:
                    setattr(self.bcnn, name, default)

    def build_problem(self):
        if self.problem == "ma2":
            return make_problem("ma2", length=self.ma2.length)
        lv = self.lv
        ssa = SSAConfig(initial_state=tuple(lv.initial_state), t_end=lv.t_end,
                        grid=np.linspace(0.0, lv.t_end, lv.n_grid), max_events=lv.max_events)
        return make_problem("lv", ssa=ssa)

    def truth(self):
        if self.true_theta is not None:
            return np.asarray(self.true_theta, dtype=np.float64)
        return np.asarray(self.build_problem().default_truth, dtype=np.float64)

    def digest(self) -> str:
        text = json.dumps(_to_plain(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


_NESTED = {
    ExperimentConfig: {"bcnn": BCNNBlock, "smc": SMCBlock, "mcmc": MCMCBlock,
                       "metrics": MetricsBlock, "lv": LVBlock, "ma2": MA2Block},
    BCNNBlock: {"delta": DeltaSchedule, "train": bnn.TrainConfig},
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a table")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"{where}: unknown key")
        sub = _NESTED.get(cls, {}).get(key)
        kwargs[key] = _build(sub, value, where) if sub is not None else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = _build(ExperimentConfig, data, "")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# observation


def generate_observation(problem, true_theta, seed: int) -> TimeSeries:
    theta = np.asarray(true_theta, dtype=np.float64)
    if not problem.prior.contains(theta):
        raise ValueError("true theta lies outside the prior box")
    return problem.simulate(theta, streams.substream(seed, 0, streams.OBSERVE))


def observe(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Simulate and persist the observation every method conditions on."""
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    problem = cfg.build_problem()
    truth = cfg.truth()
    obs = generate_observation(problem, truth, cfg.observation_seed)
    path = out / "observation.csv"
    path.write_text(obs.to_csv())
    meta = {"problem": cfg.problem, "true_theta": truth.tolist(), "seed": cfg.observation_seed,
            "flagged": obs.flagged}
    (out / "observation.json").write_text(json.dumps(meta, indent=1))
    return path


def load_observation(cfg: ExperimentConfig, out: Path) -> TimeSeries:
    if cfg.observation_path:
        return TimeSeries.from_csv(Path(cfg.observation_path).read_text())
    path = out / "observation.csv"
    if not path.exists():
        observe(cfg, out)
    return TimeSeries.from_csv(path.read_text())


# reference posterior (MA2)


def reference_posterior(cfg: ExperimentConfig, obs: TimeSeries, out: Path) -> WeightedPopulation:
    mc = cfg.mcmc
    path = out / f"reference_mcmc_{mc.seed}_{mc.steps}.csv"
    if path.exists():
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return WeightedPopulation(data[:, :-1], data[:, -1])
    res = mh_mcmc_ma2(obs, cfg.build_problem().prior, mc.steps, mc.proposal_std,
                      streams.substream(mc.seed, 0, streams.MCMC), burn_in=mc.burn_in, thin=mc.thin)
    log.info("MCMC reference: acceptance %.3f, %d draws", res.acceptance_rate, len(res.population.weights))
    path.write_text(res.population.to_csv())
    return res.population


def _subsample(pop: WeightedPopulation, n: int) -> np.ndarray:
    step = max(1, len(pop.weights) // n)
    return pop.points[::step]


def evaluate(samples, cfg: ExperimentConfig, truth, reference, weights=None) -> dict:
    """Per-round metrics for an unweighted sample (or weighted population)."""
    pop = (WeightedPopulation.uniform(samples) if weights is None
           else WeightedPopulation(samples, weights))
    out = {"emd": None, "log_mean_emd": None, "mmd2": None, "mse": mse(pop, truth)}
    if reference is not None:
        ref_pts = _subsample(reference, cfg.metrics.n_eval)
        e = emd(pop, WeightedPopulation.uniform(ref_pts), bins=cfg.metrics.emd_bins)
        out["emd"] = e
        out["log_mean_emd"] = math.log(e) if e > 0 else None
        pts = samples
        if weights is not None:
            rng = streams.substream(0, streams.EVALUATE)
            pts = samples[rng.choice(len(weights), size=cfg.metrics.n_eval, p=pop.weights)]
        out["mmd2"] = mmd2(pts, ref_pts)
    return out


# runners


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _run_bcnn_seed(cfg, problem, obs, truth, reference, seed, seed_dir, jobs):
    b = cfg.bcnn
    rc = RunConfig(problem=problem, observation=obs, G=b.G, N=b.N, B=b.B, delta=b.delta, S=b.S,
                   seed=seed, train=b.train, jobs=jobs)
    files, counts, metrics = [], [], []
    total = [0]

    def on_round(rec):
        samples = rec.sampler.sample(cfg.metrics.n_eval, streams.substream(seed, rec.g, streams.EVALUATE))
        total[0] += rec.n_sims
        m = evaluate(samples, cfg, truth, reference)
        rec.metrics = m
        metrics.append({"method": "bcnn", "round": rec.g, "seed": seed, **m, "sim_count": total[0]})
        jp = seed_dir / f"round_{rec.g}.json"
        cp = seed_dir / f"round_{rec.g}_samples.csv"
        _write(jp, rec.to_json())
        _write(cp, rec.samples_csv())
        files.extend([str(jp), str(cp)])
        counts.append(total[0])

    status = "ok"
    try:
        run_inference(rc, on_round=on_round)
    except RoundAbortedError as exc:
        log.error("seed %d: %s", seed, exc)
        status = f"failed: {exc}"
    return status, files, counts, metrics


def _run_smc_seed(cfg, problem, obs, truth, reference, seed, seed_dir, jobs):
    s = cfg.smc
    spec = SummarySpec("ma2-stats" if cfg.problem == "ma2" else "raw-series")
    files, counts, metrics = [], [], []
    status = "ok"
    try:
        pops = abc_smc(problem.simulate, obs, problem.prior, s.n_particles, s.rounds, spec,
                       streams.substream(seed, streams.SMC), percentile=s.percentile,
                       max_trials=s.max_trials)
    except Exception as exc:  # StallError carries completed populations
        log.error("seed %d: %s", seed, exc)
        pops = getattr(exc, "populations", [])
        status = f"failed: {exc}"
    for pop in pops:
        m = evaluate(pop.particles, cfg, truth, reference, weights=pop.weights)
        metrics.append({"method": "abc-smc", "round": pop.round, "seed": seed, **m, "sim_count": pop.n_sims})
        jp = seed_dir / f"round_{pop.round}.json"
        cp = seed_dir / f"round_{pop.round}_samples.csv"
        _write(jp, json.dumps({"round": pop.round, "epsilon": pop.epsilon, "n_sims": pop.n_sims,
                               "metrics": m}, indent=1))
        _write(cp, pop.to_csv())
        files.extend([str(jp), str(cp)])
        counts.append(pop.n_sims)
    return status, files, counts, metrics


def _run_mcmc_seed(cfg, problem, obs, truth, reference, seed, seed_dir, jobs):
    mc = cfg.mcmc
    res = mh_mcmc_ma2(obs, problem.prior, mc.steps, mc.proposal_std,
                      streams.substream(seed, streams.MCMC), burn_in=mc.burn_in, thin=mc.thin)
    m = evaluate(_subsample(res.population, cfg.metrics.n_eval), cfg, truth, None)
    m["acceptance_rate"] = res.acceptance_rate
    cp = seed_dir / "round_1_samples.csv"
    jp = seed_dir / "round_1.json"
    _write(cp, res.population.to_csv())
    _write(jp, json.dumps({"round": 1, "acceptance_rate": res.acceptance_rate,
                           "posterior_mean": res.population.mean().tolist(), "metrics": m}, indent=1))
    rec = {"method": "mcmc-ref", "round": 1, "seed": seed, **m, "sim_count": 0}
    return "ok", [str(jp), str(cp)], [0], [rec]


_RUNNERS = {"bcnn": _run_bcnn_seed, "abc-smc": _run_smc_seed, "mcmc-ref": _run_mcmc_seed}


def run(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Execute the configured method for every seed and write the manifest.

    Returns the manifest dict; ``manifest["status"]`` is "ok" only when
    every seed completed. Paths in the manifest are relative to ``out_dir``.
    """
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    problem = cfg.build_problem()
    obs = load_observation(cfg, out)
    truth = cfg.truth()
    reference = reference_posterior(cfg, obs, out) if cfg.problem == "ma2" and cfg.mcmc and cfg.method != "mcmc-ref" else None
    runner = _RUNNERS[cfg.method]

    def one(seed):
        seed_dir = out / cfg.method / f"seed_{seed}"
        status, files, counts, metrics = runner(cfg, problem, obs, truth, reference, seed, seed_dir, 1)
        mp = seed_dir / "metrics.json"
        _write(mp, json.dumps(metrics, indent=1))
        rel = [str(Path(f).relative_to(out)) for f in files + [str(mp)]]
        return seed, {"status": status, "files": rel, "sim_counts": counts, "metrics": rel[-1]}

    if jobs > 1 and len(cfg.seeds) > 1:
        with ThreadPoolExecutor(min(jobs, len(cfg.seeds))) as ex:
            results = dict(ex.map(one, cfg.seeds))
    else:
        results = dict(one(s) for s in cfg.seeds)

    ok = all(r["status"] == "ok" for r in results.values())
    manifest = {
        "config_hash": cfg.digest(),
        "code_version": __version__,
        "problem": cfg.problem,
        "method": cfg.method,
        "status": "ok" if ok else "partial",
        "seeds": {str(s): results[s] for s in cfg.seeds},
    }
    _write(out / f"manifest_{cfg.method}.json", json.dumps(manifest, indent=1))
    _write(out / "manifest.json", json.dumps(manifest, indent=1))
    manifest["root"] = str(out)
    return manifest


# aggregation


def _fmt(v) -> str:
    return f"{v:.17g}"


def aggregate(manifests: list[dict], out_dir) -> dict:
    """Per-round mean and sample std across seeds for every metric.

    Writes ``metrics_long.csv`` (method, round, seed, metric, value),
    ``summary.csv`` (method, round, metric, mean, std, n) and one
    ``plotdata/<metric>_<method>.csv`` per metric and method. The
    ``log_mean_emd`` summary row is the log of the across-seed mean EMD.
    """
    problems = {m["problem"] for m in manifests}
    if len(problems) > 1:
        raise ValueError(f"cannot aggregate mixed problems {sorted(problems)}")
    out = Path(out_dir)
    rows = []
    for man in manifests:
        for seed_info in man["seeds"].values():
            root = Path(man.get("root", "."))
            for rec in json.loads((root / seed_info["metrics"]).read_text()):
                for metric in METRIC_NAMES:
                    if rec.get(metric) is not None:
                        rows.append((rec["method"], rec["round"], rec["seed"], metric, float(rec[metric])))
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))

    groups: dict = {}
    for method, rnd, seed, metric, value in rows:
        groups.setdefault((method, rnd, metric), []).append(value)
    summary = {}
    for (method, rnd, metric), vals in sorted(groups.items()):
        v = np.asarray(vals)
        if metric == "log_mean_emd":
            emds = np.asarray(groups[(method, rnd, "emd")])
            mean, std = math.log(emds.mean()), 0.0
        else:
            mean = float(v.mean())
            std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        summary[(method, rnd, metric)] = (mean, std, v.size)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "round", "seed", "metric", "value"])
    for method, rnd, seed, metric, value in rows:
        w.writerow([method, rnd, seed, metric, _fmt(value)])
    _write(out / "metrics_long.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "round", "metric", "mean", "std", "n"])
    for (method, rnd, metric), (mean, std, n) in summary.items():
        w.writerow([method, rnd, metric, _fmt(mean), _fmt(std), n])
    _write(out / "summary.csv", buf.getvalue())

    series: dict = {}
    for (method, rnd, metric), (mean, std, _) in summary.items():
        series.setdefault((metric, method), []).append((rnd, mean, std))
    for (metric, method), pts in series.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "std"])
        for rnd, mean, std in sorted(pts):
            w.writerow([rnd, _fmt(mean), _fmt(std)])
        _write(out / "plotdata" / f"{metric}_{method}.csv", buf.getvalue())
    return summary


def load_manifest(path) -> dict:
    """Read a manifest; file paths inside it are relative to its directory."""
    man = json.loads(Path(path).read_text())
    man["root"] = str(Path(path).parent)
    return man


def discover_manifests(out_dir) -> list[dict]:
    out = Path(out_dir)
    found = sorted(out.glob("manifest_*.json"))
    if not found and (out / "manifest.json").exists():
        found = [out / "manifest.json"]
    return [load_manifest(p) for p in found]
