"""Replicate sweeps, drift and scaling estimates, and result persistence.

Replicate ``r`` of population size ``N`` always draws from stream
``(seed, N, r)``; results are sorted by ``(N, r)`` before any aggregation, so
outputs do not depend on worker count or scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import __version__
from ._backend import BACKEND
from .branching import ScalingConstants
from .engine import Engine, ModelParams, TrajectorySample
from .observables import (DeathMarkSeries, StepPath, Trajectory, event_E_indicator,
                          lambda_k_member)
from .rng import stream, stream_label

RESULTS_COLUMNS = ["N", "replicate", "seed_stream", "t", "M", "mean_fitness_final",
                   "c2_final", "max_fitness_final", "rate_max", "event_E",
                   "lambda_K_member", "wallclock_s", "error"]

SWEEP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_ladder", "mu", "q", "gamma", "replicates", "seed"],
    "properties": {
        "n_ladder": {"type": "array", "minItems": 1,
                     "items": {"type": "integer", "minimum": 16}},
        "mu": {"type": "number", "exclusiveMinimum": 0},
        "q": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "sample_density": {"type": "number", "exclusiveMinimum": 0},
        "K": {"type": "integer", "minimum": 0},
        "barrier_m": {"type": ["integer", "null"], "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "record_timing": {"type": "boolean"},
    },
}


class ConfigError(ValueError):
    """Invalid sweep configuration; ``path`` is a JSON pointer to the field."""

    def __init__(self, path, message):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path or "/"


@dataclass(frozen=True)
class SweepConfig:
    n_ladder: tuple
    mu: float
    q: float
    gamma: float
    replicates: int
    seed: int
    horizon: float | None = None
    sample_density: float = 1.0
    K: int = 10
    barrier_m: int | None = None
    workers: int = 1
    out: str = "sweep_out"
    record_timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_ladder", tuple(int(n) for n in self.n_ladder))
        if self.replicates < 1:
            raise ConfigError("/replicates", "must be >= 1")
        if any(b <= a for a, b in zip(self.n_ladder, self.n_ladder[1:])):
            raise ConfigError("/n_ladder", "must be strictly increasing")

    @classmethod
    def from_dict(cls, obj):
        import jsonschema

        validator = jsonschema.Draft202012Validator(SWEEP_SCHEMA)
        errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            pointer = "".join(f"/{p}" for p in err.absolute_path)
            raise ConfigError(pointer, err.message)
        return cls(**obj)

    def to_dict(self):
        out = asdict(self)
        out["n_ladder"] = list(self.n_ladder)
        return out

    def params(self, n) -> ModelParams:
        return ModelParams(n, self.mu, self.q, self.gamma)

    def resolved_horizon(self) -> float:
        """Configured horizon, else ``max(10 T(N_min), 10)``."""
        if self.horizon is not None:
            return float(self.horizon)
        n_min = self.n_ladder[0]
        big_t = ScalingConstants.compute(self.params(n_min), 1.0).big_t
        return max(10.0 * big_t, 10.0)

    def constants(self, n) -> ScalingConstants:
        return ScalingConstants.compute(self.params(n), self.resolved_horizon())

    def sample_grid(self) -> list[float]:
        t = self.resolved_horizon()
        k = int(math.floor(t * self.sample_density + 1e-9))
        grid = [i / self.sample_density for i in range(k + 1)]
        if grid[-1] < t:
            grid.append(t)
        return grid


@dataclass
class ReplicateResult:
    n: int
    replicate: int
    seed_stream: str
    t: float
    m: int
    mean_fitness_final: float = math.nan
    c2_final: float = math.nan
    max_fitness_final: int = 0
    rate_max: float = math.nan
    event_e: bool | None = None
    lambda_k_member: bool = False
    wallclock_s: float = 0.0
    error: str = ""
    samples: list = field(default_factory=list, repr=False)
    max_path: tuple = field(default=(), repr=False)

    @property
    def ok(self):
        return not self.error

    def row(self, record_timing=False):
        def num(x):
            return format(x, ".17g")

        if not self.ok:
            return [self.n, self.replicate, self.seed_stream, num(self.t), self.m,
                    "", "", "", "", "", "",
                    num(self.wallclock_s) if record_timing else "", self.error]
        flag = "" if self.event_e is None else int(self.event_e)
        return [self.n, self.replicate, self.seed_stream, num(self.t), self.m,
                num(self.mean_fitness_final), num(self.c2_final),
                self.max_fitness_final, num(self.rate_max), flag,
                int(self.lambda_k_member),
                num(self.wallclock_s) if record_timing else "", ""]


def run_replicate(config: SweepConfig, n: int, r: int,
                  backend: str | None = None) -> ReplicateResult:
    """One tracked run of size ``n``; failures come back as an error-tagged row."""
    t = config.resolved_horizon()
    label = stream_label(config.seed, n, r)
    start = time.perf_counter()
    try:
        params = config.params(n)
        const = config.constants(n)
        grid = const.grid
        run_to = max(t, grid[-1])
        engine = Engine(params, rng=stream(config.seed, n, r), backend=backend)
        engine.track([0, 0])
        record = engine.run(run_to, sample_times=config.sample_grid(),
                            refresh_times=grid, record_max=True)
        samples = [TrajectorySample.from_hist(s, h) for s, h in record.snapshots()]
        final = samples[-1]
        traj = Trajectory(run_to, StepPath.from_pairs(record.max_path))
        marks = DeathMarkSeries(tuple(m for m, _ in record.marks), run_to,
                                tuple(j for _, j in record.marks))
        return ReplicateResult(
            n=n, replicate=r, seed_stream=label, t=t, m=const.m_steps,
            mean_fitness_final=final.mean_fitness,
            c2_final=final.centered_variance,
            max_fitness_final=final.max_fitness,
            rate_max=final.max_fitness / t,
            event_e=(event_E_indicator(traj, const, t, config.barrier_m)
                     if t >= const.big_t else None),
            lambda_k_member=lambda_k_member(marks, const, config.K),
            wallclock_s=time.perf_counter() - start,
            samples=[(s.time, s.mean_fitness, s.max_fitness) for s in samples],
            max_path=tuple(record.max_path),
        )
    except Exception as exc:  # recorded, never dropped
        return ReplicateResult(n=n, replicate=r, seed_stream=label, t=t, m=-1,
                               wallclock_s=time.perf_counter() - start,
                               error=f"{type(exc).__name__}: {exc}")


def _task(args):
    return run_replicate(*args)


def run_sweep(config: SweepConfig, backend: str | None = None) -> list[ReplicateResult]:
    tasks = [(config, n, r, backend) for n in config.n_ladder
             for r in range(config.replicates)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=4))
    else:
        results = [_task(a) for a in tasks]
    results.sort(key=lambda x: (x.n, x.replicate))
    return results


# -- estimators ----------------------------------------------------------

@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    standard_error: float
    n: int
    target: float | None = None

    def within(self, k=3.0):
        return abs(self.mean - self.target) <= k * self.standard_error


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    mean = float(math.fsum(values) / n)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se, n


def wilson_interval(successes, n, z=1.959963984540054):
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def drift_check(params: ModelParams, horizon: float, replicates: int, seed: int,
                backend: str | None = None) -> MeanEstimate:
    """Ensemble mean of ``mean_fitness(t)/t`` without selection; target ``mu (2q - 1)``."""
    if params.selection_strength != 0:
        raise ValueError("drift_check needs selection_strength == 0")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rates = []
    n = params.n_individuals
    for r in range(replicates):
        engine = Engine(params, rng=stream(seed, n, r), backend=backend)
        rec = engine.run(horizon, sample_times=[horizon])
        (_, hist), = rec.snapshots()
        rates.append(sum(k * c for k, c in hist.counts.items()) / n / horizon)
    mean, se, count = _mean_se(rates)
    target = params.mutation_rate * (2 * params.beneficial_fraction - 1)
    return MeanEstimate(mean, se, count, target)


def scaling_predictor(n):
    ll = math.log(math.log(n))
    return math.log(n) / (ll * ll)


@dataclass(frozen=True)
class EventEstimate:
    n: int
    m: int
    successes: int
    trials: int
    low: float
    high: float

    @property
    def frequency(self):
        return self.successes / self.trials if self.trials else math.nan


@dataclass
class FitReport:
    n_values: list
    predictor: list
    mean_rate: list
    se_rate: list
    replicates: list
    slope: float
    intercept: float
    slope_ci: tuple
    spearman_rho: float
    spearman_p: float
    spearman_log_n_rho: float
    spearman_log_n_p: float
    event_frequency: list
    excluded: int

    @property
    def c(self):
        return self.slope

    def to_json(self):
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        return {
            "N": self.n_values,
            "predictor_logN_over_loglogN2": clean(self.predictor),
            "mean_rate_max": clean(self.mean_rate),
            "se_rate_max": clean(self.se_rate),
            "replicates": self.replicates,
            "slope_c": clean(self.slope),
            "slope_c_ci95": clean(list(self.slope_ci)),
            "intercept": clean(self.intercept),
            "spearman_rho": clean(self.spearman_rho),
            "spearman_p_greater": clean(self.spearman_p),
            "spearman_logN_rho": clean(self.spearman_log_n_rho),
            "spearman_logN_p_greater": clean(self.spearman_log_n_p),
            "event_E": [{"N": e.n, "M": e.m, "successes": e.successes,
                         "trials": e.trials, "frequency": clean(e.frequency),
                         "wilson95": [e.low, e.high]} for e in self.event_frequency],
            "excluded_failed_replicates": self.excluded,
        }


def _event_estimates(results, barrier_m=None, config=None):
    out = []
    by_n = {}
    for res in results:
        by_n.setdefault(res.n, []).append(res)
    for n in sorted(by_n):
        rows = [r for r in by_n[n] if r.ok and r.event_e is not None]
        if not rows:
            out.append(EventEstimate(n, -1, 0, 0, 0.0, 1.0))
            continue
        if barrier_m is None or config is None:
            flags = [r.event_e for r in rows]
            m = rows[0].m
        else:
            const = config.constants(n)
            m = barrier_m
            flags = [event_E_indicator(Trajectory(max(r.t, const.grid[-1]),
                                                  StepPath.from_pairs(r.max_path)),
                                       const, r.t, barrier_m) for r in rows]
        k = sum(flags)
        lo, hi = wilson_interval(k, len(flags))
        out.append(EventEstimate(n, m, k, len(flags), lo, hi))
    return out


def fit_scaling(results: Sequence[ReplicateResult]) -> FitReport:
    """Regress per-N mean ``X^+_t / t`` on ``log N / (log log N)^2``."""
    results = sorted(results, key=lambda x: (x.n, x.replicate))
    ok = [r for r in results if r.ok]
    by_n = {}
    for r in ok:
        by_n.setdefault(r.n, []).append(r.rate_max)
    ns = sorted(by_n)
    if len(ns) < 3 or any(len(by_n[n]) < 30 for n in ns):
        raise ValueError("need >= 3 population sizes with >= 30 replicates each")
    x = [scaling_predictor(n) for n in ns]
    if len(set(x)) < 2:
        raise ValueError("degenerate ladder: predictor values coincide")
    stats_n = [_mean_se(by_n[n]) for n in ns]
    means = [s[0] for s in stats_n]
    fit = stats.linregress(x, means)
    dof = len(ns) - 2
    half = float(stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else math.inf
    rep_x = [scaling_predictor(r.n) for r in ok]
    rep_y = [r.rate_max for r in ok]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = stats.spearmanr(rep_x, rep_y, alternative="greater")
        rho_log = stats.spearmanr([math.log(r.n) for r in ok], rep_y,
                                  alternative="greater")
    return FitReport(
        n_values=ns, predictor=x, mean_rate=means, se_rate=[s[1] for s in stats_n],
        replicates=[s[2] for s in stats_n], slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_ci=(float(fit.slope) - half, float(fit.slope) + half),
        spearman_rho=float(rho.statistic), spearman_p=float(rho.pvalue),
        spearman_log_n_rho=float(rho_log.statistic),
        spearman_log_n_p=float(rho_log.pvalue),
        event_frequency=_event_estimates(results),
        excluded=len(results) - len(ok),
    )


def estimate_event_probability(config: SweepConfig, barrier_m: int | None = None,
                               results: Sequence[ReplicateResult] | None = None,
                               backend: str | None = None) -> list[EventEstimate]:
    """Per-N frequency of the barrier event with Wilson 95% intervals."""
    t = config.resolved_horizon()
    for n in config.n_ladder:
        const = config.constants(n)
        if t < const.big_t:
            raise ValueError(f"horizon {t} is shorter than T = {const.big_t} for N = {n}")
        m = const.m_steps if barrier_m is None else barrier_m
        if m == 0:
            warnings.warn(f"barrier M = 0 for N = {n}: the event estimate is vacuous",
                          stacklevel=2)
    if results is None:
        results = run_sweep(config, backend=backend)
    return _event_estimates(results, barrier_m, config)


# -- persistence ---------------------------------------------------------

def results_csv(results: Sequence[ReplicateResult], record_timing=False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_COLUMNS)
    for r in sorted(results, key=lambda x: (x.n, x.replicate)):
        w.writerow(r.row(record_timing))
    return buf.getvalue()


def ensemble_csv(results: Sequence[ReplicateResult]) -> str:
    """Per-N ensemble means of mean and max fitness on the sample grid."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "t", "replicates", "mean_fitness", "mean_fitness_se",
                "max_fitness", "max_fitness_se"])
    by_n = {}
    for r in sorted(results, key=lambda x: (x.n, x.replicate)):
        if r.ok:
            by_n.setdefault(r.n, []).append(r.samples)
    for n in sorted(by_n):
        runs = by_n[n]
        for k, (t, _, _) in enumerate(runs[0]):
            mf, mf_se, count = _mean_se([run[k][1] for run in runs])
            mx, mx_se, _ = _mean_se([run[k][2] for run in runs])
            w.writerow([n, format(t, ".17g"), count, format(mf, ".17g"),
                        format(mf_se, ".17g"), format(mx, ".17g"), format(mx_se, ".17g")])
    return buf.getvalue()


def manifest(subcommand, parameters, seed, outputs):
    """Run description; ``SOURCE_DATE_EPOCH`` pins the timestamp."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return {
        "subcommand": subcommand,
        "parameters": parameters,
        "seed": seed,
        "outputs": sorted(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", stamp),
        "tool_version": __version__,
        "kernel_backend": BACKEND,
    }


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_outputs(config: SweepConfig, results, fit: FitReport | None,
                        events: Sequence[EventEstimate], out_dir: str,
                        fit_error: str = ""):
    os.makedirs(out_dir, exist_ok=True)
    files = {"results.csv": results_csv(results, config.record_timing),
             "ensemble.csv": ensemble_csv(results)}
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(text)
    report = fit.to_json() if fit is not None else {"error": f"fit skipped: {fit_error}"}
    report["event_probability"] = [
        {"N": e.n, "M": e.m, "frequency": e.frequency if e.trials else None,
         "wilson95": [e.low, e.high], "trials": e.trials} for e in events]
    write_json(os.path.join(out_dir, "fit_report.json"), report)
    names = list(files) + ["fit_report.json", "manifest.json"]
    write_json(os.path.join(out_dir, "manifest.json"),
               manifest("sweep", config.to_dict(), config.seed, names))
    return [os.path.join(out_dir, n) for n in names]
