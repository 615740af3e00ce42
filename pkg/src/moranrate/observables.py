"""Trajectory-level constructions on top of the engine.

Top/second labels, death marks on the tracked top individuals, the
mark-configuration set ``Lambda_K`` and its product lower bound, the
``Phi``/``Theta`` selection functionals, the stopping time ``tau(i)``, the
max-fitness barrier event, and log-space evaluators for the two
mutation-counting lemmas.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .branching import ScalingConstants, _log_n
from .engine import (ALL_KINDS, RESAMPLE, Engine, LevelHistogram, ModelParams,
                     TrajectorySample)


# -- trajectories --------------------------------------------------------

@dataclass(frozen=True)
class StepPath:
    """Right-continuous piecewise-constant path; ``values[k]`` holds on ``[times[k], times[k+1])``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("times and values must be nonempty and aligned")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("path times must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs):
        times, values = zip(*pairs)
        return cls(times, values)

    @classmethod
    def constant(cls, value, start=0.0):
        return cls((start,), (value,))

    def value_at(self, s):
        k = bisect_right(self.times, s) - 1
        if k < 0:
            raise ValueError(f"path starts after time {s}")
        return self.values[k]

    def pieces(self):
        """``(start, end, value)`` triples; the last piece ends at ``inf``."""
        ends = self.times[1:] + (math.inf,)
        return zip(self.times, ends, self.values)


@dataclass
class Trajectory:
    horizon: float
    max_path: StepPath
    median_path: StepPath | None = None
    samples: list = field(default_factory=list)

    def sample_at(self, t) -> TrajectorySample:
        for s in self.samples:
            if s.time == t:
                return s
        raise KeyError(f"no sample recorded at t={t}")


# -- labels --------------------------------------------------------------

class TopLabels(NamedTuple):
    alpha_level: int
    beta_level: int
    top_multiplicity: int


def labels_at(hist: LevelHistogram) -> TopLabels:
    """Fitness of a top individual and of the best individual besides it."""
    levels = hist.levels
    top = levels[-1]
    mult = hist.counts[top]
    beta = top if mult >= 2 else levels[-2]
    return TopLabels(top, beta, mult)


# -- death marks ---------------------------------------------------------

@dataclass(frozen=True)
class DeathMarkSeries:
    """Times at which a tracked top/second individual may have lost fitness."""

    marks: tuple
    horizon: float
    labels: tuple = ()

    def __post_init__(self):
        marks = tuple(float(m) for m in self.marks)
        object.__setattr__(self, "marks", marks)
        if any(b <= a for a, b in zip(marks, marks[1:])):
            raise ValueError("mark times must be strictly increasing")
        if marks and (marks[0] < 0 or marks[-1] > self.horizon):
            raise ValueError("mark times must lie in [0, horizon]")
        if self.labels and len(self.labels) != len(marks):
            raise ValueError("labels must align with marks")

    def of(self, label):
        return [m for m, j in zip(self.marks, self.labels) if j == label]

    def count(self, lo, hi, closed=False):
        if closed:
            return sum(1 for m in self.marks if lo <= m <= hi)
        return sum(1 for m in self.marks if lo <= m < hi)

    def to_json(self):
        return json.dumps(list(self.marks))


def track_death_marks(params: ModelParams, horizon: float, grid: Sequence[float],
                      seed: int, resampling: bool = True,
                      backend: str | None = None,
                      sample_times: Sequence[float] = ()):
    """Run the engine following the top and second individual of each window.

    At every grid time ``s_i <= horizon`` one tracked coordinate is moved to
    a top individual and the other to the best remaining one.  A mark is
    recorded whenever a tracked individual takes a deleterious mutation or is
    overwritten by resampling.  ``resampling=False`` switches resampling off
    entirely (test hook).
    """
    kinds = ALL_KINDS if resampling else ALL_KINDS & ~RESAMPLE
    engine = Engine(params, seed=seed, kinds=kinds, backend=backend)
    engine.track([0, 0])
    refresh = [s for s in grid if s <= horizon]
    times = sorted(set(refresh) | {float(horizon)} | set(sample_times))
    record = engine.run(horizon, sample_times=times, refresh_times=refresh,
                        record_max=True, record_median=True)
    traj = Trajectory(
        horizon=float(horizon),
        max_path=StepPath.from_pairs(record.max_path),
        median_path=StepPath.from_pairs(record.median_path),
        samples=[TrajectorySample.from_hist(t, h, keep_snapshot=True)
                 for t, h in record.snapshots()],
    )
    series = DeathMarkSeries(tuple(t for t, _ in record.marks), float(horizon),
                             tuple(j for _, j in record.marks))
    return traj, series


def lambda_k_member(marks: DeathMarkSeries, constants: ScalingConstants, K: int) -> bool:
    """At most K marks on ``[0, s_{M+1}]``, none on ``[0, s_1]``, at most one per ``[s_i, s_{i+1})``."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    m = constants.m_steps
    if marks.count(0.0, constants.s(1), closed=True):
        return False
    if marks.count(0.0, constants.s(m + 1), closed=True) > K:
        return False
    return all(marks.count(constants.s(i), constants.s(i + 1)) <= 1
               for i in range(1, m + 1))


def prop1_bound(constants: ScalingConstants, K: int, k: int) -> float:
    """Lower bound ``prod_{i=1}^k (t+1 - 2 i T)/(t+1)`` on membership given k marks on ``[0, t+1]``."""
    if not 0 <= k <= K:
        raise ValueError("need 0 <= k <= K")
    span = constants.horizon + 1.0
    if not 2 * k * constants.big_t < span:
        raise ValueError("bound is vacuous: 2 k T >= t + 1")
    out = 1.0
    for i in range(1, k + 1):
        out *= (span - 2 * i * constants.big_t) / span
    return out


@dataclass(frozen=True)
class MembershipCheck:
    frequency: float
    standard_error: float
    mean_bound: float
    n_runs: int
    mark_counts: tuple

    @property
    def passes(self):
        return self.frequency >= self.mean_bound - 3 * self.standard_error


def membership_vs_bound(series: Sequence[DeathMarkSeries],
                        constants: ScalingConstants, K: int) -> MembershipCheck:
    """Empirical ``Lambda_K`` frequency against the bound at each run's realised mark count.

    Runs must cover ``[0, t+1]``.  A count above ``K`` or one making the
    product vacuous contributes a bound of 0.
    """
    span = constants.horizon + 1.0
    hits = []
    bounds = []
    counts = []
    for s in series:
        if s.horizon < span:
            raise ValueError("mark series must cover [0, t + 1]")
        k = s.count(0.0, span, closed=True)
        counts.append(k)
        hits.append(1.0 if lambda_k_member(s, constants, K) else 0.0)
        if k <= K and 2 * k * constants.big_t < span:
            bounds.append(prop1_bound(constants, K, k))
        else:
            bounds.append(0.0)
    n = len(series)
    freq = sum(hits) / n
    se = math.sqrt(freq * (1 - freq) / n) if n > 1 else 0.0
    return MembershipCheck(freq, se, sum(bounds) / n, n, tuple(counts))


# -- selection functionals -----------------------------------------------

class PhiTheta(NamedTuple):
    phi: float
    theta: float
    premise: bool
    bound_holds: bool


def phi_theta(hist: LevelHistogram, level: int, width: float) -> PhiTheta:
    """``Phi = sum_k (j - X^k)^+`` and ``Theta``, its part from gaps of at least ``width``.

    ``premise`` is whether half the population sits ``width`` or more below
    ``level``; under it ``Theta >= N width / 2`` must hold.
    """
    phi = 0
    theta = 0
    far = 0
    for k, c in hist.counts.items():
        gap = level - k
        if gap > 0:
            phi += c * gap
        if gap >= width:
            theta += c * gap
            far += c
    n = hist.total
    premise = 2 * far >= n
    return PhiTheta(phi, theta, premise, (not premise) or theta >= n * width / 2)


# -- stopping time and barrier event ------------------------------------

def stopping_time_tau(trajectory: Trajectory, constants: ScalingConstants, i: int,
                      beta_level: int | None = None):
    """First time in ``[s_i, s_{i+1}]`` at which ``beta(i)`` level minus the median drops below W."""
    s_i, s_next = constants.s(i), constants.s(i + 1)
    if trajectory.horizon < s_next:
        raise ValueError("trajectory does not cover [s_i, s_{i+1}]")
    if trajectory.median_path is None:
        raise ValueError("trajectory has no median path")
    if beta_level is None:
        beta_level = labels_at(trajectory.sample_at(s_i).histogram_snapshot).beta_level
    width = constants.big_w
    path = trajectory.median_path
    if beta_level - path.value_at(s_i) < width:
        return s_i
    for t, v in zip(path.times, path.values):
        if s_i < t <= s_next and beta_level - v < width:
            return t
    return None


def event_E_indicator(trajectory: Trajectory, constants: ScalingConstants,
                      t: float | None = None, barrier_m: int | None = None) -> bool:
    """Whether ``X^+_s >= M s / 2`` for every ``s`` in ``[T, t]``.

    Exact for the piecewise-constant max path: each piece is compared with
    the barrier at its right end (clipped to ``t``).
    """
    if t is None:
        t = constants.horizon
    m = constants.m_steps if barrier_m is None else barrier_m
    lo = constants.big_t
    if t < lo:
        raise ValueError("window [T, t] is empty")
    path = trajectory.max_path
    if path.times[0] > lo or trajectory.horizon < t:
        raise ValueError("trajectory does not cover [T, t]")
    for start, end, value in path.pieces():
        if end <= lo or start > t:
            continue
        if value < m * min(end, t) / 2:
            return False
    return True


# -- asymptotic evaluators -----------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    value: float
    formula: str
    inputs: dict


@dataclass
class AsymptoticReport:
    n_log10: float
    entries: dict = field(default_factory=dict)

    def add(self, name, value, formula, **inputs):
        self.entries[name] = Diagnostic(float(value), formula, inputs)

    def __getitem__(self, name):
        return self.entries[name].value

    def values(self):
        return {k: d.value for k, d in self.entries.items()}

    def to_json(self):
        return {k: {"value": d.value, "formula": d.formula,
                    "inputs": {"N_log10": self.n_log10, **d.inputs}}
                for k, d in self.entries.items()}


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def _setup(params, n, log_n):
    if n is None and log_n is None:
        n = params.n_individuals
    log_n = _log_n(n, log_n)
    const = ScalingConstants.compute(params, 1.0, log_n=log_n)
    return log_n, math.log(log_n), const


def lemma4_diagnostics(params: ModelParams, n=None, log_n=None) -> AsymptoticReport:
    """Log-space lower bounds for some individual collecting ``ceil(2W)`` beneficial mutations within T."""
    log_n, ll, const = _setup(params, n, log_n)
    q, mu, gamma = params.beneficial_fraction, params.mutation_rate, params.selection_strength
    big_t, big_w = const.big_t, const.big_w
    qmt = q * mu * big_t
    c = math.ceil(2 * big_w)
    rep = AsymptoticReport(log_n / math.log(10.0))
    rep.add("log_poisson_tail",
            log_n + c * math.log(qmt) - qmt - math.log(4) - math.lgamma(c + 1),
            "log[N (q mu T)^c e^(-q mu T) / (4 c!)], c = ceil(2W)", c=c)
    head = c * math.log(2 * q * mu * ll) - qmt - c - math.log(4)
    rep.add("log_stirling_form",
            log_n + head - c * math.log(gamma * big_w)
            - 0.5 * math.log(2 * math.pi * c) - c * math.log(c),
            "log[N (2 q mu loglogN)^c e^(-q mu T - c) / (4 (gamma W)^c (2 pi c)^(1/2) c^c)]",
            c=c)
    rep.add("log_ceiling_free_bound",
            log_n + head - 2 * big_w * math.log(2 * gamma)
            - 0.5 * math.log(4 * math.pi * big_w) - 4 * big_w * math.log(big_w),
            "log[N (2 q mu loglogN)^c e^(-q mu T - c) / (4 (2 gamma)^(2W) (4 pi W)^(1/2) W^(4W))]",
            c=c)
    exponent = 0.5 + math.log(8 * ll) / (2 * ll)
    rep.add("log_power_form",
            exponent * log_n + head - 2 * big_w * math.log(2 * gamma)
            - 0.5 * math.log(4 * math.pi * big_w),
            "log[N^(1/2 + log(8 loglogN)/(2 loglogN)) (2 q mu loglogN)^c e^(-q mu T - c)"
            " / (4 (2 gamma)^(2W) (4 pi W)^(1/2))]", c=c)
    lhs = 4 * big_w * math.log(big_w)
    rhs = log_n * (0.5 - math.log(8 * ll) / (2 * ll))
    rep.add("w4w_log", lhs, "4 W log W")
    rep.add("w4w_power_log", rhs, "log N (1/2 - log(8 loglogN)/(2 loglogN))")
    rep.add("w4w_rel_error", _rel(lhs, rhs), "|4 W log W - rhs| / |rhs|")
    _wt_identity(rep, const, ll, gamma)
    return rep


def _wt_identity(rep, const, ll, gamma):
    prod = const.big_w * const.big_t
    rep.add("wt_product", prod, "W T")
    rep.add("wt_rel_error", _rel(prod, 2 * ll / gamma), "|W T - 2 loglogN / gamma| / (2 loglogN / gamma)")


def lemma5_diagnostics(params: ModelParams, n=None, log_n=None) -> AsymptoticReport:
    """``(W/2)(1 - e^{-q mu T})`` with its quadratic lower bound.

    ``1 - e^{-x} > x - x^2/2`` gives ``(W/2)(x - x^2/2)``.  The doubled form
    ``(2 W x - W x^2)/2`` is reported separately because it is not a lower
    bound in general.
    """
    log_n, ll, const = _setup(params, n, log_n)
    q, mu, gamma = params.beneficial_fraction, params.mutation_rate, params.selection_strength
    x = q * mu * const.big_t
    big_w = const.big_w
    value = -(big_w / 2) * math.expm1(-x)
    bound = big_w * (2 * x - x * x) / 4
    printed = big_w * (2 * x - x * x) / 2
    rep = AsymptoticReport(log_n / math.log(10.0))
    rep.add("value", value, "(W/2)(1 - e^(-q mu T))")
    rep.add("quadratic_bound", bound, "(W/2)(x - x^2/2), x = q mu T")
    rep.add("bound_holds", 1.0 if bound < value else 0.0, "quadratic_bound < value")
    # the form (2 W x - W x^2)/2 is twice the bound above and can exceed value
    rep.add("doubled_quadratic_form", printed, "(2 W x - W x^2) / 2, x = q mu T")
    rep.add("doubled_form_below_value", 1.0 if printed < value else 0.0,
            "doubled_quadratic_form < value")
    rep.add("leading_order", q * mu * ll / gamma, "q mu W T / 2 = q mu loglogN / gamma")
    _wt_identity(rep, const, ll, gamma)
    return rep
