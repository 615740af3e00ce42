"""Linear birth-death law and the scaling constants built on it.

A single ancestor whose descendants each give birth at rate ``w`` and die at
rate ``d`` has, at time ``s``, a count ``Z_s`` with

    P(Z_s = 0) = f(s),   P(Z_s = i) = (1 - f)(1 - g) g^(i-1),  i >= 1,

where, writing ``y = (e^{(w-d)s} - 1)/(w - d)`` (``y = s`` when ``w = d``),

    f = d y / (1 + w y),   g = w y / (1 + w y).

Everything here is evaluated through ``y`` with ``expm1``, which stays
accurate through the critical case ``w = d``.  Population-size dependent
constants take ``log N`` so that astronomically large ``N`` never has to be
represented.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import ModelParams
from .rng import stream

# |w - d| s below this switches y to its Taylor series
CRITICAL_THRESHOLD = 1e-8


def death_rate(params) -> float:
    """Rate of events that can lower one individual's fitness, ``(1 + q) mu + 1``."""
    return (1.0 + params.beneficial_fraction) * params.mutation_rate + 1.0


def _log_n(n=None, log_n=None):
    if (n is None) == (log_n is None):
        raise ValueError("give exactly one of n or log_n")
    if log_n is None:
        if n <= 1:
            raise ValueError("population size must exceed 1")
        log_n = math.log(n)
    log_n = float(log_n)
    if not log_n > 1.0:
        raise ValueError("log log N must be positive (N > e)")
    return log_n


@dataclass(frozen=True)
class ScalingConstants:
    """Time scale, width and rates for one population size and horizon.

    ``big_t = 16 (log log N)^2 / (gamma log N)``, ``big_w = log N / (8 log log N)``,
    ``w = gamma big_w / 2``, ``d = (1 + q) mu + 1``; the grid is
    ``s_i = 2 i big_t`` for ``i = 0..M+1`` with ``M < t / (2 big_t) <= M + 1``.
    """

    big_t: float
    big_w: float
    birth_rate_w: float
    death_rate_d: float
    horizon: float
    log_n: float = math.nan

    @classmethod
    def compute(cls, params: ModelParams, horizon: float, n=None, log_n=None):
        """Constants for ``N = n`` (default ``params.n_individuals``) or given ``log_n``."""
        if n is None and log_n is None:
            n = params.n_individuals
        log_n = _log_n(n, log_n)
        if not params.selection_strength > 0:
            raise ValueError("scaling constants need selection_strength > 0")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        ll = math.log(log_n)
        gamma = params.selection_strength
        big_t = 16.0 * ll * ll / (gamma * log_n)
        big_w = log_n / (8.0 * ll)
        return cls(big_t, big_w, gamma * big_w / 2.0, death_rate(params),
                   float(horizon), log_n)

    @property
    def m_steps(self) -> int:
        return max(math.ceil(self.horizon / (2.0 * self.big_t)) - 1, 0)

    def s(self, i: int) -> float:
        return 2.0 * i * self.big_t

    @property
    def grid(self) -> list[float]:
        """``s_0, ..., s_{M+1}``."""
        return [self.s(i) for i in range(self.m_steps + 2)]

    @property
    def loglog_n(self):
        return math.log(self.log_n)

    def branching(self, params: ModelParams) -> "BranchingParams":
        return BranchingParams(self.birth_rate_w, self.death_rate_d,
                               params.beneficial_fraction * params.mutation_rate)


@dataclass(frozen=True)
class BranchingParams:
    birth: float
    death: float
    type_advance: float = 0.0

    def __post_init__(self):
        if not self.birth > 0 or not self.death > 0:
            raise ValueError("birth and death rates must be positive")
        if not self.type_advance >= 0:
            raise ValueError("type_advance must be nonnegative")


def _check_s(s):
    if not s >= 0:
        raise ValueError("time s must be nonnegative")


def _y(bp: BranchingParams, s: float) -> float:
    """``(e^{(w-d)s} - 1)/(w - d)``; ``inf`` once it overflows."""
    eps = bp.birth - bp.death
    x = eps * s
    if abs(x) < CRITICAL_THRESHOLD:
        return s * (1.0 + x / 2.0 + x * x / 6.0)
    try:
        return math.expm1(x) / eps
    except OverflowError:
        return math.inf


def extinction_prob(bp: BranchingParams, s: float) -> float:
    """``f(s) = P(Z_s = 0 | Z_0 = 1)``."""
    _check_s(s)
    y = _y(bp, s)
    if math.isinf(y):
        return bp.death / bp.birth
    return bp.death * y / (1.0 + bp.birth * y)


def tail_param(bp: BranchingParams, s: float) -> float:
    """``g(s)``, the ratio of the geometric tail of ``Z_s``."""
    _check_s(s)
    y = _y(bp, s)
    if math.isinf(y):
        return 1.0
    return bp.birth * y / (1.0 + bp.birth * y)


def _one_minus_f(bp, y):
    if math.isinf(y):
        return 1.0 - bp.death / bp.birth
    return (1.0 + (bp.birth - bp.death) * y) / (1.0 + bp.birth * y)


def _log_g(bp, y):
    if math.isinf(y):
        return 0.0
    if y == 0.0:
        return -math.inf
    return -math.log1p(1.0 / (bp.birth * y))


def count_pmf(bp: BranchingParams, s: float, i: int) -> float:
    _check_s(s)
    if i < 0:
        raise ValueError("count must be nonnegative")
    y = _y(bp, s)
    if i == 0:
        return extinction_prob(bp, s)
    if math.isinf(y):
        return 0.0
    first = _one_minus_f(bp, y) / (1.0 + bp.birth * y)
    if i == 1:
        return first
    return first * math.exp((i - 1) * _log_g(bp, y))


def generating_function(bp: BranchingParams, x: float, s: float) -> float:
    """``F(x, s) = E[x^{Z_s} | Z_0 = 1]``.

    Same closed form as ``[d(x-1) - (wx-d)e^{(d-w)s}] / [w(x-1) - (wx-d)e^{(d-w)s}]``
    after dividing through by ``(w - d) e^{(d-w)s}``.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    _check_s(s)
    y = _y(bp, s)
    if math.isinf(y):
        return bp.death / bp.birth if x < 1.0 else 1.0
    return (x + bp.death * (1.0 - x) * y) / (1.0 + bp.birth * (1.0 - x) * y)


def survival_above(bp: BranchingParams, s: float, threshold: float) -> float:
    """``P(Z_s > threshold) = (1 - f(s)) g(s)^threshold``; real thresholds allowed."""
    if not threshold >= 0:
        raise ValueError("threshold must be nonnegative")
    _check_s(s)
    y = _y(bp, s)
    if threshold == 0:
        return _one_minus_f(bp, y)
    return _one_minus_f(bp, y) * math.exp(threshold * _log_g(bp, y))


@dataclass(frozen=True)
class Prop2Report:
    """Branching quantities evaluated at the scaling constants for one ``N``."""

    n_log10: float
    w: float
    big_t: float
    wf_t: float
    d: float
    log_n_p1: float
    survival: float
    big_w: float
    exp_wt: float
    log_n: float

    @property
    def wt_identity_error(self):
        """Relative error of ``w T = log log N``."""
        ll = math.log(self.log_n)
        return abs(self.w * self.big_t - ll) / ll

    @property
    def exp_wt_identity_error(self):
        """Relative error of ``e^{w T} = log N``, compared in log space."""
        return abs(math.log(self.exp_wt) - math.log(self.log_n)) / math.log(self.log_n)

    def to_json(self):
        return {"N_log10": self.n_log10, "w": self.w, "T": self.big_t,
                "wf_T": self.wf_t, "d": self.d, "logN_P1": self.log_n_p1,
                "survival": self.survival}


def prop2_report(params: ModelParams, n=None, log_n=None) -> Prop2Report:
    """Extinction, singleton and survival-above-width probabilities at ``s = T``.

    Their large-N limits are ``w f(T) -> d``, ``(log N) P(Z_T = 1) -> 1`` and
    ``P(Z_T > W) -> 1``.
    """
    if n is None and log_n is None:
        n = params.n_individuals
    log_n = _log_n(n, log_n)
    const = ScalingConstants.compute(params, 1.0, log_n=log_n)
    bp = BranchingParams(const.birth_rate_w, const.death_rate_d)
    big_t = const.big_t
    return Prop2Report(
        n_log10=log_n / math.log(10.0),
        w=const.birth_rate_w,
        big_t=big_t,
        wf_t=const.birth_rate_w * extinction_prob(bp, big_t),
        d=const.death_rate_d,
        log_n_p1=log_n * count_pmf(bp, big_t, 1),
        survival=survival_above(bp, big_t, const.big_w),
        big_w=const.big_w,
        exp_wt=math.exp(const.birth_rate_w * big_t),
        log_n=log_n,
    )


# -- Monte Carlo ---------------------------------------------------------

@dataclass
class BDPath:
    """Piecewise-constant path: ``times[k]`` starts the k-th state."""

    times: list
    type0: list
    advanced: list

    @property
    def final_total(self):
        return self.type0[-1] + self.advanced[-1]


def _run_bd(bp, horizon, rng, keep_path):
    t = 0.0
    z0, z1 = 1, 0
    times, n0, n1 = [0.0], [1], [0]
    w, d, a = bp.birth, bp.death, bp.type_advance
    while z0 + z1 > 0:
        total = z0 * (w + d + a) + z1 * (w + d)
        u1, u2 = rng.random(2)
        t -= math.log(1.0 - u1) / total
        if t > horizon:
            break
        x = u2 * total
        if x < z0 * w:
            z0 += 1
        elif x < z0 * (w + d):
            z0 -= 1
        elif x < z0 * (w + d + a):
            z0 -= 1
            z1 += 1
        elif x < z0 * (w + d + a) + z1 * w:
            z1 += 1
        else:
            z1 -= 1
        if keep_path:
            times.append(t)
            n0.append(z0)
            n1.append(z1)
    if not keep_path:
        return z0, z1
    return BDPath(times, n0, n1)


def simulate_bd(bp: BranchingParams, horizon: float, seed: int) -> BDPath:
    """Exact path on ``[0, horizon]`` started from one type-0 particle.

    Each particle dies at rate ``d``, splits at rate ``w`` (offspring share
    the parent's type) and advances from type 0 at rate ``type_advance``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return _run_bd(bp, horizon, stream(seed), keep_path=True)


def bd_final_counts(bp: BranchingParams, horizon: float, n_paths: int,
                    seed: int) -> np.ndarray:
    """``(n_paths, 2)`` array of (type-0, advanced) counts at ``horizon``."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = stream(seed)
    out = np.empty((n_paths, 2), dtype=np.int64)
    for k in range(n_paths):
        out[k] = _run_bd(bp, horizon, rng, keep_path=False)
    return out


def ladder_reports(params: ModelParams, log10_ns: Sequence[float]) -> list[Prop2Report]:
    return [prop2_report(params, log_n=x * math.log(10.0)) for x in log10_ns]


@dataclass(frozen=True)
class GoodnessOfFit:
    statistic: float
    dof: int
    p_value: float
    bins: int


def chi_square_gof(totals: np.ndarray, bp: BranchingParams, s: float,
                   max_count: int, min_expected: float = 5.0) -> GoodnessOfFit:
    """Pearson test of observed totals against the closed-form law.

    Counts ``0..max_count`` get their own bin plus one tail bin; adjacent
    bins are pooled from the right until each expects ``min_expected``.
    """
    from scipy import stats

    totals = np.asarray(totals)
    n = len(totals)
    probs = [count_pmf(bp, s, i) for i in range(max_count + 1)]
    probs.append(max(0.0, 1.0 - math.fsum(probs)))
    observed = [int(np.sum(totals == i)) for i in range(max_count + 1)]
    observed.append(int(np.sum(totals > max_count)))
    obs, exp = [], []
    acc_o, acc_e = 0, 0.0
    for o, p in zip(reversed(observed), reversed(probs)):
        acc_o += o
        acc_e += n * p
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o, acc_e = 0, 0.0
    if acc_e or acc_o:
        if obs:
            obs[-1] += acc_o
            exp[-1] += acc_e
        else:
            obs.append(acc_o)
            exp.append(acc_e)
    obs = np.array(obs[::-1], dtype=float)
    exp = np.array(exp[::-1], dtype=float)
    exp *= obs.sum() / exp.sum()
    dof = len(obs) - 1
    if dof < 1:
        return GoodnessOfFit(0.0, 0, 1.0, len(obs))
    res = stats.chisquare(obs, exp)
    return GoodnessOfFit(float(res.statistic), dof, float(res.pvalue), len(obs))
