"""Exact continuous-time simulation of the asexual Moran model.

The population of ``N`` integer fitnesses is stored as a level histogram:
individuals are exchangeable under every transition rate, so only the count
at each occupied fitness level matters.  Per ordered pair of individuals
``(i, j)``:

* ``X^i -> X^i + 1`` at rate ``q mu`` and ``X^i -> X^i - 1`` at rate
  ``(1 - q) mu`` (mutation),
* ``X^i -> X^j`` at rate ``1/N`` (resampling; same-level pairs are no-ops
  and carry no rate),
* ``X^i -> X^j`` at rate ``(gamma/N) (X^j - X^i)^+`` (selection).

The event loop lives in a compiled kernel with a pure-Python fallback
(see :mod:`moranrate._backend`).
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _backend, _pykernel
from .rng import stream

MUTATION = _pykernel.MUTATION
RESAMPLE = _pykernel.RESAMPLE
SELECTION = _pykernel.SELECTION
ALL_KINDS = MUTATION | RESAMPLE | SELECTION


@dataclass(frozen=True)
class ModelParams:
    n_individuals: int
    mutation_rate: float
    beneficial_fraction: float
    selection_strength: float

    def __post_init__(self):
        if int(self.n_individuals) != self.n_individuals or self.n_individuals < 2:
            raise ValueError("n_individuals must be an integer >= 2")
        if not self.mutation_rate > 0:
            raise ValueError("mutation_rate must be positive")
        if not 0 < self.beneficial_fraction <= 1:
            raise ValueError("beneficial_fraction must lie in (0, 1]")
        if not self.selection_strength >= 0:
            raise ValueError("selection_strength must be nonnegative")
        object.__setattr__(self, "n_individuals", int(self.n_individuals))

    @property
    def n(self):
        return self.n_individuals

    @property
    def mu(self):
        return self.mutation_rate

    @property
    def q(self):
        return self.beneficial_fraction

    @property
    def gamma(self):
        return self.selection_strength

    def with_n(self, n):
        return ModelParams(n, self.mutation_rate, self.beneficial_fraction,
                           self.selection_strength)


@dataclass(frozen=True)
class LevelHistogram:
    """Occupied fitness levels with their counts, plus optional lineage tags."""

    counts: Mapping[int, int]
    tagged: Mapping[int, int] | None = None

    def __post_init__(self):
        counts = {int(k): int(v) for k, v in sorted(self.counts.items())}
        if not counts:
            raise ValueError("histogram is empty")
        if any(v < 1 for v in counts.values()):
            raise ValueError("stored counts must be >= 1")
        object.__setattr__(self, "counts", counts)
        if self.tagged is not None:
            tagged = {int(k): int(v) for k, v in sorted(self.tagged.items()) if v}
            for k, v in tagged.items():
                if not 0 <= v <= counts.get(k, 0):
                    raise ValueError(f"tagged count at level {k} exceeds occupancy")
            object.__setattr__(self, "tagged", tagged)

    @classmethod
    def uniform(cls, n, level=0):
        return cls({level: n})

    @classmethod
    def from_values(cls, values: Iterable[int]):
        out: dict[int, int] = {}
        for v in values:
            out[int(v)] = out.get(int(v), 0) + 1
        return cls(out)

    @property
    def total(self):
        return sum(self.counts.values())

    @property
    def levels(self):
        return list(self.counts)

    def expand(self):
        """Sorted N-vector of fitness values."""
        return [k for k, c in self.counts.items() for _ in range(c)]

    @property
    def tagged_total(self):
        return sum(self.tagged.values()) if self.tagged else 0

    def to_json(self, t):
        out = {"t": float(t), "levels": [[k, c] for k, c in self.counts.items()]}
        if self.tagged is not None:
            out["tagged"] = [[k, c] for k, c in self.tagged.items()]
        return out

    @classmethod
    def from_json(cls, obj):
        tagged = obj.get("tagged")
        return cls({k: c for k, c in obj["levels"]},
                   None if tagged is None else {k: c for k, c in tagged})


class EventKind(str, enum.Enum):
    BENEFICIAL_MUTATION = "beneficial_mutation"
    DELETERIOUS_MUTATION = "deleterious_mutation"
    RESAMPLE = "resample"
    SELECTION = "selection"


_KIND_CODES = {
    _pykernel.EV_BENEFICIAL: EventKind.BENEFICIAL_MUTATION,
    _pykernel.EV_DELETERIOUS: EventKind.DELETERIOUS_MUTATION,
    _pykernel.EV_RESAMPLE: EventKind.RESAMPLE,
    _pykernel.EV_SELECTION: EventKind.SELECTION,
}


@dataclass(frozen=True)
class Event:
    """One state change: an individual at ``from_level`` moves to ``to_level``."""

    kind: EventKind
    from_level: int
    to_level: int
    time: float

    def __post_init__(self):
        if self.kind is EventKind.SELECTION and not self.to_level > self.from_level:
            raise ValueError("selection must move an individual upward")
        if self.kind is EventKind.RESAMPLE and self.to_level == self.from_level:
            raise ValueError("same-level resampling is never emitted")


@dataclass(frozen=True)
class RateBundle:
    mutation_total: float
    resample_total: float
    selection_total: float

    @property
    def total(self):
        return self.mutation_total + self.resample_total + self.selection_total


@dataclass(frozen=True)
class TrajectorySample:
    time: float
    mean_fitness: float
    centered_variance: float
    max_fitness: int
    median_level: int
    histogram_snapshot: LevelHistogram | None = None

    @classmethod
    def from_hist(cls, t, hist, keep_snapshot=False):
        return cls(t, mean_fitness(hist), centered_variance(hist),
                   max_fitness(hist), median_level(hist),
                   hist if keep_snapshot else None)


# -- observables ---------------------------------------------------------

def _moments(hist):
    s1 = s2 = 0
    for k, c in hist.counts.items():
        s1 += k * c
        s2 += k * k * c
    return hist.total, s1, s2


def mean_fitness(hist: LevelHistogram) -> float:
    n, s1, _ = _moments(hist)
    return s1 / n


def centered_variance(hist: LevelHistogram) -> float:
    """Population variance of fitness, ``(1/N) sum (X^i - mean)^2``."""
    n, s1, s2 = _moments(hist)
    return (n * s2 - s1 * s1) / (n * n)


def max_fitness(hist: LevelHistogram) -> int:
    return max(hist.counts)


def median_level(hist: LevelHistogram) -> int:
    """Level ``k`` with at least N/2 individuals in ``[k, inf)`` and fewer in ``(k, inf)``."""
    n = hist.total
    cum = 0
    for k in sorted(hist.counts, reverse=True):
        cum += hist.counts[k]
        if 2 * cum >= n:
            return k
    raise AssertionError("unreachable for a valid histogram")


def total_rates(hist: LevelHistogram, params: ModelParams) -> RateBundle:
    n = hist.total
    sumsq = sum(c * c for c in hist.counts.values())
    below = 0
    below_moment = 0
    weighted = 0
    for b, c in hist.counts.items():
        weighted += c * (b * below - below_moment)
        below += c
        below_moment += b * c
    return RateBundle(
        mutation_total=n * params.mutation_rate,
        resample_total=(n * n - sumsq) / n,
        selection_total=params.selection_strength * weighted / n,
    )


# -- engine --------------------------------------------------------------

@dataclass
class RunRecord:
    """Raw output of :meth:`Engine.run`."""

    t_start: float
    t_end: float
    n_events: int
    samples: list = field(default_factory=list)
    marks: list = field(default_factory=list)
    max_path: list = field(default_factory=list)
    median_path: list = field(default_factory=list)

    def snapshots(self):
        for t, levels, counts, tags in self.samples:
            yield t, LevelHistogram(dict(zip(levels, counts)),
                                    None if tags is None else dict(zip(levels, tags)))


class Engine:
    """Mutable simulator state plus its private random stream.

    The stream must not be shared: the kernels draw from it directly.
    """

    def __init__(self, params: ModelParams, hist: LevelHistogram | None = None,
                 rng: np.random.Generator | None = None, seed: int | None = None,
                 backend: str | None = None, kinds: int = ALL_KINDS, t: float = 0.0,
                 chunk: int = 4096):
        self.params = params
        self.kernel = _backend.get_kernel(backend)
        if rng is None:
            rng = stream(0 if seed is None else seed)
        self.rng = rng
        if self.kernel.BACKEND == "python":
            self._source = _pykernel.UniformSource(rng, chunk)
        else:
            self._source = rng
        self.kinds = int(kinds)
        self.t = float(t)
        self.n_events = 0
        n = params.n_individuals
        cap = n + 2
        self._levels = np.zeros(cap, dtype=np.int64)
        self._counts = np.zeros(cap, dtype=np.int64)
        self._tagged = np.zeros(cap, dtype=np.int64)
        self._state = np.zeros(2, dtype=np.int64)
        self._track = np.zeros(0, dtype=np.int64)
        self.set_hist(hist if hist is not None else LevelHistogram.uniform(n))

    @property
    def backend(self):
        return self.kernel.BACKEND

    def set_hist(self, hist: LevelHistogram):
        if hist.total != self.params.n_individuals:
            raise ValueError(f"histogram holds {hist.total} individuals, "
                             f"expected {self.params.n_individuals}")
        nlev = len(hist.counts)
        self._levels[:] = 0
        self._counts[:] = 0
        self._tagged[:] = 0
        self._levels[:nlev] = list(hist.counts)
        self._counts[:nlev] = list(hist.counts.values())
        if hist.tagged is not None:
            self._tagged[:nlev] = [hist.tagged.get(k, 0) for k in hist.counts]
        self._state[0] = nlev
        self._state[1] = 1 if hist.tagged is not None else 0
        if hist.tagged is not None and len(self._track):
            raise ValueError("lineage tags and coordinate tracking are exclusive")

    @property
    def hist(self) -> LevelHistogram:
        nlev = int(self._state[0])
        levels = self._levels[:nlev].tolist()
        counts = self._counts[:nlev].tolist()
        tagged = None
        if self._state[1]:
            tagged = dict(zip(levels, self._tagged[:nlev].tolist()))
        return LevelHistogram(dict(zip(levels, counts)), tagged)

    def tag_lineage(self, level: int, count: int):
        """Start a lineage overlay with ``count`` tagged individuals at ``level``."""
        if len(self._track):
            raise ValueError("lineage tags and coordinate tracking are exclusive")
        self.set_hist(tag_lineage(self.hist, level, count))

    def track(self, levels: Sequence[int]):
        """Follow individual coordinates currently at ``levels`` (at most two).

        Tracked coordinates keep their identity through every event; a mark
        is emitted when one suffers a deleterious mutation or is the
        overwritten side of a resampling event (same-level included).
        """
        if len(levels) > 2:
            raise ValueError("at most two coordinates can be tracked")
        if self._state[1]:
            raise ValueError("lineage tags and coordinate tracking are exclusive")
        hist = self.hist
        for k in set(levels):
            if list(levels).count(k) > hist.counts.get(k, 0):
                raise ValueError(f"level {k} holds fewer than the tracked coordinates")
        self._track = np.asarray(list(levels), dtype=np.int64)

    @property
    def tracked_levels(self):
        return self._track.tolist()

    def _advance(self, t_stop, max_events, sample_times=(), refresh_times=(),
                 record_max=False, record_median=False, record=None):
        samples = np.ascontiguousarray(sample_times, dtype=np.float64)
        refresh = np.ascontiguousarray(refresh_times, dtype=np.float64)
        if record is None:
            record = RunRecord(self.t, self.t, 0)
        p = self.params
        out = self.kernel.advance(
            self._levels, self._counts, self._tagged, self._state, self._track,
            p.n_individuals, float(p.mutation_rate), float(p.beneficial_fraction),
            float(p.selection_strength), self.kinds, self._source,
            self.t, float(t_stop), int(max_events), samples, 0, refresh, 0,
            bool(record_max), bool(record_median),
            record.samples, record.marks, record.max_path, record.median_path)
        t, n_events, _, _, status, kind, a, b = out
        self.t = t
        self.n_events += n_events
        record.t_end = t
        record.n_events += n_events
        return record, status, kind, a, b

    def step(self) -> Event:
        """Apply exactly one state-changing event and return it."""
        _, status, kind, a, b = self._advance(math.inf, 1)
        return Event(_KIND_CODES[kind], int(a), int(b), self.t)

    def run_events(self, count: int) -> int:
        """Apply up to ``count`` state-changing events; returns how many happened."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        record, *_ = self._advance(math.inf, int(count))
        return record.n_events

    def run(self, until: float, sample_times: Sequence[float] = (),
            refresh_times: Sequence[float] = (), record_max: bool = False,
            record_median: bool = False) -> RunRecord:
        """Advance to time ``until``.

        Samples hold the state just before the first event after each
        requested time.  At each refresh time the tracked coordinates are
        re-pointed at the current top and second-best individuals.
        """
        if until < self.t:
            raise ValueError("cannot run backwards in time")
        sample_times = list(sample_times)
        if sample_times != sorted(sample_times):
            raise ValueError("sample_times must be sorted")
        if sample_times and (sample_times[0] < self.t or sample_times[-1] > until):
            raise ValueError("sample_times must lie within the run window")
        refresh_times = sorted(refresh_times)
        if refresh_times and not len(self._track):
            raise ValueError("refresh_times need tracked coordinates")
        hist = self.hist
        record = RunRecord(self.t, self.t, 0)
        if record_max:
            record.max_path.append((self.t, max_fitness(hist)))
        if record_median:
            record.median_path.append((self.t, median_level(hist)))
        self._advance(until, -1, sample_times, refresh_times, record_max,
                      record_median, record)
        return record


def step(hist: LevelHistogram, params: ModelParams, rng: np.random.Generator,
         kinds: int = ALL_KINDS, backend: str | None = None, t: float = 0.0):
    """Functional single step: returns ``(event, updated histogram)``.

    Draws exactly the uniforms it needs from ``rng`` on either backend, so a
    generator can be threaded through repeated calls.
    """
    engine = Engine(params, hist, rng=rng, backend=backend, kinds=kinds, t=t,
                    chunk=1)
    event = engine.step()
    return event, engine.hist


def tag_lineage(hist: LevelHistogram, level: int, count: int) -> LevelHistogram:
    if count < 0 or count > hist.counts.get(level, 0):
        raise ValueError(f"cannot tag {count} individuals at level {level} "
                         f"(occupancy {hist.counts.get(level, 0)})")
    return LevelHistogram(hist.counts, {level: count})


def simulate(params: ModelParams, horizon: float, sample_times: Sequence[float],
             seed: int, keep_snapshots: bool = False,
             backend: str | None = None) -> list[TrajectorySample]:
    """Run from the all-zero population and sample observables.

    Deterministic in ``(params, horizon, sample_times, seed)``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    engine = Engine(params, seed=seed, backend=backend)
    record = engine.run(horizon, sample_times)
    return [TrajectorySample.from_hist(t, h, keep_snapshots)
            for t, h in record.snapshots()]


def snapshot_json(samples: Sequence[TrajectorySample]) -> str:
    """Histogram snapshots as JSON lines, one object per sample."""
    lines = []
    for s in samples:
        if s.histogram_snapshot is None:
            raise ValueError("sample carries no histogram snapshot")
        lines.append(json.dumps(s.histogram_snapshot.to_json(s.time)))
    return "\n".join(lines) + ("\n" if lines else "")
