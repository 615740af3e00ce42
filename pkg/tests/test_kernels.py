"""Compiled and pure-Python kernels must agree draw for draw."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from moranrate import Engine, LevelHistogram, ModelParams, available_backends
from moranrate.engine import max_fitness, mean_fitness
from moranrate.rng import stream

from . import bruteforce

needs_both = pytest.mark.skipif(len(available_backends()) < 2,
                                reason="compiled kernel not built")


def _run(backend, chunk=4096, track=False, tag=False, seed=5):
    p = ModelParams(300, 1.0, 0.6, 1.0)
    eng = Engine(p, seed=seed, backend=backend, chunk=chunk)
    refresh = ()
    if track:
        eng.track([0, 0])
        refresh = [0.0, 1.0, 2.0]
    if tag:
        eng.tag_lineage(0, 20)
    rec = eng.run(3.0, [0.5, 1.5, 3.0], refresh, record_max=True, record_median=True)
    return eng, rec


@needs_both
@pytest.mark.parametrize("mode", ["plain", "track", "tag"])
def test_backends_identical(mode):
    a, ra = _run("python", track=mode == "track", tag=mode == "tag")
    b, rb = _run("cython", track=mode == "track", tag=mode == "tag")
    assert a.t == b.t and a.n_events == b.n_events
    assert a.hist == b.hist
    assert ra.samples == rb.samples
    assert ra.marks == rb.marks
    assert ra.max_path == rb.max_path and ra.median_path == rb.median_path


def test_chunk_size_irrelevant():
    a, ra = _run("python", chunk=1)
    b, rb = _run("python", chunk=997)
    assert a.hist == b.hist and ra.samples == rb.samples


@needs_both
def test_functional_step_threads_generator():
    # step() must consume exactly its own draws on both kernels
    from moranrate import step

    p = ModelParams(6, 1, 0.5, 1)
    out = {}
    for backend in ("python", "cython"):
        rng = stream(42)
        h = LevelHistogram({0: 6})
        evs = []
        for _ in range(50):
            ev, h = step(h, p, rng, backend=backend, t=evs[-1].time if evs else 0.0)
            evs.append(ev)
        out[backend] = (evs, h, rng.random())
    assert out["python"] == out["cython"]


hists = st.dictionaries(st.integers(-6, 6), st.integers(1, 5), min_size=1, max_size=5)


@settings(max_examples=40, deadline=None)
@given(counts=hists, seed=st.integers(0, 2 ** 32 - 1),
       mu=st.floats(0.05, 3), q=st.floats(0.01, 1), gamma=st.floats(0, 4))
def test_random_histograms_conserve(counts, seed, mu, q, gamma):
    hist = LevelHistogram(counts)
    if hist.total < 2:
        return
    p = ModelParams(hist.total, mu, q, gamma)
    eng = Engine(p, hist, seed=seed)
    for _ in range(20):
        prev_max = max_fitness(eng.hist)
        eng.step()
        h = eng.hist
        assert h.total == hist.total
        assert all(c >= 1 for c in h.counts.values())
        assert h.levels == sorted(h.levels)
        assert max_fitness(h) <= prev_max + 1


@needs_both
@settings(max_examples=25, deadline=None)
@given(counts=hists, seed=st.integers(0, 2 ** 32 - 1), gamma=st.floats(0, 3))
def test_random_histograms_backends_agree(counts, seed, gamma):
    hist = LevelHistogram(counts)
    if hist.total < 2:
        return
    p = ModelParams(hist.total, 0.9, 0.4, gamma)
    runs = []
    for backend in ("python", "cython"):
        eng = Engine(p, hist, seed=seed, backend=backend)
        eng.run_events(200)
        runs.append((eng.t, eng.hist))
    assert runs[0] == runs[1]


def test_brute_force_small():
    """Chi-square homogeneity of (max, sum) against the vector simulator, N=3."""
    n, reps = 3, 4000
    p = ModelParams(n, 1.0, 0.6, 1.0)
    ref = bruteforce.outcome_counts(n, 1.0, 0.6, 1.0, 1.0, reps, seed=17)
    got = {}
    for r in range(reps):
        eng = Engine(p, rng=stream(31, n, r))
        eng.run(1.0)
        h = eng.hist
        key = (max_fitness(h), round(mean_fitness(h) * n))
        got[key] = got.get(key, 0) + 1
    keys = sorted(set(ref) | set(got))
    table = np.array([[ref.get(k, 0) for k in keys], [got.get(k, 0) for k in keys]])
    table = table[:, table.sum(axis=0) >= 10]
    assert stats.chi2_contingency(table).pvalue > 0.001
