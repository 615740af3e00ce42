import json
import math

import numpy as np
import pytest
from scipy import stats

from moranrate import (Engine, EventKind, LevelHistogram, ModelParams, centered_variance,
                       max_fitness, mean_fitness, median_level, simulate, step,
                       tag_lineage, total_rates)
from moranrate.engine import SELECTION, Event, snapshot_json
from moranrate.rng import stream


class TestModelParams:
    def test_valid(self):
        p = ModelParams(10, 0.5, 1.0, 0.0)
        assert (p.n, p.mu, p.q, p.gamma) == (10, 0.5, 1.0, 0.0)

    @pytest.mark.parametrize("args", [(1, 1, 0.5, 1), (10, 0, 0.5, 1), (10, 1, 0, 1),
                                      (10, 1, 1.5, 1), (10, 1, 0.5, -1), (2.5, 1, 0.5, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            ModelParams(*args)


class TestHistogram:
    def test_invariants(self):
        with pytest.raises(ValueError):
            LevelHistogram({0: 0, 1: 2})
        with pytest.raises(ValueError):
            LevelHistogram({0: 2}, {0: 3})
        with pytest.raises(ValueError):
            LevelHistogram({})

    def test_sorted_and_total(self):
        h = LevelHistogram({3: 1, -2: 2, 0: 4})
        assert h.levels == [-2, 0, 3]
        assert h.total == 7
        assert h.expand() == [-2, -2, 0, 0, 0, 0, 3]

    def test_json_round_trip(self):
        h = LevelHistogram({3: 1, -2: 2}, {3: 1, -2: 0})
        obj = h.to_json(1.5)
        assert obj["levels"] == [[-2, 2], [3, 1]]
        assert obj["t"] == 1.5
        assert LevelHistogram.from_json(json.loads(json.dumps(obj))) == h


class TestObservables:
    def test_two_level(self):
        h = LevelHistogram({0: 2, 3: 2})
        assert mean_fitness(h) == 1.5
        assert centered_variance(h) == 2.25
        assert max_fitness(h) == 3

    def test_median_two_sided(self):
        assert median_level(LevelHistogram({0: 2, 1: 2})) == 1

    @pytest.mark.parametrize("n", [2, 5, 17])
    def test_degenerate(self, n):
        h = LevelHistogram({5: n})
        assert (mean_fitness(h), centered_variance(h), max_fitness(h), median_level(h)) == (5, 0, 5, 5)

    def test_median_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            vals = rng.integers(-4, 5, size=rng.integers(2, 12)).tolist()
            h = LevelHistogram.from_values(vals)
            n = len(vals)
            cands = [k for k in range(-5, 6)
                     if 2 * sum(v >= k for v in vals) >= n and 2 * sum(v > k for v in vals) < n]
            assert cands == [median_level(h)]
            assert max_fitness(h) >= median_level(h)
            assert centered_variance(h) == pytest.approx(np.var(vals), abs=1e-12)


class TestRates:
    def test_single_level(self):
        r = total_rates(LevelHistogram({0: 7}), ModelParams(7, 0.3, 0.5, 2.0))
        assert (r.selection_total, r.resample_total) == (0, 0)
        assert r.mutation_total == pytest.approx(7 * 0.3)

    def test_selection_pair(self):
        r = total_rates(LevelHistogram({0: 1, 3: 1}), ModelParams(2, 1, 0.5, 2.0))
        assert r.selection_total == 3

    def test_resample(self):
        assert total_rates(LevelHistogram({0: 2, 1: 2}), ModelParams(4, 1, 0.5, 1)).resample_total == 2

    def test_brute_force_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            vals = rng.integers(-3, 4, size=rng.integers(2, 9)).tolist()
            n = len(vals)
            p = ModelParams(n, 0.7, 0.4, 1.3)
            r = total_rates(LevelHistogram.from_values(vals), p)
            sel = sum(1.3 / n * max(vals[j] - vals[i], 0) for i in range(n) for j in range(n))
            res = sum(1 / n for i in range(n) for j in range(n) if vals[i] != vals[j])
            assert r.selection_total == pytest.approx(sel, rel=1e-12)
            assert r.resample_total == pytest.approx(res, rel=1e-12)


class TestStep:
    def test_only_beneficial(self, backend):
        ev, h = step(LevelHistogram({0: 3}), ModelParams(3, 1.0, 1.0, 1.0), stream(1),
                     backend=backend)
        assert ev.kind is EventKind.BENEFICIAL_MUTATION
        assert h == LevelHistogram({0: 2, 1: 1})

    def test_forced_selection(self, backend):
        ev, h = step(LevelHistogram({0: 1, 3: 1}), ModelParams(2, 1, 0.5, 1), stream(2),
                     kinds=SELECTION, backend=backend)
        assert (ev.kind, ev.from_level, ev.to_level) == (EventKind.SELECTION, 0, 3)
        assert h == LevelHistogram({3: 2})

    def test_zero_rate_rejected(self, backend):
        with pytest.raises(ValueError):
            step(LevelHistogram({0: 3}), ModelParams(3, 1, 1, 1), stream(3), kinds=SELECTION,
                 backend=backend)

    def test_event_invariants(self):
        with pytest.raises(ValueError):
            Event(EventKind.SELECTION, 3, 1, 0.0)
        with pytest.raises(ValueError):
            Event(EventKind.RESAMPLE, 2, 2, 0.0)

    def test_category_frequencies(self, backend):
        hist = LevelHistogram({-1: 2, 0: 3, 2: 4, 5: 1})
        p = ModelParams(10, 0.8, 0.3, 1.5)
        rates = total_rates(hist, p)
        n = 20000
        eng = Engine(p, hist, rng=stream(4), backend=backend)
        seen = {k: 0 for k in EventKind}
        for _ in range(n):
            eng.set_hist(hist)
            seen[eng.step().kind] += 1
        probs = np.array([rates.mutation_total * p.q, rates.mutation_total * (1 - p.q),
                          rates.resample_total, rates.selection_total]) / rates.total
        obs = [seen[EventKind.BENEFICIAL_MUTATION], seen[EventKind.DELETERIOUS_MUTATION],
               seen[EventKind.RESAMPLE], seen[EventKind.SELECTION]]
        assert stats.chisquare(obs, probs * n).pvalue > 0.01

    def test_selection_pair_weights(self):
        hist = LevelHistogram({0: 3, 1: 2, 4: 1})
        p = ModelParams(6, 1, 0.5, 1)
        eng = Engine(p, hist, rng=stream(5), kinds=SELECTION)
        pairs = {}
        n = 20000
        for _ in range(n):
            eng.set_hist(hist)
            ev = eng.step()
            pairs[(ev.from_level, ev.to_level)] = pairs.get((ev.from_level, ev.to_level), 0) + 1
        weights = {(0, 1): 1 * 3 * 2, (0, 4): 4 * 3 * 1, (1, 4): 3 * 2 * 1}
        tot = sum(weights.values())
        keys = sorted(weights)
        assert stats.chisquare([pairs.get(k, 0) for k in keys],
                               [n * weights[k] / tot for k in keys]).pvalue > 0.01

    def test_waiting_time_exponential(self):
        hist = LevelHistogram({0: 4, 2: 4})
        p = ModelParams(8, 0.5, 0.5, 1)
        rate = total_rates(hist, p).total
        eng = Engine(p, hist, rng=stream(6))
        waits = []
        for _ in range(5000):
            eng.set_hist(hist)
            t0 = eng.t
            eng.step()
            waits.append(eng.t - t0)
        assert stats.kstest(waits, "expon", args=(0, 1 / rate)).pvalue > 0.01


class TestLineage:
    def test_tag_rejects_excess(self):
        with pytest.raises(ValueError):
            tag_lineage(LevelHistogram({0: 2, 1: 1}), 1, 2)

    def test_full_tag_closure(self, backend):
        eng = Engine(ModelParams(6, 1, 0.5, 1), seed=3, backend=backend)
        eng.tag_lineage(0, 6)
        for _ in range(300):
            eng.step()
            h = eng.hist
            assert h.tagged_total == 6

    def test_tags_bounded(self, backend):
        eng = Engine(ModelParams(8, 1, 0.5, 1), LevelHistogram({0: 7, 3: 1}), seed=4,
                     backend=backend)
        eng.tag_lineage(3, 1)
        for _ in range(500):
            eng.step()
            h = eng.hist
            assert 0 <= h.tagged_total <= 8
            assert all(h.tagged.get(k, 0) <= c for k, c in h.counts.items())

    def test_selection_copies_tag_in_proportion(self):
        # the top level holds 1 tagged of 2; selection copies it onto the bottom
        hist = LevelHistogram({0: 1, 3: 2}, {0: 0, 3: 1})
        p = ModelParams(3, 1, 0.5, 1)
        eng = Engine(p, hist, rng=stream(7), kinds=SELECTION)
        rises = 0
        n = 4000
        for _ in range(n):
            eng.set_hist(hist)
            eng.step()
            rises += eng.hist.tagged_total == 2
        assert abs(rises / n - 0.5) < 3 * math.sqrt(0.25 / n)

    def test_exclusive_with_tracking(self):
        eng = Engine(ModelParams(4, 1, 0.5, 1), seed=1)
        eng.track([0])
        with pytest.raises(ValueError):
            eng.tag_lineage(0, 1)


class TestSimulate:
    def test_initial_sample(self):
        (s,) = simulate(ModelParams(50, 1, 0.5, 1), 0.5, [0.0], seed=1)
        assert (s.time, s.mean_fitness, s.max_fitness, s.centered_variance) == (0.0, 0, 0, 0)

    def test_refuses_zero_horizon(self):
        with pytest.raises(ValueError):
            simulate(ModelParams(5, 1, 0.5, 1), 0.0, [0.0], seed=1)

    def test_deterministic(self, backend):
        p = ModelParams(200, 1, 0.6, 1)
        a = simulate(p, 3.0, [0.5, 1, 2, 3], seed=9, keep_snapshots=True, backend=backend)
        b = simulate(p, 3.0, [0.5, 1, 2, 3], seed=9, keep_snapshots=True, backend=backend)
        assert a == b
        assert snapshot_json(a) == snapshot_json(b)

    def test_sample_invariants(self):
        for s in simulate(ModelParams(100, 1, 0.6, 1), 5.0, np.linspace(0, 5, 11), seed=2):
            assert s.centered_variance >= 0
            assert s.max_fitness >= s.median_level

    def test_conservation(self, backend):
        eng = Engine(ModelParams(5, 1, 0.5, 2), seed=8, backend=backend)
        for _ in range(100):
            assert eng.run_events(1000) == 1000
            assert eng.hist.total == 5

    def test_max_rises_only_by_top_mutation(self, backend):
        eng = Engine(ModelParams(30, 1, 0.5, 1), seed=12, backend=backend)
        prev = 0
        for _ in range(3000):
            ev = eng.step()
            cur = max_fitness(eng.hist)
            if cur > prev:
                assert ev.kind is EventKind.BENEFICIAL_MUTATION and ev.from_level == prev
                assert cur == prev + 1
            if ev.kind in (EventKind.RESAMPLE, EventKind.SELECTION):
                assert cur <= prev
            if ev.kind is EventKind.SELECTION:
                assert ev.to_level > ev.from_level
            prev = cur

    def test_neutral_martingale(self):
        p = ModelParams(50, 1.0, 0.5, 0.0)
        vals = [simulate(p, 2.0, [2.0], seed=s)[0].mean_fitness for s in range(300)]
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert abs(np.mean(vals)) < 3 * se

    def test_sample_times_validated(self):
        eng = Engine(ModelParams(5, 1, 0.5, 1), seed=1)
        with pytest.raises(ValueError):
            eng.run(1.0, [0.5, 0.2])
        with pytest.raises(ValueError):
            eng.run(1.0, [2.0])
