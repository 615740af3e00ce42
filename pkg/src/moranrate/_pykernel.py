"""Pure-Python event loop for the level-histogram Moran engine.

Mirrors ``_ckernel.pyx`` draw-for-draw: given the same bit generator state
both kernels consume the same uniforms and produce identical trajectories.
Keep the two files in lockstep.
"""
import math
from bisect import bisect_left

BACKEND = "python"

MUTATION, RESAMPLE, SELECTION = 1, 2, 4

EV_NONE, EV_BENEFICIAL, EV_DELETERIOUS, EV_RESAMPLE, EV_SELECTION = 0, 1, 2, 3, 4

STOP_TIME, STOP_EVENTS = 0, 1


class UniformSource:
    """Buffered draws from ``Generator.random``.

    Same sequence as calling the bit generator's ``next_double`` one at a
    time, which is what the compiled kernel does.
    """

    def __init__(self, rng, chunk=4096):
        self.rng = rng
        self.chunk = chunk
        self._buf = []
        self._i = 0

    def next(self):
        if self._i >= len(self._buf):
            self._buf = self.rng.random(self.chunk).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


def _index(u, total):
    idx = int(u * total)
    if idx >= total:
        idx = total - 1
    return idx


def _tracked_at(track, level, pos):
    # pos-th tracked coordinate (in coordinate order) sitting at `level`
    seen = 0
    for j in range(len(track)):
        if track[j] == level:
            if seen == pos:
                return j
            seen += 1
    return -1


def _count_at(L, C, level):
    i = bisect_left(L, level)
    if i < len(L) and L[i] == level:
        return C[i]
    return 0


def _move(L, C, T, i_from, level_to, dtag_from, dtag_to):
    j = bisect_left(L, level_to)
    if j < len(L) and L[j] == level_to:
        C[j] += 1
        T[j] += dtag_to
    else:
        L.insert(j, level_to)
        C.insert(j, 1)
        T.insert(j, dtag_to)
        if j <= i_from:
            i_from += 1
    C[i_from] -= 1
    T[i_from] -= dtag_from
    if C[i_from] == 0:
        del L[i_from], C[i_from], T[i_from]


def _median(L, C, n):
    cum = 0
    for i in range(len(L) - 1, -1, -1):
        cum += C[i]
        if 2 * cum >= n:
            return L[i]
    return L[0]


def _refresh(L, C, track):
    top = L[-1]
    if len(track) >= 1:
        track[0] = top
    if len(track) >= 2:
        track[1] = top if C[-1] >= 2 else L[-2]


def advance(levels, counts, tagged, state, track_arr, n, mu, q, gamma, kinds,
            source, t, t_stop, max_events, sample_times, sample_idx,
            refresh_times, refresh_idx, record_max, record_median,
            samples_out, marks_out, max_out, median_out):
    """Run events until ``t_stop`` or ``max_events`` state changes.

    Returns ``(t, n_events, sample_idx, refresh_idx, status, last_kind,
    last_from, last_to)``.
    """
    nlev = int(state[0])
    lineage = bool(state[1])
    L = levels[:nlev].tolist()
    C = counts[:nlev].tolist()
    T = tagged[:nlev].tolist()
    track = track_arr.tolist()
    ntrack = len(track)
    sample_times = [float(s) for s in sample_times]
    refresh_times = [float(r) for r in refresh_times]
    n_samples = len(sample_times)
    n_refresh = len(refresh_times)

    n_events = 0
    status = STOP_TIME
    last_kind = EV_NONE
    last_from = 0
    last_to = 0
    top = L[-1]
    med = _median(L, C, n) if record_median else 0

    while True:
        if 0 <= max_events <= n_events:
            status = STOP_EVENTS
            break
        nlev = len(L)

        sumsq = 0
        cum = 0
        mom = 0
        sel = 0
        for i in range(nlev):
            c = C[i]
            k = L[i]
            sumsq += c * c
            sel += c * (k * cum - mom)
            cum += c
            mom += k * c

        r_mut = n * mu if kinds & MUTATION else 0.0
        w_res = n * n - sumsq if kinds & RESAMPLE else 0
        w_sel = sel if (kinds & SELECTION and gamma > 0.0) else 0
        w_sil = 0
        if kinds & RESAMPLE:
            if ntrack > 0:
                for j in range(ntrack):
                    w_sil += _count_at(L, C, track[j]) - 1
            elif lineage:
                for i in range(nlev):
                    w_sil += C[i] * (C[i] - 1)
        r_res = w_res / n
        r_sel = gamma * w_sel / n
        r_sil = w_sil / n
        total = r_mut + r_res + r_sel + r_sil
        if not total > 0.0:
            raise ValueError("total event rate is not positive")

        u = source.next()
        t_new = t - math.log(1.0 - u) / total

        if refresh_idx < n_refresh:
            r = refresh_times[refresh_idx]
            if r < t_new and r <= t_stop:
                if r > t:
                    t = r
                _refresh(L, C, track)
                refresh_idx += 1
                continue
        if t_new > t_stop:
            t = t_stop
            break

        while sample_idx < n_samples and sample_times[sample_idx] < t_new:
            samples_out.append((sample_times[sample_idx], list(L), list(C),
                                list(T) if lineage else None))
            sample_idx += 1
        t = t_new

        u = source.next()
        x = u * total
        if x < r_mut:
            cat = MUTATION
        elif x < r_mut + r_res:
            cat = RESAMPLE
        elif x < r_mut + r_res + r_sel:
            cat = SELECTION
        elif r_sil > 0.0:
            cat = 8
        elif r_sel > 0.0:
            cat = SELECTION
        elif r_res > 0.0:
            cat = RESAMPLE
        else:
            cat = MUTATION

        if cat == MUTATION:
            idx = _index(source.next(), n)
            i = 0
            while idx >= C[i]:
                idx -= C[i]
                i += 1
            a = L[i]
            beneficial = source.next() < q
            dest = a + 1 if beneficial else a - 1
            tag = 1 if (lineage and idx < T[i]) else 0
            j = _tracked_at(track, a, idx) if ntrack else -1
            _move(L, C, T, i, dest, tag, tag)
            if j >= 0:
                track[j] = dest
                if not beneficial:
                    marks_out.append((t, j))
            last_kind = EV_BENEFICIAL if beneficial else EV_DELETERIOUS
            last_from = a
            last_to = dest
        elif cat == RESAMPLE:
            idx = _index(source.next(), w_res)
            i = 0
            while idx >= C[i] * (n - C[i]):
                idx -= C[i] * (n - C[i])
                i += 1
            other = n - C[i]
            vpos = idx // other
            p = idx % other
            k = 0
            while True:
                if k != i:
                    if p < C[k]:
                        break
                    p -= C[k]
                k += 1
            a = L[i]
            b = L[k]
            vtag = 1 if (lineage and vpos < T[i]) else 0
            ptag = 1 if (lineage and p < T[k]) else 0
            j = _tracked_at(track, a, vpos) if ntrack else -1
            _move(L, C, T, i, b, vtag, ptag)
            if j >= 0:
                marks_out.append((t, j))
                track[j] = b
            last_kind = EV_RESAMPLE
            last_from = a
            last_to = b
        elif cat == SELECTION:
            idx = _index(source.next(), w_sel)
            cin = 0
            sin = 0
            g = 0
            i = 0
            while True:
                c = C[i]
                a = L[i]
                cin += c
                sin += a * c
                g = (mom - sin) - a * (n - cin)
                if idx < c * g:
                    break
                idx -= c * g
                i += 1
            vpos = idx // g
            p = idx % g
            k = i + 1
            while True:
                blk = (L[k] - a) * C[k]
                if p < blk:
                    break
                p -= blk
                k += 1
            b = L[k]
            ppos = p // (b - a)
            vtag = 1 if (lineage and vpos < T[i]) else 0
            ptag = 1 if (lineage and ppos < T[k]) else 0
            j = _tracked_at(track, a, vpos) if ntrack else -1
            _move(L, C, T, i, b, vtag, ptag)
            if j >= 0:
                track[j] = b
            last_kind = EV_SELECTION
            last_from = a
            last_to = b
        else:
            idx = _index(source.next(), w_sil)
            if ntrack > 0:
                j = 0
                while True:
                    cj = _count_at(L, C, track[j]) - 1
                    if idx < cj:
                        break
                    idx -= cj
                    j += 1
                marks_out.append((t, j))
            else:
                i = 0
                while idx >= C[i] * (C[i] - 1):
                    idx -= C[i] * (C[i] - 1)
                    i += 1
                c = C[i]
                vpos = idx // (c - 1)
                ppos = idx % (c - 1)
                if ppos >= vpos:
                    ppos += 1
                T[i] += (1 if ppos < T[i] else 0) - (1 if vpos < T[i] else 0)
            continue

        n_events += 1
        if record_max and L[-1] != top:
            top = L[-1]
            max_out.append((t, top))
        if record_median:
            m = _median(L, C, n)
            if m != med:
                med = m
                median_out.append((t, med))

    if status == STOP_TIME:
        while sample_idx < n_samples and sample_times[sample_idx] <= t_stop:
            samples_out.append((sample_times[sample_idx], list(L), list(C),
                                list(T) if lineage else None))
            sample_idx += 1

    nlev = len(L)
    levels[:nlev] = L
    counts[:nlev] = C
    tagged[:nlev] = T
    state[0] = nlev
    track_arr[:] = track
    return (t, n_events, sample_idx, refresh_idx, status, last_kind,
            last_from, last_to)
