# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loop for the level-histogram Moran engine.

Draw-for-draw mirror of ``_pykernel.py``; uniforms come straight from the
numpy bit generator (``next_double``), which is the sequence
``Generator.random`` yields.
"""
from libc.math cimport log
from libc.stdint cimport int64_t
from cpython.pycapsule cimport PyCapsule_IsValid, PyCapsule_GetPointer
from numpy.random cimport bitgen_t

BACKEND = "cython"

cdef enum:
    MUTATION = 1
    RESAMPLE = 2
    SELECTION = 4
    SILENT = 8

cdef enum:
    EV_NONE = 0
    EV_BENEFICIAL = 1
    EV_DELETERIOUS = 2
    EV_RESAMPLE = 3
    EV_SELECTION = 4

cdef enum:
    STOP_TIME = 0
    STOP_EVENTS = 1


cdef inline int64_t _index(double u, int64_t total) nogil:
    cdef int64_t idx = <int64_t>(u * <double>total)
    if idx >= total:
        idx = total - 1
    return idx


cdef inline Py_ssize_t _find(int64_t[::1] L, Py_ssize_t nlev, int64_t level) nogil:
    # first index with L[i] >= level
    cdef Py_ssize_t lo = 0, hi = nlev, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if L[mid] < level:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline int64_t _count_at(int64_t[::1] L, int64_t[::1] C, Py_ssize_t nlev,
                              int64_t level) nogil:
    cdef Py_ssize_t i = _find(L, nlev, level)
    if i < nlev and L[i] == level:
        return C[i]
    return 0


cdef inline Py_ssize_t _tracked_at(int64_t[::1] track, Py_ssize_t ntrack,
                                   int64_t level, int64_t pos) nogil:
    cdef Py_ssize_t j
    cdef int64_t seen = 0
    for j in range(ntrack):
        if track[j] == level:
            if seen == pos:
                return j
            seen += 1
    return -1


cdef Py_ssize_t _move(int64_t[::1] L, int64_t[::1] C, int64_t[::1] T,
                      Py_ssize_t nlev, Py_ssize_t i_from, int64_t level_to,
                      int64_t dtag_from, int64_t dtag_to) nogil:
    cdef Py_ssize_t j = _find(L, nlev, level_to), m
    if j < nlev and L[j] == level_to:
        C[j] += 1
        T[j] += dtag_to
    else:
        m = nlev
        while m > j:
            L[m] = L[m - 1]
            C[m] = C[m - 1]
            T[m] = T[m - 1]
            m -= 1
        L[j] = level_to
        C[j] = 1
        T[j] = dtag_to
        nlev += 1
        if j <= i_from:
            i_from += 1
    C[i_from] -= 1
    T[i_from] -= dtag_from
    if C[i_from] == 0:
        for m in range(i_from, nlev - 1):
            L[m] = L[m + 1]
            C[m] = C[m + 1]
            T[m] = T[m + 1]
        nlev -= 1
    return nlev


cdef inline int64_t _median(int64_t[::1] L, int64_t[::1] C, Py_ssize_t nlev,
                            int64_t n) nogil:
    cdef int64_t cum = 0
    cdef Py_ssize_t i
    for i in range(nlev - 1, -1, -1):
        cum += C[i]
        if 2 * cum >= n:
            return L[i]
    return L[0]


cdef list _snapshot(int64_t[::1] L, int64_t[::1] C, int64_t[::1] T,
                    Py_ssize_t nlev, bint lineage):
    cdef Py_ssize_t i
    levels = [L[i] for i in range(nlev)]
    counts = [C[i] for i in range(nlev)]
    tags = [T[i] for i in range(nlev)] if lineage else None
    return [levels, counts, tags]


def advance(int64_t[::1] levels, int64_t[::1] counts, int64_t[::1] tagged,
            int64_t[::1] state, int64_t[::1] track, int64_t n, double mu,
            double q, double gamma, int kinds, source, double t,
            double t_stop, int64_t max_events, double[::1] sample_times,
            Py_ssize_t sample_idx, double[::1] refresh_times,
            Py_ssize_t refresh_idx, bint record_max, bint record_median,
            list samples_out, list marks_out, list max_out, list median_out):
    """Run events until ``t_stop`` or ``max_events`` state changes.

    ``source`` is a ``numpy.random.Generator``; see ``_pykernel.advance``.
    """
    cdef bitgen_t *rng
    cdef const char *capsule_name = "BitGenerator"
    bit_generator = source.bit_generator
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, capsule_name):
        raise ValueError("invalid bit generator capsule")
    rng = <bitgen_t *> PyCapsule_GetPointer(capsule, capsule_name)

    cdef int64_t[::1] L = levels
    cdef int64_t[::1] C = counts
    cdef int64_t[::1] T = tagged
    cdef Py_ssize_t nlev = state[0]
    cdef bint lineage = state[1] != 0
    cdef Py_ssize_t ntrack = track.shape[0]
    cdef Py_ssize_t n_samples = sample_times.shape[0]
    cdef Py_ssize_t n_refresh = refresh_times.shape[0]

    cdef int64_t n_events = 0
    cdef int status = STOP_TIME
    cdef int last_kind = EV_NONE
    cdef int64_t last_from = 0, last_to = 0
    cdef int64_t top = L[nlev - 1]
    cdef int64_t med = _median(L, C, nlev, n) if record_median else 0
    cdef int64_t mdn

    cdef int64_t sumsq, cum, mom, sel, c, k, a, b, g, cin, sin, blk, cj
    cdef int64_t w_res, w_sel, w_sil, idx, other, vpos, ppos, p, dest
    cdef int64_t tag, vtag, ptag
    cdef double r_mut, r_res, r_sel, r_sil, total, u, t_new, x, r
    cdef Py_ssize_t i, j, kk
    cdef int cat
    cdef bint beneficial

    with bit_generator.lock:
        while True:
            if 0 <= max_events <= n_events:
                status = STOP_EVENTS
                break

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
                        w_sil += _count_at(L, C, nlev, track[j]) - 1
                elif lineage:
                    for i in range(nlev):
                        w_sil += C[i] * (C[i] - 1)
            r_res = <double>w_res / <double>n
            r_sel = gamma * <double>w_sel / <double>n
            r_sil = <double>w_sil / <double>n
            total = r_mut + r_res + r_sel + r_sil
            if not total > 0.0:
                raise ValueError("total event rate is not positive")

            u = rng.next_double(rng.state)
            t_new = t - log(1.0 - u) / total

            if refresh_idx < n_refresh:
                r = refresh_times[refresh_idx]
                if r < t_new and r <= t_stop:
                    if r > t:
                        t = r
                    if ntrack >= 1:
                        track[0] = L[nlev - 1]
                    if ntrack >= 2:
                        track[1] = L[nlev - 1] if C[nlev - 1] >= 2 else L[nlev - 2]
                    refresh_idx += 1
                    continue
            if t_new > t_stop:
                t = t_stop
                break

            while sample_idx < n_samples and sample_times[sample_idx] < t_new:
                samples_out.append((sample_times[sample_idx],)
                                   + tuple(_snapshot(L, C, T, nlev, lineage)))
                sample_idx += 1
            t = t_new

            u = rng.next_double(rng.state)
            x = u * total
            if x < r_mut:
                cat = MUTATION
            elif x < r_mut + r_res:
                cat = RESAMPLE
            elif x < r_mut + r_res + r_sel:
                cat = SELECTION
            elif r_sil > 0.0:
                cat = SILENT
            elif r_sel > 0.0:
                cat = SELECTION
            elif r_res > 0.0:
                cat = RESAMPLE
            else:
                cat = MUTATION

            if cat == MUTATION:
                idx = _index(rng.next_double(rng.state), n)
                i = 0
                while idx >= C[i]:
                    idx -= C[i]
                    i += 1
                a = L[i]
                beneficial = rng.next_double(rng.state) < q
                dest = a + 1 if beneficial else a - 1
                tag = 1 if (lineage and idx < T[i]) else 0
                j = _tracked_at(track, ntrack, a, idx) if ntrack else -1
                nlev = _move(L, C, T, nlev, i, dest, tag, tag)
                if j >= 0:
                    track[j] = dest
                    if not beneficial:
                        marks_out.append((t, j))
                last_kind = EV_BENEFICIAL if beneficial else EV_DELETERIOUS
                last_from = a
                last_to = dest
            elif cat == RESAMPLE:
                idx = _index(rng.next_double(rng.state), w_res)
                i = 0
                while idx >= C[i] * (n - C[i]):
                    idx -= C[i] * (n - C[i])
                    i += 1
                other = n - C[i]
                vpos = idx // other
                p = idx % other
                kk = 0
                while True:
                    if kk != i:
                        if p < C[kk]:
                            break
                        p -= C[kk]
                    kk += 1
                a = L[i]
                b = L[kk]
                vtag = 1 if (lineage and vpos < T[i]) else 0
                ptag = 1 if (lineage and p < T[kk]) else 0
                j = _tracked_at(track, ntrack, a, vpos) if ntrack else -1
                nlev = _move(L, C, T, nlev, i, b, vtag, ptag)
                if j >= 0:
                    marks_out.append((t, j))
                    track[j] = b
                last_kind = EV_RESAMPLE
                last_from = a
                last_to = b
            elif cat == SELECTION:
                idx = _index(rng.next_double(rng.state), w_sel)
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
                kk = i + 1
                while True:
                    blk = (L[kk] - a) * C[kk]
                    if p < blk:
                        break
                    p -= blk
                    kk += 1
                b = L[kk]
                ppos = p // (b - a)
                vtag = 1 if (lineage and vpos < T[i]) else 0
                ptag = 1 if (lineage and ppos < T[kk]) else 0
                j = _tracked_at(track, ntrack, a, vpos) if ntrack else -1
                nlev = _move(L, C, T, nlev, i, b, vtag, ptag)
                if j >= 0:
                    track[j] = b
                last_kind = EV_SELECTION
                last_from = a
                last_to = b
            else:
                idx = _index(rng.next_double(rng.state), w_sil)
                if ntrack > 0:
                    j = 0
                    while True:
                        cj = _count_at(L, C, nlev, track[j]) - 1
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
            if record_max and L[nlev - 1] != top:
                top = L[nlev - 1]
                max_out.append((t, top))
            if record_median:
                mdn = _median(L, C, nlev, n)
                if mdn != med:
                    med = mdn
                    median_out.append((t, med))

    if status == STOP_TIME:
        while sample_idx < n_samples and sample_times[sample_idx] <= t_stop:
            samples_out.append((sample_times[sample_idx],)
                               + tuple(_snapshot(L, C, T, nlev, lineage)))
            sample_idx += 1

    state[0] = nlev
    return (t, n_events, sample_idx, refresh_idx, status, last_kind,
            last_from, last_to)
