# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled frame loop and SIC decoders.

Mirrors ``sim.generate_traffic``, ``sim.schedule_replicas``, ``sim.run_frame``
and the decoders in ``decode`` draw for draw, reading uniforms from the same
numpy bit generator, so results match the Python path exactly.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport floor, log1p
from libc.stdint cimport int64_t, uint8_t
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t

import numpy as np

ctypedef int64_t i64

DEF MAX_CAND = 62


cdef struct Work:
    i64 M
    i64 n_dev
    i64 *dev_ptr
    i64 *edge_slot
    uint8_t *edge_tx
    i64 *edge_dev
    i64 *slot_ptr
    i64 *slot_fill
    i64 *R
    i64 *idsum
    i64 *cand
    i64 *cand_len
    uint8_t *dirty
    uint8_t *decoded
    i64 *order
    i64 n_order
    i64 attempts
    i64 passes


cdef int work_alloc(Work *w, i64 M, i64 cap_dev, i64 cap_edge) noexcept:
    w.M = M
    w.n_dev = 0
    if cap_dev < 1:
        cap_dev = 1
    if cap_edge < 1:
        cap_edge = 1
    w.dev_ptr = <i64 *> malloc((cap_dev + 1) * sizeof(i64))
    w.edge_slot = <i64 *> malloc(cap_edge * sizeof(i64))
    w.edge_tx = <uint8_t *> malloc(cap_edge * sizeof(uint8_t))
    w.edge_dev = <i64 *> malloc(cap_edge * sizeof(i64))
    w.slot_ptr = <i64 *> malloc((M + 1) * sizeof(i64))
    w.slot_fill = <i64 *> malloc(M * sizeof(i64))
    w.R = <i64 *> malloc(M * sizeof(i64))
    w.idsum = <i64 *> malloc(M * sizeof(i64))
    w.cand = <i64 *> malloc(cap_edge * sizeof(i64))
    w.cand_len = <i64 *> malloc(M * sizeof(i64))
    w.dirty = <uint8_t *> malloc(M * sizeof(uint8_t))
    w.decoded = <uint8_t *> malloc(cap_dev * sizeof(uint8_t))
    w.order = <i64 *> malloc(cap_dev * sizeof(i64))
    if (w.dev_ptr == NULL or w.edge_slot == NULL or w.edge_tx == NULL or w.edge_dev == NULL
            or w.slot_ptr == NULL or w.slot_fill == NULL or w.R == NULL or w.idsum == NULL
            or w.cand == NULL or w.cand_len == NULL or w.dirty == NULL or w.decoded == NULL
            or w.order == NULL):
        return -1
    return 0


cdef void work_free(Work *w) noexcept:
    free(w.dev_ptr)
    free(w.edge_slot)
    free(w.edge_tx)
    free(w.edge_dev)
    free(w.slot_ptr)
    free(w.slot_fill)
    free(w.R)
    free(w.idsum)
    free(w.cand)
    free(w.cand_len)
    free(w.dirty)
    free(w.decoded)
    free(w.order)


cdef int decode_frame(Work *w, int mode, i64 max_iter, i64 cap) noexcept nogil:
    """Decode the frame held in ``w``; mode 0 conventional, 1 genie, 2 identify.

    Returns -2 if conventional decoding meets a dropped replica.
    """
    cdef i64 M = w.M, n, d, e, s, k, base, size, i, j, left, sub
    cdef i64 mask, limit, c, r
    cdef int progress, found, ok
    for n in range(M):
        w.slot_fill[n] = 0
        w.R[n] = 0
        w.idsum[n] = 0
        w.cand_len[n] = 0
        w.dirty[n] = 1
    for d in range(w.n_dev):
        w.decoded[d] = 0
        for e in range(w.dev_ptr[d], w.dev_ptr[d + 1]):
            w.edge_dev[e] = d
            s = w.edge_slot[e]
            w.slot_fill[s] += 1
            if w.edge_tx[e]:
                w.R[s] += 1
                w.idsum[s] += d
            elif mode == 0:
                return -2
    w.slot_ptr[0] = 0
    for n in range(M):
        w.slot_ptr[n + 1] = w.slot_ptr[n] + w.slot_fill[n]
    w.n_order = 0
    w.attempts = 0
    w.passes = 0

    if mode != 2:
        while max_iter < 0 or w.passes < max_iter:
            w.passes += 1
            progress = 0
            for n in range(M):
                if w.R[n] != 1:
                    continue
                d = w.idsum[n]
                w.decoded[d] = 1
                w.order[w.n_order] = d
                w.n_order += 1
                progress = 1
                for e in range(w.dev_ptr[d], w.dev_ptr[d + 1]):
                    if w.edge_tx[e]:
                        s = w.edge_slot[e]
                        w.R[s] -= 1
                        w.idsum[s] -= d
            if not progress:
                break
        return 0

    if cap < 0 or cap > MAX_CAND:
        cap = MAX_CAND
    while max_iter < 0 or w.passes < max_iter:
        w.passes += 1
        progress = 0
        for n in range(M):
            if not w.dirty[n]:
                continue
            w.dirty[n] = 0
            while w.R[n] != 0:
                k = w.cand_len[n]
                base = w.slot_ptr[n]
                if k > cap:
                    break
                found = 0
                mask = 0
                left = -1
                for size in range(k + 1):
                    if size == 0:
                        mask = 0
                    else:
                        mask = ((<i64> 1) << size) - 1
                    limit = (<i64> 1) << k
                    while mask < limit:
                        if size:
                            w.attempts += 1
                        if w.R[n] == size + 1:
                            ok = 1
                            sub = 0
                            for i in range(k):
                                if (mask >> i) & 1:
                                    e = w.cand[base + i]
                                    if not w.edge_tx[e]:
                                        ok = 0
                                        break
                                    sub += w.edge_dev[e]
                            if ok:
                                found = 1
                                left = w.idsum[n] - sub
                                break
                        if size == 0:
                            break
                        c = mask & -mask
                        r = mask + c
                        mask = (((r ^ mask) >> 2) // c) | r
                    if found:
                        break
                if not found:
                    break
                j = 0
                for i in range(k):
                    e = w.cand[base + i]
                    if (mask >> i) & 1:
                        w.R[n] -= 1
                        w.idsum[n] -= w.edge_dev[e]
                        continue
                    if w.edge_dev[e] == left:
                        continue
                    w.cand[base + j] = e
                    j += 1
                w.cand_len[n] = j
                w.R[n] -= 1
                w.idsum[n] -= left
                if w.decoded[left]:
                    continue
                w.decoded[left] = 1
                w.order[w.n_order] = left
                w.n_order += 1
                progress = 1
                for e in range(w.dev_ptr[left], w.dev_ptr[left + 1]):
                    s = w.edge_slot[e]
                    if s != n:
                        w.cand[w.slot_ptr[s] + w.cand_len[s]] = e
                        w.cand_len[s] += 1
                        w.dirty[s] = 1
        if not progress:
            break
    return 0


def decode_csr(i64 num_slots, const i64[::1] dev_ptr, const i64[::1] edge_slot, const uint8_t[::1] edge_tx,
               int code, i64 max_iter, i64 cap):
    """Decode one frame in CSR form: ``(decoded flags, order, attempts, passes)``."""
    cdef i64 n_dev = dev_ptr.shape[0] - 1
    cdef i64 n_edge = edge_slot.shape[0]
    cdef Work w
    cdef i64 i
    cdef int rc
    if work_alloc(&w, num_slots, n_dev, n_edge) != 0:
        work_free(&w)
        raise MemoryError()
    try:
        w.n_dev = n_dev
        for i in range(n_dev + 1):
            w.dev_ptr[i] = dev_ptr[i]
        for i in range(n_edge):
            if edge_slot[i] < 0 or edge_slot[i] >= num_slots:
                raise ValueError("edge slot out of range")
            w.edge_slot[i] = edge_slot[i]
            w.edge_tx[i] = edge_tx[i]
        with nogil:
            rc = decode_frame(&w, code, max_iter, cap)
        if rc == -2:
            from .decode import DropAmbiguityError
            raise DropAmbiguityError("conventional SIC cannot cancel dropped replicas")
        flags = np.zeros(n_dev, dtype=np.uint8)
        order = np.zeros(w.n_order, dtype=np.int64)
        for i in range(n_dev):
            flags[i] = w.decoded[i]
        for i in range(w.n_order):
            order[i] = w.order[i]
        return flags, order, w.attempts, w.passes
    finally:
        work_free(&w)


def decode_batch(i64 num_slots, const i64[::1] trace_ptr, const i64[::1] dev_ptr, const i64[::1] edge_slot,
                 const uint8_t[::1] edge_tx, int code, i64 cap):
    """Decode frames stored back to back; one decoded flag per device."""
    cdef i64 n_trace = trace_ptr.shape[0] - 1
    cdef i64 t, d, d0, d1, e0, e1, i, max_dev = 0, max_edge = 0
    cdef Work w
    cdef int rc = 0
    out = np.zeros(dev_ptr.shape[0] - 1, dtype=np.uint8)
    cdef uint8_t[::1] out_v = out
    for t in range(n_trace):
        d0 = trace_ptr[t]
        d1 = trace_ptr[t + 1]
        if d1 - d0 > max_dev:
            max_dev = d1 - d0
        if dev_ptr[d1] - dev_ptr[d0] > max_edge:
            max_edge = dev_ptr[d1] - dev_ptr[d0]
    for i in range(edge_slot.shape[0]):
        if edge_slot[i] < 0 or edge_slot[i] >= num_slots:
            raise ValueError("edge slot out of range")
    if work_alloc(&w, num_slots, max_dev, max_edge) != 0:
        work_free(&w)
        raise MemoryError()
    try:
        with nogil:
            for t in range(n_trace):
                d0 = trace_ptr[t]
                d1 = trace_ptr[t + 1]
                e0 = dev_ptr[d0]
                e1 = dev_ptr[d1]
                w.n_dev = d1 - d0
                for d in range(d1 - d0 + 1):
                    w.dev_ptr[d] = dev_ptr[d0 + d] - e0
                for i in range(e1 - e0):
                    w.edge_slot[i] = edge_slot[e0 + i]
                    w.edge_tx[i] = edge_tx[e0 + i]
                rc = decode_frame(&w, code, -1, cap)
                if rc != 0:
                    break
                for d in range(d1 - d0):
                    out_v[d0 + d] = w.decoded[d]
        if rc == -2:
            from .decode import DropAmbiguityError
            raise DropAmbiguityError("conventional SIC cannot cancel dropped replicas")
        return out
    finally:
        work_free(&w)


cdef inline double next_u(bitgen_t *rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef inline i64 gap(bitgen_t *rng, double eta, double log1m_eta, i64 M) noexcept nogil:
    cdef double r
    if eta >= 1.0:
        return 1
    r = log1p(-next_u(rng)) / log1m_eta
    if r > M:
        r = M
    return 1 + <i64> r


def simulate(object bitgen, i64 U, i64 M, double alpha, double sigma, double eta, i64 E, int slot_cap,
             const double[:, ::1] deg_cdf, const double[::1] harvest_cdf, int decoder, i64 max_iter, i64 cap,
             i64 frame_start, i64 num_frames, bint measure, i64 theta,
             i64[::1] battery, i64[::1] last_gen, i64[::1] battery_hist, i64[::1] aoi_hist,
             i64[::1] frame_generated, i64[::1] frame_lost, i64[::1] frame_exceed, i64[::1] counters):
    """Run ``num_frames`` frames; ``E < 0`` means unlimited energy. Returns 0 or -2 (drop under conventional SIC)."""
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bitgen.capsule, "BitGenerator")
    cdef i64 max_deg = deg_cdf.shape[1] - 1
    cdef i64 hist_len = aoi_hist.shape[0]
    cdef Work w
    cdef i64 *act = <i64 *> malloc(U * sizeof(i64))
    cdef i64 *gen = <i64 *> malloc(U * sizeof(i64))
    cdef i64 *deg = <i64 *> malloc(U * sizeof(i64))
    cdef i64 *perm = <i64 *> malloc(M * sizeof(i64))
    cdef i64 *swaps = <i64 *> malloc((max_deg + 1) * sizeof(i64))
    cdef i64 f, frame, t0, t1, i, a, n_act, k, l, t, r, tmp, e, e0, x, b, b0, h, next_h, sent, n_edges
    cdef i64 discarded, transmitted, intended, harvested, area2, d0, age, exceed, n_dec
    cdef double u, log1m_alpha = 0.0, log1m_eta = 0.0, rr
    cdef int rc = 0
    if 0.0 < alpha < 1.0:
        log1m_alpha = log1p(-alpha)
    if 0.0 < eta < 1.0:
        log1m_eta = log1p(-eta)
    if act == NULL or gen == NULL or deg == NULL or perm == NULL or swaps == NULL:
        free(act); free(gen); free(deg); free(perm); free(swaps)
        raise MemoryError()
    if work_alloc(&w, M, U, U * max_deg) != 0:
        work_free(&w)
        free(act); free(gen); free(deg); free(perm); free(swaps)
        raise MemoryError()
    try:
        with nogil:
            for i in range(M):
                perm[i] = i
            for f in range(num_frames):
                frame = frame_start + f
                t0 = frame * M
                if measure and E >= 0:
                    for i in range(U):
                        battery_hist[battery[i]] += 1
                # traffic
                n_act = 0
                for i in range(U):
                    u = next_u(rng)
                    if u < sigma:
                        if alpha >= 1.0:
                            k = 0
                        else:
                            rr = log1p(-u) / log1m_alpha
                            if rr > M - 1:
                                rr = M - 1
                            k = <i64> rr
                        act[n_act] = i
                        gen[n_act] = t0 - 1 - k
                        n_act += 1
                # replicas
                n_edges = 0
                discarded = 0
                intended = 0
                for a in range(n_act):
                    i = act[a]
                    u = next_u(rng)
                    l = 0
                    while u >= deg_cdf[battery[i] if E >= 0 else 0, l]:
                        l += 1
                    deg[a] = l
                    w.dev_ptr[a] = n_edges
                    if l == 0:
                        discarded += 1
                    intended += l
                    for t in range(l):
                        r = t + <i64> (next_u(rng) * (M - t))
                        if r > M - 1:
                            r = M - 1
                        swaps[t] = r
                        tmp = perm[t]
                        perm[t] = perm[r]
                        perm[r] = tmp
                    for t in range(l):
                        # insertion sort into the edge list
                        x = perm[t]
                        e = n_edges + t
                        while e > n_edges and w.edge_slot[e - 1] > x:
                            w.edge_slot[e] = w.edge_slot[e - 1]
                            e -= 1
                        w.edge_slot[e] = x
                        w.edge_tx[n_edges + t] = 1
                    t = l - 1
                    while t >= 0:
                        r = swaps[t]
                        tmp = perm[t]
                        perm[t] = perm[r]
                        perm[r] = tmp
                        t -= 1
                    n_edges += l
                w.dev_ptr[n_act] = n_edges
                w.n_dev = n_act
                # energy
                transmitted = intended
                harvested = 0
                if E >= 0:
                    transmitted = 0
                    a = 0
                    for i in range(U):
                        b0 = battery[i]
                        if a < n_act and act[a] == i and deg[a] > 0:
                            b = b0
                            if eta <= 0.0:
                                next_h = M + 1
                            else:
                                next_h = gap(rng, eta, log1m_eta, M)
                            sent = 0
                            for e in range(w.dev_ptr[a], w.dev_ptr[a + 1]):
                                x = w.edge_slot[e] + 1
                                while next_h <= x:
                                    if not slot_cap or b < E:
                                        b += 1
                                    next_h += gap(rng, eta, log1m_eta, M)
                                if b >= 1:
                                    b -= 1
                                    sent += 1
                                else:
                                    w.edge_tx[e] = 0
                            while next_h <= M:
                                if not slot_cap or b < E:
                                    b += 1
                                next_h += gap(rng, eta, log1m_eta, M)
                            if b > E:
                                b = E
                            harvested += b - b0 + sent
                            transmitted += sent
                            battery[i] = b
                            a += 1
                        else:
                            if a < n_act and act[a] == i:
                                a += 1
                            u = next_u(rng)
                            h = 0
                            while u >= harvest_cdf[h]:
                                h += 1
                            b = b0 + h
                            if b > E:
                                b = E
                            harvested += b - b0
                            battery[i] = b
                rc = decode_frame(&w, decoder, max_iter, cap)
                if rc != 0:
                    break
                # age of information
                area2 = 0
                for i in range(U):
                    d0 = t0 - last_gen[i]
                    area2 += 2 * d0 * M + M * M
                n_dec = w.n_order
                for a in range(n_dec):
                    last_gen[act[w.order[a]]] = gen[w.order[a]]
                if measure:
                    t1 = t0 + M
                    exceed = 0
                    for i in range(U):
                        age = t1 - last_gen[i]
                        if age + M > theta:
                            exceed += 1
                        if age > hist_len - 1:
                            age = hist_len - 1
                        aoi_hist[age] += 1
                    if theta >= 0:
                        frame_exceed[f] = exceed
                    frame_generated[f] = n_act
                    frame_lost[f] = n_act - n_dec
                    counters[0] += discarded
                    counters[1] += transmitted
                    counters[2] += intended - transmitted
                    counters[3] += w.attempts
                    counters[4] += area2
                    counters[5] += n_dec
                    counters[6] += w.passes
                    counters[7] += harvested
        if rc == -2:
            from .decode import DropAmbiguityError
            raise DropAmbiguityError("conventional SIC met a dropped replica")
        return f + 1 if num_frames > 0 else 0
    finally:
        work_free(&w)
        free(act); free(gen); free(deg); free(perm); free(swaps)
