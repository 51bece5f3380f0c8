"""Pure-Python kernels, used when the compiled core is unavailable."""

from __future__ import annotations

import numpy as np

from . import decode as _decode
from .sim import FrameTrace, generate_traffic, run_frame, schedule_replicas

NAME = "python"


def simulate(setup, rng, state, acc, num_frames, measure, theta):
    config = setup.config
    M, U = config.frame_length, config.num_devices
    unlimited = setup.capacity < 0
    hist_len = len(acc.aoi_hist)
    states = state.device_states()
    counters = acc.counters
    max_iter = None if setup.max_iter < 0 else setup.max_iter
    cap = None if setup.candidate_cap < 0 else setup.candidate_cap
    last_gen = state.last_gen
    for f in range(num_frames):
        frame = state.frame
        if measure and not unlimited:
            for st in states:
                acc.battery_hist[st.battery] += 1
        active = generate_traffic(config, states, rng, frame)
        schedules = {}
        for i in active:
            row = 0 if unlimited else states[i].battery
            schedules[i] = schedule_replicas(setup.deg_cdf[row], M, rng)
        trace, harvested = run_frame(states, schedules, config, rng, frame, setup.energy_model, setup.harvest_cdf)
        result = _decode.decode(trace, setup.scheme.decoder, max_iter, cap)

        t0 = frame * M
        area2 = 0
        for i in range(U):
            d0 = t0 - int(last_gen[i])
            area2 += 2 * d0 * M + M * M
        for d in result.decoded:
            last_gen[d] = states[d].pending_update_generation_slot
        if measure:
            t1 = t0 + M
            ages = t1 - last_gen
            if theta >= 0:
                acc.frame_exceed[f] = int(np.count_nonzero(ages + M > theta))
            np.add.at(acc.aoi_hist, np.minimum(ages, hist_len - 1), 1)
            transmitted = sum(len(dev.transmitted) for dev in trace.devices)
            intended = sum(dev.degree for dev in trace.devices)
            acc.frame_generated[f] = len(active)
            acc.frame_lost[f] = len(active) - len(result.decoded)
            counters += np.array(
                [
                    sum(1 for dev in trace.devices if dev.degree == 0),
                    transmitted,
                    intended - transmitted,
                    result.attempts,
                    area2,
                    len(result.decoded),
                    result.iterations,
                    harvested,
                ],
                dtype=np.int64,
            )
        state.frame += 1
    for i, st in enumerate(states):
        state.battery[i] = st.battery


def decode_csr(num_slots, dev_ptr, edge_slot, edge_tx, code, max_iter, cap):
    """Decode one CSR frame; returns ``(decoded flags, order, attempts, passes)``."""
    n_dev = len(dev_ptr) - 1
    intended, dropped = {}, {}
    for d in range(n_dev):
        lo, hi = dev_ptr[d], dev_ptr[d + 1]
        intended[d] = [int(s) + 1 for s in edge_slot[lo:hi]]
        dropped[d] = [int(s) + 1 for s, t in zip(edge_slot[lo:hi], edge_tx[lo:hi]) if not t]
    trace = _unsorted_trace(num_slots, intended, dropped)
    name = {0: "conventional", 1: "genie", 2: "identify"}[code]
    result = _decode.decode(trace, name, None if max_iter < 0 else max_iter, None if cap < 0 else cap)
    flags = np.zeros(n_dev, dtype=np.uint8)
    flags[list(result.decoded)] = 1
    return flags, np.asarray(result.order, dtype=np.int64), result.attempts, result.iterations


def _unsorted_trace(num_slots, intended, dropped):
    # keep the CSR edge order, which sets the candidate-list order
    from .sim import DeviceFrame

    devices = []
    for d in range(len(intended)):
        lost = set(dropped[d])
        slots = tuple(intended[d])
        devices.append(DeviceFrame(d, len(slots), slots, tuple(s for s in slots if s not in lost)))
    return FrameTrace(0, num_slots, tuple(devices))


def decode_batch(num_slots, trace_ptr, dev_ptr, edge_slot, edge_tx, code, cap):
    out = np.zeros(len(dev_ptr) - 1, dtype=np.uint8)
    for t in range(len(trace_ptr) - 1):
        d0, d1 = trace_ptr[t], trace_ptr[t + 1]
        e0 = dev_ptr[d0]
        local_ptr = dev_ptr[d0 : d1 + 1] - e0
        e1 = dev_ptr[d1]
        flags, _, _, _ = decode_csr(num_slots, local_ptr, edge_slot[e0:e1], edge_tx[e0:e1], code, -1, cap)
        out[d0:d1] = flags
    return out
