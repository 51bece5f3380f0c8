"""Successive interference cancellation decoders.

Three receivers share one slot-observation model:

* ``sic_conventional`` peels the graph of intended replicas and is only
  correct when no replica was dropped;
* ``sic_genie`` peels the graph of transmitted replicas, as if the receiver
  knew where the drops happened;
* ``sic_identify`` keeps a candidate list per slot and tests subsets of it
  for removal, locating dropped replicas from singleton observations alone.

Slots are numbered 1..M as in :class:`~irsa_eh.sim.FrameTrace`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# subsets are enumerated as bitmasks in the compiled core
MAX_CANDIDATES = 62


class SlotKind(enum.Enum):
    IDLE = "idle"
    SINGLETON = "singleton"
    COLLISION = "collision"


class SlotObservation(NamedTuple):
    kind: SlotKind
    device: int | None = None


IDLE = SlotObservation(SlotKind.IDLE)
COLLISION = SlotObservation(SlotKind.COLLISION)


def observe_slot(residual) -> SlotObservation:
    """What the receiver sees in a slot holding ``residual`` replicas."""
    if len(residual) == 0:
        return IDLE
    if len(residual) == 1:
        return SlotObservation(SlotKind.SINGLETON, next(iter(residual)))
    return COLLISION


@dataclass(frozen=True)
class DecodeResult:
    decoded: frozenset
    order: tuple
    iterations: int
    attempts: int
    residual_sizes: tuple


class DropAmbiguityError(ValueError):
    """Conventional SIC was handed a frame containing dropped replicas."""


class _Channel:
    """Receiver-side view of one frame.

    Ground truth is reachable only through slot observations and the
    physical outcome of a tentative removal; the genie additionally reads
    the transmitted slots of a device.
    """

    def __init__(self, trace):
        self.num_slots = trace.num_slots
        self._residual = [set() for _ in range(trace.num_slots + 1)]
        self._intended = {}
        self._transmitted = {}
        for dev in trace.devices:
            self._intended[dev.device] = tuple(dev.intended)
            self._transmitted[dev.device] = tuple(dev.transmitted)
            for s in dev.transmitted:
                self._residual[s].add(dev.device)

    def observe(self, slot) -> SlotObservation:
        return observe_slot(self._residual[slot])

    def try_remove(self, slot, devices):
        """Device left alone in ``slot`` after subtracting ``devices``, or None.

        Subtracting a replica that was never sent leaves noise behind, so
        such an attempt can never produce a singleton.
        """
        residual = self._residual[slot]
        if len(residual) != len(devices) + 1:
            return None
        if not all(d in residual for d in devices):
            return None
        (left,) = residual.difference(devices)
        return left

    def commit_remove(self, slot, devices):
        residual = self._residual[slot]
        for d in devices:
            if d not in residual:
                raise AssertionError(f"device {d} has no replica in slot {slot}")
            residual.remove(d)

    def pointer(self, device):
        """Intended slots of a decoded packet, read from its header."""
        return self._intended[device]

    def genie_slots(self, device):
        return self._transmitted[device]

    def residual_sizes(self):
        return tuple(len(r) for r in self._residual[1:])


def _passes(max_iter):
    n = 0
    while max_iter is None or n < max_iter:
        n += 1
        yield n


def _peel(channel, slots_of, max_iter):
    order = []
    passes = 0
    for passes in _passes(max_iter):
        progress = False
        for n in range(1, channel.num_slots + 1):
            obs = channel.observe(n)
            if obs.kind is not SlotKind.SINGLETON:
                continue
            d = obs.device
            order.append(d)
            progress = True
            for m in slots_of(d):
                channel.commit_remove(m, (d,))
        if not progress:
            break
    return DecodeResult(frozenset(order), tuple(order), passes, 0, channel.residual_sizes())


def sic_conventional(trace, max_iter=None) -> DecodeResult:
    """Plain IRSA peeling: decode singletons, cancel every intended replica."""
    for dev in trace.devices:
        if len(dev.transmitted) != len(dev.intended):
            raise DropAmbiguityError(
                f"device {dev.device} dropped replicas; conventional SIC cannot cancel them"
            )
    channel = _Channel(trace)
    return _peel(channel, channel.pointer, max_iter)


def sic_genie(trace, max_iter=None) -> DecodeResult:
    """Peeling on the transmitted replicas only."""
    channel = _Channel(trace)
    return _peel(channel, channel.genie_slots, max_iter)


def _masks(k, size):
    # k-bit masks with `size` bits set, in increasing numeric order
    if size == 0:
        yield 0
        return
    x = (1 << size) - 1
    limit = 1 << k
    while x < limit:
        yield x
        c = x & -x
        r = x + c
        x = (((r ^ x) >> 2) // c) | r


def sic_identify(trace, max_iter=None, candidate_cap=None) -> DecodeResult:
    """SIC with candidate lists and subset-removal tests.

    A decoded packet joins the candidate list of every other slot it points
    to. For a slot with candidates, subsets are tried smallest first; a
    subset whose removal leaves a singleton is known to have been sent and
    is cancelled, and the singleton is decoded. Slots are revisited only
    when their candidate list grew.
    """
    channel = _Channel(trace)
    M = channel.num_slots
    cap = MAX_CANDIDATES if candidate_cap is None else min(candidate_cap, MAX_CANDIDATES)
    candidates = [[] for _ in range(M + 1)]
    dirty = [True] * (M + 1)
    decoded = set()
    order = []
    attempts = 0
    passes = 0
    for passes in _passes(max_iter):
        progress = False
        for n in range(1, M + 1):
            if not dirty[n]:
                continue
            dirty[n] = False
            while channel.observe(n).kind is not SlotKind.IDLE:
                members = candidates[n]
                if len(members) > cap:
                    break
                hit = None
                for size in range(len(members) + 1):
                    for mask in _masks(len(members), size):
                        subset = [members[i] for i in range(len(members)) if mask >> i & 1]
                        if size:
                            attempts += 1
                        left = channel.try_remove(n, subset)
                        if left is not None:
                            hit = (subset, left)
                            break
                    if hit is not None:
                        break
                if hit is None:
                    break
                subset, d = hit
                channel.commit_remove(n, subset + [d])
                gone = set(subset)
                gone.add(d)
                candidates[n] = [c for c in members if c not in gone]
                if d in decoded:
                    continue
                decoded.add(d)
                order.append(d)
                progress = True
                for m in channel.pointer(d):
                    if m != n:
                        candidates[m].append(d)
                        dirty[m] = True
        if not progress:
            break
    return DecodeResult(frozenset(order), tuple(order), passes, attempts, channel.residual_sizes())


DECODERS = {
    "conventional": sic_conventional,
    "genie": sic_genie,
    "identify": sic_identify,
}
DECODER_CODES = {"conventional": 0, "genie": 1, "identify": 2}


def decode(trace, decoder: str, max_iter=None, candidate_cap=None) -> DecodeResult:
    if decoder == "identify":
        return sic_identify(trace, max_iter, candidate_cap)
    return DECODERS[decoder](trace, max_iter)


def trace_to_csr(trace):
    """Flatten a trace into ``(dev_ptr, edge_slot, edge_tx)`` with 0-based slots."""
    dev_ptr = [0]
    slots, tx = [], []
    for dev in trace.devices:
        sent = set(dev.transmitted)
        for s in dev.intended:
            slots.append(s - 1)
            tx.append(1 if s in sent else 0)
        dev_ptr.append(len(slots))
    return (
        np.asarray(dev_ptr, dtype=np.int64),
        np.asarray(slots, dtype=np.int64),
        np.asarray(tx, dtype=np.uint8),
    )


def decode_batch(num_slots, trace_ptr, dev_ptr, edge_slot, edge_tx, decoder, candidate_cap=None, backend=None):
    """Decode many frames stored back to back in CSR form.

    ``trace_ptr[t]:trace_ptr[t+1]`` indexes the devices of frame ``t``;
    ``dev_ptr`` (global, length devices + 1) indexes their edges. Returns a
    uint8 array with one decoded flag per device.
    """
    from . import _backend

    impl = _backend.get(backend)
    code = DECODER_CODES[decoder]
    cap = -1 if candidate_cap is None else int(candidate_cap)
    return impl.decode_batch(
        int(num_slots),
        np.ascontiguousarray(trace_ptr, dtype=np.int64),
        np.ascontiguousarray(dev_ptr, dtype=np.int64),
        np.ascontiguousarray(edge_slot, dtype=np.int64),
        np.ascontiguousarray(edge_tx, dtype=np.uint8),
        code,
        cap,
    )
