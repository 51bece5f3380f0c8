import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irsa_eh import _backend
from irsa_eh.decode import (
    COLLISION,
    DECODER_CODES,
    IDLE,
    DropAmbiguityError,
    SlotKind,
    decode_batch,
    observe_slot,
    sic_conventional,
    sic_genie,
    sic_identify,
    trace_to_csr,
)
from irsa_eh.sim import FrameTrace

EXAMPLE = {1: {1, 4}, 2: {2, 5}, 3: {2, 4, 5}, 4: {1, 3, 5}}
DROPS = {1: {4}, 3: {5}, 4: {3}}


def test_observe_slot():
    assert observe_slot(set()) == IDLE
    obs = observe_slot({7})
    assert obs.kind is SlotKind.SINGLETON and obs.device == 7
    assert observe_slot({1, 2}) == COLLISION


def test_conventional_example():
    res = sic_conventional(FrameTrace.from_sets(5, EXAMPLE))
    assert res.order == (4, 1, 3, 2)
    assert res.decoded == {1, 2, 3, 4}
    assert res.residual_sizes == (0,) * 5


def test_conventional_trivial():
    assert sic_conventional(FrameTrace.from_sets(5, {})).decoded == frozenset()
    assert sic_conventional(FrameTrace.from_sets(1, {1: {1}, 2: {1}})).decoded == frozenset()


def test_conventional_rejects_drops():
    with pytest.raises(DropAmbiguityError):
        sic_conventional(FrameTrace.from_sets(5, EXAMPLE, DROPS))


def test_genie_fig1():
    res = sic_genie(FrameTrace.from_sets(5, EXAMPLE, DROPS))
    assert res.decoded == {1, 2, 3, 4}


def test_genie_all_dropped():
    tr = FrameTrace.from_sets(5, {1: {1, 2}, 2: {3}}, {1: {1, 2}})
    assert sic_genie(tr).decoded == {2}


def test_identify_fig1_walkthrough():
    res = sic_identify(FrameTrace.from_sets(5, EXAMPLE, DROPS))
    assert res.order == (3, 2, 4, 1)
    # slot 5 first tries {3}, which fails because device 3 dropped there
    assert res.attempts >= 1


def test_identify_drop_free_matches_conventional():
    tr = FrameTrace.from_sets(5, EXAMPLE)
    assert sic_identify(tr).decoded == sic_conventional(tr).decoded
    assert sic_genie(tr).decoded == sic_conventional(tr).decoded


@st.composite
def traces(draw, max_slots=8, max_devices=6, max_degree=None):
    M = draw(st.integers(1, max_slots))
    n = draw(st.integers(0, max_devices))
    intended, dropped = {}, {}
    for d in range(n):
        top = M if max_degree is None else min(M, max_degree)
        slots = draw(st.sets(st.integers(1, M), min_size=0, max_size=top))
        intended[d] = slots
        dropped[d] = draw(st.sets(st.sampled_from(sorted(slots)))) if slots else set()
    return FrameTrace.from_sets(M, intended, dropped)


@settings(max_examples=400, deadline=None)
@given(traces())
def test_identify_equals_genie(tr):
    assert sic_identify(tr).decoded == sic_genie(tr).decoded


@settings(max_examples=200, deadline=None)
@given(traces(max_slots=10, max_devices=8))
def test_monotone_in_iterations(tr):
    full = sic_identify(tr)
    prev = frozenset()
    for k in range(1, full.iterations + 1):
        cur = sic_identify(tr, max_iter=k).decoded
        assert prev <= cur
        prev = cur
    assert prev == full.decoded


def _random_order_peel(tr, rng):
    # oracle: peel singletons in a random order
    residual = [set() for _ in range(tr.num_slots + 1)]
    sent = {}
    for dev in tr.devices:
        sent[dev.device] = dev.transmitted
        for s in dev.transmitted:
            residual[s].add(dev.device)
    decoded = set()
    while True:
        singles = [s for s in range(1, tr.num_slots + 1) if len(residual[s]) == 1]
        if not singles:
            return decoded
        s = singles[rng.integers(len(singles))]
        (d,) = residual[s]
        decoded.add(d)
        for m in sent[d]:
            residual[m].discard(d)


@settings(max_examples=200, deadline=None)
@given(traces(max_slots=10, max_devices=8), st.integers(0, 2**32 - 1))
def test_genie_order_invariant(tr, seed):
    assert _random_order_peel(tr, np.random.default_rng(seed)) == sic_genie(tr).decoded


@settings(max_examples=200, deadline=None)
@given(traces(), st.integers(1, 3))
def test_candidate_cap_never_beats_genie(tr, cap):
    assert sic_identify(tr, candidate_cap=cap).decoded <= sic_genie(tr).decoded


@pytest.mark.skipif("compiled" not in _backend.available(), reason="compiled core not built")
@settings(max_examples=300, deadline=None)
@given(traces(max_slots=12, max_devices=10), st.sampled_from(["genie", "identify"]), st.sampled_from([-1, 1, 2]))
def test_compiled_decoder_parity(tr, name, cap):
    code = DECODER_CODES[name]
    args = (tr.num_slots, *trace_to_csr(tr), code, -1, cap)
    py = _backend.get("python").decode_csr(*args)
    cc = _backend.get("compiled").decode_csr(*args)
    np.testing.assert_array_equal(py[0], cc[0])
    np.testing.assert_array_equal(py[1], cc[1])
    assert py[2:] == cc[2:]


def test_compiled_rejects_drops(backend):
    tr = FrameTrace.from_sets(5, EXAMPLE, DROPS)
    with pytest.raises(DropAmbiguityError):
        _backend.get(backend).decode_csr(5, *trace_to_csr(tr), 0, -1, -1)


def test_decode_batch_matches_single(backend):
    rng = np.random.default_rng(9)
    trs = []
    for _ in range(50):
        n = rng.integers(0, 6)
        intended = {d: set(rng.choice(np.arange(1, 9), rng.integers(0, 4), replace=False).tolist()) for d in range(n)}
        dropped = {d: {s for s in v if rng.random() < 0.3} for d, v in intended.items()}
        trs.append(FrameTrace.from_sets(8, intended, dropped))
    trace_ptr, dev_ptr, slots, tx = [0], [0], [], []
    for tr in trs:
        p, s, t = trace_to_csr(tr)
        dev_ptr.extend((p[1:] + dev_ptr[-1]).tolist())
        slots.extend(s.tolist())
        tx.extend(t.tolist())
        trace_ptr.append(trace_ptr[-1] + len(tr.devices))
    flags = decode_batch(8, trace_ptr, dev_ptr, slots, tx, "identify", backend=backend)
    for k, tr in enumerate(trs):
        got = {d for d in range(len(tr.devices)) if flags[trace_ptr[k] + d]}
        assert got == set(sic_genie(tr).decoded)
