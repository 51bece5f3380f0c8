import itertools
import math

import numpy as np
import pytest

from irsa_eh import _backend
from irsa_eh.analysis import plr_lower_bound
from irsa_eh.decode import DropAmbiguityError
from irsa_eh.model import UNLIMITED, ConfigError, DegreeDistribution, SystemConfig
from irsa_eh.sim import (
    DeviceState,
    Scheme,
    generate_traffic,
    harvest_count_cdf,
    run_frame,
    run_replications,
    run_simulation,
    schedule_replicas,
)

FAST = "compiled" in _backend.available()


def small(**kw):
    base = dict(num_devices=60, frame_length=20, update_prob=0.01, battery_capacity=3, harvest_prob=0.05,
                max_degree=4)
    base.update(kw)
    return SystemConfig(**base)


def test_traffic_alpha_zero():
    c = small(update_prob=0.0)
    states = [DeviceState(1) for _ in range(10)]
    assert generate_traffic(c, states, np.random.default_rng(0), 3) == []


def test_traffic_alpha_one():
    c = small(update_prob=1.0)
    states = [DeviceState(1) for _ in range(10)]
    assert generate_traffic(c, states, np.random.default_rng(0), 3) == list(range(10))
    assert all(s.pending_update_generation_slot == 3 * 20 - 1 for s in states)


def test_traffic_offset_law():
    # latest arrival offset k (0 = last slot) has P(k) = alpha (1-alpha)^k / sigma
    c = SystemConfig(20_000, 5, 0.3, 1, 0.0, 1)
    states = [DeviceState(0) for _ in range(c.num_devices)]
    active = generate_traffic(c, states, np.random.default_rng(1), 1)
    k = np.array([5 - 1 - states[i].pending_update_generation_slot for i in active])
    expected = np.array([0.3 * 0.7**j for j in range(5)]) / c.sigma
    freq = np.bincount(k, minlength=5) / len(k)
    np.testing.assert_allclose(freq, expected, atol=0.01)


def test_mean_active_count():
    c = SystemConfig(1000, 100, 0.001, 2, 0.02, 5)
    frames = 10_000 if FAST else 500
    report = run_simulation(c, DegreeDistribution.fixed(3, 5), "unlimited", frames, 0, seed=3)
    mean = report.frame_generated.mean()
    assert c.num_devices * c.sigma == pytest.approx(95.2, abs=0.05)
    assert mean == pytest.approx(95.2, rel=0.01)


def test_schedule_point_mass_zero():
    cdf = DegreeDistribution.fixed(0, 3).sampling_cdf(1)[0]
    assert schedule_replicas(cdf, 5, np.random.default_rng(0)) == (0, ())


def test_schedule_uniform_pairs():
    cdf = DegreeDistribution.fixed(2, 3).sampling_cdf(1)[0]
    rng = np.random.default_rng(4)
    counts = {p: 0 for p in itertools.combinations(range(1, 6), 2)}
    n = 100_000
    for _ in range(n):
        deg, slots = schedule_replicas(cdf, 5, rng)
        counts[slots] += 1
    for p, c in counts.items():
        assert c / n == pytest.approx(0.1, abs=0.01)


def test_full_degree_rejected_at_config():
    with pytest.raises(ConfigError):
        SystemConfig(10, 5, 0.1, 2, 0.1, 5)


def test_run_frame_no_energy_drops_everything():
    c = small(harvest_prob=0.0)
    states = [DeviceState(0)]
    trace, _ = run_frame(states, {0: (3, (2, 5, 9))}, c, np.random.default_rng(0), 0)
    assert trace.devices[0].dropped == (2, 5, 9)
    assert trace.devices[0].transmitted == ()


def test_same_slot_harvest_is_usable():
    c = small(harvest_prob=1.0)
    states = [DeviceState(0)]
    trace, _ = run_frame(states, {0: (1, (1,))}, c, np.random.default_rng(0), 0)
    assert trace.devices[0].transmitted == (1,)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_all_dropped_frequency_matches_bound_integrand(degree):
    # with an empty battery, P[all replicas dropped] is the loss-bound term at phi0 = 1
    c = SystemConfig(1, 20, 0.5, 3, 0.05, 3)
    cdf = DegreeDistribution.fixed(degree, 3).sampling_cdf(1)[0]
    rng = np.random.default_rng(degree)
    hcdf = harvest_count_cdf(20, 0.05)
    n, lost = 20_000, 0
    for _ in range(n):
        states = [DeviceState(0)]
        sched = {0: schedule_replicas(cdf, 20, rng)}
        trace, _ = run_frame(states, sched, c, rng, 0, harvest_cdf=hcdf)
        lost += not trace.devices[0].transmitted
    row = np.zeros(4)
    row[degree] = 1.0
    p = plr_lower_bound(c, row, 1.0)
    assert abs(lost / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_avoid_schedule_never_drops():
    c = small()
    rng = np.random.default_rng(2)
    for _ in range(300):
        b = int(rng.integers(0, 4))
        l = int(rng.integers(0, b + 1))
        slots = tuple(sorted(rng.choice(np.arange(1, 21), l, replace=False).tolist()))
        states = [DeviceState(b)]
        trace, _ = run_frame(states, {0: (l, slots)}, c, rng, 0)
        assert trace.devices[0].dropped == ()
        assert 0 <= states[0].battery <= 3


def test_trace_incidence_consistency():
    c = small(update_prob=0.05, battery_capacity=1)
    cdf = DegreeDistribution.fixed(3, 4).sampling_cdf(2)
    rng = np.random.default_rng(8)
    states = [DeviceState(int(rng.integers(0, 2))) for _ in range(c.num_devices)]
    active = generate_traffic(c, states, rng, 1)
    sched = {i: schedule_replicas(cdf[states[i].battery], 20, rng) for i in active}
    trace, _ = run_frame(states, sched, c, rng, 1)
    slot_lists = trace.slot_lists()
    pairs_a = {(d, s) for s, devs in enumerate(slot_lists, 1) for d in devs}
    pairs_b = {(dev.device, s) for dev in trace.devices for s in dev.transmitted}
    assert pairs_a == pairs_b
    for dev in trace.devices:
        assert set(dev.transmitted) | set(dev.dropped) == set(dev.intended)
        assert not set(dev.transmitted) & set(dev.dropped)


def test_unlimited_frame_never_drops():
    c = small(battery_capacity=UNLIMITED)
    trace, h = run_frame([DeviceState(UNLIMITED)], {0: (2, (1, 2))}, c, np.random.default_rng(0), 0)
    assert trace.devices[0].transmitted == (1, 2) and h == 0


@pytest.mark.parametrize("energy_model", ["frame_cap", "slot_cap"])
def test_energy_balance(energy_model):
    # batteries start full, so accepted harvest and spent energy differ by at most U * E
    c = SystemConfig(50, 20, 0.02, 3, 0.05, 3)
    report = run_simulation(c, DegreeDistribution.fixed(3, 3), "identify", 400, 0, seed=1,
                            energy_model=energy_model)
    assert report.transmitted > 1000
    assert abs(report.harvested - report.transmitted) <= 50 * 3


def test_harvest_rate_from_empty_battery():
    # starting empty with a capacity never reached, every harvested unit is kept
    c = SystemConfig(1, 20, 0.5, 400, 0.1, 3)
    rng = np.random.default_rng(0)
    hcdf = harvest_count_cdf(20, 0.1)
    total, n = 0, 5000
    for _ in range(n):
        _, h = run_frame([DeviceState(0)], {}, c, rng, 0, harvest_cdf=hcdf)
        total += h
    assert total / n == pytest.approx(2.0, abs=4 * math.sqrt(20 * 0.1 * 0.9 / n))


def test_zero_frames_empty_report():
    r = run_simulation(small(), DegreeDistribution.fixed(2, 4), "identify", 0, 5, seed=0)
    assert r.frames == 0 and r.generated == 0 and r.battery_hist.sum() == 0


def test_determinism_and_seed_sensitivity():
    c, d = small(), DegreeDistribution.fixed(2, 4)
    a = run_simulation(c, d, "identify", 200, 10, seed=5, theta=100)
    b = run_simulation(c, d, "identify", 200, 10, seed=5, theta=100)
    other = run_simulation(c, d, "identify", 200, 10, seed=6, theta=100)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != other.to_dict()


@pytest.mark.skipif(not FAST, reason="compiled core not built")
@pytest.mark.parametrize("scheme", ["avoid", "identify", "unlimited"])
@pytest.mark.parametrize("energy_model", ["frame_cap", "slot_cap"])
@pytest.mark.parametrize("alpha", [0.0, 0.02, 1 / 60, 1.0])
def test_backends_bit_identical(scheme, energy_model, alpha):
    c = small(update_prob=alpha, harvest_prob=0.08)
    d = DegreeDistribution.battery_matched(3, 4) if scheme == "avoid" else DegreeDistribution(
        [[0.1, 0.2, 0.3, 0.2, 0.2]], adaptive=False)
    kw = dict(theta=50, energy_model=energy_model)
    py = run_simulation(c, d, scheme, 60, 5, seed=21, backend="python", **kw)
    cc = run_simulation(c, d, scheme, 60, 5, seed=21, backend="compiled", **kw)
    assert py.to_dict() == cc.to_dict()


@pytest.mark.skipif(not FAST, reason="compiled core not built")
def test_backends_identical_edge_eta():
    for eta in (0.0, 1.0):
        c = small(harvest_prob=eta, update_prob=0.05)
        d = DegreeDistribution.fixed(3, 4)
        py = run_simulation(c, d, "identify", 30, 3, seed=2, backend="python")
        cc = run_simulation(c, d, "identify", 30, 3, seed=2, backend="compiled")
        assert py.to_dict() == cc.to_dict()


def test_avoid_report_has_no_drops():
    r = run_simulation(small(update_prob=0.05), DegreeDistribution.battery_matched(3, 4), "avoid", 100, 10, seed=1)
    assert r.dropped == 0


def test_identify_records_drops():
    r = run_simulation(small(update_prob=0.05, harvest_prob=0.02), DegreeDistribution.fixed(4, 4), "identify",
                       100, 10, seed=1)
    assert r.dropped > 0


def test_scheme_validation():
    c = small()
    with pytest.raises(ConfigError):
        run_simulation(c, DegreeDistribution.fixed(2, 4), "avoid", 1, 0)
    with pytest.raises(ConfigError):
        run_simulation(small(battery_capacity=UNLIMITED), DegreeDistribution.fixed(2, 4), "identify", 1, 0)
    with pytest.raises(ConfigError):
        run_simulation(c, DegreeDistribution.fixed(2, 4), "bogus", 1, 0)
    with pytest.raises(ConfigError):
        run_simulation(c, DegreeDistribution.fixed(2, 4), "identify", 1, 0, energy_model="nope")
    assert Scheme.parse("AVOID") is Scheme.AVOID


def test_replications_merge():
    c, d = small(), DegreeDistribution.fixed(2, 4)
    merged = run_replications(c, d, "identify", 50, 3, seed=4, warmup_frames=5)
    assert merged.frames == 150
    again = run_replications(c, d, "identify", 50, 3, seed=4, warmup_frames=5)
    assert merged.to_dict() == again.to_dict()


def test_pure_python_switch():
    import os
    import subprocess
    import sys

    env = dict(os.environ, IRSA_EH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from irsa_eh import _backend; print(_backend.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
