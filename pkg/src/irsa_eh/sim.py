"""Frame-by-frame Monte-Carlo engine.

Each frame: devices with a pending update pick a degree from the row of
their frame-initial battery and intended slots uniformly; harvesting and
transmission then run slot by slot; the receiver decodes; metrics are
accumulated. Battery levels and AoI state carry over between frames.

The per-frame steps below (:func:`generate_traffic`, :func:`schedule_replicas`,
:func:`run_frame`) are the reference implementation. The compiled core in
``_core`` reproduces them draw for draw, so both backends return the same
report for the same seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .energy_chain import binomial_pmf
from .model import UNLIMITED, ConfigError, DegreeDistribution, SystemConfig, validate_avoid_mask

DEFAULT_WARMUP = 100
# end-of-frame AoI histogram length; larger ages share the last bin
AOI_HIST_LEN = 1 << 20

ENERGY_MODELS = {"frame_cap": 0, "slot_cap": 1}

# counters returned by the kernels, in order
COUNTER_NAMES = (
    "discarded",
    "transmitted",
    "dropped",
    "attempts",
    "aoi_area2",
    "decoded",
    "passes",
    "harvested",
)


class Scheme(enum.Enum):
    AVOID = "avoid"
    IDENTIFY = "identify"
    UNLIMITED = "unlimited"

    @property
    def decoder(self) -> str:
        return "identify" if self is Scheme.IDENTIFY else "conventional"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown scheme {value!r}; expected avoid, identify or unlimited") from None


@dataclass
class DeviceState:
    battery: int | object
    pending_update_generation_slot: int | None = None
    last_delivered_generation_slot: int = 0


@dataclass(frozen=True)
class DeviceFrame:
    """One active device in one frame. Slots are numbered 1..M."""

    device: int
    degree: int
    intended: tuple
    transmitted: tuple
    generation_slot: int | None = None

    @property
    def dropped(self) -> tuple:
        sent = set(self.transmitted)
        return tuple(s for s in self.intended if s not in sent)


@dataclass(frozen=True)
class FrameTrace:
    frame: int
    num_slots: int
    devices: tuple

    def slot_lists(self) -> tuple:
        """Devices that actually transmitted in each slot; entry 0 is slot 1."""
        slots = [[] for _ in range(self.num_slots)]
        for dev in self.devices:
            for s in dev.transmitted:
                slots[s - 1].append(dev.device)
        return tuple(tuple(s) for s in slots)

    @classmethod
    def from_sets(cls, num_slots, intended, dropped=None, frame=0) -> "FrameTrace":
        """Build a trace from ``{device: intended slots}`` and ``{device: dropped slots}``."""
        dropped = dropped or {}
        devices = []
        for d in sorted(intended):
            slots = tuple(sorted(intended[d]))
            if len(set(slots)) != len(slots) or any(not 1 <= s <= num_slots for s in slots):
                raise ValueError(f"device {d}: intended slots {slots} invalid for M={num_slots}")
            lost = set(dropped.get(d, ()))
            if not lost <= set(slots):
                raise ValueError(f"device {d}: dropped slots must be intended")
            devices.append(DeviceFrame(d, len(slots), slots, tuple(s for s in slots if s not in lost)))
        return cls(frame, num_slots, tuple(devices))


def harvest_count_cdf(frame_length: int, harvest_prob: float) -> np.ndarray:
    """Inverse-CDF table of the per-frame harvest count (tail pinned to 2.0)."""
    pmf = binomial_pmf(frame_length, harvest_prob)
    cdf = np.cumsum(pmf)
    last = int(np.flatnonzero(pmf > 0.0)[-1])
    cdf[last:] = 2.0
    return np.ascontiguousarray(cdf)


def generate_traffic(config: SystemConfig, states, rng, frame: int) -> list:
    """Mark devices holding an update for ``frame``; return their indices.

    One uniform per device decides activity and, through the truncated
    geometric law, the slot of the latest arrival in the previous frame.
    """
    M, alpha, sigma = config.frame_length, config.update_prob, config.sigma
    log1m = math.log1p(-alpha) if 0.0 < alpha < 1.0 else 0.0
    t0 = frame * M
    active = []
    for i, st in enumerate(states):
        u = rng.random()
        if u < sigma:
            if alpha >= 1.0:
                k = 0
            else:
                k = int(min(math.log1p(-u) / log1m, M - 1))
            st.pending_update_generation_slot = t0 - 1 - k
            active.append(i)
        else:
            st.pending_update_generation_slot = None
    return active


def schedule_replicas(cdf_row, num_slots: int, rng):
    """Draw ``(degree, intended slots)`` from one inverse-CDF row.

    Slots come from a partial Fisher-Yates shuffle, i.e. uniformly over all
    subsets of the drawn size; degree 0 discards the update.
    """
    u = rng.random()
    degree = 0
    while u >= cdf_row[degree]:
        degree += 1
    perm = list(range(num_slots))
    for t in range(degree):
        r = min(t + int(rng.random() * (num_slots - t)), num_slots - 1)
        perm[t], perm[r] = perm[r], perm[t]
    return degree, tuple(sorted(p + 1 for p in perm[:degree]))


def _gap(rng, eta, log1m_eta, M):
    # slots until the next harvest, >= 1
    if eta >= 1.0:
        return 1
    r = math.log1p(-rng.random()) / log1m_eta
    if r > M:
        r = M
    return 1 + int(r)


def run_frame(states, schedules, config: SystemConfig, rng, frame: int, energy_model: str = "frame_cap",
              harvest_cdf=None):
    """Harvest and transmit through one frame; return ``(trace, harvested)``.

    ``schedules`` maps device index to ``(degree, intended)``. Within a slot
    harvesting comes first, so energy arriving in a slot can fund a replica
    in that slot. With ``energy_model="frame_cap"`` the battery may exceed
    the capacity within a frame and is capped at the frame end; with
    ``"slot_cap"`` units arriving at a full battery are discarded.
    """
    M, eta = config.frame_length, config.harvest_prob
    if energy_model not in ENERGY_MODELS:
        raise ConfigError(f"unknown energy model {energy_model!r}")
    slot_cap = energy_model == "slot_cap"
    devices = []
    harvested = 0
    if config.unlimited:
        for i in sorted(schedules):
            degree, intended = schedules[i]
            devices.append(DeviceFrame(i, degree, intended, intended, states[i].pending_update_generation_slot))
        return FrameTrace(frame, M, tuple(devices)), 0

    E = config.battery_capacity
    if harvest_cdf is None:
        harvest_cdf = harvest_count_cdf(M, eta)
    log1m_eta = math.log1p(-eta) if 0.0 < eta < 1.0 else 0.0
    for i, st in enumerate(states):
        b0 = st.battery
        sched = schedules.get(i)
        if sched is None or sched[0] == 0:
            u = rng.random()
            h = 0
            while u >= harvest_cdf[h]:
                h += 1
            st.battery = min(E, b0 + h)
            harvested += st.battery - b0
            if sched is not None:
                devices.append(DeviceFrame(i, 0, (), (), st.pending_update_generation_slot))
            continue
        degree, intended = sched
        b = b0
        next_h = M + 1 if eta <= 0.0 else _gap(rng, eta, log1m_eta, M)
        sent = []
        for x in intended:
            while next_h <= x:
                if not slot_cap or b < E:
                    b += 1
                next_h += _gap(rng, eta, log1m_eta, M)
            if b >= 1:
                b -= 1
                sent.append(x)
        while next_h <= M:
            if not slot_cap or b < E:
                b += 1
            next_h += _gap(rng, eta, log1m_eta, M)
        b = min(b, E)
        harvested += b - b0 + len(sent)
        st.battery = b
        devices.append(DeviceFrame(i, degree, intended, tuple(sent), st.pending_update_generation_slot))
    return FrameTrace(frame, M, tuple(devices)), harvested


@dataclass(frozen=True)
class SimulationSetup:
    """Validated inputs of a run, in the flat form the kernels take."""

    config: SystemConfig
    dist: DegreeDistribution
    scheme: Scheme
    energy_model: str
    deg_cdf: np.ndarray
    harvest_cdf: np.ndarray
    capacity: int  # -1 for unlimited energy
    max_iter: int
    candidate_cap: int


def prepare(config, dist, scheme, energy_model="frame_cap", max_iter=None, candidate_cap=None) -> SimulationSetup:
    scheme = Scheme.parse(scheme)
    if energy_model not in ENERGY_MODELS:
        raise ConfigError(f"unknown energy model {energy_model!r}; expected frame_cap or slot_cap")
    if scheme is Scheme.UNLIMITED:
        if not config.unlimited:
            config = config.replace(battery_capacity=UNLIMITED)
        if dist.adaptive and dist.num_rows != 1:
            raise ConfigError("unlimited energy needs a nonadaptive degree distribution")
    elif config.unlimited:
        raise ConfigError(f"scheme {scheme.value} needs a finite battery capacity")
    if dist.max_degree > config.max_degree:
        raise ConfigError(f"degree table covers degrees up to {dist.max_degree}, but max_degree is {config.max_degree}")
    levels = config.num_battery_levels
    if dist.adaptive and dist.num_rows not in (levels,) and not config.unlimited:
        raise ConfigError(f"adaptive degree table has {dist.num_rows} rows, expected {levels}")
    if scheme is Scheme.AVOID and not validate_avoid_mask(dist, config.battery_capacity):
        raise ConfigError("AVOID needs a degree table with no mass above the initial battery level")
    if config.unlimited:
        deg_cdf = np.ascontiguousarray(dist._cdf[:1])
        harvest_cdf = np.full(1, 2.0)
        capacity = -1
    else:
        deg_cdf = dist.sampling_cdf(levels)
        harvest_cdf = harvest_count_cdf(config.frame_length, config.harvest_prob)
        capacity = config.battery_capacity
    if candidate_cap is not None and candidate_cap < 1:
        raise ConfigError("candidate_cap must be at least 1")
    return SimulationSetup(
        config,
        dist,
        scheme,
        energy_model,
        deg_cdf,
        harvest_cdf,
        capacity,
        -1 if max_iter is None else int(max_iter),
        -1 if candidate_cap is None else int(candidate_cap),
    )


@dataclass
class SimulationState:
    """Per-device arrays carried from frame to frame."""

    battery: np.ndarray
    last_gen: np.ndarray
    frame: int = 0

    @classmethod
    def initial(cls, config: SystemConfig) -> "SimulationState":
        U = config.num_devices
        # batteries start full; the age starts at the mean inter-arrival time
        battery = np.full(U, 0 if config.unlimited else config.battery_capacity, dtype=np.int64)
        start_age = round(1.0 / config.update_prob) if config.update_prob > 0.0 else 0
        last_gen = np.full(U, -start_age, dtype=np.int64)
        return cls(battery, last_gen)

    def device_states(self):
        return [DeviceState(int(b), None, int(t)) for b, t in zip(self.battery, self.last_gen)]


@dataclass
class Accumulators:
    battery_hist: np.ndarray
    aoi_hist: np.ndarray
    frame_generated: np.ndarray
    frame_lost: np.ndarray
    frame_exceed: np.ndarray
    counters: np.ndarray = field(default_factory=lambda: np.zeros(len(COUNTER_NAMES), dtype=np.int64))

    @classmethod
    def empty(cls, levels: int, frames: int) -> "Accumulators":
        return cls(
            np.zeros(max(levels, 1), dtype=np.int64),
            np.zeros(AOI_HIST_LEN, dtype=np.int64),
            np.zeros(frames, dtype=np.int64),
            np.zeros(frames, dtype=np.int64),
            np.zeros(frames, dtype=np.int64),
        )


def make_generator(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(seed))


def run_simulation(config: SystemConfig, dist: DegreeDistribution, scheme, num_frames: int,
                   warmup_frames: int = DEFAULT_WARMUP, seed=0, *, theta=None,
                   energy_model: str = "frame_cap", max_iter=None, candidate_cap=None, backend=None):
    """Simulate ``warmup_frames`` unmeasured frames followed by ``num_frames`` measured ones.

    Args:
        config: Scenario parameters.
        dist: Degree distribution; must respect the AVOID mask for AVOID.
        scheme: ``Scheme`` or its name. AVOID and UNLIMITED use conventional
            SIC, IDENTIFY uses the candidate-list decoder.
        num_frames: Measured frames.
        warmup_frames: Frames run before measuring.
        seed: Integer seed or ``SeedSequence``; equal seeds give equal reports.
        theta: AoI threshold whose per-frame exceedances are recorded (for
            the AVP standard error). The histogram answers any threshold.
        energy_model: ``"frame_cap"`` (default) or ``"slot_cap"``.
        max_iter: SIC pass limit, ``None`` to run to the fixpoint.
        candidate_cap: IDENTIFY skips slots with more candidates than this.
        backend: ``"compiled"``, ``"python"`` or ``None`` for the default.

    Returns:
        A :class:`~irsa_eh.metrics.SimulationReport`.
    """
    from . import _backend
    from .metrics import SimulationReport

    if num_frames < 0 or warmup_frames < 0:
        raise ConfigError("frame counts must be nonnegative")
    setup = prepare(config, dist, scheme, energy_model, max_iter, candidate_cap)
    impl = _backend.get(backend)
    rng = make_generator(seed)
    state = SimulationState.initial(setup.config)
    acc = Accumulators.empty(setup.config.num_battery_levels if setup.capacity >= 0 else 0, num_frames)
    theta_i = -1 if theta is None else int(theta)
    if warmup_frames:
        scratch = Accumulators.empty(len(acc.battery_hist), 0)
        impl.simulate(setup, rng, state, scratch, warmup_frames, False, theta_i)
    if num_frames:
        impl.simulate(setup, rng, state, acc, num_frames, True, theta_i)
    return SimulationReport.from_accumulators(
        setup, acc, num_frames, warmup_frames, seed if isinstance(seed, int) else None, theta
    )


def _replication(args):
    config, dist, scheme, frames, warmup, seed, kwargs = args
    return run_simulation(config, dist, scheme, frames, warmup, seed, **kwargs)


def run_replications(config, dist, scheme, num_frames, replications, seed=0, warmup_frames=DEFAULT_WARMUP,
                     jobs=1, **kwargs):
    """Independent replications with spawned seeds, merged into one report."""
    from .metrics import SimulationReport

    children = np.random.SeedSequence(seed).spawn(replications)
    tasks = [(config, dist, scheme, num_frames, warmup_frames, c, kwargs) for c in children]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            reports = list(pool.map(_replication, tasks))
    else:
        reports = [_replication(t) for t in tasks]
    merged = SimulationReport.merge(reports)
    merged.seed = seed
    return merged
