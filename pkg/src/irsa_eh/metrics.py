"""Empirical estimators over simulation output."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .sim import AOI_HIST_LEN, COUNTER_NAMES

NUM_BATCHES = 32


class NoEstimateError(ValueError):
    """The report holds no sample for the requested estimate."""


@dataclass
class SimulationReport:
    """Counters of one run, or of several merged replications.

    ``aoi_area2`` is twice the summed area under every device's AoI curve
    (an integer). ``aoi_hist[d]`` counts end-of-frame ages equal to ``d``
    slots; the AVP sample of that frame is ``d + M``.
    """

    scheme: str
    num_devices: int
    frame_length: int
    update_prob: float
    load: float
    frames: int
    warmup: int
    seed: int | None
    theta: int | None
    generated: int
    lost: int
    discarded: int
    decoded: int
    transmitted: int
    dropped: int
    attempts: int
    passes: int
    harvested: int
    aoi_area2: int
    battery_hist: np.ndarray
    aoi_hist: np.ndarray
    frame_generated: np.ndarray
    frame_lost: np.ndarray
    frame_exceed: np.ndarray
    energy_model: str = "frame_cap"
    extra: dict = field(default_factory=dict)

    @property
    def unlimited(self) -> bool:
        return self.scheme == "unlimited"

    @classmethod
    def from_accumulators(cls, setup, acc, frames, warmup, seed, theta) -> "SimulationReport":
        c = dict(zip(COUNTER_NAMES, (int(v) for v in acc.counters)))
        generated = int(acc.frame_generated.sum())
        lost = int(acc.frame_lost.sum())
        config = setup.config
        return cls(
            scheme=setup.scheme.value,
            num_devices=config.num_devices,
            frame_length=config.frame_length,
            update_prob=config.update_prob,
            load=config.load,
            frames=frames,
            warmup=warmup,
            seed=seed,
            theta=None if theta is None else int(theta),
            generated=generated,
            lost=lost,
            discarded=c["discarded"],
            decoded=c["decoded"],
            transmitted=c["transmitted"],
            dropped=c["dropped"],
            attempts=c["attempts"],
            passes=c["passes"],
            harvested=c["harvested"],
            aoi_area2=c["aoi_area2"],
            battery_hist=acc.battery_hist.copy(),
            aoi_hist=acc.aoi_hist.copy(),
            frame_generated=acc.frame_generated.copy(),
            frame_lost=acc.frame_lost.copy(),
            frame_exceed=acc.frame_exceed.copy(),
            energy_model=setup.energy_model,
        )

    @classmethod
    def merge(cls, reports) -> "SimulationReport":
        """Combine independent replications of the same scenario."""
        reports = list(reports)
        if not reports:
            raise ValueError("nothing to merge")
        first = reports[0]
        for r in reports[1:]:
            same = (r.scheme, r.num_devices, r.frame_length, r.update_prob, r.theta, r.energy_model)
            if same != (first.scheme, first.num_devices, first.frame_length, first.update_prob, first.theta,
                        first.energy_model):
                raise ValueError("can only merge reports of the same scenario and threshold")
        summed = {
            name: sum(getattr(r, name) for r in reports)
            for name in ("frames", "generated", "lost", "discarded", "decoded", "transmitted", "dropped",
                         "attempts", "passes", "harvested", "aoi_area2")
        }
        return cls(
            scheme=first.scheme,
            num_devices=first.num_devices,
            frame_length=first.frame_length,
            update_prob=first.update_prob,
            load=first.load,
            warmup=first.warmup,
            seed=first.seed,
            theta=first.theta,
            battery_hist=np.sum([r.battery_hist for r in reports], axis=0),
            aoi_hist=np.sum([r.aoi_hist for r in reports], axis=0),
            frame_generated=np.concatenate([r.frame_generated for r in reports]),
            frame_lost=np.concatenate([r.frame_lost for r in reports]),
            frame_exceed=np.concatenate([r.frame_exceed for r in reports]),
            energy_model=first.energy_model,
            **summed,
        )

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, np.ndarray):
                value = value.tolist()
            out[name] = value
        # the AoI histogram is long and mostly empty
        nz = np.flatnonzero(self.aoi_hist)
        out["aoi_hist"] = {"length": len(self.aoi_hist), "index": nz.tolist(), "count": self.aoi_hist[nz].tolist()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationReport":
        data = dict(data)
        hist = data["aoi_hist"]
        aoi = np.zeros(hist["length"], dtype=np.int64)
        aoi[np.asarray(hist["index"], dtype=np.int64)] = hist["count"]
        data["aoi_hist"] = aoi
        for name in ("battery_hist", "frame_generated", "frame_lost", "frame_exceed"):
            data[name] = np.asarray(data[name], dtype=np.int64)
        return cls(**data)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "SimulationReport":
        return cls.from_dict(json.loads(text))

    def summary(self, theta=None) -> dict:
        """Headline estimates, ``nan`` where the report holds no sample."""
        theta = self.theta if theta is None else theta
        out = {"frames": self.frames, "generated": self.generated}
        for name, fn in (
            ("plr", estimate_plr),
            ("plr_se", plr_standard_error),
            ("throughput", empirical_throughput),
            ("avg_aoi", empirical_average_aoi),
        ):
            try:
                out[name] = fn(self)
            except NoEstimateError:
                out[name] = math.nan
        if theta is not None:
            try:
                out["avp"] = empirical_avp(self, theta)
            except NoEstimateError:
                out["avp"] = math.nan
        return out


def estimate_plr(report: SimulationReport) -> float:
    """Lost over generated packets; degree-0 discards count as lost."""
    if report.generated == 0:
        raise NoEstimateError("no packet was generated")
    return report.lost / report.generated


def _batch_means_se(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    batches = min(NUM_BATCHES, n)
    if batches < 2:
        return math.nan
    size = n // batches
    means = values[: size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))


def plr_standard_error(report: SimulationReport) -> float:
    """Batch-means standard error of the PLR ratio estimator."""
    p = estimate_plr(report)
    mean_gen = report.frame_generated.mean()
    if mean_gen == 0:
        return math.nan
    # linearised ratio: lost - p * generated has mean zero
    resid = (report.frame_lost - p * report.frame_generated) / mean_gen
    return _batch_means_se(resid)


def empirical_throughput(report: SimulationReport) -> float:
    """Decoded packets per slot."""
    if report.frames == 0:
        raise NoEstimateError("no measured frame")
    return report.decoded / (report.frames * report.frame_length)


def empirical_average_aoi(report: SimulationReport) -> float:
    """Time-average AoI per device, in slots."""
    if report.frames == 0:
        raise NoEstimateError("no measured frame")
    return report.aoi_area2 / (2.0 * report.num_devices * report.frames * report.frame_length)


def empirical_avp(report: SimulationReport, theta) -> float:
    """Fraction of end-of-frame samples with ``age + M > theta``."""
    total = int(report.aoi_hist.sum())
    if total == 0:
        raise NoEstimateError("no end-of-frame AoI sample")
    cut = theta - report.frame_length  # exceed iff age > cut
    if cut < 0:
        return 1.0
    if cut >= len(report.aoi_hist) - 1:
        if report.aoi_hist[-1]:
            raise ValueError(f"threshold {theta} lies beyond the AoI histogram range")
        return 0.0
    return float(report.aoi_hist[int(math.floor(cut)) + 1 :].sum() / total)


def avp_standard_error(report: SimulationReport) -> float:
    """Batch-means standard error of the AVP at the report's recorded threshold."""
    if report.theta is None:
        raise NoEstimateError("run the simulation with theta set to get per-frame exceedances")
    if report.frames == 0:
        raise NoEstimateError("no measured frame")
    return _batch_means_se(report.frame_exceed / report.num_devices)


def empirical_battery_distribution(report: SimulationReport) -> np.ndarray:
    """Normalised frame-start battery histogram."""
    if report.unlimited:
        raise ValueError("no battery is tracked under unlimited energy")
    total = report.battery_hist.sum()
    if total == 0:
        raise NoEstimateError("no measured frame")
    return report.battery_hist / total


def track_aoi(last_gen, decoded, generation_slot, frame: int, frame_length: int):
    """Advance AoI state over one frame.

    Args:
        last_gen: Per-device generation slot of the freshest delivered update;
            updated in place.
        decoded: Devices whose packet was decoded this frame.
        generation_slot: Mapping (or array) from device to the generation
            slot of the packet it sent.
        frame: Frame index; the frame spans slots ``frame*M`` to ``(frame+1)*M``.
        frame_length: M.

    Returns:
        ``(area2, end_ages)``: twice the area under all AoI curves over the
        frame, and each device's age at the frame end.
    """
    M = frame_length
    t0 = frame * M
    start = t0 - np.asarray(last_gen, dtype=np.int64)
    area2 = int(np.sum(2 * start * M + M * M))
    for d in decoded:
        last_gen[d] = generation_slot[d]
    end_ages = t0 + M - np.asarray(last_gen, dtype=np.int64)
    return area2, end_ages


__all__ = [
    "AOI_HIST_LEN",
    "NoEstimateError",
    "SimulationReport",
    "avp_standard_error",
    "empirical_average_aoi",
    "empirical_avp",
    "empirical_battery_distribution",
    "empirical_throughput",
    "estimate_plr",
    "plr_standard_error",
    "track_aoi",
]
