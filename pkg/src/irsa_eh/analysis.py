"""Closed-form performance expressions.

PLR lower bound from fully dropped packets, average AoI and age-violation
probability of a frame-slotted status-update protocol, and throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import SystemConfig


def last_replica_cdf(degree: int, frame_length: int, x: int) -> float:
    """P[X <= x] for the slot index X of the last of ``degree`` uniform slots.

    Degree 0 has no replica at all and is treated as already finished (1).
    """
    if degree > frame_length:
        raise ValueError(f"degree {degree} exceeds frame length {frame_length}")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if x >= frame_length:
        return 1.0
    if x < degree:
        return 0.0
    return math.exp(_log_comb(x, degree) - _log_comb(frame_length, degree))


def first_energy_pmf(eta: float, frame_length: int, y: int) -> float:
    """P[Y = y] for the slot of the first harvested unit, given at least one harvest."""
    if not 0.0 < eta <= 1.0:
        raise ValueError("first-harvest distribution needs 0 < eta <= 1")
    if not 1 <= y <= frame_length:
        return 0.0
    if eta == 1.0:
        return 1.0 if y == 1 else 0.0
    any_harvest = -math.expm1(frame_length * math.log1p(-eta))
    return math.exp((y - 1) * math.log1p(-eta)) * eta / any_harvest


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def plr_lower_bound(config: SystemConfig, row0, phi0: float) -> float:
    """Probability that a packet loses all its replicas to energy shortage.

    ``row0`` is the degree distribution used at zero initial battery and
    ``phi0`` the probability of starting a frame with an empty battery.
    """
    M, eta = config.frame_length, config.harvest_prob
    row0 = np.asarray(row0, dtype=np.float64)
    if phi0 == 0.0:
        return 0.0
    y = np.arange(1, M + 1)
    # first harvest in slot y, weighted by P[last replica before y]
    first = eta * np.exp((y - 1) * np.log1p(-eta)) if eta < 1.0 else (y == 1).astype(float)
    total = 0.0
    for l, p in enumerate(row0):
        if p == 0.0:
            continue
        if l == 0:
            ratio = np.ones(M)
        else:
            ratio = np.zeros(M)
            ok = y - 1 >= l
            yy = y[ok]
            # (y-1)! (M-l)! / ((y-l-1)! M!)
            ratio[ok] = np.exp(gammaln(yy) + gammaln(M - l + 1) - gammaln(yy - l) - gammaln(M + 1))
        total += p * float(first @ ratio)
    no_harvest = (1.0 - eta) ** M
    return phi0 * (total + no_harvest)


@dataclass(frozen=True)
class AoiInputs:
    update_prob: float
    frame_length: int
    sigma: float
    plr: float

    @property
    def xi(self) -> float:
        """Probability that the age is reset at a given frame end."""
        return self.sigma * (1.0 - self.plr)

    @classmethod
    def from_config(cls, config: SystemConfig, plr: float) -> "AoiInputs":
        return cls(config.update_prob, config.frame_length, config.sigma, plr)


def average_aoi(inputs: AoiInputs) -> float:
    """Time-average age of information; ``inf`` when updates never get through."""
    a, M, sigma, xi = inputs.update_prob, inputs.frame_length, inputs.sigma, inputs.xi
    if a <= 0.0 or sigma <= 0.0 or xi <= 0.0:
        return math.inf
    return 1.0 / a + M * (1.5 + 1.0 / xi - 1.0 / sigma)


def aoi_violation_prob(theta: float, inputs: AoiInputs) -> float:
    """Steady-state probability that the end-of-frame age plus one frame exceeds ``theta``."""
    a, M, sigma, xi = inputs.update_prob, inputs.frame_length, inputs.sigma, inputs.xi
    if theta <= 2 * M:
        return 1.0
    if sigma <= 0.0 or xi <= 0.0:
        return 1.0
    q, r = divmod(theta, M)
    tail = (1.0 - xi) ** (int(q) - 2)
    return tail * (1.0 - xi * (1.0 - (1.0 - a) ** (1 + r)) / sigma)


def throughput(load: float, plr: float) -> float:
    """Decoded packets per slot."""
    return load * (1.0 - plr)
