"""Initial-battery Markov chain of the AVOID scheme.

Under AVOID a device never intends more replicas than it has energy at the
start of the frame, so the energy spent in a frame equals the drawn degree
and the initial battery level evolves as a finite Markov chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln, xlog1py, xlogy

from .model import DegreeDistribution, SystemConfig, activation_prob, validate_avoid_mask

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-10


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """Bin(n, p) probabilities of 0..n, computed in log space (exact at p = 0 and 1)."""
    k = np.arange(n + 1)
    logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.exp(logc + xlogy(k, p) + xlog1py(n - k, -p))


class ChainError(ValueError):
    """The transition matrix has no unique stationary distribution."""


@dataclass(frozen=True)
class BatteryChain:
    transition: np.ndarray
    steady_state: np.ndarray


def spend_distribution(dist: DegreeDistribution, sigma: float, capacity: int) -> np.ndarray:
    """Probability ``xi[b, l]`` of spending ``l`` energy units from initial level ``b``.

    Inactive devices and devices drawing degree 0 spend nothing.
    """
    if not validate_avoid_mask(dist, capacity):
        raise ValueError("spend distribution requires a degree table satisfying the AVOID mask")
    table = dist.expanded(capacity + 1)
    xi = sigma * table
    xi[:, 0] += 1.0 - sigma
    return xi


def transition_matrix(config: SystemConfig, spend: np.ndarray) -> np.ndarray:
    """Frame-to-frame transition matrix of the initial battery level.

    Entry ``[b1, b2]`` for ``b2 < E`` sums ``xi[b1, l] * Bino(b2 - b1 + l; M, eta)``
    over the spent energy ``l``; the ``b2 = E`` column takes the rest of the row.
    """
    if config.unlimited:
        raise ValueError("the battery chain needs a finite battery capacity")
    E, M, eta = config.battery_capacity, config.frame_length, config.harvest_prob
    if config.max_degree >= M:
        raise ValueError("max_degree must be smaller than the frame length")
    spend = np.asarray(spend, dtype=np.float64)
    if spend.shape[0] != E + 1:
        raise ValueError(f"spend distribution has {spend.shape[0]} rows, expected {E + 1}")
    harvest = binomial_pmf(M, eta)

    def bino(k):
        return harvest[k] if 0 <= k <= M else 0.0

    P = np.zeros((E + 1, E + 1))
    for b1 in range(E + 1):
        for b2 in range(E):
            P[b1, b2] = sum(spend[b1, l] * bino(b2 - b1 + l) for l in range(spend.shape[1]))
        P[b1, E] = 1.0 - P[b1, :E].sum()
    return P


def _check_unique_stationary(P: np.ndarray) -> None:
    # unique stationary law <=> exactly one closed communicating class
    n_comp, labels = connected_components(P > 0.0, directed=True, connection="strong")
    closed = 0
    for c in range(n_comp):
        members = labels == c
        if not np.any(P[np.ix_(members, ~members)] > 0.0):
            closed += 1
    if closed != 1:
        raise ChainError(f"chain has {closed} closed classes; stationary distribution is not unique")


def steady_state(P: np.ndarray) -> np.ndarray:
    """Stationary distribution by a dense solve of the balance equations."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    if P.shape != (n, n) or np.any(P < 0.0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise ChainError("transition matrix must be square and row-stochastic")
    _check_unique_stationary(P)
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    phi = np.linalg.solve(A, rhs)
    phi = np.clip(phi, 0.0, None)
    phi /= phi.sum()
    if np.abs(phi @ P - phi).sum() >= STATIONARY_TOL:
        raise ChainError("balance-equation solve did not reach the residual tolerance")
    return phi


def steady_state_power(P: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution by power iteration from the uniform vector."""
    P = np.asarray(P, dtype=np.float64)
    phi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        nxt = phi @ P
        if np.abs(nxt - phi).sum() < tol:
            return nxt / nxt.sum()
        phi = nxt
    raise ChainError(f"power iteration did not converge in {max_iter} steps")


def battery_chain(config: SystemConfig, dist: DegreeDistribution) -> BatteryChain:
    spend = spend_distribution(dist, activation_prob(config), config.battery_capacity)
    P = transition_matrix(config, spend)
    return BatteryChain(P, steady_state(P))


def average_degree_distribution(phi, dist: DegreeDistribution) -> np.ndarray:
    """Degree distribution averaged over the initial battery level."""
    phi = np.asarray(phi, dtype=np.float64)
    table = dist.expanded(len(phi))
    return phi @ table


def slot_level_transition_matrix(config: SystemConfig, dist: DegreeDistribution) -> np.ndarray:
    """Exact AVOID transition matrix when harvesting pauses at full battery.

    The frame-level chain above credits every harvested unit up to the
    capacity at the end of the frame. A slot-by-slot battery loses units that
    arrive while it is full and the reserved replicas have not been sent
    yet; this matrix accounts for that by propagating the battery level
    through the frame for every possible transmission pattern.
    """
    E, M, eta = config.battery_capacity, config.frame_length, config.harvest_prob
    sigma = activation_prob(config)
    table = dist.expanded(E + 1)
    if not validate_avoid_mask(dist, E):
        raise ValueError("slot-level chain is only defined for AVOID degree tables")
    P = np.zeros((E + 1, E + 1))
    for b1 in range(E + 1):
        P[b1] += (1.0 - sigma) * _propagate(b1, 0, E, M, eta)
        for l in np.flatnonzero(table[b1] > 0.0):
            P[b1] += sigma * table[b1, l] * _propagate(b1, int(l), E, M, eta)
    return P


def _propagate(b1, l, E, M, eta):
    # state: (battery, replicas still to send); slot choice is uniform so the
    # next slot is intended with probability remaining / slots_left
    dist = np.zeros((E + 1, l + 1))
    dist[b1, l] = 1.0
    for s in range(M):
        left = M - s
        harvested = np.zeros_like(dist)
        harvested[:E] += (1.0 - eta) * dist[:E]
        harvested[1:] += eta * dist[:E]
        harvested[E] += dist[E]
        nxt = np.zeros_like(dist)
        for r in range(l + 1):
            p_tx = r / left
            nxt[:, r] += (1.0 - p_tx) * harvested[:, r]
            if r > 0:
                nxt[:-1, r - 1] += p_tx * harvested[1:, r]
                nxt[0, r - 1] += p_tx * harvested[0, r]
        dist = nxt
    return dist[:, 0]
