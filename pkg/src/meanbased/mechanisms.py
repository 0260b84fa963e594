"""Seller strategies (non-adaptive arm schedules) and schedule validators.

Fractional round boundaries are floored; the last segment of each arm absorbs
the remainder so every timeline tiles [1, T] exactly.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .core import Arm, ArmSchedule, Segment, ValueDistribution, myerson, null_arm, timeline
from .lp import solve_mbrev


def _flat(T: int, alloc: float, price: float) -> tuple[Segment, ...]:
    return (Segment(1, T, alloc, price),)


def myerson_posted(dist: ValueDistribution, T: int) -> ArmSchedule:
    """Post the monopoly reserve every round."""
    r, _ = myerson(dist)
    return ArmSchedule(T, (null_arm(T), Arm(r, _flat(T, 1.0, r))), name="myerson-posted")


def posted_price(price: float, T: int) -> ArmSchedule:
    return ArmSchedule(T, (null_arm(T), Arm(price, _flat(T, 1.0, price))), name=f"posted-{price:g}")


def example_arbitrary(T: int) -> ArmSchedule:
    """Free item for the first half of the game, price 1 for the second half."""
    if T % 6:
        raise ValueError("T must be divisible by 6")
    h = T // 2
    arm = Arm(1.0, timeline(T, [(1, h, 1.0, 0.0), (h + 1, T, 1.0, 1.0)]))
    return ArmSchedule(T, (null_arm(T), arm), name="example-arbitrary")


def example_critical(T: int) -> ArmSchedule:
    """Bid 1/2 always buys at 1/2; bid 1/4 buys at 1/4 once the first third is over."""
    if T % 3:
        raise ValueError("T must be divisible by 3")
    third = T // 3
    low = Arm(0.25, timeline(T, [(third + 1, T, 1.0, 0.25)]))
    high = Arm(0.5, _flat(T, 1.0, 0.5))
    return ArmSchedule(T, (null_arm(T), low, high), name="example-critical")


def welfare_extraction_params(eps: float, dist: Optional[ValueDistribution] = None,
                              prior_dependent: bool = False) -> tuple[float, float, int]:
    """(rho, delta, n) for the free-then-full-price construction."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if prior_dependent:
        if dist is None:
            raise ValueError("prior-dependent parameters need a distribution")
        rho = min(dist.values[-1], 1 - eps / 2)
        delta = (1 - rho) / (1 - dist.values[0])
    else:
        rho, delta = 1 - eps / 2, eps / 2
    n = math.ceil(math.log(eps / 2) / math.log(1 - delta))
    return rho, delta, n


def welfare_extraction(eps: float, T: int, dist: Optional[ValueDistribution] = None,
                       prior_dependent: bool = False) -> ArmSchedule:
    """Extract (1 - eps) of the welfare from a non-conservative mean-based buyer.

    Every arm has bid label 1 and three sessions: closed, free item, then
    full price.  Arm k of the construction starts its free session at
    (1 - (1 - delta)^(k-1)) T and its paid session at (1 - rho (1 - delta)^(k-1)) T.
    Arms are stored latest-opening first, which makes the schedule monotone
    in the stored index.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if dist is not None and dist.values[0] >= 1 - eps:
        sched = posted_price(1 - eps, T)
        return ArmSchedule(T, sched.arms, name="welfare-extraction-posted")
    rho, delta, n = welfare_extraction_params(eps, dist, prior_dependent)
    arms = []
    for k in range(1, n + 1):
        decay = (1 - delta) ** (k - 1)
        closed_end = math.floor((1 - decay) * T)
        free_end = math.floor((1 - decay * rho) * T)
        pieces = [(closed_end + 1, free_end, 1.0, 0.0), (free_end + 1, T, 1.0, 1.0)]
        arms.append(Arm(1.0, timeline(T, pieces)))
    arms.reverse()
    return ArmSchedule(T, (null_arm(T), *arms), name="welfare-extraction")


def mbrev_mechanism(dist: ValueDistribution, eps: float, T: int) -> ArmSchedule:
    """Pay-your-bid with a decreasing reserve, tuned by the revenue LP.

    Arm i (bid v_i) is closed for the first (1 - x_i) T rounds and then sells
    at v_i - eps.
    """
    v = np.asarray(dist.values)
    if dist.m > 1 and not eps < np.min(np.diff(v)):
        raise ValueError("eps must be below the smallest gap between values")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    sol = solve_mbrev(dist)
    arms = [null_arm(T)]
    for vi, xi in zip(v, sol.x):
        if vi == 0.0:
            continue  # duplicates the null arm
        closed = math.floor((1 - xi) * T + 1e-9)
        price = max(vi - eps, 0.0)
        arms.append(Arm(float(vi), timeline(T, [(closed + 1, T, 1.0, price)])))
    return ArmSchedule(T, tuple(arms), name="mbrev-mechanism")


def nonmonotone_full_welfare(dist: ValueDistribution, eps: float, gamma: float, T: int) -> ArmSchedule:
    """Non-monotone schedule reaching (1 - eps) of the welfare against conservative buyers.

    M = ceil(m / eps) blocks of T / M rounds.  Value v_i gets M - i + 1 arms
    labelled v_i; arm (i, j) sells at v_l during block l < i after a free
    stretch of 2 delta T, and is free then priced at v_i during block i + j.
    Blocks beyond M fall outside the horizon and are dropped.
    """
    v = np.asarray(dist.values)
    m = dist.m
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if v[0] <= 0:
        raise ValueError("the smallest value must be positive")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not gamma < min(eps / m**2, eps / (m * v[0])):
        raise ValueError("gamma too large for this construction")
    M = math.ceil(m / eps)
    delta = 2 * gamma / v[0]
    edges = [math.floor(l * T / M) for l in range(M + 1)]
    blocks = np.diff(edges)
    if blocks.min() < 1:
        raise ValueError("T too short for the block structure")
    if 2 * delta * T > blocks.min() or M * delta * T > blocks.min():
        raise ValueError("free stretches exceed a block: gamma too large for T")
    arms = [null_arm(T)]
    for i in range(1, m + 1):
        for j in range(1, M - i + 2):
            pieces = []
            for l in range(1, i):
                start = edges[l - 1]
                free_end = start + math.floor(2 * delta * T)
                pieces.append((start + 1, free_end, 1.0, 0.0))
                pieces.append((free_end + 1, edges[l], 1.0, float(v[l - 1])))
            blk = i + j
            if blk <= M:
                start = edges[blk - 1]
                free_end = start + math.floor(j * delta * T)
                pieces.append((start + 1, free_end, 1.0, 0.0))
                pieces.append((free_end + 1, edges[blk], 1.0, float(v[i - 1])))
            arms.append(Arm(float(v[i - 1]), timeline(T, pieces)))
    return ArmSchedule(T, tuple(arms), name="nonmonotone-full-welfare")


# -- validators ---------------------------------------------------------------


def is_monotone(s: ArmSchedule) -> bool:
    """Allocation and price are non-decreasing in the arm index at every round."""
    _, alloc, price = s.epochs
    tol = 1e-12
    return bool(np.all(np.diff(alloc, axis=1) >= -tol) and np.all(np.diff(price, axis=1) >= -tol))


def is_critical(s: ArmSchedule, dist: ValueDistribution) -> bool:
    """Every overbid is weakly dominated, round by round, by some non-overbid arm."""
    _, alloc, price = s.epochs
    bids = s.bids
    for v in dist.values:
        util = v * alloc - price  # (epochs, K)
        low = np.flatnonzero(bids <= v + 1e-12)
        for i in np.flatnonzero(bids > v + 1e-12):
            dominated = np.all(util[:, low] >= util[:, [i]] - 1e-12, axis=0)
            if not dominated.any():
                return False
    return True
