"""Shared domain types: value distributions, arm schedules and simulation results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np

PROB_TOL = 1e-12


@dataclass(frozen=True)
class ValueDistribution:
    """Finite-support buyer value distribution.

    ``scale`` is the upper end of the value range.  Distributions used by the
    simulator live on [0, 1] (scale 1); the equal-revenue curve is reported on
    [1, H] with ``scale = H`` and can be brought back with :meth:`normalized`.
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]
    scale: float = 1.0

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(q) for q in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if len(values) < 1:
            raise ValueError("distribution needs at least one support point")
        if len(values) != len(probs):
            raise ValueError("values and probs differ in length")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        for a, b in zip(values, values[1:]):
            if not b > a:
                raise ValueError("values must be strictly increasing")
        if values[0] < 0 or values[-1] > self.scale * (1 + PROB_TOL):
            raise ValueError(f"values must lie in [0, {self.scale:g}]")
        if any(not q > 0 for q in probs):
            raise ValueError("every probability must be positive")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ValueError("probabilities must sum to 1")

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def normalization(self) -> float:
        """Factor that maps values onto [0, 1]."""
        return 1.0 / self.scale

    def normalized(self) -> "ValueDistribution":
        if self.scale == 1.0:
            return self
        f = self.normalization
        return ValueDistribution(tuple(v * f for v in self.values), self.probs, 1.0)

    def tail(self, t: float) -> float:
        """Pr[v >= t]."""
        return math.fsum(q for v, q in zip(self.values, self.probs) if v >= t)

    def index(self, value: float) -> int:
        for i, v in enumerate(self.values):
            if abs(v - value) <= 1e-12 * max(1.0, abs(v)):
                return i
        raise KeyError(value)

    @classmethod
    def point(cls, v: float) -> "ValueDistribution":
        return cls((v,), (1.0,))

    def to_dict(self) -> dict:
        d = {"values": list(self.values), "probs": list(self.probs)}
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d


def sec3_example() -> ValueDistribution:
    """The running three-point example: 1/4 w.p. 1/2, 1/2 w.p. 1/4, 1 w.p. 1/4."""
    return ValueDistribution((0.25, 0.5, 1.0), (0.5, 0.25, 0.25))


def welfare(dist: ValueDistribution) -> float:
    return math.fsum(v * q for v, q in zip(dist.values, dist.probs))


def myerson(dist: ValueDistribution) -> tuple[float, float]:
    """Monopoly reserve and revenue; the smallest optimal reserve wins ties."""
    best_r, best_rev = dist.values[0], -1.0
    tails = np.cumsum(np.asarray(dist.probs)[::-1])[::-1]
    for v, tail in zip(dist.values, tails):
        rev = v * float(tail)
        if rev > best_rev + 1e-12 * max(1.0, abs(rev)):
            best_r, best_rev = v, rev
    return best_r, best_rev


def equal_revenue_truncated(H: float, m: int) -> ValueDistribution:
    """Equal-revenue curve on [1, H], discretized on a geometric grid.

    Grid points are ``H**((k-1)/(m-1))`` and the tail Pr[v >= v_k] is exactly
    1/v_k at each of them, so every grid price earns revenue 1.
    """
    if not H > 1 + 1e-6:
        raise ValueError("H must exceed 1")
    if m < 2:
        raise ValueError("need at least two grid points")
    values = [H ** (k / (m - 1)) for k in range(m)]
    values[-1] = float(H)
    probs = [1.0 / values[k] - 1.0 / values[k + 1] for k in range(m - 1)]
    probs.append(1.0 / H)
    # absorb rounding so the masses sum to one
    probs[0] = 1.0 - math.fsum(probs[1:])
    return ValueDistribution(tuple(values), tuple(probs), scale=float(H))


def stochastically_dominates(d: ValueDistribution, d2: ValueDistribution) -> bool:
    points = sorted(set(d.values) | set(d2.values))
    return all(d.tail(t) >= d2.tail(t) - 1e-12 for t in points)


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    alloc: float
    price: float

    def __len__(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class Arm:
    bid: float
    segments: tuple[Segment, ...]


def null_arm(T: int) -> Arm:
    return Arm(0.0, (Segment(1, T, 0.0, 0.0),))


def timeline(T: int, active: Sequence[tuple[int, int, float, float]]) -> tuple[Segment, ...]:
    """Build a covering timeline from (start, end, alloc, price) pieces.

    Pieces are clipped to [1, T]; gaps become closed segments (0, 0) and empty
    pieces are dropped.  Pieces must not overlap.
    """
    pieces = []
    for s, e, a, p in active:
        s, e = max(int(s), 1), min(int(e), T)
        if e >= s:
            pieces.append((s, e, float(a), float(p)))
    pieces.sort()
    out = []
    cursor = 1
    for s, e, a, p in pieces:
        if s < cursor:
            raise ValueError("timeline pieces overlap")
        if s > cursor:
            out.append(Segment(cursor, s - 1, 0.0, 0.0))
        out.append(Segment(s, e, a, p))
        cursor = e + 1
    if cursor <= T:
        out.append(Segment(cursor, T, 0.0, 0.0))
    # merge neighbours with identical terms
    merged = [out[0]]
    for seg in out[1:]:
        last = merged[-1]
        if seg.alloc == last.alloc and seg.price == last.price:
            merged[-1] = Segment(last.start, seg.end, last.alloc, last.price)
        else:
            merged.append(seg)
    return tuple(merged)


@dataclass(frozen=True)
class ArmSchedule:
    """A non-adaptive seller strategy: arms with piecewise-constant terms.

    Arm 0 is the null arm.  Rounds are numbered 1..T and segments are
    inclusive on both ends.
    """

    horizon: int
    arms: tuple[Arm, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        T = self.horizon
        if T < 1:
            raise ValueError("horizon must be positive")
        if not self.arms:
            raise ValueError("schedule needs the null arm")
        bids = [a.bid for a in self.arms]
        if bids[0] != 0.0:
            raise ValueError("arm 0 must carry bid label 0")
        if any(b2 < b1 for b1, b2 in zip(bids, bids[1:])):
            raise ValueError("bid labels must be non-decreasing")
        for k, arm in enumerate(self.arms):
            cursor = 1
            for seg in arm.segments:
                if seg.start != cursor or seg.end < seg.start:
                    raise ValueError(f"arm {k}: segments must tile [1, T] contiguously")
                if not 0.0 <= seg.alloc <= 1.0:
                    raise ValueError(f"arm {k}: allocation outside [0, 1]")
                if seg.price < 0 or seg.price > seg.alloc * arm.bid + 1e-12:
                    raise ValueError(f"arm {k}: price outside [0, alloc*bid]")
                cursor = seg.end + 1
            if cursor != T + 1:
                raise ValueError(f"arm {k}: segments do not cover [1, T]")
        if any(s.alloc != 0 or s.price != 0 for s in self.arms[0].segments):
            raise ValueError("arm 0 must never allocate or charge")

    @property
    def K(self) -> int:
        return len(self.arms)

    @property
    def bids(self) -> np.ndarray:
        return np.array([a.bid for a in self.arms])

    @cached_property
    def epochs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(starts, alloc, price): terms are constant on rounds starts[e]..starts[e+1]-1."""
        cuts = sorted({seg.start for arm in self.arms for seg in arm.segments})
        starts = np.array(cuts, dtype=np.int64)
        alloc = np.zeros((len(cuts), self.K))
        price = np.zeros((len(cuts), self.K))
        for k, arm in enumerate(self.arms):
            for seg in arm.segments:
                lo = np.searchsorted(starts, seg.start)
                hi = np.searchsorted(starts, seg.end, side="right")
                alloc[lo:hi, k] = seg.alloc
                price[lo:hi, k] = seg.price
        return starts, alloc, price

    @property
    def epoch_ends(self) -> np.ndarray:
        starts = self.epochs[0]
        return np.append(starts[1:] - 1, self.horizon)

    def terms_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        starts, alloc, price = self.epochs
        e = int(np.searchsorted(starts, t, side="right")) - 1
        return alloc[e], price[e]

    def rewards_at(self, t: int, value: float) -> np.ndarray:
        a, p = self.terms_at(t)
        return value * a - p

    def cumulative_rewards(self, value: float, rounds) -> np.ndarray:
        """Sum over s <= t of r_{k,s}(value) for each t in ``rounds``; shape (len, K)."""
        starts, alloc, price = self.epochs
        rounds = np.asarray(rounds, dtype=np.int64)
        rates = value * alloc - price
        lengths = self.epoch_ends - starts + 1
        before = np.vstack([np.zeros(self.K), np.cumsum(rates * lengths[:, None], axis=0)])
        e = np.searchsorted(starts, rounds, side="right") - 1
        out = before[np.maximum(e, 0)] + (rounds - starts[np.maximum(e, 0)] + 1)[:, None] * rates[np.maximum(e, 0)]
        out[rounds < 1] = 0.0
        return out

    def allowed(self, value: float) -> np.ndarray:
        """Arms a conservative buyer with this value may play."""
        return np.flatnonzero(self.bids <= value + 1e-12)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "horizon": self.horizon,
            "arms": [
                {
                    "bid": arm.bid,
                    "segments": [
                        {"start": s.start, "end": s.end, "alloc": s.alloc, "price": s.price}
                        for s in arm.segments
                    ],
                }
                for arm in self.arms
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmSchedule":
        arms = tuple(
            Arm(float(a["bid"]), tuple(Segment(int(s["start"]), int(s["end"]), float(s["alloc"]),
                                               float(s["price"])) for s in a["segments"]))
            for a in d["arms"]
        )
        return cls(int(d["horizon"]), arms, d.get("name", ""))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    value: float
    arm: int
    allocation: float
    payment: float
    reward: float
    weight: float = 1.0
    probs: Optional[np.ndarray] = None


@dataclass
class Trace:
    """Columnar per-round log.

    One row per round in sampled mode and one row per (round, context) in
    expectation mode, where ``weight`` carries the context probability,
    ``allocation`` and ``payment`` are expectations over the learner's
    distribution, and ``arm`` is its most likely arm.
    """

    rounds: np.ndarray
    contexts: np.ndarray
    values: np.ndarray
    arms: np.ndarray
    allocations: np.ndarray
    payments: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return len(self.rounds)

    def records(self) -> Iterator[RoundRecord]:
        for i in range(len(self)):
            yield RoundRecord(int(self.rounds[i]), float(self.values[i]), int(self.arms[i]),
                              float(self.allocations[i]), float(self.payments[i]),
                              float(self.rewards[i]), float(self.weights[i]), self.probs[i])

    def for_context(self, c: int) -> "Trace":
        sel = self.contexts == c
        return Trace(*(getattr(self, f)[sel] for f in _TRACE_FIELDS))

    def last_round_on(self, c: int, arm: int, min_prob: float = 0.5) -> int:
        """Last round where context ``c`` put at least ``min_prob`` on ``arm`` (0 if never)."""
        sub = self.for_context(c)
        hit = np.flatnonzero(sub.probs[:, arm] >= min_prob)
        return int(sub.rounds[hit[-1]]) if len(hit) else 0

    @staticmethod
    def concat(parts: Sequence["Trace"], K: int) -> "Trace":
        if not parts:
            e = np.zeros(0)
            return Trace(e.astype(np.int64), e.astype(np.int64), e, e.astype(np.int64), e, e, e, e,
                         np.zeros((0, K)))
        cols = [np.concatenate([getattr(p, f) for p in parts]) for f in _TRACE_FIELDS]
        return Trace(*cols)


_TRACE_FIELDS = ("rounds", "contexts", "values", "arms", "allocations", "payments", "rewards",
                 "weights", "probs")


@dataclass
class SimulationResult:
    """Aggregates of one run.

    ``h``, ``r`` and ``u`` are indexed by support point: rounds the item was
    received, total paid, and total utility while holding that value.
    """

    T: int
    mode: str
    seed: int
    trial: int
    values: np.ndarray
    h: np.ndarray
    r: np.ndarray
    u: np.ndarray
    regret: np.ndarray
    trace: Optional[Trace] = None
    series: Optional[dict] = field(default=None, repr=False)

    @property
    def revenue(self) -> float:
        return float(math.fsum(self.r))

    @property
    def welfare(self) -> float:
        return float(math.fsum(self.values * self.h))

    @property
    def buyer_utility(self) -> float:
        return float(math.fsum(self.u))

    @property
    def revenue_per_round(self) -> float:
        return self.revenue / self.T
