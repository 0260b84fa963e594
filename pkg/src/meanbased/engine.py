"""Round-by-round simulation of a seller schedule against a learning buyer.

Two modes:

* ``sampled``: each round a value is drawn from D, the buyer's instance for
  that value picks an arm, the item is allocated with probability a and the
  posted price is charged.
* ``expectation``: every value's instance plays every round, outcomes are
  weighted by q_i and each instance receives its expected update (q_i times
  the round's rewards).  This is the fluid limit of the sampled mode and,
  for the idealized learner, reproduces it exactly.

Full-information learners whose choice distribution is a function of their
cumulative rewards are simulated a block of rounds at a time (``path="block"``).
The per-round loop (``path="generic"``) handles everything and serves as the
reference implementation.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import _TRACE_FIELDS, ArmSchedule, SimulationResult, Trace, ValueDistribution, myerson, welfare
from .learners import (BANDIT, ContextualBuyer, CrossValueBuyer, LearnerSpec, context_streams,
                       leader_rows, make_buyer, sample_rows, softmax_rows)
from .lp import solve_mbrev

MODES = ("expectation", "sampled")
CHUNK = 4096
BLOCK_KINDS = ("MWU", "FTPL", "IdealizedMeanBased")


def engine_stream(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial, 0))))


def block_eligible(spec: LearnerSpec) -> bool:
    if spec.feedback == BANDIT:
        return False
    if spec.kind == "CrossValue":
        return spec.inner in ("MWU", "IdealizedMeanBased")
    return spec.kind in BLOCK_KINDS


class _Acc:
    """Running totals shared by both simulation paths."""

    def __init__(self, m, K, T, mode, n_bins, keep_trace):
        self.h = np.zeros(m)
        self.r = np.zeros(m)
        self.u = np.zeros(m)
        self.realized = np.zeros(m)
        self.cf = np.zeros((m, K))
        self.mode = mode
        self.keep_trace = keep_trace
        self.parts = []
        self.n_bins = n_bins
        if n_bins:
            self.bin_edges = np.unique(np.floor(np.linspace(0, T, n_bins + 1)).astype(np.int64))
            nb = len(self.bin_edges) - 1
            self.occ = np.zeros((nb, m, K))
            self.occ_n = np.zeros((nb, m))
            self.rev_at = np.zeros(nb)
        else:
            self.bin_edges = np.array([0, T])

    def bin_of(self, t):
        return int(np.searchsorted(self.bin_edges, t, side="left")) - 1

    def close_bin(self, b):
        if self.n_bins:
            self.rev_at[b] = self.r.sum()


def _trace_part(rounds, contexts, values, arms, allocs, pays, weights, probs):
    return Trace(np.asarray(rounds, dtype=np.int64), np.asarray(contexts, dtype=np.int64),
                 np.asarray(values, dtype=float), np.asarray(arms, dtype=np.int64),
                 np.asarray(allocs, dtype=float), np.asarray(pays, dtype=float),
                 np.asarray(values, dtype=float) * np.asarray(allocs, dtype=float) - np.asarray(pays, dtype=float),
                 np.asarray(weights, dtype=float), np.asarray(probs, dtype=float))


def _chunks(schedule: ArmSchedule, bin_edges: np.ndarray):
    """Yield (t0, t1, epoch) with constant terms over rounds t0..t1 inside one series bin."""
    T = schedule.horizon
    starts = schedule.epochs[0]
    cuts = np.union1d(starts, bin_edges[:-1] + 1)
    cuts = cuts[(cuts >= 1) & (cuts <= T)]
    bounds = np.append(cuts, T + 1)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        e = int(np.searchsorted(starts, lo, side="right")) - 1
        for t0 in range(int(lo), int(hi), CHUNK):
            yield t0, min(t0 + CHUNK, int(hi)) - 1, e


def run(schedule: ArmSchedule, dist: ValueDistribution, spec: LearnerSpec, T: Optional[int] = None,
        seed: int = 0, mode: str = "expectation", trial: int = 0, keep_trace: bool = False,
        series_bins: int = 0, path: str = "auto") -> SimulationResult:
    """Simulate one trial.  Deterministic in (inputs, seed, trial)."""
    if T is None:
        T = schedule.horizon
    if T != schedule.horizon:
        raise ValueError(f"horizon mismatch: schedule has {schedule.horizon} rounds, run asked for {T}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if dist.scale != 1.0:
        dist = dist.normalized()
    if path not in ("auto", "block", "generic"):
        raise ValueError("path must be auto, block or generic")
    if path == "block" and not block_eligible(spec):
        raise ValueError(f"{spec.kind} cannot use the block path")
    use_block = path == "block" or (path == "auto" and block_eligible(spec))

    m, K = dist.m, schedule.K
    buyer = make_buyer(spec, schedule, dist, context_streams(seed, trial, m))
    acc = _Acc(m, K, T, mode, min(series_bins, T), keep_trace)
    contexts = alloc_u = None
    if mode == "sampled":
        eng = engine_stream(seed, trial)
        cdf = np.cumsum(dist.probs)
        contexts = np.minimum(np.searchsorted(cdf, eng.random(T) * cdf[-1], side="right"), m - 1)
        alloc_u = eng.random(T)

    if use_block:
        _run_block(schedule, dist, buyer, acc, contexts, alloc_u)
    else:
        _run_generic(schedule, dist, buyer, acc, contexts, alloc_u)

    arm_sets = buyer.arm_map if isinstance(buyer, ContextualBuyer) else buyer.bid_arms
    reg = np.array([acc.cf[c, arm_sets[c]].max() - acc.realized[c] for c in range(m)])
    trace = None
    if keep_trace:
        trace = Trace.concat(acc.parts, K)
        order = np.lexsort((trace.contexts, trace.rounds))
        trace = Trace(*(getattr(trace, f)[order] for f in _TRACE_FIELDS))
    series = None
    if acc.n_bins:
        series = {"rounds": acc.bin_edges[1:].copy(), "revenue": acc.rev_at.copy(),
                  "occupancy": acc.occ / np.maximum(acc.occ_n, 1)[..., None], "bids": schedule.bids}
    return SimulationResult(T, mode, seed, trial, np.asarray(dist.values), acc.h, acc.r, acc.u, reg,
                            trace, series)


def _run_generic(schedule, dist, buyer, acc: _Acc, contexts, alloc_u):
    starts, alloc, price = schedule.epochs
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    m, K = len(v), schedule.K
    T = schedule.horizon
    e = 0
    b = 0
    rows = []
    for t in range(1, T + 1):
        while e + 1 < len(starts) and starts[e + 1] <= t:
            e += 1
        a, p = alloc[e], price[e]
        if acc.mode == "sampled":
            c = int(contexts[t - 1])
            R = v[c] * a - p
            arm, probs, info = buyer.choose(c)
            got = 1.0 if alloc_u[t - 1] < a[arm] else 0.0
            pay = p[arm]
            acc.h[c] += got
            acc.r[c] += pay
            acc.u[c] += v[c] * got - pay
            acc.realized[c] += R[arm]
            acc.cf[c] += R
            if acc.n_bins:
                acc.occ[b, c] += probs
                acc.occ_n[b, c] += 1
            if acc.keep_trace:
                rows.append((t, c, v[c], arm, got, pay, 1.0, probs))
            buyer.feedback([(c, R, info)])
        else:
            items = []
            for c in range(m):
                R = v[c] * a - p
                probs = buyer.distribution(c)
                info = None
                if buyer.bandit:
                    _, info = buyer.sample_from(c, probs)
                ea, ep = probs @ a, probs @ p
                acc.h[c] += q[c] * ea
                acc.r[c] += q[c] * ep
                acc.u[c] += q[c] * (v[c] * ea - ep)
                acc.realized[c] += probs @ R
                acc.cf[c] += R
                if acc.n_bins:
                    acc.occ[b, c] += probs
                    acc.occ_n[b, c] += 1
                if acc.keep_trace:
                    rows.append((t, c, v[c], int(np.argmax(probs)), ea, ep, q[c], probs))
                items.append((c, q[c] * R, info))
            buyer.feedback(items)
        if acc.n_bins and t == acc.bin_edges[b + 1]:
            acc.close_bin(b)
            b += 1
    if acc.keep_trace and rows:
        cols = list(zip(*rows))
        acc.parts.append(_trace_part(cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], cols[6],
                                     np.array(cols[7])))


def _state_probs(learner, S, rng, n_draw):
    """Choice distributions for a stack of sigma states (rows of S).

    FTPL consumes ``n_draw`` perturbation rows from ``rng``; the other kinds
    are pure functions of sigma.
    """
    kind = learner.kind
    if kind == "MWU":
        return softmax_rows(learner.eps * S)
    P = np.zeros_like(S)
    if kind == "IdealizedMeanBased":
        lead = leader_rows(S)
    elif kind == "FTPL":
        per = rng.standard_exponential((n_draw, learner.K)) / learner.eps
        lead = leader_rows(S[:n_draw] + per)
        P = P[:n_draw]
    else:
        raise ValueError(kind)
    P[np.arange(len(lead)), lead] = 1.0
    return P


def _run_block(schedule, dist, buyer, acc: _Acc, contexts, alloc_u):
    _, alloc, price = schedule.epochs
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    m, K = len(v), schedule.K
    sampled = acc.mode == "sampled"
    cross = isinstance(buyer, CrossValueBuyer)
    for t0, t1, e in _chunks(schedule, acc.bin_edges):
        L = t1 - t0 + 1
        a, p = alloc[e], price[e]
        b = acc.bin_of(t0)
        ctx = contexts[t0 - 1:t1] if sampled else None
        if cross:
            _cross_chunk(buyer, acc, v, q, a, p, t0, L, ctx, alloc_u)
        else:
            _cont_chunk(buyer, acc, v, q, a, p, t0, L, ctx, alloc_u, b)
        if acc.n_bins and t1 == acc.bin_edges[b + 1]:
            acc.close_bin(b)


def _record(acc, b, c, P_global, t_rows, v_c, arms, got, pay, weight):
    if acc.n_bins:
        acc.occ[b, c] += P_global.sum(axis=0)
        acc.occ_n[b, c] += len(P_global)
    if acc.keep_trace:
        n = len(t_rows)
        acc.parts.append(_trace_part(t_rows, np.full(n, c), np.full(n, v_c), arms, got, pay,
                                     np.full(n, weight), P_global))


def _cont_chunk(buyer: ContextualBuyer, acc, v, q, a, p, t0, L, ctx, alloc_u, b):
    K = len(a)
    sampled = ctx is not None
    for c in range(len(v)):
        Lc = buyer.learners[c]
        amap = buyer.arm_map[c]
        R = v[c] * a - p
        Rl = R[amap]
        if sampled:
            pos = np.flatnonzero(ctx == c)
            n = len(pos)
            step = Rl
        else:
            pos = np.arange(L)
            n = L
            step = q[c] * Rl
        if n == 0:
            continue
        S = np.cumsum(np.vstack([Lc.sigma[None, :], np.broadcast_to(step, (n, len(Rl)))]), axis=0)
        P = _state_probs(Lc, S[:n], Lc.rng, n)[:n]
        Pg = np.zeros((n, K))
        Pg[:, amap] = P
        t_rows = t0 + pos
        if sampled:
            if Lc.kind == "MWU":
                local = sample_rows(P, Lc.rng.random(n))
            else:
                local = np.argmax(P, axis=1)
            arms = amap[local]
            got = (alloc_u[t_rows - 1] < a[arms]).astype(float)
            pay = p[arms]
            acc.h[c] += got.sum()
            acc.r[c] += pay.sum()
            acc.u[c] += (v[c] * got - pay).sum()
            acc.realized[c] += R[arms].sum()
            acc.cf[c] += n * R
            _record(acc, b, c, Pg, t_rows, v[c], arms, got, pay, 1.0)
        else:
            col = P.sum(axis=0)
            ea, ep = col @ a[amap], col @ p[amap]
            acc.h[c] += q[c] * ea
            acc.r[c] += q[c] * ep
            acc.u[c] += q[c] * (v[c] * ea - ep)
            acc.realized[c] += col @ Rl
            acc.cf[c] += n * R
            if acc.keep_trace or acc.n_bins:
                _record(acc, b, c, Pg, t_rows, v[c], np.argmax(Pg, axis=1), Pg @ a, Pg @ p, q[c])
        Lc.sigma = S[n].copy()
        Lc.t += n


def _cross_chunk(buyer: CrossValueBuyer, acc, v, q, a, p, t0, L, ctx, alloc_u):
    m, K = len(v), len(a)
    sampled = ctx is not None
    b = acc.bin_of(t0)
    states_P = []  # per instance: probs for each distinct state in this chunk
    cnt = []  # per instance: state index in effect at each row
    pis = []  # per instance: resolved distribution at each row (L, K)
    upd = []  # rows at which each instance is updated
    for i in range(m):
        Li = buyer.learners[i]
        nb = len(buyer.bid_arms[i])
        R = v[i] * a - p
        rows_i = np.flatnonzero(ctx == i) if sampled else np.arange(L)
        n = len(rows_i)
        W = np.zeros((n, nb + i))
        W[:, :nb] = R[buyer.bid_arms[i]]
        for j in range(i):
            W[:, nb + j] = pis[j][rows_i] @ R
        if not sampled:
            W *= q[i]
        S = np.cumsum(np.vstack([Li.sigma[None, :], W]), axis=0)
        P = _state_probs(Li, S, None, 0)
        c_i = np.searchsorted(rows_i, np.arange(L), side="left")
        Prow = P[c_i]
        pi = np.zeros((L, K))
        pi[:, buyer.bid_arms[i]] = Prow[:, :nb]
        for j in range(i):
            pi += Prow[:, nb + j, None] * pis[j]
        states_P.append(P)
        cnt.append(c_i)
        pis.append(pi)
        upd.append(rows_i)
        Li.sigma = S[n].copy()
        Li.t += n
    for c in range(m):
        rows_c = upd[c]
        n = len(rows_c)
        if n == 0:
            continue
        R = v[c] * a - p
        pi_c = pis[c][rows_c]
        t_rows = t0 + rows_c
        if sampled:
            u = buyer.learners[c].rng.random((n, m))
            inst = np.full(n, c)
            local = sample_rows(states_P[c][cnt[c][rows_c]], u[:, 0])
            arms = np.full(n, -1)
            level = 1
            while True:
                nbs = np.array([len(buyer.bid_arms[k]) for k in range(m)])[inst]
                done = (local < nbs) & (arms < 0)
                for k in np.unique(inst[done]):
                    sel = done & (inst == k)
                    arms[sel] = buyer.bid_arms[k][local[sel]]
                pending = arms < 0
                if not pending.any():
                    break
                nxt = local - nbs
                for j in np.unique(nxt[pending]):
                    sel = pending & (nxt == j)
                    local[sel] = sample_rows(states_P[j][cnt[j][rows_c[sel]]], u[sel, level])
                    inst[sel] = j
                level += 1
            got = (alloc_u[t_rows - 1] < a[arms]).astype(float)
            pay = p[arms]
            acc.h[c] += got.sum()
            acc.r[c] += pay.sum()
            acc.u[c] += (v[c] * got - pay).sum()
            acc.realized[c] += R[arms].sum()
            acc.cf[c] += n * R
            _record(acc, b, c, pi_c, t_rows, v[c], arms, got, pay, 1.0)
        else:
            col = pi_c.sum(axis=0)
            ea, ep = col @ a, col @ p
            acc.h[c] += q[c] * ea
            acc.r[c] += q[c] * ep
            acc.u[c] += q[c] * (v[c] * ea - ep)
            acc.realized[c] += col @ R
            acc.cf[c] += n * R
            if acc.keep_trace or acc.n_bins:
                _record(acc, b, c, pi_c, t_rows, v[c], np.argmax(pi_c, axis=1), pi_c @ a, pi_c @ p, q[c])


# -- many trials --------------------------------------------------------------


def _run_one(args):
    schedule, dist, spec, seed, mode, trial, keep_trace, series_bins = args
    return run(schedule, dist, spec, seed=seed, mode=mode, trial=trial, keep_trace=keep_trace,
               series_bins=series_bins)


def default_workers() -> int:
    env = os.environ.get("MEANBASED_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_trials(schedule, dist, spec, trials: int, seed: int = 0, mode: str = "sampled",
               workers: Optional[int] = None, keep_trace: bool = False, series_bins: int = 0,
               ) -> list[SimulationResult]:
    """Independent trials with disjoint streams, collected in trial order."""
    jobs = [(schedule, dist, spec, seed, mode, k, keep_trace, series_bins) for k in range(trials)]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or trials <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, trials)) as pool:
        return list(pool.map(_run_one, jobs))


# -- verification -------------------------------------------------------------


@dataclass
class MeanBasedReport:
    gamma: float
    T: int
    flagged: int = 0  # (context, round, arm) triples trailing the leader by more than gamma T
    violations: int = 0  # flagged triples whose selection probability exceeds gamma
    pulls: int = 0  # flagged triples where the arm was actually pulled (when known)
    prob_mass: float = 0.0  # summed selection probability over flagged triples
    max_prob: float = 0.0
    locations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    @property
    def pull_frequency(self) -> float:
        return self.pulls / self.flagged if self.flagged else 0.0

    @property
    def mean_prob(self) -> float:
        return self.prob_mass / self.flagged if self.flagged else 0.0

    def merge(self, other: "MeanBasedReport") -> "MeanBasedReport":
        return MeanBasedReport(self.gamma, self.T, self.flagged + other.flagged,
                               self.violations + other.violations, self.pulls + other.pulls,
                               self.prob_mass + other.prob_mass, max(self.max_prob, other.max_prob),
                               self.locations + other.locations)


def verify_mean_based_rewards(sigma: np.ndarray, probs: np.ndarray, gamma: float, T: int,
                              arms: Optional[np.ndarray] = None, rounds: Optional[np.ndarray] = None,
                              context: int = 0, max_locations: int = 50) -> MeanBasedReport:
    """Check the mean-based condition given cumulative rewards through each round.

    ``sigma[k]`` is the cumulative reward vector through the round whose
    selection probabilities are ``probs[k]``.
    """
    sigma = np.asarray(sigma, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != sigma.shape:
        raise ValueError("sigma and probs must have the same shape")
    trailing = sigma < sigma.max(axis=1, keepdims=True) - gamma * T
    viol = trailing & (probs > gamma)
    rep = MeanBasedReport(gamma, T)
    rep.flagged = int(trailing.sum())
    rep.violations = int(viol.sum())
    rep.prob_mass = float(probs[trailing].sum())
    rep.max_prob = float(probs[trailing].max()) if rep.flagged else 0.0
    if arms is not None:
        arms = np.asarray(arms)
        rep.pulls = int(trailing[np.arange(len(arms)), arms].sum())
    rounds = np.arange(1, len(sigma) + 1) if rounds is None else np.asarray(rounds)
    for k, i in zip(*np.nonzero(viol)):
        if len(rep.locations) >= max_locations:
            break
        rep.locations.append((context, int(rounds[k]), int(i)))
    return rep


def contextual_gamma(gamma: float, dist: ValueDistribution, K: int, T: int) -> float:
    """Mean-based constant of cont(M) under sampled contexts when M is gamma-mean-based.

    Each instance only sees its own context's rounds, so its cumulative
    rewards are a noisy q_c-scaled copy of the full-horizon ones; the
    Chernoff slack is 2 sqrt(log(mKT) / T), inflated by 1 / min q.
    """
    return (gamma + 2 * math.sqrt(math.log(dist.m * K * T) / T)) / min(dist.probs)


def verify_mean_based(trace: Trace, schedule: ArmSchedule, dist: ValueDistribution, gamma: float,
                      conservative: bool = False) -> MeanBasedReport:
    """Scan a trace for selections violating the gamma-mean-based condition.

    Cumulative rewards are rebuilt from the schedule over all rounds, per
    context, and include the round being checked.  With ``conservative``
    only each value's allowed arms compete for the lead.
    """
    if trace is None or trace.probs is None or len(trace.probs) != len(trace):
        raise ValueError("trace lacks probability records")
    if dist.scale != 1.0:
        dist = dist.normalized()
    rep = MeanBasedReport(gamma, schedule.horizon)
    sampled = np.all(trace.weights == 1.0) and len(trace) == schedule.horizon
    for c, vc in enumerate(dist.values):
        sub = trace.for_context(c)
        if len(sub) == 0:
            continue
        arms_ok = schedule.allowed(vc) if conservative else np.arange(schedule.K)
        sig = schedule.cumulative_rewards(vc, sub.rounds)[:, arms_ok]
        P = sub.probs[:, arms_ok]
        pulled = None
        if sampled:
            lookup = -np.ones(schedule.K, dtype=np.int64)
            lookup[arms_ok] = np.arange(len(arms_ok))
            pulled = lookup[sub.arms]
            if np.any(pulled < 0):
                pulled = None
        part = verify_mean_based_rewards(sig, P, gamma, schedule.horizon, pulled, sub.rounds, c)
        if not sampled:
            part.pulls = 0
        rep = rep.merge(part)
    return rep


@dataclass
class CapCheck:
    passed: bool
    margin: float  # bound * T + slack - revenue; negative means the cap was exceeded
    bound: float
    revenue: float


def benchmark(dist: ValueDistribution, bound: str) -> float:
    if bound == "myerson":
        return myerson(dist)[1]
    if bound == "mbrev":
        return solve_mbrev(dist).objective
    if bound == "welfare":
        return welfare(dist)
    raise ValueError("bound must be myerson, mbrev or welfare")


def revenue_cap_check(result: SimulationResult, dist: ValueDistribution, bound: str,
                      slack: float = 0.0) -> CapCheck:
    """Compare total revenue with bound(D) * T + slack."""
    if dist.scale != 1.0:
        dist = dist.normalized()
    per_round = benchmark(dist, bound)
    margin = per_round * result.T + slack - result.revenue
    return CapCheck(margin >= 0, float(margin), per_round, result.revenue)
