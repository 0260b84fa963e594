"""Buyer-side learners: MWU, FTPL, EXP3, an idealized mean-based learner and the
cross-value learner, plus their contextualized wrappers and regret accounting.

A :class:`Learner` is one instance over a fixed number of local arms.  Buyers
(:class:`ContextualBuyer`, :class:`CrossValueBuyer`) own one instance per
context and translate local arms to schedule arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ArmSchedule, ValueDistribution

KINDS = ("MWU", "FTPL", "EXP3", "IdealizedMeanBased", "CrossValue")
FULL_INFO = "full"
BANDIT = "bandit"
TIE_TOL = 1e-9


@dataclass
class LearnerSpec:
    """Which algorithm the buyer runs and how.

    ``eps`` / ``gamma`` left as None are filled per instance from
    :func:`default_params` using that instance's arm count.
    """

    kind: str = "MWU"
    feedback: str = FULL_INFO
    eps: Optional[float] = None
    gamma: Optional[float] = None
    conservative: bool = False
    inner: Optional[str] = None  # CrossValue only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.feedback not in (FULL_INFO, BANDIT):
            raise ValueError("feedback must be 'full' or 'bandit'")
        if self.kind == "EXP3" and self.feedback != BANDIT:
            raise ValueError("EXP3 is a bandit algorithm")
        if self.kind in ("MWU", "FTPL", "IdealizedMeanBased") and self.feedback != FULL_INFO:
            raise ValueError(f"{self.kind} needs full-information feedback")
        if self.kind == "CrossValue":
            if self.inner is None:
                self.inner = "EXP3" if self.feedback == BANDIT else "MWU"
            if self.inner not in ("MWU", "EXP3", "IdealizedMeanBased"):
                raise ValueError("CrossValue inner learner must be MWU, EXP3 or IdealizedMeanBased")
            if self.inner == "EXP3" and self.feedback != BANDIT:
                raise ValueError("EXP3 inner learner needs bandit feedback")
            if self.inner != "EXP3" and self.feedback == BANDIT:
                raise ValueError("bandit CrossValue needs an EXP3 inner learner")
        elif self.inner is not None:
            raise ValueError("inner is only meaningful for CrossValue")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def base_kind(self) -> str:
        return self.inner if self.kind == "CrossValue" else self.kind

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "feedback": self.feedback, "conservative": self.conservative}
        for k in ("eps", "gamma", "inner"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


def default_params(kind: str, K: int, T: int) -> tuple[float, float]:
    """(eps, gamma) from the standard mean-based analyses of each algorithm.

    EXP3's gamma exceeds 1 at moderate T; it is returned as is (the mean-based
    property is then vacuous) rather than rejected.
    """
    if K < 2:
        raise ValueError("need at least two arms")
    if T < 16:
        raise ValueError("horizon too short for the default parameters")
    if kind in ("MWU", "IdealizedMeanBased"):
        eps = math.sqrt(math.log(K) / T)
        gamma = 2.0 / (T * eps) * math.log(T * eps)
        if kind == "IdealizedMeanBased":
            gamma = 0.0
    elif kind == "FTPL":
        eps = math.sqrt(math.log(K) / T)
        gamma = math.sqrt(1.0 / T) * math.log(T)
    elif kind == "EXP3":
        eps = T ** -0.25
        if K * eps > 1:
            # the exploration floor would not leave a probability vector
            eps = 1.0 / (2 * K)
        gamma = 2 * (2 * math.sqrt(2) + 1) * T ** -0.25 * math.log(T)
    else:
        raise ValueError(f"no default parameters for {kind!r}")
    if kind != "IdealizedMeanBased" and not gamma > 0:
        raise ValueError(f"T={T} too small for a positive gamma")
    return eps, gamma


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def leader_rows(sigma: np.ndarray) -> np.ndarray:
    """Index of the largest sigma per row; near-ties go to the highest index."""
    sigma = np.atleast_2d(sigma)
    top = sigma.max(axis=1, keepdims=True)
    tol = TIE_TOL * np.maximum(1.0, np.abs(top))
    near = sigma >= top - tol
    K = sigma.shape[1]
    return K - 1 - np.argmax(near[:, ::-1], axis=1)


def sample_index(p: np.ndarray, u: float) -> int:
    c = np.cumsum(p)
    k = int(np.searchsorted(c, u * c[-1], side="right"))
    return min(k, len(p) - 1)


def sample_rows(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; matches :func:`sample_index` row by row."""
    C = np.cumsum(P, axis=1)
    idx = (C <= (u * C[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, P.shape[1] - 1)


class Learner:
    """One learning instance.  ``sigma`` holds cumulative (estimated) rewards."""

    kind = ""
    bandit = False
    deterministic = False  # probs() is a pure function of the state

    def __init__(self, n_arms: int, eps: float, gamma: float, rng: Optional[np.random.Generator] = None):
        if n_arms < 1:
            raise ValueError("learner needs at least one arm")
        self.K = n_arms
        self.eps = float(eps)
        self.gamma = float(gamma)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.sigma = np.zeros(n_arms)
        self.t = 0

    def probs(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        raise NotImplementedError

    def choose(self, rng: Optional[np.random.Generator] = None) -> tuple[int, np.ndarray]:
        rng = rng or self.rng
        p = self.probs(rng)
        return sample_index(p, rng.random()), p

    def update(self, rewards=None, arm: Optional[int] = None, reward: Optional[float] = None,
               prob: Optional[float] = None) -> None:
        if self.bandit:
            if arm is None or reward is None:
                raise ValueError(f"{self.kind} expects (arm, reward) feedback")
            self._update_bandit(arm, reward, prob)
        else:
            if rewards is None:
                raise ValueError(f"{self.kind} expects a full reward vector")
            rewards = np.asarray(rewards, dtype=float)
            if rewards.shape != (self.K,):
                raise ValueError("reward vector has the wrong length")
            self.sigma += rewards
        self.t += 1

    def _update_bandit(self, arm, reward, prob):
        raise NotImplementedError

    def state(self) -> dict:
        return {"kind": self.kind, "t": self.t, "sigma": self.sigma.copy(),
                "rng": self.rng.bit_generator.state}

    def __repr__(self):
        return f"{type(self).__name__}(K={self.K}, eps={self.eps:.4g}, gamma={self.gamma:.4g}, t={self.t})"


class MWU(Learner):
    """Multiplicative weights; log-weights are eps * sigma."""

    kind = "MWU"
    deterministic = True

    @property
    def log_weights(self) -> np.ndarray:
        return self.eps * self.sigma

    def probs(self, rng=None) -> np.ndarray:
        return softmax_rows(self.log_weights)


class FTPL(Learner):
    """Follow the perturbed leader with exponential(eps) perturbations.

    ``probs`` draws a perturbation and returns the indicator of the resulting
    leader, so each call consumes K exponential variates.
    """

    kind = "FTPL"

    def probs(self, rng=None) -> np.ndarray:
        rng = rng or self.rng
        per = rng.standard_exponential(self.K) / self.eps
        p = np.zeros(self.K)
        p[int(leader_rows(self.sigma + per)[0])] = 1.0
        return p

    def choose(self, rng=None):
        p = self.probs(rng)
        return int(np.argmax(p)), p


class IdealizedMeanBased(Learner):
    """Always plays the leader of cumulative reward (the gamma -> 0 limit).

    Near-ties are broken toward the highest arm index, i.e. toward the larger
    bid, so a buyer indifferent between buying at zero surplus and abstaining
    buys.
    """

    kind = "IdealizedMeanBased"
    deterministic = True

    def probs(self, rng=None) -> np.ndarray:
        p = np.zeros(self.K)
        p[int(leader_rows(self.sigma)[0])] = 1.0
        return p

    def choose(self, rng=None):
        p = self.probs()
        return int(np.argmax(p)), p


class EXP3(Learner):
    """EXP3 with an eps exploration floor and importance-weighted updates."""

    kind = "EXP3"
    bandit = True
    deterministic = True

    def __init__(self, n_arms, eps, gamma, rng=None):
        super().__init__(n_arms, eps, gamma, rng)
        if n_arms * self.eps > 1 + 1e-12:
            raise ValueError("EXP3 needs K * eps <= 1")

    @property
    def log_weights(self) -> np.ndarray:
        return self.eps * self.sigma

    def probs(self, rng=None) -> np.ndarray:
        return (1 - self.K * self.eps) * softmax_rows(self.log_weights) + self.eps

    def _update_bandit(self, arm, reward, prob):
        if prob is None:
            prob = float(self.probs()[arm])
        self.sigma[arm] += reward / prob


LEARNER_CLASSES = {"MWU": MWU, "FTPL": FTPL, "EXP3": EXP3, "IdealizedMeanBased": IdealizedMeanBased}


def make_learner(kind: str, n_arms: int, T: int, eps=None, gamma=None, rng=None) -> Learner:
    """Instantiate a learner, filling missing parameters from the defaults.

    With a single arm there is nothing to learn; the defaults are undefined
    there, so neutral placeholders are used.
    """
    if eps is None or gamma is None:
        if n_arms >= 2:
            d_eps, d_gamma = default_params(kind, n_arms, T)
        else:
            d_eps, d_gamma = 1.0, 0.0
        eps = d_eps if eps is None else eps
        gamma = d_gamma if gamma is None else gamma
    return LEARNER_CLASSES[kind](n_arms, eps, gamma, rng)


def play_rewards(learner: Learner, rewards: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run a single learner against a fixed (T, K) reward table.

    Returns the pulled arms and the per-round probability vectors.
    """
    rewards = np.asarray(rewards, dtype=float)
    T = len(rewards)
    arms = np.zeros(T, dtype=np.int64)
    probs = np.zeros((T, learner.K))
    for t in range(T):
        arm, p = learner.choose()
        arms[t] = arm
        probs[t] = p
        if learner.bandit:
            learner.update(arm=arm, reward=rewards[t, arm], prob=p[arm])
        else:
            learner.update(rewards[t])
    return arms, probs


def play_rewards_batch(kind: str, rewards: np.ndarray, seeds: Sequence[int], eps=None, gamma=None,
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Run one independent learner per seed against the same reward table.

    Equivalent to :func:`play_rewards` with ``np.random.default_rng(seed)``
    per instance, but vectorized across seeds.  Returns arms (S, T) and probs
    (S, T, K).
    """
    rewards = np.asarray(rewards, dtype=float)
    T, K = rewards.shape
    if eps is None or gamma is None:
        d = default_params(kind, K, T)
        eps = d[0] if eps is None else eps
        gamma = d[1] if gamma is None else gamma
    rngs = [np.random.default_rng(s) for s in seeds]
    S = len(rngs)
    arms = np.zeros((S, T), dtype=np.int64)
    probs = np.zeros((S, T, K))
    if kind in ("MWU", "IdealizedMeanBased", "FTPL"):
        # full information: the state path does not depend on the choices
        sig = np.vstack([np.zeros(K), np.cumsum(rewards, axis=0)[:-1]])
        if kind == "MWU":
            P = softmax_rows(eps * sig)
            for s, rng in enumerate(rngs):
                arms[s] = sample_rows(P, rng.random(T))
                probs[s] = P
        elif kind == "IdealizedMeanBased":
            lead = leader_rows(sig)
            for s in range(S):
                arms[s] = lead
                probs[s, np.arange(T), lead] = 1.0
        else:
            for s, rng in enumerate(rngs):
                per = rng.standard_exponential((T, K)) / eps
                lead = leader_rows(sig + per)
                arms[s] = lead
                probs[s, np.arange(T), lead] = 1.0
        return arms, probs
    if kind != "EXP3":
        raise ValueError(f"unsupported kind {kind!r}")
    if K * eps > 1 + 1e-12:
        raise ValueError("EXP3 needs K * eps <= 1")
    U = np.stack([rng.random(T) for rng in rngs])
    sig = np.zeros((S, K))
    rows = np.arange(S)
    for t in range(T):
        P = (1 - K * eps) * softmax_rows(eps * sig) + eps
        a = sample_rows(P, U[:, t])
        arms[:, t] = a
        probs[:, t] = P
        sig[rows, a] += rewards[t, a] / P[rows, a]
    return arms, probs


# -- buyers: one learner per context ----------------------------------------


def context_streams(seed: int, trial: int, m: int) -> list[np.random.Generator]:
    """Independent per-context generators derived from (seed, trial, context)."""
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial, 1 + c))))
            for c in range(m)]


class ContextualBuyer:
    """cont(M): an independent instance per value, optionally conservative."""

    def __init__(self, spec: LearnerSpec, schedule: ArmSchedule, dist: ValueDistribution,
                 rngs: Sequence[np.random.Generator]):
        if spec.kind == "CrossValue":
            raise ValueError("use CrossValueBuyer for CrossValue")
        self.spec = spec
        self.K = schedule.K
        self.values = np.asarray(dist.values)
        self.arm_map = []
        self.learners = []
        for c, v in enumerate(self.values):
            arms = schedule.allowed(v) if spec.conservative else np.arange(schedule.K)
            self.arm_map.append(np.asarray(arms, dtype=np.int64))
            self.learners.append(make_learner(spec.kind, len(arms), schedule.horizon, spec.eps, spec.gamma,
                                              rngs[c]))

    @property
    def bandit(self) -> bool:
        return self.spec.feedback == BANDIT

    def _globalize(self, c, p_local):
        p = np.zeros(self.K)
        p[self.arm_map[c]] = p_local
        return p

    def distribution(self, c: int) -> np.ndarray:
        L = self.learners[c]
        return self._globalize(c, L.probs())

    def choose(self, c: int):
        L = self.learners[c]
        local, p = L.choose()
        return int(self.arm_map[c][local]), self._globalize(c, p), (local, float(p[local]))

    def sample_from(self, c: int, p_global: np.ndarray):
        """Draw an arm from an already computed distribution using context c's stream."""
        L = self.learners[c]
        local_p = p_global[self.arm_map[c]]
        local = sample_index(local_p, L.rng.random())
        return int(self.arm_map[c][local]), (local, float(local_p[local]))

    def feedback(self, items):
        """Apply updates for a list of (context, global reward vector, info)."""
        for c, R, info in items:
            L = self.learners[c]
            if self.bandit:
                local, prob = info
                L.update(arm=local, reward=float(R[self.arm_map[c][local]]), prob=prob)
            else:
                L.update(R[self.arm_map[c]])


class CrossValueBuyer:
    """The cross-value learner: instance i also learns over i "value arms".

    Choosing value arm j means playing as instance j would, sampled without
    touching instance j.  Under full information a value arm is credited with
    the expected reward of instance j's resolved distribution; under bandit
    feedback only the top-level arm picked by instance i is updated.
    """

    def __init__(self, spec: LearnerSpec, schedule: ArmSchedule, dist: ValueDistribution,
                 rngs: Sequence[np.random.Generator]):
        if spec.kind != "CrossValue":
            raise ValueError("CrossValueBuyer needs a CrossValue spec")
        self.spec = spec
        self.K = schedule.K
        self.values = np.asarray(dist.values)
        self.m = len(self.values)
        self.bid_arms = []
        self.learners = []
        for i, v in enumerate(self.values):
            arms = schedule.allowed(v) if spec.conservative else np.arange(schedule.K)
            self.bid_arms.append(np.asarray(arms, dtype=np.int64))
            self.learners.append(make_learner(spec.inner, len(arms) + i, schedule.horizon, spec.eps,
                                              spec.gamma, rngs[i]))

    @property
    def bandit(self) -> bool:
        return self.spec.feedback == BANDIT

    def resolved(self, i: int, cache: Optional[dict] = None) -> np.ndarray:
        """Distribution over schedule arms induced by instance i (value arms expanded)."""
        if cache is not None and i in cache:
            return cache[i]
        top = self.learners[i].probs()
        nb = len(self.bid_arms[i])
        p = np.zeros(self.K)
        p[self.bid_arms[i]] = top[:nb]
        for j in range(i):
            if top[nb + j] > 0:
                p += top[nb + j] * self.resolved(j, cache)
        if cache is not None:
            cache[i] = p
        return p

    def distribution(self, c: int) -> np.ndarray:
        return self.resolved(c, {})

    def choose(self, c: int):
        # one uniform per possible recursion level keeps stream use fixed per round
        u = self.learners[c].rng.random(self.m)
        top = self.learners[c].probs()
        local = sample_index(top, u[0])
        arm = cross_value_choose(self, c, first=local, uniforms=u[1:])
        return arm, self.resolved(c, {}), (local, float(top[local]), arm)

    def sample_from(self, c: int, p_global: np.ndarray):
        # bandit feedback needs the top-level arm, so sample the hierarchy itself
        arm, _, info = self.choose(c)
        return arm, info

    def value_arm_rewards(self, i: int, R: np.ndarray, cache: dict) -> np.ndarray:
        return np.array([self.resolved(j, cache) @ R for j in range(i)])

    def feedback(self, items):
        cache: dict = {}
        if not self.bandit:
            # all value-arm credits use the distributions before this round's updates
            full = []
            for c, R, info in items:
                vec = np.concatenate([R[self.bid_arms[c]], self.value_arm_rewards(c, R, cache)])
                full.append((c, vec))
            for c, vec in full:
                self.learners[c].update(vec)
            return
        for c, R, info in items:
            local, prob, arm = info
            # the utility actually realized, whichever instance resolved the bid
            self.learners[c].update(arm=local, reward=float(R[arm]), prob=prob)


def cross_value_choose(buyer: CrossValueBuyer, c: int, rng: Optional[np.random.Generator] = None,
                       first: Optional[int] = None, uniforms: Optional[Sequence[float]] = None) -> int:
    """Resolve instance c's choice to a schedule arm.

    Instance c picks a local arm (``first`` if already drawn); a value arm j
    defers to instance j, sampled from ``uniforms`` (or ``rng``) so instance
    j's own state and stream stay untouched.  Indices strictly decrease, so
    this terminates after at most m levels.
    """
    draws = iter(uniforms) if uniforms is not None else None

    def draw():
        return next(draws) if draws is not None else rng.random()

    i = c
    local = first if first is not None else sample_index(buyer.learners[c].probs(), draw())
    while True:
        nb = len(buyer.bid_arms[i])
        if local < nb:
            return int(buyer.bid_arms[i][local])
        i = local - nb
        local = sample_index(buyer.learners[i].probs(), draw())


def make_buyer(spec: LearnerSpec, schedule: ArmSchedule, dist: ValueDistribution, rngs):
    cls = CrossValueBuyer if spec.kind == "CrossValue" else ContextualBuyer
    return cls(spec, schedule, dist, rngs)


# -- regret -----------------------------------------------------------------


def regret(realized_total: float, counterfactual_totals: np.ndarray) -> float:
    """Best fixed arm in hindsight minus what was actually earned."""
    counterfactual_totals = np.asarray(counterfactual_totals, dtype=float)
    if counterfactual_totals.size == 0:
        return 0.0
    return float(counterfactual_totals.max() - realized_total)


def contextual_regret(realized: np.ndarray, counterfactual: Sequence[np.ndarray]) -> float:
    """Regret against the best context-to-arm policy.

    The best policy picks the best arm separately in each context, so this is
    the sum of per-context regrets.
    """
    return float(sum(regret(r, cf) for r, cf in zip(realized, counterfactual)))
