"""Multi-armed bandit policies: EI, top-two EI, UCB1, Gaussian Thompson sampling, EXP3.

Arm statistics are plain mutable records; a policy carries only its
parameters and its own random stream, so a (select, update) sequence is
replayable from the seed.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field

from .errors import InvalidInputError

log = logging.getLogger(__name__)

POLICIES = ("ei", "ei2", "ucb", "ts", "exp3")
VAR_FLOOR = 1e-12
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(slots=True)
class ArmStats:
    pulls: int = 0
    reward_sum: float = 0.0
    reward_sq_sum: float = 0.0
    exp3_weight: float = 1.0
    last_reward: float = 0.0

    @property
    def mean(self) -> float:
        return self.reward_sum / self.pulls if self.pulls else 0.0

    @property
    def variance(self) -> float | None:
        """Unbiased sample variance, floored; None with fewer than two pulls."""
        if self.pulls < 2:
            return None
        var = (self.reward_sq_sum - self.reward_sum * self.reward_sum / self.pulls) / (self.pulls - 1)
        return max(var, VAR_FLOOR)


@dataclass(slots=True)
class RewardScaler:
    """Running min-max map of raw rewards onto [0, 1]."""

    lo: float = math.inf
    hi: float = -math.inf

    def observe(self, r: float) -> None:
        if r < self.lo:
            self.lo = r
        if r > self.hi:
            self.hi = r

    def scale(self, r: float) -> float:
        if not self.hi > self.lo:
            return 0.5
        return min(1.0, max(0.0, (r - self.lo) / (self.hi - self.lo)))

    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi) if self.hi >= self.lo else 0.0


def _pooled_variance(arms) -> float:
    n = s = sq = 0.0
    for a in arms:
        n += a.pulls
        s += a.reward_sum
        sq += a.reward_sq_sum
    if n < 2:
        return VAR_FLOOR
    return max((sq - s * s / n) / (n - 1), VAR_FLOOR)


def _posterior(arms):
    """Means and posterior standard deviations sqrt(var / pulls) per arm."""
    pooled = None
    means, sds = [], []
    for a in arms:
        var = a.variance
        if var is None:
            if pooled is None:
                pooled = _pooled_variance(arms)
            var = pooled
        means.append(a.mean)
        sds.append(math.sqrt(var / max(a.pulls, 1)))
    return means, sds


def _expected_improvement(d: float, s: float) -> float:
    z = d / s
    return d * 0.5 * math.erfc(-z / _SQRT2) + s * _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def _argmax(values) -> int:
    best, best_i = values[0], 0
    for i in range(1, len(values)):
        if values[i] > best:
            best, best_i = values[i], i
    return best_i


@dataclass
class BanditPolicy:
    kind: str = "ei2"
    ucb_c: float = 1.0
    exp3_gamma: float = 0.1
    ei2_beta: float = 0.5
    seed: int = 0
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise InvalidInputError(f"unknown bandit policy {self.kind!r}")
        if not 0.0 < self.exp3_gamma <= 1.0:
            raise InvalidInputError("exp3_gamma must lie in (0, 1]")
        if not 0.0 < self.ei2_beta < 1.0:
            raise InvalidInputError("ei2_beta must lie in (0, 1)")
        if self.ucb_c < 0:
            raise InvalidInputError("ucb_c must be non-negative")
        self.rng = random.Random(self.seed)

    def exp3_probabilities(self, arms) -> list[float]:
        k = len(arms)
        total = sum(a.exp3_weight for a in arms)
        g = self.exp3_gamma
        return [(1.0 - g) * a.exp3_weight / total + g / k for a in arms]

    def select(self, arms, t: int) -> int:
        k = len(arms)
        if k == 0:
            raise InvalidInputError("cannot select from an empty arm list")
        if k == 1:
            if self.kind in ("ts", "ei2", "exp3"):
                self.rng.random()
            return 0
        kind = self.kind
        if kind == "exp3":
            u = self.rng.random()
            acc = 0.0
            probs = self.exp3_probabilities(arms)
            for i, p in enumerate(probs):
                acc += p
                if u < acc:
                    return i
            return k - 1
        if kind == "ucb":
            log_t = math.log(max(t, 1))
            c = self.ucb_c
            return _argmax([a.mean + c * math.sqrt(2.0 * log_t / max(a.pulls, 1)) for a in arms])
        means, sds = _posterior(arms)
        if kind == "ts":
            gauss = self.rng.gauss
            return _argmax([gauss(m, s) for m, s in zip(means, sds)])
        best = max(means)
        ei = [_expected_improvement(m - best, s) for m, s in zip(means, sds)]
        first = _argmax(ei)
        if kind == "ei":
            return first
        if self.rng.random() < self.ei2_beta:
            return first
        m1, s1 = means[first], sds[first]
        challenger, best_v = -1, -math.inf
        for i in range(k):
            if i == first:
                continue
            v = _expected_improvement(means[i] - m1, math.sqrt(sds[i] * sds[i] + s1 * s1))
            if v > best_v:
                challenger, best_v = i, v
        return challenger

    def update(self, arms, chosen: int, raw_reward: float, scaler: RewardScaler) -> None:
        if not 0 <= chosen < len(arms):
            raise InvalidInputError(f"arm index {chosen} out of range")
        r = float(raw_reward)
        if not math.isfinite(r):
            log.warning("non-finite reward %r for arm %d replaced by %r", raw_reward, chosen, scaler.midpoint())
            r = scaler.midpoint()
        arm = arms[chosen]
        arm.pulls += 1
        arm.reward_sum += r
        arm.reward_sq_sum += r * r
        arm.last_reward = r
        scaler.observe(r)
        if self.kind == "exp3":
            p = self.exp3_probabilities(arms)[chosen]
            k = len(arms)
            arm.exp3_weight *= math.exp(self.exp3_gamma * (scaler.scale(r) / p) / k)
            top = max(a.exp3_weight for a in arms)
            if top > 1e100:
                for a in arms:
                    a.exp3_weight = max(a.exp3_weight / top, 1e-300)


def select(policy: BanditPolicy, arms, t: int) -> int:
    return policy.select(arms, t)


def update(policy: BanditPolicy, arms, chosen: int, raw_reward: float, scaler: RewardScaler) -> None:
    policy.update(arms, chosen, raw_reward, scaler)


class Bandit:
    """Arms, reward scaler and step counter driven by one policy."""

    def __init__(self, n_arms: int, policy: BanditPolicy):
        if n_arms < 1:
            raise InvalidInputError("a bandit needs at least one arm")
        self.policy = policy
        self.arms = [ArmStats() for _ in range(n_arms)]
        self.scaler = RewardScaler()
        self.t = 0

    def select(self) -> int:
        return self.policy.select(self.arms, self.t)

    def update(self, arm: int, reward: float) -> None:
        self.policy.update(self.arms, arm, reward, self.scaler)
        self.t += 1

    @property
    def pulls(self) -> list[int]:
        return [a.pulls for a in self.arms]

    @property
    def means(self) -> list[float]:
        return [a.mean for a in self.arms]
