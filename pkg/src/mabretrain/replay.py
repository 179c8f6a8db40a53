"""Choosing the replay subset carried into the next session.

``ReplayRecorder`` plugs into :func:`mabretrain.weightopt.train_session` and
treats every mini-batch as a bandit arm. In the ``sim`` variant training
proceeds in the usual epoch order and the bandit's picks are only counted;
in the ``opt`` variant the picked batch is the one trained on. The most
frequently picked batches form the replay set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bandits import Bandit, BanditPolicy
from .errors import InvalidInputError
from .nn import NetworkParams, loss_value, per_sample_grad_sq_norms
from .weightopt import Batches, SessionResult, TrainConfig, train_session

STRATEGIES = ("union", "random", "new_data", "reservoir", "mab_sim", "mab_opt")


class ReplayRecorder:
    def __init__(self, n_batches: int, policy: BanditPolicy, warmup: int, variant: str = "sim"):
        if warmup < 1:
            raise InvalidInputError("warm-up epochs q must be >= 1")
        if variant not in ("sim", "opt"):
            raise InvalidInputError(f"unknown replay variant {variant!r}")
        self.bandit = Bandit(n_batches, policy)
        self.warmup = warmup
        self.variant = variant
        self.counts = np.zeros(n_batches, dtype=np.int64)

    def choose(self, epoch: int, scheduled: int) -> int:
        if self.variant == "opt" and epoch > self.warmup:
            b = self.bandit.select()
            self.counts[b] += 1
            return b
        return scheduled

    def before(self, epoch: int, batch: int) -> None:
        if self.variant == "sim" and epoch > self.warmup:
            self.counts[self.bandit.select()] += 1

    def wants_reward(self, epoch: int) -> bool:
        return epoch >= self.warmup

    def observe(self, epoch: int, batch: int, reward) -> None:
        if epoch >= self.warmup:
            self.bandit.update(batch, reward)

    def end_epoch(self, epoch: int) -> None:
        pass

    def ranking(self) -> list[int]:
        """Batch ids by selection count, then mean reward (both descending), then id."""
        means = self.bandit.means
        return sorted(range(len(self.counts)), key=lambda b: (-self.counts[b], -means[b], b))


def replay_budget(total: int, ratio: float) -> int:
    if not 0.0 < ratio <= 1.0:
        raise InvalidInputError("sample ratio must lie in (0, 1]")
    return math.ceil(ratio * total - 1e-9)


def take_batches(batches: Batches, order, budget: int) -> np.ndarray:
    """Sample ids of whole batches in ``order`` until ``budget``; the last batch is truncated."""
    available = len(batches.y)
    if budget > available:
        warnings.warn(f"replay budget {budget} exceeds the {available} available samples; clamped")
        budget = available
    picked, n = [], 0
    for b in order:
        if n >= budget:
            break
        ids = batches.ids(b)[: budget - n]
        picked.append(ids)
        n += len(ids)
    return np.concatenate(picked) if picked else np.array([], dtype=np.int64)


def _replay_session(theta_m, batches, val_x, val_y, cfg, policy, q, ratio, variant, total, **kw):
    if cfg.max_epochs <= q:
        warnings.warn(f"max_epochs={cfg.max_epochs} leaves no epochs after warm-up q={q}")
    recorder = ReplayRecorder(len(batches), policy, q, variant)
    result = train_session(theta_m, batches, val_x, val_y, cfg, recorder=recorder, **kw)
    budget = replay_budget(len(batches.y) if total is None else total, ratio)
    return result, take_batches(batches, recorder.ranking(), budget), recorder


def replay_sim_session(theta_m: NetworkParams, batches: Batches, val_x, val_y, cfg: TrainConfig,
                       policy: BanditPolicy, q: int, ratio: float = 0.1, total: int | None = None,
                       **kw) -> tuple[SessionResult, np.ndarray, ReplayRecorder]:
    """Epoch training that records which batch the bandit would have picked at each step."""
    return _replay_session(theta_m, batches, val_x, val_y, cfg, policy, q, ratio, "sim", total, **kw)


def replay_opt_session(theta_m: NetworkParams, batches: Batches, val_x, val_y, cfg: TrainConfig,
                       policy: BanditPolicy, q: int, ratio: float = 0.1, total: int | None = None,
                       **kw) -> tuple[SessionResult, np.ndarray, ReplayRecorder]:
    """As :func:`replay_sim_session`, but after warm-up the picked batch is trained on."""
    return _replay_session(theta_m, batches, val_x, val_y, cfg, policy, q, ratio, "opt", total, **kw)


def reward_of(x, y, params_before: NetworkParams, params_after: NetworkParams, kind: str = "loss",
              loss: str = "cross_entropy") -> float:
    """Loss decrease on the batch, or the summed squared per-sample gradient norms after the update."""
    if kind == "loss":
        return loss_value(params_before, x, y, loss) - loss_value(params_after, x, y, loss)
    if kind == "ngrad":
        return float(np.sum(per_sample_grad_sq_norms(params_after, x, y, loss)))
    raise InvalidInputError(f"unknown reward kind {kind!r}")


@dataclass
class Reservoir:
    """Single-pass uniform sample without replacement (Algorithm R)."""

    capacity: int
    seed: int = 0
    slots: list = field(default_factory=list)
    seen: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidInputError("reservoir capacity must be >= 1")
        self._rng = np.random.default_rng(self.seed)

    def offer(self, item) -> None:
        self.seen += 1
        if len(self.slots) < self.capacity:
            self.slots.append(item)
            return
        j = int(self._rng.integers(self.seen))
        if j < self.capacity:
            self.slots[j] = item

    def offer_many(self, items) -> None:
        items = list(items)
        fill = min(len(items), self.capacity - len(self.slots))
        self.slots.extend(items[:fill])
        self.seen += fill
        rest = items[fill:]
        if not rest:
            return
        counts = np.arange(self.seen + 1, self.seen + len(rest) + 1)
        draws = self._rng.integers(counts)
        self.seen += len(rest)
        for pos in np.flatnonzero(draws < self.capacity):
            self.slots[draws[pos]] = rest[pos]


def reservoir_select(stream, capacity: int, seed: int = 0) -> list:
    res = Reservoir(capacity, seed)
    res.offer_many(stream)
    return res.slots


def random_batches(batches: Batches, budget: int, seed: int = 0) -> np.ndarray:
    """Uniformly random whole batches up to the budget."""
    order = np.random.default_rng(seed).permutation(len(batches))
    return take_batches(batches, order, budget)


def assemble_next_train(replayed, new_ids, seed: int = 0) -> np.ndarray:
    """Shuffled union of replayed and new sample ids (id spaces must be disjoint)."""
    replayed = np.asarray(replayed, dtype=np.int64)
    new_ids = np.asarray(new_ids, dtype=np.int64)
    if np.intersect1d(replayed, new_ids).size:
        raise InvalidInputError("replayed and new samples overlap")
    union = np.concatenate([replayed, new_ids])
    return np.random.default_rng(seed).permutation(union)
