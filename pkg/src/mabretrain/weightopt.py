"""Session training loop with bandit-selected weight clusters.

Modes:

* ``full_epochs`` - plain epoch-based Adam over every weight.
* ``minib``       - one cluster arm pulled per mini-batch; only its weights move.
* ``epochs``      - one cluster arm pulled per epoch.

The same loop also drives memory-replay recording through an optional
recorder object (see :mod:`mabretrain.replay`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bandits import Bandit, BanditPolicy
from .clustering import TrajectoryLog, single_arm
from .errors import InvalidInputError
from .nn import AdamState, NetworkParams, adam_step, loss_value, per_sample_grad_sq_norms, predict
from .regularizers import Regularizer, objective_and_gradient

MODES = ("minib", "epochs", "full_epochs")
REWARDS = ("loss", "ngrad")


@dataclass
class TrainConfig:
    mode: str = "full_epochs"
    reward_kind: str = "loss"
    max_epochs: int = 20
    patience: int = 10
    min_delta: float = 1e-6
    batch_size: int = 64
    lr: float = 1e-3
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown weight-opt mode {self.mode!r}")
        if self.reward_kind not in REWARDS:
            raise InvalidInputError(f"unknown reward kind {self.reward_kind!r}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("patience, max_epochs and batch_size must be >= 1")


@dataclass
class Batches:
    """Fixed mini-batch partition of a training set; batch ids are list positions."""

    x: np.ndarray
    y: np.ndarray
    members: list  # per batch: row positions into x / y
    sample_ids: np.ndarray | None = None  # dataset-level ids of the rows

    @classmethod
    def split(cls, x, y, batch_size: int, sample_ids=None) -> "Batches":
        n = len(y)
        members = [np.arange(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
        return cls(np.asarray(x, dtype=np.float64), np.asarray(y), members,
                   None if sample_ids is None else np.asarray(sample_ids))

    def __len__(self) -> int:
        return len(self.members)

    def batch(self, b: int):
        rows = self.members[b]
        return self.x[rows], self.y[rows]

    def ids(self, b: int) -> np.ndarray:
        rows = self.members[b]
        return rows if self.sample_ids is None else self.sample_ids[rows]


def accuracy(params: NetworkParams, x, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(params, x) == y))


def step(params: NetworkParams, adam: AdamState, xb, yb, mask, regularizer, cfg: TrainConfig,
         want_reward: bool) -> tuple[float, float | None]:
    """One masked Adam update on a batch; returns (task loss before, reward or None)."""
    obj = objective_and_gradient(params, xb, yb, cfg.loss, regularizer)
    adam_step(params, obj.grad, mask, adam)
    if not want_reward:
        return obj.task_loss, None
    if cfg.reward_kind == "loss":
        return obj.task_loss, obj.task_loss - loss_value(params, xb, yb, cfg.loss)
    return obj.task_loss, float(np.sum(per_sample_grad_sq_norms(params, xb, yb, cfg.loss)))


def _new_adam(params, cfg):
    return AdamState.zeros(params.size, lr=cfg.lr)


def init_cluster_rewards(theta_m: NetworkParams, arms: list, batches: Batches, cfg: TrainConfig,
                         policy: BanditPolicy, regularizer: Regularizer | None = None,
                         seed: int = 0) -> tuple[Bandit, list[float]]:
    """One trial epoch per arm from ``theta_m`` with only that arm's weights free.

    The epoch reward (sum of per-batch rewards) enters the bandit as a single
    pull scaled by 1 / batches-per-epoch. ``theta_m`` itself is not modified.
    """
    bandit = Bandit(len(arms), policy)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(batches))
    epoch_rewards = []
    for arm in arms:
        params = theta_m.copy()
        adam = _new_adam(params, cfg)
        mask = arm.mask(params.size)
        total = 0.0
        for b in order:
            xb, yb = batches.batch(b)
            _, r = step(params, adam, xb, yb, mask, regularizer, cfg, True)
            total += r
        epoch_rewards.append(total)
    for i, r in enumerate(epoch_rewards):
        bandit.update(i, r / len(batches))
    return bandit, epoch_rewards


@dataclass
class SessionResult:
    params: NetworkParams  # best-validation parameters
    final_params: NetworkParams
    trajectory: TrajectoryLog
    epochs_run: int
    best_epoch: int
    best_val_accuracy: float
    val_history: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)
    epoch_update_fractions: list = field(default_factory=list)
    arm_pulls: list = field(default_factory=list)
    arm_sizes: list = field(default_factory=list)
    init_rewards: list = field(default_factory=list)
    arm_stats: list = field(default_factory=list)
    adam: AdamState | None = None
    steps: int = 0

    @property
    def weight_update_fraction(self) -> float:
        f = self.epoch_update_fractions
        return float(np.mean(f)) if f else 0.0

    @property
    def max_arm_fraction(self) -> float:
        total = self.params.size
        return max(self.arm_sizes) / total if self.arm_sizes else 1.0


def train_session(theta_m: NetworkParams, batches: Batches, val_x, val_y, cfg: TrainConfig,
                  arms: list | None = None, policy: BanditPolicy | None = None,
                  regularizer: Regularizer | None = None, recorder=None,
                  shuffle_seed: int = 0, init_seed: int = 0) -> SessionResult:
    """Train from ``theta_m`` under ``cfg.mode`` with early stopping on validation accuracy.

    ``recorder`` (optional) may pick the batch to train on and observes each
    step's reward; it never touches the parameters.
    """
    params = theta_m.copy()
    n_params = params.size
    mode = cfg.mode
    if mode == "full_epochs":
        arms = None
    elif arms is None:
        arms = single_arm(n_params)
    bandit = None
    init_rewards = []
    if arms is not None:
        if policy is None:
            raise InvalidInputError(f"mode {mode!r} needs a bandit policy")
        bandit, init_rewards = init_cluster_rewards(theta_m, arms, batches, cfg, policy, regularizer,
                                                    seed=init_seed)
        masks = [a.mask(n_params) for a in arms]
        fractions = [a.size / n_params for a in arms]
    adam = _new_adam(params, cfg)
    rng = np.random.default_rng(shuffle_seed)
    traj = TrajectoryLog()
    traj.record(params.theta)
    has_val = val_y is not None and len(val_y) > 0
    best_acc, best_epoch, best_theta, wait = -np.inf, 0, params.theta.copy(), 0
    result = SessionResult(params, params, traj, 0, 0, float("nan"),
                           arm_sizes=[a.size for a in arms] if arms else [])
    n_steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(batches))
        epoch_arm = bandit.select() if mode == "epochs" else None
        epoch_reward = 0.0
        epoch_loss = 0.0
        frac_sum = 0.0
        for it in range(len(batches)):
            b = int(order[it]) if recorder is None else recorder.choose(epoch, int(order[it]))
            if recorder is not None:
                recorder.before(epoch, b)
            if mode == "minib":
                arm = bandit.select()
            else:
                arm = epoch_arm
            mask = None if arm is None else masks[arm]
            want = arm is not None or (recorder is not None and recorder.wants_reward(epoch))
            xb, yb = batches.batch(b)
            task, reward = step(params, adam, xb, yb, mask, regularizer, cfg, want)
            n_steps += 1
            epoch_loss += task
            frac_sum += 1.0 if arm is None else fractions[arm]
            if recorder is not None:
                recorder.observe(epoch, b, reward)
            if mode == "minib":
                bandit.update(arm, reward)
            elif mode == "epochs":
                epoch_reward += reward
        if mode == "epochs":
            bandit.update(epoch_arm, epoch_reward)
        if recorder is not None:
            recorder.end_epoch(epoch)
        traj.record(params.theta)
        result.loss_history.append(epoch_loss / len(batches))
        result.epoch_update_fractions.append(frac_sum / len(batches))
        result.epochs_run = epoch
        if has_val:
            acc = accuracy(params, val_x, val_y)
            result.val_history.append(acc)
            if acc > best_acc + cfg.min_delta:
                best_acc, best_epoch, best_theta, wait = acc, epoch, params.theta.copy(), 0
            else:
                wait += 1
                if wait >= cfg.patience:
                    break
        else:
            best_epoch, best_theta = epoch, params.theta.copy()
    result.params = params.like(best_theta)
    result.final_params = params
    result.best_epoch = best_epoch
    result.best_val_accuracy = float(best_acc) if has_val else float("nan")
    result.arm_pulls = bandit.pulls if bandit is not None else []
    result.arm_stats = bandit.arms if bandit is not None else []
    result.adam = adam
    result.init_rewards = init_rewards
    result.steps = n_steps
    return result


def train_minib(theta_m, arms, batches, val_x, val_y, cfg: TrainConfig, policy, regularizer=None,
                **kw) -> SessionResult:
    cfg = TrainConfig(**{**cfg.__dict__, "mode": "minib"})
    return train_session(theta_m, batches, val_x, val_y, cfg, arms, policy, regularizer, **kw)


def train_epochs(theta_m, arms, batches, val_x, val_y, cfg: TrainConfig, policy, regularizer=None,
                 **kw) -> SessionResult:
    cfg = TrainConfig(**{**cfg.__dict__, "mode": "epochs"})
    return train_session(theta_m, batches, val_x, val_y, cfg, arms, policy, regularizer, **kw)


def train_full_epochs(theta_m, batches, val_x, val_y, cfg: TrainConfig, regularizer=None,
                      **kw) -> SessionResult:
    cfg = TrainConfig(**{**cfg.__dict__, "mode": "full_epochs"})
    return train_session(theta_m, batches, val_x, val_y, cfg, None, None, regularizer, **kw)
