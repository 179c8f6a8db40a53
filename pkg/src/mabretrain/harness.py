"""Six-session retraining protocol.

The dataset is cut into a base part and five shards. Each part is split into
train/val/test. Session 0 trains on the base train split; session i adds
shard i's train split and whatever the replay strategy kept from the past.
Accuracy is always measured on the cumulative test split with the
best-validation parameters.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandits import BanditPolicy
from .checkpoint import save_checkpoint
from .clustering import LayerClustering, assemble_arms, cluster_layers
from .data import Dataset, zscore
from .errors import InvalidInputError
from .nn import NetworkParams, mlp_specs, predict
from .regularizers import Regularizer, RegularizerConfig, estimate_importance
from .replay import (STRATEGIES, ReplayRecorder, random_batches, replay_budget, reservoir_select,
                     take_batches)
from .weightopt import MODES, Batches, TrainConfig, train_session

log = logging.getLogger(__name__)

N_SESSIONS = 6
PURPOSES = {"split": 1, "init": 2, "shuffle": 3, "bandit": 4, "cluster": 5, "replay": 6,
            "batches": 7, "arms": 8}


def derive_seed(master: int, purpose: str, *keys: int) -> int:
    """Independent 32-bit seed for one purpose (and optional session/method keys)."""
    ss = np.random.SeedSequence([int(master), PURPOSES[purpose], *[int(k) for k in keys]])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class SplitPlan:
    seed: int = 0
    base_fraction: float = 0.5
    n_shards: int = 5
    inner: tuple = (0.7, 0.1, 0.2)
    shuffle: bool = True  # False keeps parts contiguous in stream order

    def __post_init__(self):
        if not 0.0 < self.base_fraction < 1.0 or self.n_shards < 1:
            raise InvalidInputError("base_fraction must lie in (0, 1) and n_shards >= 1")
        if len(self.inner) != 3 or min(self.inner) <= 0 or abs(sum(self.inner) - 1.0) > 1e-9:
            raise InvalidInputError("inner fractions must be three positive numbers summing to 1")

    @property
    def fractions(self) -> list[float]:
        shard = (1.0 - self.base_fraction) / self.n_shards
        return [self.base_fraction] + [shard] * self.n_shards


@dataclass
class Split:
    """Index arrays; position 0 is the base part, i >= 1 is shard i."""

    train: list
    val: list
    test: list

    @property
    def n_parts(self) -> int:
        return len(self.train)

    def cumulative_val(self, session: int) -> np.ndarray:
        return np.concatenate(self.val[: session + 1])

    def cumulative_test(self, session: int) -> np.ndarray:
        return np.concatenate(self.test[: session + 1])

    def union_train(self, session: int) -> np.ndarray:
        return np.concatenate(self.train[: session + 1])


def _cuts(n: int, fractions) -> np.ndarray:
    return np.rint(np.cumsum([0.0, *fractions]) * n).astype(np.int64)


def split(n: int, plan: SplitPlan = SplitPlan()) -> Split:
    if n < 60:
        raise InvalidInputError(f"dataset of {n} samples is too small to split (need >= 60)")
    rng = np.random.default_rng(plan.seed)
    order = rng.permutation(n) if plan.shuffle else np.arange(n)
    cuts = _cuts(n, plan.fractions)
    out = Split([], [], [])
    for a, b in zip(cuts[:-1], cuts[1:]):
        part = order[a:b]
        part = part[rng.permutation(len(part))]
        inner = _cuts(len(part), plan.inner)
        pieces = [part[inner[j]:inner[j + 1]] for j in range(3)]
        if any(len(p) == 0 for p in pieces):
            raise InvalidInputError(f"dataset of {n} samples leaves an empty split piece")
        out.train.append(pieces[0])
        out.val.append(pieces[1])
        out.test.append(pieces[2])
    return out


@dataclass(frozen=True)
class EarlyStopRule:
    patience: int = 10
    min_delta: float = 1e-6

    def should_stop(self, history) -> bool:
        """True once ``patience`` consecutive epochs fail to beat the running best by > delta."""
        best, wait = -np.inf, 0
        for acc in history:
            if acc > best + self.min_delta:
                best, wait = acc, 0
            else:
                wait += 1
                if wait >= self.patience:
                    return True
        return False


def evaluate(params: NetworkParams, x, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(params, x) == y))


@dataclass
class MethodSpec:
    name: str
    replay: str = "mab_sim"
    weight_opt: str = "minib"
    regularizer: RegularizerConfig = field(default_factory=lambda: RegularizerConfig("nc"))
    policy: str = "ei2"
    ucb_c: float = 1.0
    exp3_gamma: float = 0.1
    ei2_beta: float = 0.5
    reward: str = "loss"

    def __post_init__(self):
        if self.replay not in STRATEGIES:
            raise InvalidInputError(f"unknown replay strategy {self.replay!r}")
        if self.weight_opt not in MODES:
            raise InvalidInputError(f"unknown weight-opt mode {self.weight_opt!r}")

    def policy_for(self, seed: int) -> BanditPolicy:
        return BanditPolicy(self.policy, self.ucb_c, self.exp3_gamma, self.ei2_beta, seed)


@dataclass
class ExperimentSpec:
    dataset: Dataset
    methods: list
    hidden: tuple = (64, 64)
    activation: str = "relu"
    batch_size: int = 64
    lr: float = 1e-3
    max_epochs: int = 20
    warmup: int = 10
    patience: int = 10
    min_delta: float = 1e-6
    ratio: float = 0.1
    clusters: int = 3
    tail_fraction: float = 0.2
    normalize: bool = True
    ordered_split: bool = False
    n_sessions: int = N_SESSIONS
    timing: bool = True
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise InvalidInputError("sample ratio must lie in (0, 1]")
        if self.warmup < 1 or self.clusters < 1:
            raise InvalidInputError("warm-up q and cluster count must be >= 1")
        if not 2 <= self.n_sessions <= N_SESSIONS:
            raise InvalidInputError(f"n_sessions must lie in [2, {N_SESSIONS}]")

    def train_config(self, mode: str, reward: str) -> TrainConfig:
        return TrainConfig(mode=mode, reward_kind=reward, max_epochs=self.max_epochs,
                           patience=self.patience, min_delta=self.min_delta,
                           batch_size=self.batch_size, lr=self.lr)


def _group_accuracy(params, x, y, groups) -> dict:
    if groups is None:
        return {}
    pred = predict(params, x)
    return {str(int(g)): float(np.mean(pred[groups == g] == y[groups == g]))
            for g in np.unique(groups)}


def _checkpoint(spec, method, seed, session, params, result, reg_state, clustering, replay_ids,
                provenance):
    if spec.checkpoint_dir is None:
        return
    arrays = {"theta": params.theta}
    meta = {"method": method.name, "seed": seed, "session": session,
            "layers": [[s.input_dim, s.output_dim, s.activation] for s in params.specs],
            "replay_provenance": provenance}
    if result is not None and result.adam is not None:
        a = result.adam
        arrays.update(adam_m=a.m, adam_v=a.v, adam_counts=a.counts)
        meta["adam"] = {"step": a.step, "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps}
        meta["arm_stats"] = [{"pulls": s.pulls, "reward_sum": s.reward_sum,
                              "reward_sq_sum": s.reward_sq_sum, "exp3_weight": s.exp3_weight}
                             for s in result.arm_stats]
    if reg_state is not None:
        arrays["reg_anchor"] = reg_state.anchor_params.theta
        arrays["reg_param_importance"] = reg_state.param_importance
        for i, w in enumerate(reg_state.neuron_importance):
            arrays[f"reg_neuron_{i}"] = w
        meta["regularizer"] = {"kind": method.regularizer.kind, "alpha": method.regularizer.alpha,
                               "beta": method.regularizer.beta,
                               "sample_count": reg_state.sample_count}
    if clustering is not None:
        for i, lab in enumerate(clustering.labels):
            arrays[f"cluster_labels_{i}"] = lab
    if replay_ids is not None:
        arrays["replay_ids"] = np.asarray(replay_ids, dtype=np.int64)
    path = Path(spec.checkpoint_dir) / f"{method.name}-seed{seed}-session{session}.ckpt"
    save_checkpoint(path, arrays, meta)


def run_method(spec: ExperimentSpec, method: MethodSpec, seed: int) -> list[dict]:
    """All sessions of one method under one master seed; returns one metrics row per session."""
    data = spec.dataset
    parts = split(len(data), SplitPlan(seed=derive_seed(seed, "split"), shuffle=not spec.ordered_split))
    x = zscore(data.features, parts.train[0]) if spec.normalize else data.features
    y = data.labels
    specs = mlp_specs(data.n_features, spec.hidden, data.class_count, spec.activation)
    params = NetworkParams.init(specs, np.random.default_rng(derive_seed(seed, "init")))
    reg_cfg = method.regularizer
    reg_state = None
    trajectory = None
    replay_ids = np.array([], dtype=np.int64)
    provenance = "none"
    rows = []
    clustering: LayerClustering | None = None
    result = None
    session = 0
    try:
        for session in range(spec.n_sessions):
            new = parts.train[session]
            if session == 0:
                train_ids = np.random.default_rng(derive_seed(seed, "batches", 0)).permutation(new)
            elif method.replay == "union":
                train_ids = np.random.default_rng(derive_seed(seed, "batches", session)).permutation(
                    parts.union_train(session))
            elif method.replay == "new_data":
                train_ids = np.random.default_rng(derive_seed(seed, "batches", session)).permutation(new)
            else:
                train_ids = np.random.default_rng(derive_seed(seed, "batches", session)).permutation(
                    np.concatenate([replay_ids, new]))
            replay_size = len(train_ids) - len(new)
            batches = Batches.split(x[train_ids], y[train_ids], spec.batch_size, train_ids)
            val_ids, test_ids = parts.cumulative_val(session), parts.cumulative_test(session)

            mode = "full_epochs" if session == 0 else method.weight_opt
            cfg = spec.train_config(mode, method.reward)
            arms = None
            clustering = None
            if mode != "full_epochs":
                clustering = cluster_layers(params, trajectory, spec.clusters,
                                            seed=derive_seed(seed, "cluster", session),
                                            tail_fraction=spec.tail_fraction)
                arms = assemble_arms(clustering, seed=derive_seed(seed, "arms", session))
            regularizer = None
            if session > 0 and reg_cfg.kind != "none" and reg_state is not None:
                regularizer = Regularizer(reg_cfg, reg_state)
            recorder = None
            if method.replay in ("mab_sim", "mab_opt"):
                variant = "sim" if method.replay == "mab_sim" else "opt"
                recorder = ReplayRecorder(len(batches), method.policy_for(
                    derive_seed(seed, "replay", session)), spec.warmup, variant)

            t0 = time.perf_counter()
            result = train_session(params, batches, x[val_ids], y[val_ids], cfg, arms=arms,
                                   policy=method.policy_for(derive_seed(seed, "bandit", session)),
                                   regularizer=regularizer, recorder=recorder,
                                   shuffle_seed=derive_seed(seed, "shuffle", session),
                                   init_seed=derive_seed(seed, "shuffle", session, 1))
            params = result.params
            trajectory = result.trajectory

            # replay set carried into the next session
            if session + 1 < spec.n_sessions:
                budget = replay_budget(len(parts.union_train(session + 1)), spec.ratio)
                if recorder is not None:
                    replay_ids = take_batches(batches, recorder.ranking(), budget)
                    provenance = f"{method.replay}:session{session}"
                elif method.replay == "random":
                    replay_ids = random_batches(batches, budget, derive_seed(seed, "replay", session))
                    provenance = f"random:session{session}"
                elif method.replay == "reservoir":
                    stream = parts.union_train(session)
                    replay_ids = np.asarray(reservoir_select(stream, min(budget, len(stream)),
                                                             derive_seed(seed, "replay", session)))
                    provenance = f"reservoir:sessions0-{session}"
            elapsed = time.perf_counter() - t0
            if reg_cfg.kind != "none":
                reg_state = estimate_importance(params, x[train_ids], y[train_ids], reg_cfg.kind)

            groups = None if data.groups is None else data.groups[test_ids]
            rows.append({
                "session": session,
                "method": method.name,
                "seed": seed,
                "accuracy": evaluate(params, x[test_ids], y[test_ids]),
                "train_seconds": round(elapsed, 6) if spec.timing else None,
                "weight_update_fraction": result.weight_update_fraction,
                "replay_size": int(replay_size),
                "replay": method.replay,
                "weight_opt": mode,
                "train_size": int(len(train_ids)),
                "epochs": result.epochs_run,
                "best_epoch": result.best_epoch,
                "val_accuracy": result.best_val_accuracy,
                "max_arm_fraction": result.max_arm_fraction,
                "epoch_update_fractions": result.epoch_update_fractions,
                "arm_pulls": result.arm_pulls,
                "group_accuracy": _group_accuracy(params, x[test_ids], y[test_ids], groups),
            })
            _checkpoint(spec, method, seed, session, params, result, reg_state, clustering,
                        replay_ids, provenance)
    except Exception:
        log.error("method %s seed %d failed in session %d", method.name, seed, session)
        try:
            _checkpoint(spec, method, seed, session, params, result, reg_state, clustering,
                        replay_ids, provenance)
        except Exception:  # keep the original error
            log.exception("checkpoint after failure could not be written")
        raise
    return rows


def run_experiment(spec: ExperimentSpec, seeds=(0,)) -> list[dict]:
    """Every method under every seed, rows ordered by (seed, method, session)."""
    rows = []
    for seed in seeds:
        for method in spec.methods:
            rows.extend(run_method(spec, method, seed))
    return rows


def session_mean(rows: list[dict], first: int = 1) -> float:
    """Mean accuracy over sessions >= ``first`` for a single (method, seed) run."""
    acc = [r["accuracy"] for r in rows if r["session"] >= first]
    return float(np.mean(acc)) if acc else float("nan")
