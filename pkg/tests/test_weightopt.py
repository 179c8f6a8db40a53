import numpy as np
import pytest

import mabretrain.weightopt as wo
from mabretrain.bandits import BanditPolicy
from mabretrain.clustering import ClusterArm, single_arm
from mabretrain.harness import EarlyStopRule
from mabretrain.nn import LayerSpec, NetworkParams, loss_value, mlp_specs
from mabretrain.weightopt import Batches, TrainConfig, init_cluster_rewards, train_session


def toy(n=96, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = (x[:, 0] - x[:, 2] > 0).astype(int)
    p = NetworkParams.init(mlp_specs(3, [6], 2, "tanh"), rng)
    return p, Batches.split(x, y, 16), x[:32], y[:32]


def split_arms(p, n_arms=3, seed=0):
    labels = np.random.default_rng(seed).integers(n_arms, size=p.size)
    labels[:n_arms] = np.arange(n_arms)
    return [ClusterArm(i, np.flatnonzero(labels == i), {}, int((labels == i).sum())) for i in range(n_arms)]


@pytest.mark.parametrize("kind", ["ei2", "exp3"])
def test_single_arm_reduction(kind):
    p, batches, vx, vy = toy()
    runs = {}
    for mode in ("full_epochs", "minib", "epochs"):
        cfg = TrainConfig(mode=mode, max_epochs=6, lr=0.01)
        res = train_session(p, batches, vx, vy, cfg, arms=single_arm(p.size),
                            policy=BanditPolicy(kind, seed=1), shuffle_seed=5)
        runs[mode] = [s.copy() for s in res.trajectory.snapshots]
    for mode in ("minib", "epochs"):
        assert all(np.array_equal(a, b) for a, b in zip(runs[mode], runs["full_epochs"]))


def test_freeze_soundness(monkeypatch):
    p, batches, vx, vy = toy()
    arms = split_arms(p)
    sizes = {a.size for a in arms}
    seen = []
    real = wo.adam_step

    def spy(params, grad, mask, state):
        before = params.theta.copy()
        real(params, grad, mask, state)
        assert np.array_equal(params.theta[~mask], before[~mask])
        seen.append(int(mask.sum()))

    monkeypatch.setattr(wo, "adam_step", spy)
    res = train_session(p, batches, vx, vy, TrainConfig(mode="minib", max_epochs=3), arms=arms,
                        policy=BanditPolicy("ts", seed=2))
    assert set(seen) <= sizes
    assert all(n >= 1 for n in res.arm_pulls)  # initialization covers every arm
    assert max(res.epoch_update_fractions) <= res.max_arm_fraction + 1e-12
    main_steps = seen[-res.steps:]
    per_epoch = np.array(main_steps).reshape(res.epochs_run, -1).mean(axis=1) / p.size
    assert np.allclose(per_epoch, res.epoch_update_fractions)


def test_init_reward_closed_form_quadratic():
    # loss(w, b) = (w x + b - y)^2 on one sample; the first Adam step moves a coordinate by lr * g / (|g| + eps)
    p = NetworkParams([LayerSpec(1, 1, "identity")])
    p.theta[:] = [0.5, -0.25]
    x, y, lr = 2.0, 3.0, 0.1
    batches = Batches.split(np.array([[x]]), np.array([[y]]), 1)
    arms = [ClusterArm(0, np.array([0]), {}, 1), ClusterArm(1, np.array([1]), {}, 1)]
    cfg = TrainConfig(mode="minib", lr=lr, loss="mse")
    _, rewards = init_cluster_rewards(p, arms, batches, cfg, BanditPolicy("ei"))
    r = 0.5 * x - 0.25 - y
    g_w, g_b = 2 * r * x, 2 * r
    w_new = 0.5 - lr * g_w / (abs(g_w) + 1e-8)
    b_new = -0.25 - lr * g_b / (abs(g_b) + 1e-8)
    expect_w = r ** 2 - (w_new * x - 0.25 - y) ** 2
    expect_b = r ** 2 - (0.5 * x + b_new - y) ** 2
    assert rewards[0] == pytest.approx(expect_w, abs=1e-8)
    assert rewards[1] == pytest.approx(expect_b, abs=1e-8)
    assert p.theta.tolist() == [0.5, -0.25]


def test_zero_gradient_arm_reward_zero():
    p = NetworkParams([LayerSpec(1, 1, "identity")])
    p.theta[:] = [1.0, 0.0]
    batches = Batches.split(np.zeros((4, 1)), np.ones((4, 1)), 2)  # x = 0: no gradient on w
    arms = [ClusterArm(0, np.array([0]), {}, 1), ClusterArm(1, np.array([1]), {}, 1)]
    _, rewards = init_cluster_rewards(p, arms, batches, TrainConfig(loss="mse"), BanditPolicy())
    assert rewards[0] == 0.0 and rewards[1] > 0


def test_single_arm_init_reward_is_plain_epoch():
    p, batches, _, _ = toy()
    cfg = TrainConfig(mode="minib")
    _, rewards = init_cluster_rewards(p, single_arm(p.size), batches, cfg, BanditPolicy(), seed=3)
    q = p.copy()
    adam = wo.AdamState.zeros(q.size, lr=cfg.lr)
    total = 0.0
    for b in np.random.default_rng(3).permutation(len(batches)):
        xb, yb = batches.batch(b)
        before = loss_value(q, xb, yb)
        wo.step(q, adam, xb, yb, None, None, cfg, False)
        total += before - loss_value(q, xb, yb)
    assert rewards[0] == pytest.approx(total, rel=1e-12)


class RewardSpy:
    def __init__(self):
        self.rewards = []

    def choose(self, epoch, scheduled):
        return scheduled

    def before(self, epoch, b):
        pass

    def wants_reward(self, epoch):
        return True

    def observe(self, epoch, b, reward):
        self.rewards.append(reward)

    def end_epoch(self, epoch):
        pass


def test_epoch_reward_additivity():
    p, _, vx, vy = toy()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 3))
    batches = Batches.split(x, (x[:, 0] > 0).astype(int), 10)  # two batches
    cfg = TrainConfig(mode="epochs", max_epochs=1)
    res = train_session(p, batches, vx, vy, cfg, arms=single_arm(p.size), policy=BanditPolicy(seed=0))
    spy = RewardSpy()
    train_session(p, batches, vx, vy, TrainConfig(mode="full_epochs", max_epochs=1), recorder=spy)
    arm = res.arm_stats[0]
    epoch_reward = arm.reward_sum - res.init_rewards[0] / len(batches)
    assert epoch_reward == pytest.approx(sum(spy.rewards), rel=1e-12)
    assert arm.pulls == 1 + res.epochs_run


def test_epochs_mode_pull_count():
    p, batches, vx, vy = toy()
    arms = split_arms(p)
    res = train_session(p, batches, vx, vy, TrainConfig(mode="epochs", max_epochs=7, patience=100),
                        arms=arms, policy=BanditPolicy("ucb"))
    assert sum(res.arm_pulls) == len(arms) + 7


def test_full_epochs_zero_gradient_fixed():
    p = NetworkParams([LayerSpec(2, 1, "identity")])
    x = np.random.default_rng(0).normal(size=(8, 2))
    batches = Batches.split(x, np.zeros((8, 1)), 4)
    res = train_session(p, batches, None, None, TrainConfig(max_epochs=3, loss="mse"))
    assert not res.params.theta.any()


def test_convex_loss_non_increasing():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 3))
    y = (x @ np.array([1.0, -2.0, 0.5]) + 0.3)[:, None]
    p = NetworkParams([LayerSpec(3, 1, "identity")])
    res = train_session(p, Batches.split(x, y, 64), None, None,
                        TrainConfig(max_epochs=15, lr=0.01, loss="mse"))
    hist = res.loss_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_early_stop_matches_rule():
    p, batches, vx, vy = toy(n=64)
    cfg = TrainConfig(max_epochs=60, patience=3, lr=0.05)
    res = train_session(p, batches, vx, vy, cfg)
    rule = EarlyStopRule(patience=3, min_delta=cfg.min_delta)
    h = res.val_history
    assert len(h) == res.epochs_run
    if res.epochs_run < 60:
        assert rule.should_stop(h) and not rule.should_stop(h[:-1])
    assert h[res.best_epoch - 1] == res.best_val_accuracy == max(h)


def test_best_validation_params_returned():
    p, batches, vx, vy = toy(n=64)
    res = train_session(p, batches, vx, vy, TrainConfig(max_epochs=8))
    best = res.trajectory.snapshots[res.best_epoch]
    assert np.array_equal(res.params.theta, best)
