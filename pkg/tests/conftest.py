import numpy as np
import pytest

from mabretrain.nn import NetworkParams, mlp_specs


def central_diff(f, theta, h=1e-5):
    """Central finite differences of scalar ``f`` over a flat vector (modified in place, restored)."""
    g = np.zeros_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        up = f()
        theta[i] = old - h
        down = f()
        theta[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b) / (np.abs(b) + 1e-8)


def grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Relative agreement, with an absolute floor for entries that are numerically zero."""
    return bool(np.all((rel_err(analytic, numeric) <= rtol) | (np.abs(analytic - numeric) <= atol)))


@pytest.fixture
def small_net():
    rng = np.random.default_rng(0)
    specs = mlp_specs(3, [5], 2, activation="tanh")
    return NetworkParams.init(specs, rng)


@pytest.fixture
def toy_data():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 3))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    return x, y


def bernoulli_trial(kind, seed, steps=10000, probs=(0.9, 0.1), **policy_kw):
    """Two-arm Bernoulli run after one initial pull per arm; returns pulls of each arm."""
    import random

    from mabretrain.bandits import Bandit, BanditPolicy

    bandit = Bandit(len(probs), BanditPolicy(kind, seed=seed, **policy_kw))
    env = random.Random(10_000 + seed)
    for a, p in enumerate(probs):
        bandit.update(a, float(env.random() < p))
    counts = [0] * len(probs)
    for _ in range(steps):
        a = bandit.select()
        counts[a] += 1
        bandit.update(a, float(env.random() < probs[a]))
    return counts


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
