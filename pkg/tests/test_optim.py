import math

import numpy as np
import pytest

from laae.nn import ConfigError, ParameterSet
from laae.optim import SGD, Adam, Lookahead, OptimizerError, make_optimizer


def params(**arrays):
    return ParameterSet((k, np.asarray(v, dtype=float)) for k, v in arrays.items())


class Quadratic:
    """f(theta) = 0.5 * theta^T A theta - b^T theta with A symmetric positive definite."""

    def __init__(self, n=10, seed=0):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(n, n))
        self.a = m @ m.T / n + np.eye(n)
        self.b = rng.normal(size=n)
        self.theta0 = rng.normal(size=n)

    def grad(self, theta):
        return self.a @ theta - self.b


def run(opt, problem, steps):
    ps = params(theta=problem.theta0.copy())
    traj = []
    for _ in range(steps):
        opt.step(ps, {"theta": problem.grad(ps["theta"])})
        traj.append(ps["theta"].tobytes())
    return traj


def adam_reference(theta0, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-loop Adam over Python floats, one coordinate at a time."""
    theta = [float(v) for v in theta0]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    out = []
    for t, g in enumerate(grads, 1):
        for i in range(len(theta)):
            gi = float(g[i])
            m[i] = b1 * m[i] + (1.0 - b1) * gi
            v[i] = b2 * v[i] + (1.0 - b2) * (gi * gi)
            m_hat = m[i] / (1.0 - b1 ** t)
            v_hat = v[i] / (1.0 - b2 ** t)
            theta[i] = theta[i] - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append((list(theta), list(m), list(v)))
    return out


# -- sgd ----------------------------------------------------------------------

def test_sgd_examples():
    ps = params(x=[1.0])
    SGD(0.1).step(ps, {"x": np.array([1.0])})
    assert ps["x"][0] == 0.9
    ps = params(x=[1.0])
    SGD(0.1).step(ps, {"x": np.array([0.0])})
    assert ps["x"][0] == 1.0
    ps, opt = params(x=[1.0]), SGD(0.5)
    for _ in range(2):
        opt.step(ps, {"x": ps["x"].copy()})
    assert ps["x"][0] == 0.25


def test_non_finite_gradient_names_parameter():
    ps = params(w=[1.0], bad=[2.0])
    for opt in (SGD(0.1), Adam()):
        with pytest.raises(OptimizerError, match="'bad'"):
            opt.step(ps, {"w": np.array([0.0]), "bad": np.array([np.inf])})


# -- adam ---------------------------------------------------------------------

def test_adam_first_step_hand_value():
    ps = params(x=[0.0])
    Adam(lr=1e-3).step(ps, {"x": np.array([0.1])})
    assert ps["x"][0] == pytest.approx(-1e-3 * 0.1 / (0.1 + 1e-8), abs=1e-18)
    assert ps["x"][0] == pytest.approx(-9.999999e-4, abs=1e-10)


def test_adam_zero_gradient_first_step():
    ps = params(x=[0.7])
    Adam().step(ps, {"x": np.array([0.0])})
    assert ps["x"][0] == 0.7


@pytest.mark.parametrize("g", [1e-5, 1e-3, 0.1, 1.0, 1000.0, -1000.0])
def test_adam_first_step_is_scale_free(g):
    ps = params(x=[0.0])
    Adam(lr=1e-3).step(ps, {"x": np.array([g])})
    step = abs(ps["x"][0])
    assert abs(step - 1e-3 * abs(g) / (abs(g) + 1e-8)) < 1e-12
    assert 0.999e-3 <= step <= 1e-3


def test_adam_matches_reference_bitwise():
    rng = np.random.default_rng(5)
    theta0 = rng.normal(size=6)
    grads = [rng.normal(size=6) * 10 ** rng.uniform(-3, 2) for _ in range(50)]
    ref = adam_reference(theta0, grads)
    ps, opt = params(theta=theta0.copy()), Adam()
    for g, (theta, m, v) in zip(grads, ref):
        opt.step(ps, {"theta": g})
        assert ps["theta"].tolist() == theta
        assert opt.m["theta"].tolist() == m
        assert opt.v["theta"].tolist() == v
    assert opt.t == 50
    assert (opt.v["theta"] >= 0).all()


# -- lookahead ----------------------------------------------------------------

@pytest.mark.parametrize("inner", ["adam", "sgd"])
def test_lookahead_k1_alpha1_is_identity(inner):
    q = Quadratic()
    plain = run(make_optimizer(inner, lr=1e-2), q, 120)
    wrapped = run(make_optimizer(f"lookahead({inner})", lr=1e-2, k=1, alpha=1.0), q, 120)
    assert plain == wrapped


def test_lookahead_hand_trace():
    ps = params(x=[0.0])
    opt = Lookahead(SGD(1.0), k=5, alpha=0.5)
    seen = []
    for _ in range(5):
        opt.step(ps, {"x": np.array([1.0])})
        seen.append(ps["x"][0])
    assert seen[:4] == [-1.0, -2.0, -3.0, -4.0]
    assert opt.slow["x"][0] == -2.5
    assert ps["x"][0] == -2.5


def test_lookahead_alpha_one_snapshots_fast_weights():
    q = Quadratic(4, seed=2)
    ps = params(theta=q.theta0.copy())
    opt = Lookahead(SGD(0.05), k=3, alpha=1.0)
    for i in range(1, 10):
        before = ps["theta"].copy()
        opt.step(ps, {"theta": q.grad(ps["theta"])})
        if i % 3 == 0:
            assert np.array_equal(opt.slow["theta"], before - 0.05 * q.grad(before))


def test_lookahead_slow_weights_stay_on_segment():
    q = Quadratic(10, seed=3)
    ps = params(theta=q.theta0.copy())
    inner = Adam(lr=0.05)
    opt = Lookahead(inner, k=5, alpha=0.5)
    for i in range(1, 101):
        prev_slow = None if opt.slow is None else opt.slow["theta"].copy()
        g = q.grad(ps["theta"])
        if i % 5 == 0:
            # fast weights the sync will see
            probe = Adam(lr=0.05)
            probe.t, probe.m, probe.v = inner.t, dict(inner.m), dict(inner.v)
            fast_ps = params(theta=ps["theta"].copy())
            probe.step(fast_ps, {"theta": g})
            fast = fast_ps["theta"]
        opt.step(ps, {"theta": g})
        if i % 5 == 0:
            new = opt.slow["theta"]
            lo, hi = np.minimum(prev_slow, fast), np.maximum(prev_slow, fast)
            assert np.all((lo <= new) & (new <= hi))
            assert np.array_equal(ps["theta"], new)
    assert inner.t == 100  # Adam state survives syncs


def test_optimizers_preserve_shapes_and_finiteness():
    rng = np.random.default_rng(9)
    ps = params(a=rng.normal(size=(2, 3)), b=rng.normal(size=4))
    for spec in ("sgd", "adam", "lookahead(adam)", "lookahead(sgd)"):
        opt = make_optimizer(spec)
        for _ in range(12):
            opt.step(ps, {k: rng.normal(size=v.shape) * 1e3 for k, v in ps.items()})
        assert ps["a"].shape == (2, 3) and ps["b"].shape == (4,)
        assert all(np.isfinite(v).all() for _, v in ps.items())


# -- factory ------------------------------------------------------------------

def test_make_optimizer_defaults():
    adam = make_optimizer("adam")
    assert (adam.lr, adam.beta1, adam.beta2, adam.eps) == (1e-3, 0.9, 0.999, 1e-8)
    la = make_optimizer("lookahead(adam)")
    assert isinstance(la, Lookahead) and (la.k, la.alpha) == (5, 0.5)
    assert isinstance(la.inner, Adam) and la.inner.lr == 1e-3
    assert isinstance(make_optimizer("lookahead(sgd)").inner, SGD)


def test_make_optimizer_rejects_unknown():
    with pytest.raises(ConfigError, match="lookahead\\(adam\\)"):
        make_optimizer("rmsprop")
    with pytest.raises(ConfigError):
        make_optimizer("adam", k=3)
    with pytest.raises(ConfigError):
        make_optimizer("lookahead(adam)", k=0)
    with pytest.raises(ConfigError):
        make_optimizer("lookahead(adam)", alpha=1.5)
