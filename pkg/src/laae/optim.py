"""SGD, Adam and the Lookahead wrapper.

Every optimizer exposes ``step(params, grads)`` where ``params`` is a
:class:`~laae.nn.ParameterSet` (updated by replacing arrays, never in place)
and ``grads`` maps parameter names to arrays of the same shape.
"""
from __future__ import annotations

import re
from typing import Mapping

import numpy as np

from .nn import ConfigError, ParameterSet


class OptimizerError(ValueError):
    pass


def _check_grads(params: ParameterSet, grads: Mapping[str, np.ndarray]) -> None:
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise OptimizerError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.isfinite(g).all():
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")


class SGD:
    def __init__(self, lr: float = 1e-3):
        if not lr > 0:
            raise ConfigError(f"sgd: lr must be > 0, got {lr}")
        self.lr = float(lr)

    def step(self, params: ParameterSet, grads: Mapping[str, np.ndarray]) -> None:
        _check_grads(params, grads)
        for name in params:
            params[name] = params[name] - self.lr * grads[name]

    def describe(self) -> str:
        return f"sgd(lr={self.lr!r})"


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not lr > 0:
            raise ConfigError(f"adam: lr must be > 0, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"adam: betas must lie in [0, 1), got {beta1}, {beta2}")
        if not eps > 0:
            raise ConfigError(f"adam: eps must be > 0, got {eps}")
        self.lr, self.beta1, self.beta2, self.eps = float(lr), float(beta1), float(beta2), float(eps)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParameterSet, grads: Mapping[str, np.ndarray]) -> None:
        _check_grads(params, grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in params:
            g = grads[name]
            m = b1 * self.m.get(name, 0.0) + (1.0 - b1) * g
            v = b2 * self.v.get(name, 0.0) + (1.0 - b2) * (g * g)
            self.m[name], self.v[name] = m, v
            m_hat = m / bc1
            v_hat = v / bc2
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def describe(self) -> str:
        return f"adam(lr={self.lr!r}, beta1={self.beta1!r}, beta2={self.beta2!r}, eps={self.eps!r})"


class Lookahead:
    """k fast steps of ``inner``, then pull the slow weights toward the fast ones.

    Slow weights are snapshotted from the parameters on the first step. At
    each sync ``slow = (1 - alpha) * slow + alpha * fast`` and the live
    parameters are reset to ``slow``. The inner optimizer's state is kept
    across syncs unless ``reset_inner`` is set.
    """

    def __init__(self, inner, k: int = 5, alpha: float = 0.5, reset_inner: bool = False):
        if int(k) != k or k < 1:
            raise ConfigError(f"lookahead: k must be a positive int, got {k}")
        if not 0 < alpha <= 1:
            raise ConfigError(f"lookahead: alpha must lie in (0, 1], got {alpha}")
        self.inner = inner
        self.k = int(k)
        self.alpha = float(alpha)
        self.reset_inner = reset_inner
        self.inner_steps = 0
        self.slow: dict[str, np.ndarray] | None = None

    def step(self, params: ParameterSet, grads: Mapping[str, np.ndarray]) -> None:
        if self.slow is None:
            self.slow = {name: value.copy() for name, value in params.items()}
        self.inner.step(params, grads)
        self.inner_steps += 1
        if self.inner_steps % self.k == 0:
            self.sync(params)

    def sync(self, params: ParameterSet) -> None:
        a = self.alpha
        for name in params:
            slow = (1.0 - a) * self.slow[name] + a * params[name]
            self.slow[name] = slow
            params[name] = slow.copy()
        if self.reset_inner and isinstance(self.inner, Adam):
            self.inner.m.clear()
            self.inner.v.clear()
            self.inner.t = 0

    def describe(self) -> str:
        return f"lookahead(k={self.k}, alpha={self.alpha!r}, inner={self.inner.describe()})"


VALID_SPECS = ("sgd", "adam", "lookahead(adam)", "lookahead(sgd)")

_INNER_KEYS = {"sgd": ("lr",), "adam": ("lr", "beta1", "beta2", "eps")}


def make_optimizer(spec: str, **hyper):
    """Build an optimizer from ``spec`` plus optional hyperparameter overrides.

    Accepted overrides: ``lr``, ``beta1``, ``beta2``, ``eps`` for the inner
    optimizer and ``k``, ``alpha`` for Lookahead. Unknown keys are rejected.
    """
    spec = spec.strip().lower().replace(" ", "")
    m = re.fullmatch(r"lookahead\((\w+)\)", spec)
    inner_name = m.group(1) if m else spec
    if spec not in VALID_SPECS:
        raise ConfigError(f"unknown optimizer {spec!r}; valid specs: {', '.join(VALID_SPECS)}")
    allowed = set(_INNER_KEYS[inner_name]) | ({"k", "alpha"} if m else set())
    extra = set(k for k, v in hyper.items() if v is not None) - allowed
    if extra:
        raise ConfigError(f"{spec}: unsupported hyperparameters {sorted(extra)}")
    inner_kw = {k: hyper[k] for k in _INNER_KEYS[inner_name] if hyper.get(k) is not None}
    inner = SGD(**inner_kw) if inner_name == "sgd" else Adam(**inner_kw)
    if not m:
        return inner
    la_kw = {k: hyper[k] for k in ("k", "alpha") if hyper.get(k) is not None}
    return Lookahead(inner, **la_kw)
