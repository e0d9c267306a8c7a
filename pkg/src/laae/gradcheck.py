"""Finite-difference verification of every differentiable op.

Each registered case builds random inputs (dims at most (2, 3, 8, 8)),
reduces the op's output to a scalar through a fixed random projection and
compares the tape gradient with a central difference (h = 1e-5) for every
input element. Error is ``|analytic - numeric| / max(1, |analytic|)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .losses import bce, kl_gauss, mse
from .nn import LatentStats, make_rng, reparameterize

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class GradCase:
    op: str
    make_inputs: Callable[[np.random.Generator], list[np.ndarray]]
    fn: Callable[..., T.Var]
    # indices of inputs to differentiate; the rest are constants
    wrt: Sequence[int] | None = None


@dataclass
class GradResult:
    op: str
    max_rel_err: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.op:<22s} max rel err {self.max_rel_err:.3e}"


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(-1, 1, shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _stats(mu, lv):
    return LatentStats(mu, lv)


def default_cases() -> list[GradCase]:
    u = lambda rng, *s: rng.uniform(-1, 1, s)  # noqa: E731
    return [
        GradCase("conv2d", lambda r: [u(r, 2, 3, 8, 8), u(r, 2, 3, 3, 3), u(r, 2)],
                 lambda x, w, b: T.conv2d(x, w, b, 1, 0)),
        GradCase("conv2d", lambda r: [u(r, 2, 3, 8, 8), u(r, 2, 3, 4, 4), u(r, 2)],
                 lambda x, w, b: T.conv2d(x, w, b, 2, 1)),
        GradCase("conv_transpose2d", lambda r: [u(r, 2, 2, 4, 4), u(r, 2, 3, 4, 4), u(r, 3)],
                 lambda x, w, b: T.conv_transpose2d(x, w, b, 2, 1)),
        GradCase("conv_transpose2d", lambda r: [u(r, 2, 2, 5, 5), u(r, 2, 3, 3, 3), u(r, 3)],
                 lambda x, w, b: T.conv_transpose2d(x, w, b, 1, 0)),
        GradCase("dense", lambda r: [u(r, 2, 8), u(r, 8, 3), u(r, 3)], T.dense),
        GradCase("relu", lambda r: [_away_from_zero(r, (2, 3, 8, 8))], T.relu),
        GradCase("sigmoid", lambda r: [3 * u(r, 2, 3, 8, 8)], T.sigmoid),
        GradCase("exp", lambda r: [u(r, 2, 3, 8, 8)], T.exp),
        GradCase("add", lambda r: [u(r, 2, 3, 4, 4), u(r, 2, 3, 4, 4)], T.add),
        GradCase("sub", lambda r: [u(r, 2, 3, 4, 4), u(r, 2, 3, 4, 4)], T.sub),
        GradCase("mul", lambda r: [u(r, 2, 3, 4, 4), u(r, 2, 3, 4, 4)], T.mul),
        GradCase("scale", lambda r: [u(r, 2, 3, 8, 8)], lambda x: T.scale(x, -1.7)),
        GradCase("reshape", lambda r: [u(r, 2, 3, 4, 4)], lambda x: T.reshape(x, (6, 16))),
        GradCase("flatten", lambda r: [u(r, 2, 3, 4, 4)], T.flatten),
        GradCase("sum", lambda r: [u(r, 2, 3, 8, 8)], T.sum),
        GradCase("mean", lambda r: [u(r, 2, 3, 8, 8)], T.mean),
        GradCase("mse", lambda r: [u(r, 2, 3, 8, 8), u(r, 2, 3, 8, 8)], mse),
        GradCase("bce", lambda r: [r.uniform(0.05, 0.95, (2, 3, 8, 8)), r.uniform(0, 1, (2, 3, 8, 8))],
                 lambda p, t: bce(p, t), wrt=[0]),
        GradCase("kl_gauss", lambda r: [u(r, 2, 8), u(r, 2, 8)], lambda m, lv: kl_gauss(_stats(m, lv))),
        GradCase("reparameterize", lambda r: [u(r, 2, 8), u(r, 2, 8), r.standard_normal((2, 8))],
                 lambda m, lv, e: reparameterize(_stats(m, lv), e), wrt=[0, 1]),
    ]


def _scalar_loss(case: GradCase, arrays: list[np.ndarray], proj: np.ndarray | None):
    tape = T.Tape()
    vars_ = [tape.leaf(a) for a in arrays]
    out = case.fn(*vars_)
    if out.value.size != 1:
        out = T.sum(T.mul(out, tape.leaf(proj)))
    return tape, vars_, out


def check_case(case: GradCase, seed: int = 0, h: float = STEP) -> float:
    """Max relative error between tape and central-difference gradients."""
    rng = make_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in case.make_inputs(rng)]
    wrt = list(range(len(arrays))) if case.wrt is None else list(case.wrt)
    probe = T.Tape()
    out_shape = case.fn(*[probe.leaf(a) for a in arrays]).shape
    proj = rng.uniform(-1, 1, out_shape) if int(np.prod(out_shape)) != 1 else None

    tape, vars_, loss = _scalar_loss(case, arrays, proj)
    grads = T.backward(tape, loss, [vars_[i] for i in wrt])
    worst = 0.0
    for i in wrt:
        analytic = grads[vars_[i].id]
        x = arrays[i]
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + h
            fp = float(_scalar_loss(case, arrays, proj)[2].value)
            x[idx] = orig - h
            fm = float(_scalar_loss(case, arrays, proj)[2].value)
            x[idx] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic[idx]
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err if np.isfinite(err) else np.inf)
    return worst


def analytic_checks(seed: int = 0) -> list[GradResult]:
    """Closed-form gradients of reparameterize and kl_gauss."""
    rng = make_rng(seed, 1)
    mu, lv, eps = rng.uniform(-1, 1, (3, 5)), rng.uniform(-1, 1, (3, 5)), rng.standard_normal((3, 5))

    tape = T.Tape()
    m, l = tape.leaf(mu), tape.leaf(lv)
    z = reparameterize(LatentStats(m, l), eps)
    # z is elementwise in (mu, logvar), so d sum(z) gives the diagonal partials
    g = T.backward(tape, T.sum(z), [m, l])
    err_mu = float(np.max(np.abs(g[m.id] - 1.0)))
    err_lv = float(np.max(np.abs(g[l.id] - 0.5 * np.exp(0.5 * lv) * eps)))

    tape = T.Tape()
    m, l = tape.leaf(mu), tape.leaf(lv)
    g = T.backward(tape, kl_gauss(LatentStats(m, l)), [m])
    err_kl = float(np.max(np.abs(g[m.id] - mu / mu.shape[0])))
    return [GradResult("analytic:dz/dmu", err_mu, err_mu < 1e-12),
            GradResult("analytic:dz/dlogvar", err_lv, err_lv < 1e-12),
            GradResult("analytic:dkl/dmu", err_kl, err_kl < 1e-12)]


def run(cases: list[GradCase] | None = None, tol: float = TOLERANCE, seed: int = 0,
        include_analytic: bool = True) -> list[GradResult]:
    """One result per op (worst case over its configurations)."""
    cases = default_cases() if cases is None else cases
    worst: dict[str, float] = {}
    for i, case in enumerate(cases):
        worst[case.op] = max(worst.get(case.op, 0.0), check_case(case, seed + i))
    results = [GradResult(op, err, bool(err < tol)) for op, err in worst.items()]
    if include_analytic:
        results += analytic_checks(seed)
    return results
