"""Scalar training objectives.

``mse`` averages over every element. ``bce`` and ``kl_gauss`` sum over the
feature dimensions and average over the batch, which keeps their ratio
independent of batch size.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import LatentStats
from .tensor import ShapeError, Var

PROB_CLAMP = 1e-7


class LossError(ValueError):
    pass


@dataclass
class LossValue:
    total: Var
    components: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.total.value)


def _target(ref: Var, target) -> Var:
    if isinstance(target, Var):
        return target
    return ref.tape.leaf(target)


def mse(recon: Var, target) -> Var:
    target = _target(recon, target)
    if recon.shape != target.shape:
        raise ShapeError(f"mse: recon {recon.shape} vs target {target.shape}")
    return T.mean(T.square(T.sub(recon, target)))


def bce(recon: Var, target) -> Var:
    """Binary cross-entropy, summed per sample and averaged over the batch.

    ``target`` is treated as a constant. Probabilities are clamped to
    ``[1e-7, 1 - 1e-7]``; clamped entries receive no gradient.
    """
    t = target.value if isinstance(target, Var) else T.as_tensor(target)
    if recon.shape != t.shape:
        raise ShapeError(f"bce: recon {recon.shape} vs target {t.shape}")
    n = recon.shape[0] if recon.value.ndim > 1 else 1
    p_raw = recon.value
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (p_raw >= PROB_CLAMP) & (p_raw <= 1.0 - PROB_CLAMP)
    per = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    out = np.array(np.add.reduce(per.ravel()) / n)

    def vjp(g):
        return (float(g) / n * inside * (p - t) / (p * (1.0 - p)),)

    return recon.tape.record(out, (recon,), vjp)


def kl_gauss(stats: LatentStats) -> Var:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latents, batch-averaged."""
    mu, lv = stats.mu.value, stats.logvar.value
    if mu.shape != lv.shape:
        raise ShapeError(f"kl_gauss: mu {mu.shape} vs logvar {lv.shape}")
    if not (np.isfinite(mu).all() and np.isfinite(lv).all()):
        raise LossError("kl_gauss: non-finite mu or logvar")
    n = mu.shape[0] if mu.ndim > 1 else 1
    var = np.exp(lv)
    per = 1.0 + lv - mu * mu - var
    out = np.array(-0.5 * np.add.reduce(per.ravel()) / n)

    def vjp(g):
        g = float(g) / n
        return g * mu, g * 0.5 * (var - 1.0)

    return stats.mu.tape.record(out, (stats.mu, stats.logvar), vjp)


def cae_loss(recon: Var, target) -> LossValue:
    total = mse(recon, target)
    return LossValue(total, {"mse": float(total.value)})


def cvae_loss(recon: Var, target, stats: LatentStats, beta: float = 1.0) -> LossValue:
    """``bce + beta * kl``; the ``kl`` component is reported already weighted."""
    if beta < 0:
        raise LossError(f"beta must be >= 0, got {beta}")
    rec = bce(recon, target)
    kl = T.scale(kl_gauss(stats), beta)
    total = T.add(rec, kl)
    return LossValue(total, {"bce": float(rec.value), "kl": float(kl.value)})
