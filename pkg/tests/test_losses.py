import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from laae import tensor as T
from laae.losses import LossError, bce, cvae_loss, kl_gauss, mse
from laae.nn import LatentStats


def var(x):
    return T.Tape().leaf(x)


def stats(mu, lv):
    tape = T.Tape()
    return LatentStats(tape.leaf(mu), tape.leaf(lv))


def kl_by_quadrature(mu: float, logvar: float, n: int = 200_001) -> float:
    """KL(q || N(0,1)) by trapezoid integration of q log(q/p) over mu +- 10 sigma."""
    sigma = math.exp(0.5 * logvar)
    x = np.linspace(mu - 10 * sigma, mu + 10 * sigma, n)
    log_q = -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
    log_p = -0.5 * x * x - 0.5 * math.log(2 * math.pi)
    return float(np.trapezoid(np.exp(log_q) * (log_q - log_p), x))


# -- mse --------------------------------------------------------------------

def test_mse_examples():
    t = np.random.default_rng(0).random((2, 3, 4, 4))
    assert mse(var(t), t).value == 0.0
    assert mse(var(t + 0.5), t).value == pytest.approx(0.25, abs=1e-15)
    assert mse(var([0.0, 1.0]), np.array([1.0, 1.0])).value == 0.5
    with pytest.raises(T.ShapeError):
        mse(var(np.zeros(3)), np.zeros(4))


# -- bce --------------------------------------------------------------------

def test_bce_half_is_ln2_per_element():
    p = np.full((1, 6), 0.5)
    assert bce(var(p), p).value == pytest.approx(6 * math.log(2), abs=1e-12)


def test_bce_single_element_inverse_e():
    assert bce(var([[1 / math.e]]), np.array([[1.0]])).value == pytest.approx(1.0, abs=1e-12)


def test_bce_perfect_prediction_clamped():
    t = np.array([[0.0, 1.0, 1.0, 0.0]])
    v = bce(var(t.copy()), t).value
    assert 0 <= v < 4 * 2e-7


def test_bce_batch_mean_of_per_sample_sums():
    rng = np.random.default_rng(1)
    p, t = rng.uniform(0.1, 0.9, (4, 5)), rng.random((4, 5))
    expected = np.mean(np.sum(-(t * np.log(p) + (1 - t) * np.log(1 - p)), axis=1))
    assert bce(var(p), t).value == pytest.approx(expected, rel=1e-13)
    with pytest.raises(T.ShapeError):
        bce(var(p), t[:2])


# -- kl ---------------------------------------------------------------------

def test_kl_examples():
    assert kl_gauss(stats([[0.0]], [[0.0]])).value == 0.0
    assert kl_gauss(stats([[1.0]], [[0.0]])).value == pytest.approx(0.5, abs=1e-15)
    assert kl_gauss(stats([[0.0]], [[math.log(4)]])).value == pytest.approx(0.806853, abs=1e-6)
    assert kl_gauss(stats([[0.0]], [[math.log(4)]])).value == pytest.approx(
        -0.5 * (1 + math.log(4) - 4), abs=1e-15)


def test_kl_rejects_non_finite():
    with pytest.raises(LossError):
        kl_gauss(stats([[np.nan]], [[0.0]]))


@pytest.mark.parametrize("mu,logvar", [(0.0, 0.0), (1.0, 0.0), (0.0, math.log(4)), (-0.7, -1.3), (2.0, 0.8)])
def test_kl_matches_quadrature(mu, logvar):
    closed = kl_gauss(stats([[mu]], [[logvar]])).value
    assert abs(closed - kl_by_quadrature(mu, logvar)) < 1e-4


def test_kl_grad_wrt_mu_is_mu_over_batch():
    mu = np.random.default_rng(2).normal(size=(5, 3))
    tape = T.Tape()
    m, l = tape.leaf(mu), tape.leaf(np.zeros_like(mu))
    g = T.backward(tape, kl_gauss(LatentStats(m, l)), [m])[m.id]
    np.testing.assert_allclose(g, mu / 5, rtol=1e-15)
    h = 1e-6
    base = mu.copy()
    fd = np.zeros_like(mu)
    for idx in np.ndindex(mu.shape):
        up, dn = base.copy(), base.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (kl_gauss(stats(up, np.zeros_like(mu))).value
                   - kl_gauss(stats(dn, np.zeros_like(mu))).value) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-8)


def test_kl_unique_minimum_at_standard_normal():
    rng = np.random.default_rng(3)
    for _ in range(50):
        mu, lv = rng.normal(scale=1e-2, size=(1, 4)), rng.normal(scale=1e-2, size=(1, 4))
        assert kl_gauss(stats(mu, lv)).value > 0.0


# -- properties -------------------------------------------------------------

finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(mu=arrays(np.float64, (3, 4), elements=finite), lv=arrays(np.float64, (3, 4), elements=finite))
def test_kl_non_negative(mu, lv):
    assert kl_gauss(stats(mu, lv)).value >= -1e-12


@settings(max_examples=60, deadline=None)
@given(p=arrays(np.float64, (2, 5), elements=st.floats(0, 1)),
       t=arrays(np.float64, (2, 5), elements=st.floats(0, 1)))
def test_bce_and_mse_non_negative(p, t):
    assert bce(var(p), t).value >= 0.0
    assert mse(var(p), t).value >= 0.0


# -- cvae loss ----------------------------------------------------------------

def _cvae_parts(seed=4):
    rng = np.random.default_rng(seed)
    tape = T.Tape()
    recon = tape.leaf(rng.uniform(0.1, 0.9, (3, 2, 4, 4)))
    target = rng.random((3, 2, 4, 4))
    st_ = LatentStats(tape.leaf(rng.normal(size=(3, 5))), tape.leaf(rng.normal(size=(3, 5))))
    return recon, target, st_


def test_cvae_loss_components_sum_to_total():
    recon, target, st_ = _cvae_parts()
    loss = cvae_loss(recon, target, st_, beta=1.0)
    assert abs(loss.value - (loss.components["bce"] + loss.components["kl"])) <= 1e-12


def test_cvae_loss_beta_zero_is_bce():
    recon, target, st_ = _cvae_parts()
    loss = cvae_loss(recon, target, st_, beta=0.0)
    assert loss.value == loss.components["bce"] == bce(recon, target).value


def test_cvae_loss_zero_latents_is_bce():
    recon, target, _ = _cvae_parts()
    zero = LatentStats(recon.tape.leaf(np.zeros((3, 5))), recon.tape.leaf(np.zeros((3, 5))))
    loss = cvae_loss(recon, target, zero)
    assert loss.value == bce(recon, target).value


def test_cvae_loss_rejects_negative_beta():
    recon, target, st_ = _cvae_parts()
    with pytest.raises(LossError):
        cvae_loss(recon, target, st_, beta=-1.0)
