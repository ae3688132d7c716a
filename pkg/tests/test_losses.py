import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semimm.errors import ConfigError, NumericalError, ShapeError
from semimm.losses import (DbFocalConfig, RebalanceConfig, bce_with_logits,
                           db_focal, mse, rebalance_weights, sigmoid)
from semimm.tensor import Rng

from fd import assert_grad_matches, fd_gradient

# frozen output of the scalar oracle below for the reference case
PINNED_DB_FOCAL = 0.03278697826146766


def scalar_db_focal(z, y, priors, gamma, lam, kappa):
    """Independent spreadsheet-style evaluation, one scalar at a time."""
    num_classes = len(z)
    total = 0.0
    for i in range(num_classes):
        bias = -math.log(1.0 / priors[i] - 1.0)
        nu = kappa * bias
        p_plus = 1.0 / (1.0 + math.exp(-(z[i] - nu)))
        p_minus = 1.0 / (1.0 + math.exp(-lam * (z[i] - nu)))
        if y[i] == 1:
            total += (1.0 - p_plus) ** gamma * math.log(p_plus)
        else:
            total += (1.0 / lam) * p_minus ** gamma * math.log(1.0 - p_minus)
    return -total / num_classes


def test_mse_examples():
    loss, grad = mse(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]))
    assert loss == 0.0 and not grad.any()
    loss, _ = mse(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))
    assert loss == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_mse_gradient_finite_differences():
    rng = Rng(1)
    pred = rng.uniform(-1, 1, (4, 5))
    target = rng.uniform(-1, 1, (4, 5))
    _, grad = mse(pred, target)
    numeric, idx = fd_gradient(lambda: mse(pred, target)[0], pred)
    assert_grad_matches(grad, numeric, idx, rtol=1e-6, context="mse")


def test_bce_examples():
    loss, _ = bce_with_logits(np.array([[0.0]]), np.array([[1.0]]))
    assert loss == pytest.approx(0.693147, abs=1e-6)
    loss_hi, _ = bce_with_logits(np.array([[50.0]]), np.array([[1.0]]))
    assert 0.0 <= loss_hi < 1e-20 and math.isfinite(loss_hi)
    loss_lo, grad = bce_with_logits(np.array([[-50.0]]), np.array([[1.0]]))
    assert loss_lo == pytest.approx(50.0, rel=1e-9) and np.isfinite(grad).all()


def test_bce_rejects_non_binary_targets():
    with pytest.raises(ValueError, match="0/1"):
        bce_with_logits(np.zeros((1, 2)), np.array([[0.5, 1.0]]))


def test_bce_gradient_finite_differences():
    rng = Rng(2)
    logits = rng.uniform(-3, 3, (6, 4))
    targets = (rng.uniform(0, 1, (6, 4)) < 0.4).astype(np.float64)
    _, grad = bce_with_logits(logits, targets)
    numeric, idx = fd_gradient(lambda: bce_with_logits(logits, targets)[0], logits)
    assert_grad_matches(grad, numeric, idx, rtol=1e-5, context="bce")


def _plain_cfg(priors, gamma=2.0, lam=5.0, kappa=0.1):
    return DbFocalConfig(gamma=gamma, lam=lam, kappa=kappa,
                         class_priors=tuple(priors))


def test_db_focal_reduces_to_bce_single_point():
    cfg = _plain_cfg([0.5], gamma=0.0, lam=1.0, kappa=0.0)
    loss, _ = db_focal(np.array([[0.0]]), np.array([[1.0]]), cfg)
    assert loss == pytest.approx(0.693147, abs=1e-6)


def test_nu_zero_at_prior_half():
    for kappa in (0.0, 0.1, 0.5, 2.0):
        cfg = _plain_cfg([0.5, 0.5], kappa=kappa)
        assert np.allclose(cfg.bias_logits(), 0.0)
        assert np.allclose(cfg.nu(), 0.0)


def test_db_focal_pinned_regression_value():
    priors = (0.4, 0.1, 0.2, 0.3)
    z = [0.5, -1.0, 2.0, 0.0]
    y = [1, 0, 1, 0]
    oracle = scalar_db_focal(z, y, priors, gamma=2.0, lam=5.0, kappa=0.1)
    assert oracle == pytest.approx(PINNED_DB_FOCAL, abs=1e-12)
    loss, _ = db_focal(np.array([z]), np.array([y], dtype=np.float64),
                       _plain_cfg(priors))
    assert loss == pytest.approx(PINNED_DB_FOCAL, abs=1e-9)


def test_db_focal_equals_bce_under_reduction_params():
    rng = Rng(3)
    for num_classes in (1, 3, 7):
        cfg = _plain_cfg([0.3] * num_classes, gamma=0.0, lam=1.0, kappa=0.0)
        for _ in range(40):
            logits = rng.uniform(-4, 4, (5, num_classes))
            targets = (rng.uniform(0, 1, (5, num_classes)) < 0.4).astype(np.float64)
            a, ga = db_focal(logits, targets, cfg)
            b, gb = bce_with_logits(logits, targets)
            assert a == pytest.approx(b, abs=1e-9)
            assert np.allclose(ga, gb, atol=1e-12)


def test_db_focal_non_negative_when_rebalance_disabled():
    rng = Rng(4)
    cfg = _plain_cfg([0.2, 0.4, 0.15])
    for _ in range(50):
        logits = rng.uniform(-5, 5, (8, 3))
        targets = (rng.uniform(0, 1, (8, 3)) < 0.3).astype(np.float64)
        loss, _ = db_focal(logits, targets, cfg)
        assert loss >= 0.0


def test_kappa_scales_nu_monotonically_below_half():
    priors = np.linspace(0.05, 0.45, 9)
    kappas = [0.05, 0.1, 0.2, 0.4, 0.8]
    prev = None
    for kappa in kappas:
        nu = _plain_cfg(priors, kappa=kappa).nu()
        assert (nu < 0).all()  # prior < 0.5 => negative bias
        if prev is not None:
            assert (nu < prev).all()  # larger kappa => larger magnitude
        prev = nu


def test_db_focal_gradient_finite_differences():
    rng = Rng(5)
    cfg = DbFocalConfig(gamma=2.0, lam=5.0, kappa=0.1,
                        class_priors=(0.4, 0.1, 0.2, 0.3),
                        rebalance=RebalanceConfig(mode="smoothed",
                                                  pos_counts=(40, 10, 20, 30)))
    logits = rng.uniform(-3, 3, (6, 4))
    targets = (rng.uniform(0, 1, (6, 4)) < 0.4).astype(np.float64)
    _, grad = db_focal(logits, targets, cfg)
    numeric, idx = fd_gradient(lambda: db_focal(logits, targets, cfg)[0], logits)
    assert_grad_matches(grad, numeric, idx, rtol=1e-5, context="db_focal")


def test_db_focal_extreme_logits_stay_finite():
    cfg = _plain_cfg([0.25, 0.25])
    logits = np.array([[500.0, -500.0], [-350.0, 350.0]])
    targets = np.array([[1.0, 0.0], [1.0, 0.0]])
    loss, grad = db_focal(logits, targets, cfg)
    assert math.isfinite(loss) and np.isfinite(grad).all()


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_losses_permutation_equivariant(perm_seed):
    rng = Rng(6)
    logits = rng.uniform(-3, 3, (10, 4))
    targets = (rng.uniform(0, 1, (10, 4)) < 0.4).astype(np.float64)
    order = np.random.default_rng(perm_seed).permutation(10)
    cfg = _plain_cfg([0.4, 0.1, 0.2, 0.3])
    for fn in (lambda a, b: mse(a, b)[0],
               lambda a, b: bce_with_logits(a, b)[0],
               lambda a, b: db_focal(a, b, cfg)[0]):
        assert fn(logits, targets) == pytest.approx(
            fn(logits[order], targets[order]), abs=1e-12)


def test_config_rejects_degenerate_priors():
    with pytest.raises(ConfigError):
        _plain_cfg([0.5, 0.0])
    with pytest.raises(ConfigError):
        _plain_cfg([1.0])
    with pytest.raises(ConfigError):
        DbFocalConfig(gamma=2.0, lam=0.0, kappa=0.1, class_priors=(0.5,))


def test_db_focal_shape_and_finite_guards():
    cfg = _plain_cfg([0.5, 0.5])
    with pytest.raises(ShapeError):
        db_focal(np.zeros((2, 3)), np.zeros((2, 3)), cfg)
    with pytest.raises(NumericalError):
        db_focal(np.array([[np.nan, 0.0]]), np.array([[1.0, 0.0]]), cfg)


def test_rebalance_disabled_weights_are_one():
    cfg = _plain_cfg([0.4, 0.1, 0.2, 0.3])
    targets = np.array([[1, 0, 1, 0], [0, 0, 0, 0]], dtype=np.float64)
    assert np.array_equal(rebalance_weights(targets, cfg),
                          np.ones((2, 4)))


def test_rebalance_smoothed_range_and_no_positive_rule():
    cfg = DbFocalConfig(
        gamma=2.0, lam=5.0, kappa=0.1, class_priors=(0.4, 0.1, 0.2, 0.3),
        rebalance=RebalanceConfig(mode="smoothed", alpha=0.1, beta=10.0, mu=0.2,
                                  pos_counts=(40, 10, 20, 30)))
    rng = Rng(7)
    targets = (rng.uniform(0, 1, (50, 4)) < 0.4).astype(np.float64)
    weights = rebalance_weights(targets, cfg)
    no_pos = targets.sum(axis=1) == 0
    assert np.array_equal(weights[no_pos], np.ones((no_pos.sum(), 4)))
    smoothed = weights[~no_pos]
    assert (smoothed > 0.1).all() and (smoothed < 1.1).all()


def test_rebalance_config_validation():
    with pytest.raises(ConfigError):
        RebalanceConfig(mode="bogus")
    with pytest.raises(ConfigError):
        RebalanceConfig(mode="smoothed", pos_counts=(3, 0))
    with pytest.raises(ConfigError):
        DbFocalConfig(gamma=2.0, lam=5.0, kappa=0.1, class_priors=(0.5, 0.5),
                      rebalance=RebalanceConfig(mode="smoothed", pos_counts=(1,)))


def test_sigmoid_stability():
    out = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.isfinite(out).all()
    assert out[0] == 0.0 and out[1] == 0.5 and out[2] == 1.0
