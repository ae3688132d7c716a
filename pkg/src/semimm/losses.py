"""Training objectives: MSE, BCE-with-logits, and DB-focal for imbalanced
multi-label targets.

All loss functions are pure: they take arrays plus a config and return
(scalar loss, gradient w.r.t. the first argument). Every log-sigmoid is
evaluated through the softplus identity (logaddexp), which switches to the
asymptotic linear form internally, so no intermediate overflows for any
finite logit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (never exponentiates a positive arg)."""
    z = np.asarray(z)
    out = np.empty(z.shape, dtype=np.result_type(z.dtype, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z: np.ndarray) -> np.ndarray:
    """log(1 + e^z) via logaddexp; equals z asymptotically for large z."""
    return np.logaddexp(0.0, z)


def _require_same_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def _require_binary(name: str, targets: np.ndarray) -> None:
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError(f"{name}: targets must be 0/1")


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{name}: non-finite intermediate value")


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all elements of the squared difference."""
    _require_same_shape("mse", pred, target)
    diff = pred - target
    count = diff.size
    loss = float(np.mean(diff * diff, dtype=np.float64))
    grad = (2.0 / count) * diff
    _require_finite("mse", np.array(loss), grad)
    return loss, grad


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of -[y log sigma(z) + (1-y) log(1 - sigma(z))] in stable form."""
    _require_same_shape("bce_with_logits", logits, targets)
    _require_binary("bce_with_logits", targets)
    _require_finite("bce_with_logits", logits)
    # y*softplus(-z) + (1-y)*softplus(z)
    per_elem = targets * softplus(-logits) + (1.0 - targets) * softplus(logits)
    count = logits.size
    loss = float(np.mean(per_elem, dtype=np.float64))
    grad = (sigmoid(logits) - targets) / count
    _require_finite("bce_with_logits", np.array(loss), grad)
    return loss, grad


@dataclass(frozen=True)
class RebalanceConfig:
    """Per-sample class rebalancing for DB-focal.

    disabled: every weight is exactly 1 (the tested default).
    smoothed: r = P_class_i / P_instance_k from inverse positive counts,
    squashed to alpha + sigmoid(beta * (r - mu)), so weights lie in
    (alpha, alpha + 1). Samples with no positive class get weight 1.
    """

    mode: str = "disabled"
    alpha: float = 0.1
    beta: float = 10.0
    mu: float = 0.2
    pos_counts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in ("disabled", "smoothed"):
            raise ConfigError(f"unknown rebalance mode {self.mode!r}")
        if self.mode == "smoothed" and any(n < 1 for n in self.pos_counts):
            raise ConfigError("smoothed rebalance requires positive counts >= 1 per class")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "alpha": self.alpha, "beta": self.beta,
                "mu": self.mu, "pos_counts": list(self.pos_counts)}


@dataclass(frozen=True)
class DbFocalConfig:
    """Hyperparameters and class priors for the DB-focal loss.

    The per-class logit bias is derived from the priors on demand:
    bias_i = -log(1/p_i - 1), nu_i = kappa * bias_i. Priors of exactly
    0 or 1 are rejected because the bias would be infinite.
    """

    gamma: float
    lam: float
    kappa: float
    class_priors: tuple[float, ...]
    rebalance: RebalanceConfig = field(default_factory=RebalanceConfig)

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        for p in self.class_priors:
            if not 0.0 < p < 1.0:
                raise ConfigError(f"class prior {p} outside (0, 1)")
        if self.rebalance.mode == "smoothed" and \
                len(self.rebalance.pos_counts) != self.num_classes:
            raise ConfigError("rebalance pos_counts length must equal the class count")

    @property
    def num_classes(self) -> int:
        return len(self.class_priors)

    def bias_logits(self) -> np.ndarray:
        p = np.asarray(self.class_priors, dtype=np.float64)
        return -np.log(1.0 / p - 1.0)

    def nu(self) -> np.ndarray:
        return self.kappa * self.bias_logits()

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "lambda": self.lam, "kappa": self.kappa,
                "class_priors": list(self.class_priors),
                "rebalance": self.rebalance.to_dict()}


def rebalance_weights(targets: np.ndarray, cfg: DbFocalConfig) -> np.ndarray:
    """Per-(sample, class) rebalance weights r-hat for DB-focal."""
    batch, num_classes = targets.shape
    if cfg.rebalance.mode == "disabled":
        return np.ones((batch, num_classes), dtype=np.float64)
    inv_counts = 1.0 / np.asarray(cfg.rebalance.pos_counts, dtype=np.float64)
    p_class = inv_counts / num_classes
    weights = np.ones((batch, num_classes), dtype=np.float64)
    pos_per_sample = targets.sum(axis=1)
    for k in range(batch):
        if pos_per_sample[k] == 0:
            continue
        p_instance = float(np.sum(targets[k] * inv_counts)) / float(pos_per_sample[k])
        r = p_class / p_instance
        weights[k] = cfg.rebalance.alpha + sigmoid(cfg.rebalance.beta * (r - cfg.rebalance.mu))
    return weights


def db_focal(logits: np.ndarray, targets: np.ndarray,
             cfg: DbFocalConfig) -> tuple[float, np.ndarray]:
    """Focal distribution-balanced loss over a (batch x C) logit matrix.

    Per sample: -(1/C) * sum_i r_i [ (1-p_plus)^gamma * y_i * log p_plus
    + (1/lambda) * p_minus^gamma * (1-y_i) * log(1-p_minus) ], with
    p_plus = sigmoid(z - nu) and p_minus = sigmoid(lambda * (z - nu)).
    The batch reduction is the mean, keeping the scale batch-size free.
    Returns the scalar loss and its analytic gradient w.r.t. the logits.
    """
    _require_same_shape("db_focal", logits, targets)
    _require_binary("db_focal", targets)
    _require_finite("db_focal", logits)
    batch, num_classes = logits.shape
    if num_classes != cfg.num_classes:
        raise ShapeError(
            f"db_focal: logits have {num_classes} classes, config has {cfg.num_classes}")

    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    nu = cfg.nu()
    u = z - nu
    v = cfg.lam * u

    p_plus = sigmoid(u)
    p_minus = sigmoid(v)
    log_p_plus = -softplus(-u)        # log sigmoid(u)
    log_1m_p_minus = -softplus(v)     # log (1 - sigmoid(v))

    one_m_pp_g = np.power(1.0 - p_plus, cfg.gamma)
    pm_g = np.power(p_minus, cfg.gamma)

    pos_term = one_m_pp_g * log_p_plus
    neg_term = (1.0 / cfg.lam) * pm_g * log_1m_p_minus
    weights = rebalance_weights(targets, cfg)
    per_elem = weights * (y * pos_term + (1.0 - y) * neg_term)
    loss = float(-np.sum(per_elem, dtype=np.float64) / (num_classes * batch))

    # d/dz of the bracketed terms (chain rule through u and v):
    #   pos: (1-p+)^g * ((1-p+) - g*p+*log p+)
    #   neg: g*p-^g*(1-p-)*log(1-p-) - p-^(g+1)
    dpos = one_m_pp_g * ((1.0 - p_plus) - cfg.gamma * p_plus * log_p_plus)
    dneg = cfg.gamma * pm_g * (1.0 - p_minus) * log_1m_p_minus - pm_g * p_minus
    grad = -(weights * (y * dpos + (1.0 - y) * dneg)) / (num_classes * batch)

    _require_finite("db_focal", np.array(loss), grad)
    return loss, grad.astype(logits.dtype, copy=False)
