"""Joint detection loss: binary cross-entropy over sampled anchors plus
smooth-L1 box regression gated by the positive indicator, with analytic
gradients. The same pattern serves the detection head, whose classifier
is categorical cross-entropy over num_classes + 1.

smooth-L1 uses the continuous convention with knee at 1/sigma^2:
0.5*(sigma*x)^2 inside, |x| - 0.5/sigma^2 outside, so value and slope both
match at the knee.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_P_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Balance weight between the two terms and the smooth-L1 steepness."""

    alpha: float = 1.0
    sigma: float = 3.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class RpnBatch:
    """One sampled minibatch of anchor predictions.

    ``p``/``p_star``: predicted object probabilities and {0,1} labels for
    the n_f classification anchors. ``t``/``t_star``: predicted and target
    regression 4-vectors for the n_r regression anchors, gated by
    ``p_star_reg`` (defaults to ``p_star`` when the two sets coincide).
    """

    p: np.ndarray
    p_star: np.ndarray
    t: np.ndarray
    t_star: np.ndarray
    p_star_reg: np.ndarray | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        self.p_star = np.asarray(self.p_star, dtype=np.float64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1, 4)
        self.t_star = np.asarray(self.t_star, dtype=np.float64).reshape(-1, 4)
        if self.p.shape != self.p_star.shape:
            raise ValueError("p and p_star must have equal length")
        if self.t.shape != self.t_star.shape:
            raise ValueError("t and t_star must have equal shape")
        if self.p.size < 1 or self.t.shape[0] < 1:
            raise ValueError("batch needs at least one classification and one regression row")
        if self.p_star_reg is None:
            if self.t.shape[0] != self.p.size:
                raise ValueError("p_star_reg required when regression rows differ from p rows")
            self.p_star_reg = self.p_star
        else:
            self.p_star_reg = np.asarray(self.p_star_reg, dtype=np.float64).reshape(-1)
            if self.p_star_reg.size != self.t.shape[0]:
                raise ValueError("p_star_reg must have one entry per regression row")

    @property
    def n_f(self) -> int:
        return self.p.size

    @property
    def n_r(self) -> int:
        return self.t.shape[0]


def classification_loss(p, p_star, n_f: int | None = None) -> float:
    """-(1/N_f) sum log(p* p + (1-p*)(1-p)), probabilities clamped."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    p_star = np.asarray(p_star, dtype=np.float64).reshape(-1)
    if p.shape != p_star.shape:
        raise ValueError("p and p_star must have equal length")
    n = p.size if n_f is None else n_f
    pc = np.clip(p, _P_CLAMP, 1.0 - _P_CLAMP)
    q = p_star * pc + (1.0 - p_star) * (1.0 - pc)
    return float(-np.log(q).sum() / n)


def smooth_l1(x, sigma: float = 3.0):
    """Robust loss: quadratic inside |x| < 1/sigma^2, linear outside."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    knee = 1.0 / (sigma * sigma)
    inside = np.abs(x) < knee
    out = np.where(inside, 0.5 * (sigma * x) ** 2, np.abs(x) - 0.5 * knee)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(x, sigma: float = 3.0):
    """d/dx of smooth_l1: sigma^2 x inside the knee, sign(x) outside."""
    x = np.asarray(x, dtype=np.float64)
    knee = 1.0 / (sigma * sigma)
    return np.where(np.abs(x) < knee, sigma * sigma * x, np.sign(x))


def regression_loss(t, t_star, p_star, n_r: int | None = None, config: LossConfig = LossConfig()) -> float:
    """(alpha/N_r) sum_i p*_i sum_coords smooth_l1(t - t*)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 4)
    t_star = np.asarray(t_star, dtype=np.float64).reshape(-1, 4)
    p_star = np.asarray(p_star, dtype=np.float64).reshape(-1)
    if t.shape != t_star.shape or p_star.size != t.shape[0]:
        raise ValueError("regression arrays must agree in length")
    n = t.shape[0] if n_r is None else n_r
    per_row = smooth_l1(t - t_star, config.sigma).sum(axis=1)
    return float(config.alpha * (p_star * per_row).sum() / n)


def total_loss(batch: RpnBatch, config: LossConfig = LossConfig()):
    """Joint loss and its gradients w.r.t. p and t.

    Returns (loss, grad_p, grad_t). The clamp on p contributes zero
    gradient where it is active.
    """
    cls = classification_loss(batch.p, batch.p_star, batch.n_f)
    reg = regression_loss(batch.t, batch.t_star, batch.p_star_reg, batch.n_r, config)

    pc = np.clip(batch.p, _P_CLAMP, 1.0 - _P_CLAMP)
    q = batch.p_star * pc + (1.0 - batch.p_star) * (1.0 - pc)
    grad_p = -(2.0 * batch.p_star - 1.0) / q / batch.n_f
    grad_p = np.where((batch.p > _P_CLAMP) & (batch.p < 1.0 - _P_CLAMP), grad_p, 0.0)

    diff = batch.t - batch.t_star
    grad_t = (
        config.alpha
        * batch.p_star_reg[:, None]
        * smooth_l1_grad(diff, config.sigma)
        / batch.n_r
    )
    return cls + reg, grad_p, grad_t


def softmax_cross_entropy(logits, labels):
    """Mean categorical cross-entropy over rows; returns (loss, grad_logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.size != n:
        raise ValueError("one label per row required")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    picked = np.clip(probs[np.arange(n), labels], _P_CLAMP, None)
    loss = float(-np.log(picked).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
