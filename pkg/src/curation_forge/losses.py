"""Scalar and distributional quality losses with analytic gradients.

Scalar regression targets use ``mae``/``mse``. Rating histograms over the
five categorical answer bins use ``cross_entropy``, ``huber_distribution``
(per-bin Huber, default delta 1/9), and ``emd`` (root mean squared
difference of the cumulative distributions, which respects the ordinal
bin structure). ``mos_of_distribution`` maps a histogram back to a scalar
score on the bin scale.

Every loss has a companion ``*_grad`` returning the derivative with
respect to the prediction; these are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfiniteLossError

HUBER_DELTA_DEFAULT = 1.0 / 9.0


@dataclass
class ScoreDistribution:
    """A nonnegative mass vector over the answer bins (positive total)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != 1:
            raise ValueError("distribution must be one-dimensional")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError("distribution mass must be finite and nonnegative")
        if self.counts.sum() <= 0:
            raise ValueError("distribution must have positive total mass")

    @property
    def n_bins(self) -> int:
        return int(self.counts.shape[0])

    def normalized(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def _as_dist(p) -> np.ndarray:
    if isinstance(p, ScoreDistribution):
        return p.counts
    return np.asarray(p, dtype=float)


# ---------------------------------------------------------------------------
# scalar losses


def mae(q: float, q_hat: float) -> float:
    return abs(q - q_hat)


def mae_grad(q: float, q_hat: float) -> float:
    """d mae / d q_hat; subgradient 0 at the kink."""
    if q_hat > q:
        return 1.0
    if q_hat < q:
        return -1.0
    return 0.0


def mse(q: float, q_hat: float) -> float:
    return (q - q_hat) ** 2


def mse_grad(q: float, q_hat: float) -> float:
    return 2.0 * (q_hat - q)


# ---------------------------------------------------------------------------
# distribution losses


def mos_of_distribution(p_hat) -> float:
    """Mass-weighted mean of the 1-based bin indices.

    Invariant under positive scaling of the input: the total mass divides
    out, so only the shape of the histogram matters.
    """
    p = _as_dist(p_hat)
    total = p.sum()
    if total <= 0:
        raise ValueError("distribution has zero total mass")
    n = np.arange(1, p.shape[0] + 1, dtype=float)
    return float((n * p).sum() / total)


def cross_entropy(p, p_hat) -> float:
    """-sum p_n log p_hat_n with the 0*log(.) = 0 convention.

    Raises InfiniteLossError when predicted mass is zero on a supported
    bin, so the caller cannot average a float infinity into a batch.
    """
    p = _as_dist(p)
    ph = _as_dist(p_hat)
    support = p > 0
    if np.any(ph[support] == 0):
        raise InfiniteLossError("predicted probability is zero on supported mass")
    return float(-(p[support] * np.log(ph[support])).sum())


def cross_entropy_grad(p, p_hat) -> np.ndarray:
    """d CE / d p_hat_n = -p_n / p_hat_n (0 on unsupported bins)."""
    p = _as_dist(p)
    ph = _as_dist(p_hat)
    support = p > 0
    if np.any(ph[support] == 0):
        raise InfiniteLossError("predicted probability is zero on supported mass")
    grad = np.zeros_like(ph)
    grad[support] = -p[support] / ph[support]
    return grad


def _huber_scalar(x: np.ndarray, delta: float) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def huber_distribution(p, p_hat, delta: float = HUBER_DELTA_DEFAULT) -> float:
    """Sum of per-bin Huber penalties on p_n - p_hat_n."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    p = _as_dist(p)
    ph = _as_dist(p_hat)
    if p.shape != ph.shape:
        raise ValueError("distributions must have equal length")
    return float(_huber_scalar(p - ph, delta).sum())


def huber_distribution_grad(p, p_hat, delta: float = HUBER_DELTA_DEFAULT) -> np.ndarray:
    """d/d p_hat_n of the per-bin Huber sum: clipped negative residual."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = _as_dist(p) - _as_dist(p_hat)
    return -np.clip(x, -delta, delta)


def emd(p, p_hat) -> float:
    """Root mean squared difference of the two cumulative distributions.

    Both inputs must be normalized; use ScoreDistribution.normalized()
    first when starting from raw counts.
    """
    p = _as_dist(p)
    ph = _as_dist(p_hat)
    if p.shape != ph.shape:
        raise ValueError("distributions must have equal length")
    for name, v in (("p", p), ("p_hat", ph)):
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not normalized (sum {v.sum()!r})")
    d = np.cumsum(p) - np.cumsum(ph)
    n = p.shape[0]
    return float(np.sqrt((d * d).sum() / n))


def emd_grad(p, p_hat) -> np.ndarray:
    """d emd / d p_hat_k = -(1/(N L)) * sum_{n >= k} (c_p - c_p_hat)_n.

    Subgradient 0 when the loss is exactly zero.
    """
    p = _as_dist(p)
    ph = _as_dist(p_hat)
    n = p.shape[0]
    d = np.cumsum(p) - np.cumsum(ph)
    loss = np.sqrt((d * d).sum() / n)
    if loss == 0.0:
        return np.zeros_like(ph)
    tail = np.cumsum(d[::-1])[::-1]  # tail[k] = sum_{n>=k} d_n
    return -tail / (n * loss)
