"""Non-null proportion estimators, alternative-density fits and Lfdr/Clfdr."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DegenerateInputError, InvalidInputError
from .dist import (
    Bandwidth,
    ConditionalKernelMixture,
    DensityModel,
    KernelMixture,
    gaussian_kernel_matrix,
    two_sided_pvalue,
)

__all__ = [
    "PiEstimate",
    "CondAltDensity",
    "storey_pi",
    "bh_tau",
    "kernel_storey_pi",
    "fit_alt_density",
    "fit_cond_alt_density",
    "lfdr",
    "clfdr_from_q",
]

_ROW_BUDGET = 2**22


@dataclass(frozen=True, eq=False)
class PiEstimate:
    """Clamped non-null proportion estimate(s).

    ``value`` is a float for pooled estimates and an array for per-target
    ones; ``raw`` keeps the unclamped numbers and ``fallback`` marks targets
    whose kernel weights were unusable.
    """

    value: object
    tau: float
    clamped: object
    raw: object
    fallback: object = False

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True, eq=False)
class CondAltDensity:
    model: DensityModel
    w_hat: np.ndarray
    pi_prime: np.ndarray
    fallback: bool = False
    diagnostics: dict = field(default_factory=dict)


def _clamp(raw, clamp):
    lo, hi = clamp
    value = np.clip(raw, lo, hi)
    return value, (value != raw)


def storey_pi(cvalues, tau: float, clamp=(0.0, 0.999)) -> PiEstimate:
    """``1 - #{c_i >= tau} / (m (1 - tau))``, clamped to ``clamp``."""
    if not 0 <= tau < 1:
        raise InvalidInputError(f"tau must lie in [0, 1), got {tau}")
    c = np.asarray(cvalues, dtype=float).ravel()
    if c.size == 0:
        raise InvalidInputError("need at least one value")
    raw = 1.0 - np.count_nonzero(c >= tau) / (c.size * (1.0 - tau))
    value, clamped = _clamp(raw, clamp)
    return PiEstimate(float(value), float(tau), bool(clamped), float(raw))


def bh_tau(pvalues, level: float = 0.9, fallback: float = 0.5) -> float:
    """Rejection threshold ``p_(k)`` of BH at ``level``; ``fallback`` if k = 0."""
    p = np.sort(np.asarray(pvalues, dtype=float).ravel())
    if p.size == 0:
        raise InvalidInputError("need at least one p-value")
    m = p.size
    ok = np.flatnonzero(m * p <= level * np.arange(1, m + 1))
    return float(p[ok[-1]]) if ok.size else float(fallback)


def _row_chunks(n_rows, n_cols):
    step = max(1, _ROW_BUDGET // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def _normalized_kernel_rows(targets, sources, H, rows):
    """Kernel weights for a block of targets, each row scaled to max 1."""
    logK = gaussian_kernel_matrix(targets[rows], sources, H, log=True)
    logK -= logK.max(axis=1, keepdims=True)
    return np.exp(logK)


def kernel_storey_pi(targets, train_s, train_p, tau: float, H: Bandwidth, clamp=(0.0, 0.999)) -> PiEstimate:
    """Kernel-smoothed Storey estimate at each target covariate.

    ``1 - sum_j K_ij 1{p_j >= tau} / ((1 - tau) sum_j K_ij)`` with Gaussian
    kernel ``K_ij = phi_H(s_i - s_j)``.  Kernel rows are rescaled by their
    maximum before summing, which leaves the ratio unchanged and keeps it
    away from underflow; rows that still fail fall back to the pooled
    estimate.
    """
    if not 0 <= tau < 1:
        raise InvalidInputError(f"tau must lie in [0, 1), got {tau}")
    p = np.asarray(train_p, dtype=float).ravel()
    S1 = np.asarray(train_s, dtype=float).reshape(p.size, -1)
    if p.size == 0:
        raise InvalidInputError("training set is empty")
    S2 = np.asarray(targets, dtype=float).reshape(len(targets), -1)
    above = (p >= tau).astype(float)
    raw = np.empty(S2.shape[0])
    for rows in _row_chunks(S2.shape[0], p.size):
        W = _normalized_kernel_rows(S2, S1, H, rows)
        raw[rows] = 1.0 - (W @ above) / ((1.0 - tau) * W.sum(axis=1))
    fallback = ~np.isfinite(raw)
    if fallback.any():
        raw[fallback] = storey_pi(p, tau, clamp).raw
    value, clamped = _clamp(raw, clamp)
    return PiEstimate(value, float(tau), clamped, raw, fallback)


def _w_hat(pi_prime, f0_at_x, f_tilde):
    ratio = (1.0 - pi_prime) * f0_at_x / f_tilde
    return 1.0 - np.minimum(ratio, 1.0)


def fit_alt_density(train_x, f0: DensityModel, tau: float, h_x, clamp=(0.0, 0.999), train_p=None) -> CondAltDensity:
    """Covariate-free alternative-density fit (the flat-kernel case).

    ``pi'`` is the pooled Storey estimate on the training p-values, ``f~``
    the ordinary kernel density of the training statistics, and the result
    the ``w_hat``-weighted kernel mixture.
    """
    x = np.asarray(train_x, dtype=float).ravel()
    h = h_x.h if isinstance(h_x, Bandwidth) else float(h_x)
    p = two_sided_pvalue(x) if train_p is None else np.asarray(train_p, dtype=float)
    pi_prime = storey_pi(p, tau, clamp).value
    f_tilde = kernels.mixture_points(x, np.sort(x), np.full(x.size, 1.0 / x.size), h)
    w_hat = _w_hat(pi_prime, f0.pdf(x), f_tilde)
    fallback = not (w_hat > 0).any()
    model = KernelMixture(x, np.ones_like(w_hat) if fallback else w_hat, h)
    return CondAltDensity(model, w_hat, np.full(x.size, pi_prime), fallback,
                          {"h_x": h, "tau": tau})


def fit_cond_alt_density(
    train_x,
    train_s,
    targets,
    f0: DensityModel,
    tau: float,
    H: Bandwidth,
    h_x,
    clamp=(0.0, 0.999),
    train_p=None,
    pi_train_s=None,
    H_pi: Bandwidth | None = None,
) -> CondAltDensity:
    """Three-step covariate-conditional alternative-density estimate.

    1. ``pi'`` at every training covariate by :func:`kernel_storey_pi` on
       the training half against itself.
    2. ``f~_j`` = kernel-weighted density of the training statistics at
       ``x_j`` (self term included) and
       ``w_hat_j = 1 - min{(1 - pi'_j) f0(x_j) / f~_j, 1}``.
    3. For each target ``i`` the mixture
       ``sum_j w_hat_j K(s_i, s_j) phi_hx(x - x_j) / sum_j w_hat_j K(s_i, s_j)``.

    ``pi_train_s``/``H_pi`` let step 1 use different covariate columns than
    steps 2-3 (defaults: the same ``train_s``/``H``).  If every ``w_hat`` is
    zero the unweighted conditional mixture is returned and ``fallback`` set.
    """
    x = np.asarray(train_x, dtype=float).ravel()
    m1 = x.size
    if m1 == 0:
        raise InvalidInputError("training set is empty")
    S1 = np.asarray(train_s, dtype=float).reshape(m1, -1)
    S2 = np.asarray(targets, dtype=float).reshape(len(targets), -1)
    h = h_x.h if isinstance(h_x, Bandwidth) else float(h_x)
    p = two_sided_pvalue(x) if train_p is None else np.asarray(train_p, dtype=float)
    S1_pi = S1 if pi_train_s is None else np.asarray(pi_train_s, dtype=float).reshape(m1, -1)
    H_pi = H if H_pi is None else H_pi

    # step 1
    pi_prime = kernel_storey_pi(S1_pi, S1_pi, p, tau, H_pi, clamp).value

    # step 2
    order = np.argsort(x, kind="stable")
    xs = x[order]
    f_tilde = np.empty(m1)
    for rows in _row_chunks(m1, m1):
        W = _normalized_kernel_rows(S1, S1, H, rows)
        W /= W.sum(axis=1, keepdims=True)
        Wsorted = np.ascontiguousarray(W[:, order])
        f_tilde[rows] = kernels.mixture_rows(x[rows][:, None], xs, Wsorted, h)[:, 0]
    w_hat = _w_hat(pi_prime, f0.pdf(x), f_tilde)

    # step 3
    fallback = not (w_hat > 0).any()
    with np.errstate(divide="ignore"):
        log_w = np.log(np.ones(m1) if fallback else w_hat)
    coef = np.empty((S2.shape[0], m1))
    for rows in _row_chunks(S2.shape[0], m1):
        logA = gaussian_kernel_matrix(S2[rows], S1, H, log=True) + log_w[None, :]
        logA -= logA.max(axis=1, keepdims=True)
        coef[rows] = np.exp(logA)
    model = ConditionalKernelMixture(x, coef, h)
    return CondAltDensity(model, w_hat, pi_prime, fallback, {"h_x": h, "tau": tau})


def lfdr(x, pi, f0: DensityModel, f1: DensityModel):
    """``(1 - pi) f0(x) / {(1 - pi) f0(x) + pi f1(x)}``."""
    a = (1.0 - np.asarray(pi, dtype=float)) * f0.pdf(x)
    b = np.asarray(pi, dtype=float) * f1.pdf(x)
    den = a + b
    if np.any(den <= 0):
        raise DegenerateInputError("both weighted densities vanish at x")
    out = a / den
    return float(out) if np.ndim(out) == 0 else out


def clfdr_from_q(q):
    """Clfdr implied by a weighted rho-value: ``q / (1 + q)`` (1 at ``q = inf``)."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise InvalidInputError("weighted rho-values must be nonnegative")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(q), 1.0, q / (1.0 + q))
    return float(out) if out.ndim == 0 else out
