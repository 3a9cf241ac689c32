"""Densities, kernel estimators, bandwidth rules and null-CDF calibration.

Null CDFs come in shared form (one object for exchangeable hypotheses) and
batch form (one CDF per hypothesis).  Every CDF exposes ``weighted_sum`` so
the step-up procedures can evaluate

    S(t) = sum_i coef_i * c_i(scale_i * t)

on a sorted grid of candidate thresholds without caring which backend is
underneath.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import kernels
from .core import DegenerateInputError, InvalidInputError, make_rng

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)

__all__ = [
    "std_normal_pdf",
    "std_normal_logpdf",
    "std_normal_cdf",
    "std_normal_sf",
    "std_normal_quantile",
    "two_sided_pvalue",
    "Bandwidth",
    "normal_scale_bandwidth",
    "silverman_bandwidth_1d",
    "gaussian_kernel_matrix",
    "DensityModel",
    "Normal",
    "STD_NORMAL",
    "KernelMixture",
    "ConditionalKernelMixture",
    "kernel_mixture_density",
    "NullCdf",
    "EmpiricalNullCdf",
    "ClosedFormNullCdf",
    "NormalLocationNullCdf",
    "EmpiricalNullCdfBatch",
    "NormalLocationNullCdfBatch",
    "build_null_cdf_mc",
    "build_conditional_null_cdfs",
    "null_cdf_query",
    "sup_distance",
]


# ---------------------------------------------------------------------------
# Standard normal
# ---------------------------------------------------------------------------


def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x) - LOG_SQRT_2PI)


def std_normal_logpdf(x):
    return -0.5 * np.square(x) - LOG_SQRT_2PI


def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def std_normal_quantile(p):
    """Inverse of the standard normal CDF; ``p`` must lie strictly in (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise InvalidInputError("quantile requires probabilities strictly inside (0, 1)")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def two_sided_pvalue(z):
    """``2 * (1 - Phi(|z|))``, computed through the survival function."""
    return 2.0 * special.ndtr(-np.abs(np.asarray(z, dtype=float)))


# ---------------------------------------------------------------------------
# Bandwidths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Bandwidth:
    """Gaussian kernel covariance ``H``; for 1-d data ``h = sqrt(H)``."""

    matrix: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if H.shape[0] != H.shape[1] or not np.allclose(H, H.T):
            raise InvalidInputError("bandwidth matrix must be square and symmetric")
        if np.linalg.eigvalsh(H).min() <= 0:
            raise InvalidInputError("bandwidth matrix must be positive definite")
        H.setflags(write=False)
        object.__setattr__(self, "matrix", H)

    @classmethod
    def scalar(cls, h: float, degenerate: bool = False) -> "Bandwidth":
        if not h > 0:
            raise InvalidInputError(f"bandwidth must be positive, got {h}")
        return cls(np.array([[h * h]]), degenerate)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def h(self) -> float:
        if self.dim != 1:
            raise InvalidInputError("scalar bandwidth requested for a multivariate kernel")
        return float(np.sqrt(self.matrix[0, 0]))

    def __repr__(self):
        if self.dim == 1:
            return f"Bandwidth(h={self.h:.6g})"
        return f"Bandwidth(H={self.matrix.tolist()})"


def normal_scale_bandwidth(samples) -> Bandwidth:
    """Normal-scale bandwidth matrix ``{4/(n(d+2))}^(2/(d+4)) * cov``.

    ``samples`` is ``(n,)`` or ``(n, d)`` with observations in rows.  A singular
    sample covariance falls back to the diagonal of variances plus a 1e-8
    ridge and the result is flagged ``degenerate``.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < 2:
        raise InvalidInputError("normal-scale bandwidth needs at least 2 samples")
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    degenerate = False
    if np.linalg.matrix_rank(cov) < d or np.linalg.eigvalsh(cov).min() <= 0:
        logger.warning("singular covariance in normal_scale_bandwidth; using ridged diagonal")
        cov = np.diag(np.diag(cov) + 1e-8)
        degenerate = True
    factor = (4.0 / (n * (d + 2))) ** (2.0 / (d + 4))
    return Bandwidth(factor * cov, degenerate)


def silverman_bandwidth_1d(samples) -> Bandwidth:
    """``0.9 * min(sd, IQR/1.34) * n^(-1/5)``.

    Follows the usual convention of using the standard deviation alone when
    the IQR vanishes.  Zero spread gives ``1e-3 * max(|x|, 1)`` and a
    ``degenerate`` flag.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise InvalidInputError("Silverman bandwidth needs at least 2 samples")
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd
    if not spread > 0:
        return Bandwidth.scalar(1e-3 * max(abs(x[0]), 1.0), degenerate=True)
    return Bandwidth.scalar(0.9 * spread * n ** -0.2)


def gaussian_kernel_matrix(targets, sources, H: Bandwidth, log: bool = False) -> np.ndarray:
    """``K[i, j] = phi_H(targets[i] - sources[j])`` (or its log)."""
    A = np.asarray(targets, dtype=float).reshape(len(targets), -1)
    S = np.asarray(sources, dtype=float).reshape(len(sources), -1)
    if A.shape[1] != H.dim or S.shape[1] != H.dim:
        raise InvalidInputError("covariate dimension does not match the bandwidth")
    L = np.linalg.cholesky(H.matrix)
    # Mahalanobis distance via whitening
    Aw = np.linalg.solve(L, A.T).T
    Sw = np.linalg.solve(L, S.T).T
    if H.dim == 1:
        d2 = np.square(Aw[:, :1] - Sw[:, 0][None, :])
    else:
        d2 = (
            np.sum(Aw * Aw, axis=1)[:, None]
            + np.sum(Sw * Sw, axis=1)[None, :]
            - 2.0 * Aw @ Sw.T
        )
        np.maximum(d2, 0.0, out=d2)
    log_norm = -H.dim * LOG_SQRT_2PI - np.log(np.diag(L)).sum()
    logK = -0.5 * d2 + log_norm
    return logK if log else np.exp(logK)


# ---------------------------------------------------------------------------
# Density models
# ---------------------------------------------------------------------------


class DensityModel:
    """Evaluable density, optionally sampleable.

    Conditional models are evaluated row-wise: ``x`` has one leading entry per
    target hypothesis and row ``t`` is evaluated under target ``t``'s density.
    """

    descriptor = "density"
    conditional = False

    def logpdf(self, x, s=None):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x, s))

    def pdf(self, x, s=None):
        return np.exp(self.logpdf(x, s))

    def sample(self, size, rng: np.random.Generator, s=None):
        raise NotImplementedError(f"{self.descriptor} has no sampler")

    @property
    def can_sample(self) -> bool:
        return type(self).sample is not DensityModel.sample


class Normal(DensityModel):
    """``N(mean, sd^2)``; an array ``mean`` makes it a conditional model."""

    def __init__(self, mean=0.0, sd: float = 1.0):
        if not sd > 0:
            raise InvalidInputError("sd must be positive")
        self.mean = np.asarray(mean, dtype=float)
        self.sd = float(sd)
        self.conditional = self.mean.ndim > 0
        if self.mean.ndim == 0 and self.mean == 0 and self.sd == 1:
            self.descriptor = "std-normal"
        else:
            self.descriptor = "normal"

    def _center(self, x):
        x = np.asarray(x, dtype=float)
        mean = self.mean
        if self.conditional and x.ndim == 2:
            mean = mean[:, None]
        return (x - mean) / self.sd

    def logpdf(self, x, s=None):
        return std_normal_logpdf(self._center(x)) - np.log(self.sd)

    def pdf(self, x, s=None):
        return np.exp(self.logpdf(x, s))

    def sample(self, size, rng, s=None):
        return self.mean + self.sd * rng.standard_normal(size)

    def __repr__(self):
        return f"Normal(mean={self.mean!r}, sd={self.sd})"


STD_NORMAL = Normal(0.0, 1.0)


class KernelMixture(DensityModel):
    """``sum_j w_j phi_h(x - c_j) / sum_j w_j`` with a scalar bandwidth."""

    descriptor = "kernel-mixture"

    def __init__(self, centers, weights, h: float):
        centers = np.asarray(centers, dtype=float).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        if centers.size != weights.size or centers.size == 0:
            raise InvalidInputError("centers and weights must be non-empty and aligned")
        if (weights < 0).any() or not np.isfinite(weights).all():
            raise InvalidInputError("mixture weights must be finite and nonnegative")
        total = weights.sum()
        if not total > 0:
            raise DegenerateInputError("all mixture weights are zero")
        order = np.argsort(centers, kind="stable")
        self.centers = centers[order]
        self.weights = weights[order] / total
        self.h = float(h)

    def pdf(self, x, s=None):
        x = np.asarray(x, dtype=float)
        return kernels.mixture_points(x.ravel(), self.centers, self.weights, self.h).reshape(x.shape)

    def sample(self, size, rng, s=None):
        idx = rng.choice(self.centers.size, size=size, p=self.weights)
        return self.centers[idx] + self.h * rng.standard_normal(size)


class ConditionalKernelMixture(DensityModel):
    """Per-target kernel mixtures sharing centers and bandwidth.

    Target ``t`` has density ``sum_j coef[t, j] phi_h(x - c_j)`` with rows of
    ``coef`` summing to one.
    """

    descriptor = "conditional-kernel-mixture"
    conditional = True

    def __init__(self, centers, coef, h: float):
        centers = np.asarray(centers, dtype=float).ravel()
        coef = np.asarray(coef, dtype=float)
        if coef.ndim != 2 or coef.shape[1] != centers.size:
            raise InvalidInputError("coef must be (targets, centers)")
        sums = coef.sum(axis=1)
        if not (sums > 0).all():
            raise DegenerateInputError("a target has all-zero mixture weights")
        order = np.argsort(centers, kind="stable")
        self.centers = centers[order]
        self.coef = np.ascontiguousarray(coef[:, order] / sums[:, None])
        self.h = float(h)

    @property
    def n_targets(self) -> int:
        return self.coef.shape[0]

    def __getitem__(self, t) -> KernelMixture:
        return KernelMixture(self.centers, self.coef[t], self.h)

    def pdf(self, x, s=None):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_targets:
            raise InvalidInputError("leading dimension must equal the number of targets")
        y = x.reshape(self.n_targets, -1)
        return kernels.mixture_rows(y, self.centers, self.coef, self.h).reshape(x.shape)

    def logpdf_interpolated(self, y, per_bandwidth: int = 20):
        """Log-density at ``y`` (targets x draws) by log-linear interpolation.

        The density is evaluated exactly on a shared grid of spacing
        ``h / per_bandwidth`` with one matrix product; points whose bracketing
        grid values underflow are evaluated exactly instead.
        """
        y = np.asarray(y, dtype=float)
        T, B = y.shape
        step = self.h / per_bandwidth
        lo, hi = y.min() - step, y.max() + step
        G = int(np.ceil((hi - lo) / step)) + 1
        grid = lo + step * np.arange(G)
        d = (grid[None, :] - self.centers[:, None]) / self.h
        basis = np.exp(-0.5 * d * d - LOG_SQRT_2PI) / self.h
        dens = self.coef @ basis
        with np.errstate(divide="ignore"):
            logd = np.log(dens)
        pos = (y - lo) / step
        idx = np.clip(pos.astype(np.intp), 0, G - 2)
        frac = pos - idx
        rows = np.arange(T)[:, None]
        left = logd[rows, idx]
        right = logd[rows, idx + 1]
        bad = ~(np.isfinite(left) & np.isfinite(right))
        with np.errstate(invalid="ignore"):
            out = left + frac * (right - left)
        if bad.any():
            tt, bb = np.nonzero(bad)
            for t in np.unique(tt):
                sel = bb[tt == t]
                exact = kernels.mixture_points(y[t, sel], self.centers, self.coef[t], self.h)
                with np.errstate(divide="ignore"):
                    out[t, sel] = np.log(exact)
        return out


def kernel_mixture_density(centers, weights, h) -> KernelMixture:
    """Weighted Gaussian kernel mixture; ``h`` is a float or 1-d :class:`Bandwidth`."""
    if isinstance(h, Bandwidth):
        h = h.h
    return KernelMixture(centers, weights, h)


# ---------------------------------------------------------------------------
# Null CDFs
# ---------------------------------------------------------------------------


class NullCdf:
    """Monotone right-continuous distribution function of a null rho-value."""

    descriptor = "null-cdf"

    def query(self, t):
        raise NotImplementedError

    def query_left(self, t):
        """Left limit ``c(t-)``; equals ``query`` for continuous CDFs."""
        return self.query(t)

    def __call__(self, t):
        return self.query(t)

    def weighted_sum(self, scale, coef, t_sorted) -> np.ndarray:
        """``S(t_j) = sum_i coef_i * c(scale_i * t_j)`` for a shared CDF."""
        scale = np.asarray(scale, dtype=float)
        coef = np.asarray(coef, dtype=float)
        t_sorted = np.asarray(t_sorted, dtype=float)
        pairs = np.column_stack([scale, coef])
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        out = np.zeros(t_sorted.size)
        for (sc, cf), n in zip(uniq, counts):
            out += n * cf * self.query(sc * t_sorted)
        return out


class EmpiricalNullCdf(NullCdf):
    """Empirical CDF of ``B`` null rho draws (``+inf`` draws allowed).

    With ``plus_one`` the CDF becomes ``(1 + #{draws <= t}) / (B + 1)``.
    """

    descriptor = "empirical"

    def __init__(self, samples, plus_one: bool = False, n_infinite: Optional[int] = None):
        samples = np.sort(np.asarray(samples, dtype=float).ravel())
        if samples.size == 0 or np.isnan(samples).any():
            raise InvalidInputError("need a non-empty sample without NaN")
        samples.setflags(write=False)
        self.samples = samples
        self.plus_one = bool(plus_one)
        self.n_infinite = int(np.isinf(samples).sum()) if n_infinite is None else n_infinite

    @property
    def B(self) -> int:
        return self.samples.size

    def _scale(self, counts):
        if self.plus_one:
            return (counts + 1.0) / (self.B + 1.0)
        return counts / self.B

    def query(self, t):
        t = np.asarray(t, dtype=float)
        out = self._scale(np.searchsorted(self.samples, t, side="right"))
        if self.plus_one:
            out = np.where(t == np.inf, 1.0, out)
        return float(out) if out.ndim == 0 else out

    def query_left(self, t):
        t = np.asarray(t, dtype=float)
        out = self._scale(np.searchsorted(self.samples, t, side="left"))
        return float(out) if out.ndim == 0 else out

    def weighted_sum(self, scale, coef, t_sorted):
        samples = self.samples[None, :]
        scale = np.asarray(scale, dtype=float)
        coef = np.asarray(coef, dtype=float)
        pairs = np.column_stack([scale, coef])
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        offset, denom = (1.0, self.B + 1.0) if self.plus_one else (0.0, float(self.B))
        return kernels.ecdf_weighted_sum(
            np.broadcast_to(samples, (uniq.shape[0], self.B)),
            uniq[:, 0], counts * uniq[:, 1], t_sorted, offset, denom,
        )


class ClosedFormNullCdf(NullCdf):
    descriptor = "closed-form"

    def __init__(self, fn: Callable, left_fn: Optional[Callable] = None, descriptor: str = "closed-form"):
        self.fn = fn
        self.left_fn = left_fn or fn
        self.descriptor = descriptor

    def query(self, t):
        out = np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float)
        return float(out) if out.ndim == 0 else out

    def query_left(self, t):
        out = np.asarray(self.left_fn(np.asarray(t, dtype=float)), dtype=float)
        return float(out) if out.ndim == 0 else out


def _normal_location_cdf(t, mu, left=False):
    """Null CDF of ``phi(X) / phi(X - mu)`` with ``X ~ N(0, 1)``.

    ``rho = exp(mu^2/2 - mu X)``, so ``c(t) = Phi(log(t)/|mu| - |mu|/2)``;
    ``mu = 0`` is the point mass at one.
    """
    t = np.asarray(t, dtype=float)
    a = np.abs(np.asarray(mu, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log(np.where(t > 0, t, 1.0)) / np.where(a > 0, a, 1.0) - a / 2
        cont = special.ndtr(z)
    step = (t > 1.0) if left else (t >= 1.0)
    out = np.where(a > 0, cont, step.astype(float))
    out = np.where(t > 0, out, 0.0)
    return np.where(np.isposinf(t), 1.0, out)


class NormalLocationNullCdf(NullCdf):
    """Exact null CDF for ``f0 = N(0,1)`` against ``g = N(mu, 1)``."""

    descriptor = "normal-location"

    def __init__(self, mu: float):
        self.mu = float(mu)

    def query(self, t):
        out = _normal_location_cdf(t, self.mu)
        return float(out) if out.ndim == 0 else out

    def query_left(self, t):
        out = _normal_location_cdf(t, self.mu, left=True)
        return float(out) if out.ndim == 0 else out


class EmpiricalNullCdfBatch:
    """One empirical null CDF per hypothesis, stored as sorted rows."""

    descriptor = "empirical-batch"

    def __init__(self, samples, plus_one: bool = False):
        samples = np.sort(np.asarray(samples, dtype=float), axis=1)
        samples.setflags(write=False)
        self.samples = samples
        self.plus_one = bool(plus_one)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def B(self) -> int:
        return self.samples.shape[1]

    @property
    def n_infinite(self) -> int:
        return int(np.isinf(self.samples).sum())

    def __getitem__(self, i) -> EmpiricalNullCdf:
        return EmpiricalNullCdf(self.samples[i], self.plus_one)

    def query_each(self, v) -> np.ndarray:
        """``c_i(v_i)`` for every hypothesis ``i``."""
        v = np.asarray(v, dtype=float)
        counts = (self.samples <= v[:, None]).sum(axis=1)
        if self.plus_one:
            return np.where(v == np.inf, 1.0, (counts + 1.0) / (self.B + 1.0))
        return counts / self.B

    def weighted_sum(self, scale, coef, t_sorted):
        offset, denom = (1.0, self.B + 1.0) if self.plus_one else (0.0, float(self.B))
        return kernels.ecdf_weighted_sum(self.samples, scale, coef, t_sorted, offset, denom)


class NormalLocationNullCdfBatch:
    """Exact per-hypothesis null CDFs for ``g_i = N(mu_i, 1)``."""

    descriptor = "normal-location-batch"

    def __init__(self, mus):
        self.mus = np.asarray(mus, dtype=float).ravel()

    def __len__(self):
        return self.mus.size

    def __getitem__(self, i) -> NormalLocationNullCdf:
        return NormalLocationNullCdf(self.mus[i])

    def query_each(self, v) -> np.ndarray:
        return _normal_location_cdf(v, self.mus)

    def weighted_sum(self, scale, coef, t_sorted):
        t_sorted = np.asarray(t_sorted, dtype=float)
        keys = np.column_stack([self.mus, np.asarray(scale, float), np.asarray(coef, float)])
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        out = np.zeros(t_sorted.size)
        for (mu, sc, cf), n in zip(uniq, counts):
            out += n * cf * _normal_location_cdf(sc * t_sorted, mu)
        return out


def null_cdf_query(c: NullCdf, t):
    return c.query(t)


def _rho_from_logs(log_f0, log_g):
    with np.errstate(invalid="ignore", over="ignore"):
        rho = np.exp(log_f0 - log_g)
    return np.where(np.isneginf(log_g), np.inf, rho)


def build_null_cdf_mc(
    null: DensityModel,
    g: DensityModel,
    B: int = 1000,
    seed: int = 0,
    plus_one: bool = False,
    keys: tuple = (),
) -> EmpiricalNullCdf:
    """Empirical CDF of ``f0(Y)/g(Y)`` over ``B`` draws ``Y ~ f0``.

    Draws where ``g`` vanishes give ``rho = +inf``; their count is kept in
    ``n_infinite``.
    """
    if B < 1:
        raise InvalidInputError("B must be >= 1")
    if not null.can_sample:
        raise InvalidInputError("null model has no sampler")
    rng = make_rng(seed, "null-cdf", *keys)
    y = null.sample(B, rng)
    rho = _rho_from_logs(null.logpdf(y), g.logpdf(y))
    c = EmpiricalNullCdf(rho, plus_one=plus_one)
    if c.n_infinite:
        logger.info("build_null_cdf_mc: %d draws with g = 0 mapped to +inf", c.n_infinite)
    return c


def build_conditional_null_cdfs(
    null: DensityModel,
    g: ConditionalKernelMixture,
    B: int = 1000,
    seed: int = 0,
    plus_one: bool = False,
    keys: tuple = (),
    method: str = "auto",
    per_bandwidth: int = 20,
    exact_budget: float = 2e7,
) -> EmpiricalNullCdfBatch:
    """Per-target empirical null CDFs with independent per-target draws.

    Target ``t`` draws from ``make_rng(seed, "null-cdf", *keys, t)`` so the
    result does not depend on evaluation order.
    """
    T = g.n_targets
    y = np.empty((T, B))
    for t in range(T):
        y[t] = null.sample(B, make_rng(seed, "null-cdf", *keys, t))
    if method == "auto":
        method = "exact" if T * B * g.centers.size <= exact_budget else "grid"
    if method == "exact":
        with np.errstate(divide="ignore"):
            log_g = np.log(g.pdf(y))
    elif method == "grid":
        log_g = g.logpdf_interpolated(y, per_bandwidth)
    else:
        raise InvalidInputError(f"unknown evaluation method {method!r}")
    rho = _rho_from_logs(null.logpdf(y), log_g)
    return EmpiricalNullCdfBatch(rho, plus_one=plus_one)


def sup_distance(emp: EmpiricalNullCdf, exact: NullCdf) -> float:
    """``sup_t |emp(t) - exact(t)|`` checked at both sides of every jump."""
    pts = np.unique(emp.samples[np.isfinite(emp.samples)])
    if pts.size == 0:
        return 0.0
    right = np.abs(emp.query(pts) - exact.query(pts))
    left = np.abs(emp.query_left(pts) - exact.query_left(pts))
    return float(max(right.max(), left.max()))
