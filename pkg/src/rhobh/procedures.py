"""The rho-BH family: oracle, weighted, side-information and data-driven variants.

All step-up scans run over the observed (weighted) rho-values only, so the
search for the largest passing index is exact.  Infinite statistics sort
last and are never rejected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    Decision,
    DegenerateInputError,
    InvalidInputError,
    ProcedureConfig,
    SplitAssignment,
    as_arrays,
    combine_decisions,
    split_data,
    stepup_reject,
)
from .dist import (
    STD_NORMAL,
    DensityModel,
    EmpiricalNullCdfBatch,
    NullCdf,
    build_conditional_null_cdfs,
    build_null_cdf_mc,
    normal_scale_bandwidth,
    silverman_bandwidth_1d,
    two_sided_pvalue,
)
from .estimators import bh_tau, fit_alt_density, fit_cond_alt_density, kernel_storey_pi, storey_pi

logger = logging.getLogger(__name__)

__all__ = [
    "RhoProblem",
    "compute_rho",
    "harmonic",
    "rho_bh",
    "rho_bh_by",
    "weighted_rho_bh",
    "side_info_rho_bh",
    "side_info_threshold_form",
    "rho_bh_dd",
    "weighted_rho_bh_dd",
    "rho_bh_side_dd",
    "zap_variant",
]

CdfLike = Union[NullCdf, EmpiricalNullCdfBatch, Sequence[NullCdf]]


@dataclass(frozen=True, eq=False)
class RhoProblem:
    """rho-values with their null CDF(s), non-null proportion(s) and eta.

    ``nullcdf`` may be one shared CDF or a per-hypothesis batch; ``pi`` and
    ``eta`` may be scalars.
    """

    rho: np.ndarray
    nullcdf: object
    pi: object = 0.0
    eta: object = 0.5

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).ravel()
        if np.isnan(rho).any() or (rho < 0).any():
            raise InvalidInputError("rho-values must be nonnegative")
        for name in ("pi", "eta"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim and v.shape != rho.shape:
                raise InvalidInputError(f"{name} must be scalar or one per hypothesis")
        if hasattr(self.nullcdf, "__len__") and len(self.nullcdf) != rho.size:
            raise InvalidInputError("need one null CDF per hypothesis")
        object.__setattr__(self, "rho", rho)

    def side_info(self, alpha: float) -> Decision:
        return side_info_rho_bh(self.rho, self.pi, self.eta, self.nullcdf, alpha)

    def threshold_form(self, alpha: float) -> Decision:
        return side_info_threshold_form(self.rho, self.pi, self.eta, self.nullcdf, alpha)


def compute_rho(x, f0: DensityModel, g: DensityModel, s=None) -> np.ndarray:
    """``rho_i = f0(x_i | s_i) / g(x_i | s_i)``, computed on the log scale.

    A vanishing ``g`` gives ``+inf`` (such hypotheses can never be rejected);
    ``f0`` and ``g`` vanishing together is an error.
    """
    x = np.asarray(x, dtype=float)
    log_f0 = np.asarray(f0.logpdf(x, s), dtype=float)
    log_g = np.asarray(g.logpdf(x, s), dtype=float)
    both = np.isneginf(log_f0) & np.isneginf(log_g)
    if both.any():
        raise DegenerateInputError(f"f0 and g both vanish at {int(both.sum())} point(s)")
    with np.errstate(over="ignore"):
        rho = np.exp(log_f0 - log_g)
    n_inf = int(np.isneginf(log_g).sum())
    if n_inf:
        logger.info("compute_rho: %d statistic(s) with g = 0 set to +inf", n_inf)
    return np.where(np.isneginf(log_g), np.inf, rho)


def harmonic(m: int) -> float:
    return float(np.sum(1.0 / np.arange(1, m + 1)))


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")


def rho_bh(rho, nullcdf: NullCdf, pi: float, alpha: float, method: str = "rho-bh") -> Decision:
    """Adjusted BH on ``c(rho)``: the largest ``j`` with
    ``m (1 - pi) c(rho_(j)) <= alpha j``; rejects ``rho_i <= rho_(k)``.
    """
    _check_alpha(alpha)
    rho = np.asarray(rho, dtype=float)
    m = rho.size
    order = np.argsort(rho, kind="stable")
    rs = rho[order]
    c = np.asarray(nullcdf.query(rs), dtype=float)
    ok = (m * (1.0 - pi) * c <= alpha * np.arange(1, m + 1)) & np.isfinite(rs)
    reject, threshold = stepup_reject(rho, ok, order)
    return Decision(reject, threshold, method, alpha, {"pi": pi})


def rho_bh_by(rho, nullcdf: NullCdf, pi: float, alpha: float) -> Decision:
    """:func:`rho_bh` at level ``alpha / S(m)`` for arbitrary dependence."""
    _check_alpha(alpha)
    rho = np.asarray(rho, dtype=float)
    d = rho_bh(rho, nullcdf, pi, alpha / harmonic(rho.size), method="rho-bh-by")
    return Decision(d.reject, d.threshold, "rho-bh-by", alpha, {"pi": pi, "level": alpha / harmonic(rho.size)})


def _weighted_stepup(q, w, coef, nullcdf: CdfLike, alpha, method):
    q = np.asarray(q, dtype=float)
    m = q.size
    order = np.argsort(q, kind="stable")
    qs = q[order]
    finite = np.isfinite(qs)
    ok = np.zeros(m, dtype=bool)
    if finite.any():
        if isinstance(nullcdf, (list, tuple)):
            mass = np.zeros(int(finite.sum()))
            for c, wi, ci in zip(nullcdf, w, coef):
                mass += ci * np.asarray(c.query(wi * qs[finite]), dtype=float)
        else:
            mass = nullcdf.weighted_sum(w, coef, qs[finite])
        ok[finite] = mass <= alpha * np.arange(1, m + 1)[finite]
    return stepup_reject(q, ok, order)


def weighted_rho_bh(rho, weights, nullcdf: NullCdf, pi: float, alpha: float) -> Decision:
    """Weighted rho-BH with predetermined positive weights (no sum constraint).

    Ranks ``q_i = rho_i / w_i`` and takes the largest ``j`` with
    ``sum_i (1 - pi) c(q_(j) w_i) <= alpha j``.
    """
    _check_alpha(alpha)
    rho = np.asarray(rho, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.shape != rho.shape or not (w > 0).all():
        raise InvalidInputError("weights must be positive and match rho")
    q = rho / w
    coef = np.full(rho.size, 1.0 - pi)
    reject, threshold = _weighted_stepup(q, w, coef, nullcdf, alpha, "weighted-rho-bh")
    return Decision(reject, threshold, "weighted-rho-bh", alpha, {"pi": pi, "q": q})


def _side_inputs(rho, pi, eta):
    rho = np.asarray(rho, dtype=float)
    m = rho.size
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (m,))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (m,))
    if not ((eta > 0) & (eta < 1)).all():
        raise InvalidInputError("eta must lie strictly inside (0, 1)")
    w = eta / (1.0 - eta)
    return rho, pi, w, rho / w


def side_info_rho_bh(rho, pi, eta, nullcdf: CdfLike, alpha: float) -> Decision:
    """Rho-BH with side information.

    Weights ``w_i = eta_i / (1 - eta_i)``, ranks ``q_i = rho_i / w_i`` and
    takes the largest ``j`` with
    ``sum_i (1 - pi_i) c_i(q_(j) w_i) <= alpha j``.  ``nullcdf`` is one
    shared CDF, a per-hypothesis batch, or a list of CDFs.
    """
    _check_alpha(alpha)
    rho, pi, w, q = _side_inputs(rho, pi, eta)
    reject, threshold = _weighted_stepup(q, w, 1.0 - pi, nullcdf, alpha, "rho-bh-side")
    return Decision(reject, threshold, "rho-bh-side", alpha, {"q": q, "w": w})


def _query_each(nullcdf: CdfLike, v):
    if hasattr(nullcdf, "query_each"):
        return nullcdf.query_each(v)
    if isinstance(nullcdf, (list, tuple)):
        return np.array([c.query(vi) for c, vi in zip(nullcdf, v)], dtype=float)
    return np.asarray(nullcdf.query(v), dtype=float)


def side_info_threshold_form(rho, pi, eta, nullcdf: CdfLike, alpha: float) -> Decision:
    """Threshold form of :func:`side_info_rho_bh`.

    ``t* = max{t in {q_i}: sum_i (1 - pi_i) c_i(w_i t) / max(#{q_i <= t}, 1) <= alpha}``
    and rejects ``q_i <= t*``.  Evaluates every candidate directly, one
    hypothesis at a time, so it shares no code with the step-up scan.
    """
    _check_alpha(alpha)
    rho, pi, w, q = _side_inputs(rho, pi, eta)
    qs = np.sort(q)
    best = -np.inf
    for t in np.unique(qs[np.isfinite(qs)]):
        fdp_hat = np.sum((1.0 - pi) * _query_each(nullcdf, w * t))
        n_rej = max(int(np.searchsorted(qs, t, side="right")), 1)
        if fdp_hat / n_rej <= alpha:
            best = t
    reject = q <= best
    return Decision(reject, float(best), "rho-bh-side-threshold", alpha, {"q": q, "w": w})


def zap_variant(cvalues, alpha: float) -> Decision:
    """``k = max{j: 1 + #{i: c_i >= 1 - c_(j)} <= alpha j}``; rejects the k smallest."""
    c = np.asarray(cvalues, dtype=float)
    if ((c < 0) | (c > 1)).any():
        raise InvalidInputError("c-values must lie in [0, 1]")
    m = c.size
    order = np.argsort(c, kind="stable")
    cs = c[order]
    mirrored = m - np.searchsorted(cs, 1.0 - cs, side="left")
    ok = 1 + mirrored <= alpha * np.arange(1, m + 1)
    reject, threshold = stepup_reject(c, ok, order)
    return Decision(reject, threshold, "zap", alpha)


# ---------------------------------------------------------------------------
# Data-driven procedures (sample splitting)
# ---------------------------------------------------------------------------


def _config(config: Optional[ProcedureConfig], alpha) -> ProcedureConfig:
    _check_alpha(alpha)
    return config if config is not None else ProcedureConfig(alpha=alpha)


def _nu_guard(threshold, pi_hat, alpha):
    """True when a selected rho threshold sits below ``nu * pi / (1 - pi)``, ``nu = alpha / (1 - alpha)``."""
    if not np.isfinite(threshold):
        return False
    nu = alpha / (1.0 - alpha)
    return bool(threshold < nu * pi_hat / (1.0 - pi_hat))


def _pooled_half(x_train, x_test, f0, config, keys):
    """Fit on one half, return rho, null CDF and pi-hat for the other."""
    p_train = two_sided_pvalue(x_train)
    tau = bh_tau(p_train, config.tau_level, config.tau_fallback)
    h_x = silverman_bandwidth_1d(x_train)
    fit = fit_alt_density(x_train, f0, tau, h_x, config.pi_clamp, p_train)
    pi_hat = storey_pi(p_train, tau, config.pi_clamp)
    rho = compute_rho(x_test, f0, fit.model)
    cdf = build_null_cdf_mc(f0, fit.model, config.mc_samples, config.seed,
                            plus_one=config.mc_plus_one, keys=keys)
    info = {"tau": tau, "h_x": h_x.h, "fallback": fit.fallback,
            "n_infinite_null": cdf.n_infinite}
    return rho, cdf, pi_hat.value, info


def _run_split(m, config, per_half, method, alpha, split=None):
    if split is None:
        split = split_data(m, config.seed)
    elif split.m != m:
        raise InvalidInputError(f"split covers {split.m} hypotheses, data has {m}")
    decisions = []
    rho = np.empty(m)
    q = np.empty(m)
    pi_hat = np.empty(m)
    extra = {}
    for d in (1, 2):
        test = split.indices(d)
        train = split.indices(3 - d)
        dec, r, qq, pp, info = per_half(train, test, d)
        decisions.append(dec)
        rho[test], q[test], pi_hat[test] = r, qq, pp
        extra[f"half{d}"] = info
    out = combine_decisions(decisions[0], decisions[1], split)
    diagnostics = dict(out.diagnostics)
    diagnostics.update(extra)
    diagnostics.update({"rho": rho, "q": q, "pi_hat": pi_hat, "half": split.half})
    return Decision(out.reject, float("nan"), method, alpha, diagnostics)


def rho_bh_dd(instances, alpha: float, config: Optional[ProcedureConfig] = None,
              f0: DensityModel = STD_NORMAL, split: Optional[SplitAssignment] = None) -> Decision:
    """Data-driven rho-BH with sample splitting.

    Each half is tested with an alternative density, Storey estimate and
    Monte Carlo null CDF fitted on the other half; rejections are combined.
    ``split`` overrides the seeded random split.
    """
    config = _config(config, alpha)
    x, _, _ = as_arrays(instances)
    if x.size < 4:
        raise InvalidInputError("data-driven procedures need m >= 4")

    def per_half(train, test, d):
        rho, cdf, pi_hat, info = _pooled_half(x[train], x[test], f0, config, ("dd", d))
        dec = rho_bh(rho, cdf, pi_hat, alpha, method="rho-bh-dd")
        info.update(pi_hat=pi_hat, k=dec.k, nu_guard=_nu_guard(dec.threshold, pi_hat, alpha))
        return dec, rho, rho, pi_hat, info

    return _run_split(x.size, config, per_half, "rho-bh-dd", alpha, split)


def weighted_rho_bh_dd(instances, weights, alpha: float, config: Optional[ProcedureConfig] = None,
                       f0: DensityModel = STD_NORMAL, split: Optional[SplitAssignment] = None) -> Decision:
    """Data-driven weighted rho-BH with predetermined weights.

    Shares the per-half fits (and their seeds) with :func:`rho_bh_dd`; only
    the thresholding step differs.
    """
    config = _config(config, alpha)
    x, _, _ = as_arrays(instances)
    w = np.asarray(weights, dtype=float)
    if x.size < 4:
        raise InvalidInputError("data-driven procedures need m >= 4")
    if w.shape != x.shape or not (w > 0).all():
        raise InvalidInputError("weights must be positive, one per hypothesis")

    def per_half(train, test, d):
        rho, cdf, pi_hat, info = _pooled_half(x[train], x[test], f0, config, ("dd", d))
        dec = weighted_rho_bh(rho, w[test], cdf, pi_hat, alpha)
        dec = Decision(dec.reject, dec.threshold, "weighted-rho-bh-dd", alpha)
        info.update(pi_hat=pi_hat, k=dec.k)
        return dec, rho, rho / w[test], pi_hat, info

    return _run_split(x.size, config, per_half, "weighted-rho-bh-dd", alpha, split)


def rho_bh_side_dd(instances, alpha: float, config: Optional[ProcedureConfig] = None,
                   pi_cols=None, density_cols=None, f0: DensityModel = STD_NORMAL,
                   split: Optional[SplitAssignment] = None) -> Decision:
    """Data-driven rho-BH with side information.

    Per half: kernel Storey estimate of ``pi(s)`` on the other half, the
    three-step conditional alternative-density fit, per-hypothesis Monte
    Carlo null CDFs and :func:`side_info_rho_bh` with ``eta = pi_hat``
    clamped to ``config.eta_clamp``.  ``pi_cols`` and ``density_cols`` pick
    the covariate columns used for ``pi(s)`` and for ``f1(x | s)`` (all
    columns by default).
    """
    config = _config(config, alpha)
    x, s, _ = as_arrays(instances)
    if x.size < 4:
        raise InvalidInputError("data-driven procedures need m >= 4")
    if s.shape[1] < 1:
        raise InvalidInputError("side-information procedures need at least one covariate")
    all_cols = list(range(s.shape[1]))
    pi_cols = all_cols if pi_cols is None else list(pi_cols)
    density_cols = all_cols if density_cols is None else list(density_cols)
    s_pi, s_f = s[:, pi_cols], s[:, density_cols]
    eta_lo, eta_hi = config.eta_clamp

    def per_half(train, test, d):
        x1 = x[train]
        p1 = two_sided_pvalue(x1)
        tau = bh_tau(p1, config.tau_level, config.tau_fallback)
        H_pi = normal_scale_bandwidth(s_pi[train])
        H_f = normal_scale_bandwidth(s_f[train])
        h_x = silverman_bandwidth_1d(x1)
        pi_hat = kernel_storey_pi(s_pi[test], s_pi[train], p1, tau, H_pi, config.pi_clamp)
        fit = fit_cond_alt_density(x1, s_f[train], s_f[test], f0, tau, H_f, h_x,
                                   config.pi_clamp, p1, s_pi[train], H_pi)
        rho = compute_rho(x[test], f0, fit.model)
        eta = np.clip(pi_hat.raw, eta_lo, eta_hi)
        cdfs = build_conditional_null_cdfs(
            f0, fit.model, config.mc_samples, config.seed, plus_one=config.mc_plus_one,
            keys=("side", d), method=config.null_eval,
            per_bandwidth=config.grid_per_bandwidth, exact_budget=config.exact_budget,
        )
        dec = side_info_rho_bh(rho, pi_hat.value, eta, cdfs, alpha)
        q = dec.diagnostics["q"]
        dec = Decision(dec.reject, dec.threshold, "rho-bh-side-dd", alpha)
        info = {
            "tau": tau, "h_x": h_x.h, "H_pi": H_pi.matrix, "H_f": H_f.matrix,
            "fallback": fit.fallback, "pi_fallback": int(np.sum(pi_hat.fallback)),
            "n_infinite_null": cdfs.n_infinite, "k": dec.k, "eta": eta,
        }
        return dec, rho, q, pi_hat.value, info

    out = _run_split(x.size, config, per_half, "rho-bh-side-dd", alpha, split)
    split_half = out.diagnostics["half"]
    eta = np.empty(x.size)
    for d in (1, 2):
        eta[split_half == d] = out.diagnostics[f"half{d}"].pop("eta")
    out.diagnostics["eta"] = eta
    return out
