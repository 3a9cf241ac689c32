"""Data generators, FDP/power metrics and the seeded replication runner."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .baselines import bh, clfdr_procedure, ebh
from .core import (
    Decision,
    InvalidInputError,
    NotApplicableError,
    ProcedureConfig,
    TestInstance,
    derive_seed,
    make_rng,
)
from .dist import Normal, NormalLocationNullCdf, NormalLocationNullCdfBatch, STD_NORMAL, two_sided_pvalue
from .procedures import compute_rho, rho_bh, rho_bh_by, rho_bh_dd, rho_bh_side_dd, side_info_rho_bh

logger = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "SimData",
    "MetricsRecord",
    "bivariate_pi",
    "bivariate_alt_mean",
    "block_pi",
    "gen_bivariate",
    "gen_univariate_blocks",
    "gen_equicorrelated_nulls",
    "gen_null_only",
    "generate",
    "fdp",
    "power_prop",
    "METHODS",
    "run_replications",
    "aggregate",
]

SCENARIO_KINDS = ("bivariate", "univariate-blocks-1", "univariate-blocks-2", "null-only", "custom-dependence")

# (k_c, k_d, k_f) presets of the bivariate design
BIVARIATE_PRESETS = {
    "medium-moderate": (2.0, 1.5, 0.4),
    "medium-strong": (2.0, 2.5, 0.6),
    "high-moderate": (1.0, 1.5, 0.4),
    "high-strong": (1.0, 2.5, 0.6),
}


@dataclass(frozen=True)
class Scenario:
    """One simulation design.

    ``param`` is the swept hyperparameter: ``k_t`` (bivariate), ``mu``
    (blocks-1), ``pi0`` (blocks-2), the equicorrelation coefficient
    (custom-dependence) and unused for null-only.  ``g_mean`` is the
    location of the fixed ``g = N(g_mean, 1)`` used by the oracle ``rho-bh``
    and ``rho-bh-by`` methods on scenarios without a known alternative.
    """

    kind: str
    m: int = 5000
    param: float = 3.0
    k_c: float = 2.0
    k_d: float = 1.5
    k_f: float = 0.4
    mean_transform: str = "exp"
    g_mean: float = 2.0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InvalidInputError(f"unknown scenario {self.kind!r}; choose from {SCENARIO_KINDS}")
        if self.m < 1:
            raise InvalidInputError("m must be >= 1")
        if self.mean_transform not in ("exp", "linear"):
            raise InvalidInputError("mean_transform must be 'exp' or 'linear'")
        if self.kind == "univariate-blocks-2" and not 0 < self.param < 1:
            raise InvalidInputError("pi0 must lie in (0, 1)")
        if self.kind == "custom-dependence" and not 0 <= self.param < 1:
            raise InvalidInputError("corr must lie in [0, 1)")


class SimData(Sequence):
    """Simulated instances with truth; also exposes column arrays."""

    def __init__(self, x, s, theta, pi, alt_mean):
        self.x = np.asarray(x, dtype=float)
        self.s = np.asarray(s, dtype=float).reshape(self.x.size, -1)
        self.theta = np.asarray(theta, dtype=np.int8)
        self.pi = np.asarray(pi, dtype=float)
        self.alt_mean = np.asarray(alt_mean, dtype=float)

    def __len__(self):
        return self.x.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return TestInstance(float(self.x[i]), tuple(self.s[i]), int(self.theta[i]))


def bivariate_pi(s1, k_c, k_d):
    """``pi(s) = 1 / (1 + exp(k_c + k_d s1))``."""
    return 1.0 / (1.0 + np.exp(k_c + k_d * np.asarray(s1, dtype=float)))


def bivariate_alt_mean(s2, k_t, k_f, mean_transform="exp"):
    """``A(k_t) * 2 e^{k_f s2} / (1 + e^{k_f s2})`` with ``A = exp`` or identity."""
    factor = math.exp(k_t) if mean_transform == "exp" else float(k_t)
    return factor * 2.0 / (1.0 + np.exp(-k_f * np.asarray(s2, dtype=float)))


def gen_bivariate(params, m: int, seed: int, mean_transform: str = "exp") -> SimData:
    """Bivariate covariate design; ``params = (k_c, k_d, k_f, k_t)``."""
    k_c, k_d, k_f, k_t = params
    rng = make_rng(seed, "gen", "bivariate")
    s = rng.standard_normal((m, 2))
    pi = bivariate_pi(s[:, 0], k_c, k_d)
    mean = bivariate_alt_mean(s[:, 1], k_t, k_f, mean_transform)
    theta = rng.random(m) < pi
    x = rng.standard_normal(m) + theta * mean
    return SimData(x, s, theta, pi, mean)


def _blocks(m):
    def idx(a):
        return (a * m) // 5000

    return [(idx(1000) + 1, idx(1200)), (idx(2000) + 1, idx(2200)),
            (idx(3000) + 1, idx(3200)), (idx(4000) + 1, idx(4200))]


def block_pi(setting: int, param: float, m: int = 5000) -> np.ndarray:
    """Per-location non-null proportion of the block designs (1-based locations).

    Setting 1: 0.9 on the first two blocks, 0.6 on the last two, 0.01
    elsewhere.  Setting 2: ``param`` on all four blocks, 0.01 elsewhere.
    Blocks sit at 1001-1200, 2001-2200, 3001-3200 and 4001-4200 for
    ``m = 5000`` and scale proportionally otherwise.
    """
    if setting not in (1, 2):
        raise InvalidInputError("setting must be 1 or 2")
    pi = np.full(m, 0.01)
    levels = (0.9, 0.9, 0.6, 0.6) if setting == 1 else (param,) * 4
    for (lo, hi), level in zip(_blocks(m), levels):
        pi[lo - 1:hi] = level
    return pi


def gen_univariate_blocks(setting: int, param: float, m: int = 5000, seed: int = 0) -> SimData:
    """Block design with covariate ``s_i = i``.

    Setting 1 sweeps the alternative mean ``mu = param``; setting 2 sweeps
    the block proportion ``pi0 = param`` with ``mu = 3``.
    """
    pi = block_pi(setting, param, m)
    mu = float(param) if setting == 1 else 3.0
    rng = make_rng(seed, "gen", "blocks", setting)
    theta = rng.random(m) < pi
    x = rng.standard_normal(m) + theta * mu
    s = np.arange(1, m + 1, dtype=float)
    return SimData(x, s, theta, pi, np.full(m, mu))


def gen_equicorrelated_nulls(m: int, corr: float, seed: int = 0) -> SimData:
    """All-null ``X_i = sqrt(corr) Z_0 + sqrt(1 - corr) Z_i``."""
    if not 0 <= corr < 1:
        raise InvalidInputError("corr must lie in [0, 1)")
    rng = make_rng(seed, "gen", "equicorrelated")
    z0 = rng.standard_normal()
    x = math.sqrt(corr) * z0 + math.sqrt(1.0 - corr) * rng.standard_normal(m)
    zeros = np.zeros(m)
    return SimData(x, np.arange(1, m + 1, dtype=float), zeros, zeros, zeros)


def gen_null_only(m: int, seed: int = 0) -> SimData:
    rng = make_rng(seed, "gen", "null-only")
    zeros = np.zeros(m)
    return SimData(rng.standard_normal(m), np.arange(1, m + 1, dtype=float), zeros, zeros, zeros)


def generate(scenario: Scenario, seed: int) -> SimData:
    if scenario.kind == "bivariate":
        params = (scenario.k_c, scenario.k_d, scenario.k_f, scenario.param)
        return gen_bivariate(params, scenario.m, seed, scenario.mean_transform)
    if scenario.kind == "univariate-blocks-1":
        return gen_univariate_blocks(1, scenario.param, scenario.m, seed)
    if scenario.kind == "univariate-blocks-2":
        return gen_univariate_blocks(2, scenario.param, scenario.m, seed)
    if scenario.kind == "custom-dependence":
        return gen_equicorrelated_nulls(scenario.m, scenario.param, seed)
    return gen_null_only(scenario.m, seed)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _flags(decision):
    return np.asarray(decision.reject if isinstance(decision, Decision) else decision, dtype=bool)


def _truth(truth):
    if truth is None:
        raise NotApplicableError("truth labels are missing")
    return np.asarray(truth).astype(bool)


def fdp(decision, truth) -> float:
    """``#{false rejections} / max(#{rejections}, 1)``."""
    d, theta = _flags(decision), _truth(truth)
    if d.shape != theta.shape:
        raise InvalidInputError("decision and truth lengths differ")
    return int(np.sum(d & ~theta)) / max(int(d.sum()), 1)


def power_prop(decision, truth) -> float:
    """``#{true rejections} / #{non-nulls}``."""
    d, theta = _flags(decision), _truth(truth)
    if d.shape != theta.shape:
        raise InvalidInputError("decision and truth lengths differ")
    n1 = int(theta.sum())
    if n1 == 0:
        raise NotApplicableError("power is undefined without non-nulls")
    return int(np.sum(d & theta)) / n1


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    replicate: int
    fdp: float
    power: float  # nan when the replicate has no non-nulls
    rejections: int
    seed: int
    error: Optional[str] = None


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------


def _oracle_side(data: SimData, alpha, config, cache):
    """Side-information rho-BH with the true ``f1(.|s)``, exact null CDFs and ``eta = pi``."""
    if not np.any(data.pi > 0):
        raise NotApplicableError("oracle side-information method needs a non-null model")
    g = Normal(data.alt_mean)
    rho = compute_rho(data.x, STD_NORMAL, g)
    eta = np.clip(data.pi, *config.eta_clamp)
    return side_info_rho_bh(rho, data.pi, eta, NormalLocationNullCdfBatch(data.alt_mean), alpha)


def _side_dd(data, alpha, config, cache):
    if "side" not in cache:
        cache["side"] = rho_bh_side_dd(data, alpha, config)
    return cache["side"]


def _dd(data, alpha, config, cache):
    if "dd" not in cache:
        cache["dd"] = rho_bh_dd(data, alpha, config)
    return cache["dd"]


def _covariate_run(data, alpha, config, cache):
    return _side_dd(data, alpha, config, cache) if data.s.shape[1] else _dd(data, alpha, config, cache)


def _ebh(data, alpha, config, cache):
    rho = _covariate_run(data, alpha, config, cache).diagnostics["rho"]
    with np.errstate(divide="ignore"):
        return ebh(1.0 / rho, alpha)


def _clfdr(data, alpha, config, cache):
    d = _covariate_run(data, alpha, config, cache)
    return clfdr_procedure(d.diagnostics["q"], alpha, d.diagnostics["half"])


def _fixed_g(data, alpha, config, cache, by):
    mu = cache["scenario"].g_mean
    rho = compute_rho(data.x, STD_NORMAL, Normal(mu))
    c = NormalLocationNullCdf(mu)
    return rho_bh_by(rho, c, 0.0, alpha) if by else rho_bh(rho, c, 0.0, alpha)


METHODS: dict[str, Callable] = {
    "bh": lambda data, alpha, config, cache: bh(two_sided_pvalue(data.x), alpha),
    "ebh": _ebh,
    "rho-bh-or": _oracle_side,
    "rho-bh-dd": _dd,
    "rho-bh-side-dd": _side_dd,
    "clfdr": _clfdr,
    "rho-bh": lambda data, alpha, config, cache: _fixed_g(data, alpha, config, cache, False),
    "rho-bh-by": lambda data, alpha, config, cache: _fixed_g(data, alpha, config, cache, True),
}


def _seed_int(seed, *keys) -> int:
    return int(derive_seed(seed, *keys).generate_state(1, np.uint32)[0])


def _one_replicate(args):
    scenario, methods, r, alpha, seed, config = args
    data_seed = _seed_int(seed, "replicate", r)
    data = generate(scenario, data_seed)
    proc_config = replace(config, alpha=alpha, seed=_seed_int(seed, "procedure", r))
    cache = {"scenario": scenario}
    theta = data.theta
    has_alt = bool(theta.any())
    out = []
    for name in methods:
        try:
            d = METHODS[name](data, alpha, proc_config, cache)
            out.append(MetricsRecord(name, r, fdp(d, theta),
                                     power_prop(d, theta) if has_alt else float("nan"),
                                     d.k, data_seed))
        except Exception as exc:  # recorded, the run continues
            logger.warning("method %s failed on replicate %d: %s", name, r, exc)
            out.append(MetricsRecord(name, r, float("nan"), float("nan"), 0, data_seed,
                                     f"{type(exc).__name__}: {exc}"))
    return out


def run_replications(
    scenario: Scenario,
    methods,
    reps: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
    config: Optional[ProcedureConfig] = None,
    workers: int = 1,
):
    """Run ``reps`` seeded replicates of ``scenario`` for every method.

    Returns ``(records, summary)``; records are ordered by method name then
    replicate, and the summary (see :func:`aggregate`) by method name.
    Data for replicate ``r`` depend only on ``(seed, r)``; the data-driven
    procedures reuse one fit per replicate, so ``clfdr`` and ``ebh`` share
    the rho-values of ``rho-bh-side-dd`` (``rho-bh-dd`` without covariates).
    """
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InvalidInputError(f"unknown method(s) {unknown}; choose from {sorted(METHODS)}")
    config = config if config is not None else ProcedureConfig(alpha=alpha)
    ordered = sorted(set(methods))
    jobs = [(scenario, ordered, r, alpha, seed, config) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_one_replicate, jobs))
    else:
        chunks = [_one_replicate(j) for j in jobs]
    records = sorted((rec for chunk in chunks for rec in chunk), key=lambda rec: (rec.method, rec.replicate))
    return records, aggregate(records)


@dataclass(frozen=True)
class Summary:
    method: str
    n: int
    fdr: float
    fdr_se: float
    power: float
    power_se: float
    rejections: float
    failures: int = 0
    extra: dict = field(default_factory=dict, compare=False)


def _mean_se(v):
    v = np.asarray([x for x in v if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(records) -> list[Summary]:
    """Per-method means and Monte Carlo standard errors, sorted by method."""
    by_method: dict[str, list[MetricsRecord]] = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    out = []
    for name in sorted(by_method):
        recs = sorted(by_method[name], key=lambda r: r.replicate)
        ok = [r for r in recs if r.error is None]
        fdr, fdr_se = _mean_se([r.fdp for r in ok])
        power, power_se = _mean_se([r.power for r in ok])
        rej = float(np.mean([r.rejections for r in ok])) if ok else float("nan")
        out.append(Summary(name, len(ok), fdr, fdr_se, power, power_se, rej, len(recs) - len(ok)))
    return out
