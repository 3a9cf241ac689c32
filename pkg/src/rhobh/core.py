"""Shared domain types, errors, seeding and split/combine plumbing."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

__all__ = [
    "RhoError",
    "InvalidInputError",
    "DegenerateInputError",
    "NotApplicableError",
    "TestInstance",
    "RhoValue",
    "Decision",
    "SplitAssignment",
    "ProcedureConfig",
    "derive_seed",
    "make_rng",
    "as_arrays",
    "split_data",
    "combine_decisions",
    "stepup_reject",
]


class RhoError(ValueError):
    """Base class for all errors raised by this package."""


class InvalidInputError(RhoError):
    """Inputs violate a documented precondition."""


class DegenerateInputError(RhoError):
    """Inputs are valid but the requested quantity is undefined for them."""


class NotApplicableError(RhoError):
    """A metric was requested that the data cannot support (e.g. no truth)."""


@dataclass(frozen=True)
class TestInstance:
    """One hypothesis: summary statistic ``x``, covariates ``s``, optional truth."""

    __test__ = False  # keep pytest from collecting this class

    x: float
    s: tuple = ()
    theta: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.x):
            raise InvalidInputError(f"x must be finite, got {self.x!r}")
        s = tuple(float(v) for v in np.atleast_1d(self.s)) if np.size(self.s) else ()
        if not all(math.isfinite(v) for v in s):
            raise InvalidInputError("covariates must be finite")
        object.__setattr__(self, "s", s)
        if self.theta is not None and self.theta not in (0, 1):
            raise InvalidInputError(f"theta must be 0 or 1, got {self.theta!r}")


@dataclass(frozen=True)
class RhoValue:
    rho: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInputError(f"rho must be positive, got {self.rho!r}")
        if not self.weight > 0:
            raise InvalidInputError(f"weight must be positive, got {self.weight!r}")

    @property
    def q(self) -> float:
        return self.rho / self.weight


@dataclass(frozen=True, eq=False)
class Decision:
    """Reject/accept flags plus the threshold and method that produced them.

    ``threshold`` lives on the scale the method ranks on (p, rho, q, Lfdr or
    1/e).  It is ``-inf`` when nothing is rejected and ``nan`` for decisions
    combined across sample-splitting halves, whose per-half thresholds are
    kept in ``diagnostics["thresholds"]``.
    """

    reject: np.ndarray
    threshold: float
    method: str
    alpha: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        flags = np.asarray(self.reject, dtype=bool)
        flags.setflags(write=False)
        object.__setattr__(self, "reject", flags)

    @property
    def k(self) -> int:
        return int(self.reject.sum())

    @property
    def m(self) -> int:
        return int(self.reject.size)

    @property
    def rejected(self) -> np.ndarray:
        """Indices of rejected hypotheses."""
        return np.flatnonzero(self.reject)

    def __eq__(self, other):
        if not isinstance(other, Decision):
            return NotImplemented
        return (
            np.array_equal(self.reject, other.reject)
            and self.method == other.method
            and self.alpha == other.alpha
            and (self.threshold == other.threshold
                 or (math.isnan(self.threshold) and math.isnan(other.threshold)))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Half label (1 or 2) per hypothesis; half 1 holds floor(m/2) members."""

    half: np.ndarray

    def __post_init__(self):
        half = np.asarray(self.half, dtype=np.int8)
        if half.ndim != 1 or not np.isin(half, (1, 2)).all():
            raise InvalidInputError("half labels must be a 1-d array of 1s and 2s")
        half.setflags(write=False)
        object.__setattr__(self, "half", half)

    @property
    def m(self) -> int:
        return int(self.half.size)

    @property
    def half1(self) -> np.ndarray:
        return np.flatnonzero(self.half == 1)

    @property
    def half2(self) -> np.ndarray:
        return np.flatnonzero(self.half == 2)

    @property
    def m1(self) -> int:
        return int((self.half == 1).sum())

    @property
    def m2(self) -> int:
        return self.m - self.m1

    def indices(self, d: int) -> np.ndarray:
        return self.half1 if d == 1 else self.half2

    def swapped(self) -> "SplitAssignment":
        return SplitAssignment(3 - self.half)

    def __eq__(self, other):
        if not isinstance(other, SplitAssignment):
            return NotImplemented
        return np.array_equal(self.half, other.half)

    __hash__ = None


@dataclass(frozen=True)
class ProcedureConfig:
    """Tuning knobs shared by the data-driven procedures.

    ``null_eval`` picks how alternative-density estimates are evaluated at the
    Monte Carlo null draws: ``"exact"`` sums every kernel term, ``"grid"``
    interpolates log-density on a grid of spacing ``h_x / grid_per_bandwidth``,
    ``"auto"`` uses exact evaluation below ``exact_budget`` kernel terms.

    ``mc_plus_one`` (default on) selects the Monte Carlo null CDF
    ``(1 + count) / (B + 1)``, which is a valid p-value, over the plain
    ``count / B``.  The plain form is low by up to ``1 / (B + 1)`` per CDF:
    a null statistic below every draw gets ``c = 0``, and summed over many
    per-hypothesis CDFs the deficit is of order ``m / B``, enough to break
    error control.  The price is that fewer than about
    ``sum(1 - pi) / ((B + 1) alpha)`` rejections can never be made.
    """

    alpha: float = 0.05
    mc_samples: int = 1000
    pi_clamp: tuple = (0.0, 0.999)
    eta_clamp: tuple = (0.001, 0.999)
    seed: int = 0
    tau_level: float = 0.9
    tau_fallback: float = 0.5
    mc_plus_one: bool = True
    null_eval: str = "auto"
    grid_per_bandwidth: int = 20
    exact_budget: float = 2e7

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.mc_samples) < 1:
            raise InvalidInputError("mc_samples must be >= 1")
        for name in ("pi_clamp", "eta_clamp"):
            lo, hi = getattr(self, name)
            if not 0 <= lo < hi < 1:
                raise InvalidInputError(f"{name} must satisfy 0 <= lo < hi < 1")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.null_eval not in ("auto", "exact", "grid"):
            raise InvalidInputError(f"unknown null_eval {self.null_eval!r}")


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(seed: int, *keys) -> np.random.SeedSequence:
    """Sub-seed for ``(seed, *keys)``; independent of execution order."""
    return np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_key(k) for k in keys))


def make_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


# ---------------------------------------------------------------------------
# Instances <-> arrays
# ---------------------------------------------------------------------------


def as_arrays(instances) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Return ``(x, s, theta)`` arrays for a batch of hypotheses.

    Accepts a sequence of :class:`TestInstance` or any object exposing array
    attributes ``x`` and ``s`` (and optionally ``theta``).  ``s`` always comes
    back two-dimensional with shape ``(m, l)``; ``theta`` is ``None`` when any
    label is missing.
    """
    if hasattr(instances, "x") and hasattr(instances, "s"):
        x = np.asarray(instances.x, dtype=float)
        s = np.asarray(instances.s, dtype=float).reshape(x.size, -1)
        theta = getattr(instances, "theta", None)
        theta = None if theta is None else np.asarray(theta, dtype=int)
        return x, s, theta
    items: Sequence[TestInstance] = list(instances)
    x = np.array([it.x for it in items], dtype=float)
    widths = {len(it.s) for it in items}
    if len(widths) > 1:
        raise InvalidInputError("all instances must share the covariate dimension")
    s = np.array([it.s for it in items], dtype=float).reshape(len(items), -1)
    if any(it.theta is None for it in items):
        theta = None
    else:
        theta = np.array([it.theta for it in items], dtype=int)
    return x, s, theta


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def split_data(instances, seed: int) -> SplitAssignment:
    """Uniform random split with ``floor(m/2)`` hypotheses in half 1."""
    m = instances if isinstance(instances, (int, np.integer)) else len(as_arrays(instances)[0])
    if m < 2:
        raise InvalidInputError(f"need at least 2 hypotheses to split, got {m}")
    rng = make_rng(seed, "split")
    half = np.full(m, 2, dtype=np.int8)
    half[rng.permutation(m)[: m // 2]] = 1
    return SplitAssignment(half)


def combine_decisions(d1: Decision, d2: Decision, assignment: SplitAssignment) -> Decision:
    """Union of per-half rejections mapped back to original indices.

    ``d1`` must be indexed in half-1 order (ascending original index) and
    ``d2`` in half-2 order.
    """
    if d1.m != assignment.m1 or d2.m != assignment.m2:
        raise InvalidInputError(
            f"decision sizes ({d1.m}, {d2.m}) do not match the split "
            f"({assignment.m1}, {assignment.m2})"
        )
    reject = np.zeros(assignment.m, dtype=bool)
    reject[assignment.half1] = d1.reject
    reject[assignment.half2] = d2.reject
    method = d1.method if d1.method == d2.method else f"{d1.method}+{d2.method}"
    diagnostics: dict[str, Any] = {
        "thresholds": (d1.threshold, d2.threshold),
        "k_halves": (d1.k, d2.k),
    }
    return Decision(reject, float("nan"), method, d1.alpha, diagnostics)


def stepup_reject(stat: np.ndarray, ok: np.ndarray, order: np.ndarray) -> tuple[np.ndarray, float]:
    """Shared tail of every step-up rule.

    ``ok[j]`` says whether the bound holds at the (j+1)-th smallest statistic
    (``order`` sorts ``stat``).  Rejects every hypothesis whose statistic is at
    most the largest passing order statistic; ties go toward rejection.
    """
    passing = np.flatnonzero(ok)
    if passing.size == 0:
        return np.zeros(stat.size, dtype=bool), float("-inf")
    threshold = float(stat[order[passing[-1]]])
    return stat <= threshold, threshold
