"""Classical comparison procedures: BH, adjusted and weighted BH, e-BH, SC and Clfdr."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Decision, InvalidInputError, stepup_reject
from .estimators import clfdr_from_q

__all__ = [
    "PValueSet",
    "bh",
    "adjusted_bh",
    "weighted_bh",
    "ebh",
    "sc_lfdr",
    "clfdr_procedure",
]


@dataclass(frozen=True, eq=False)
class PValueSet:
    """p-values with optional weights summing to ``m``."""

    p: np.ndarray
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).ravel()
        if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
            raise InvalidInputError("p-values must lie in [0, 1]")
        object.__setattr__(self, "p", p)
        if self.w is not None:
            w = np.asarray(self.w, dtype=float).ravel()
            if w.shape != p.shape or not (w > 0).all():
                raise InvalidInputError("weights must be positive, one per p-value")
            if abs(w.sum() - p.size) > 1e-9:
                raise InvalidInputError(f"weights must sum to m={p.size}, got {w.sum()!r}")
            object.__setattr__(self, "w", w)

    def __len__(self):
        return self.p.size


def _pvalues(p) -> np.ndarray:
    return p.p if isinstance(p, PValueSet) else PValueSet(p).p


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")


def _bh_core(p, m_eff, alpha, method):
    order = np.argsort(p, kind="stable")
    ok = m_eff * p[order] <= alpha * np.arange(1, p.size + 1)
    reject, threshold = stepup_reject(p, ok, order)
    return Decision(reject, threshold, method, alpha)


def bh(p, alpha: float) -> Decision:
    """Benjamini-Hochberg: ``k = max{i: m p_(i) <= alpha i}``."""
    _check_alpha(alpha)
    p = _pvalues(p)
    return _bh_core(p, p.size, alpha, "bh")


def adjusted_bh(p, pi: float, alpha: float) -> Decision:
    """BH with ``m`` replaced by ``m (1 - pi)``."""
    _check_alpha(alpha)
    if not 0 <= pi < 1:
        raise InvalidInputError(f"pi must lie in [0, 1), got {pi}")
    p = _pvalues(p)
    return _bh_core(p, p.size * (1.0 - pi), alpha, "adjusted-bh")


def weighted_bh(p, alpha: float, w=None) -> Decision:
    """BH applied to ``p_i / w_i``; the weights must sum to ``m``."""
    _check_alpha(alpha)
    ps = p if isinstance(p, PValueSet) and w is None else PValueSet(_pvalues(p), w)
    if ps.w is None:
        raise InvalidInputError("weighted_bh needs weights")
    return _bh_core(ps.p / ps.w, ps.p.size, alpha, "weighted-bh")


def ebh(e, alpha: float) -> Decision:
    """Unboosted e-BH: ``k = max{k: k e_[k] >= m / alpha}`` over decreasing e.

    Rejects the ``k`` largest e-values; the threshold is reported on the
    ``1/e`` scale.
    """
    _check_alpha(alpha)
    e = np.asarray(e, dtype=float).ravel()
    if np.isnan(e).any() or (e < 0).any():
        raise InvalidInputError("e-values must be nonnegative")
    m = e.size
    with np.errstate(divide="ignore", over="ignore"):
        inv = 1.0 / e
    order = np.argsort(-e, kind="stable")
    ok = np.arange(1, m + 1) * e[order] >= m / alpha
    reject, threshold = stepup_reject(inv, ok, order)
    return Decision(reject, threshold, "ebh", alpha)


def sc_lfdr(lfdr, alpha: float) -> Decision:
    """Running-mean rule: ``k = max{i: mean(Lfdr_(1..i)) <= alpha}``."""
    _check_alpha(alpha)
    v = np.asarray(lfdr, dtype=float).ravel()
    if np.isnan(v).any() or (v < 0).any() or (v > 1).any():
        raise InvalidInputError("Lfdr values must lie in [0, 1]")
    order = np.argsort(v, kind="stable")
    # sum <= alpha * i rather than mean <= alpha: exact when values tie at alpha
    ok = np.cumsum(v[order]) <= alpha * np.arange(1, v.size + 1)
    passing = np.flatnonzero(ok)
    k = int(passing[-1]) + 1 if passing.size else 0
    # exactly the k smallest: pulling in ties of the k-th value would raise the mean
    reject = np.zeros(v.size, dtype=bool)
    reject[order[:k]] = True
    threshold = float(v[order[k - 1]]) if k else -np.inf
    return Decision(reject, threshold, "sc-lfdr", alpha)


def clfdr_procedure(q, alpha: float, half=None) -> Decision:
    """SC rule on ``Clfdr = q / (1 + q)``, applied separately within each half.

    ``half`` holds one group label per hypothesis (the split labels of a
    data-driven run); without it all hypotheses form one group.
    """
    _check_alpha(alpha)
    cl = np.asarray(clfdr_from_q(np.asarray(q, dtype=float)), dtype=float).ravel()
    groups = np.zeros(cl.size, dtype=int) if half is None else np.asarray(half).ravel()
    if groups.shape != cl.shape:
        raise InvalidInputError("half labels must match q")
    reject = np.zeros(cl.size, dtype=bool)
    thresholds = []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        d = sc_lfdr(cl[idx], alpha)
        reject[idx] = d.reject
        thresholds.append(d.threshold)
    threshold = thresholds[0] if len(thresholds) == 1 else float("nan")
    return Decision(reject, threshold, "clfdr", alpha, {"clfdr": cl, "thresholds": tuple(thresholds)})
