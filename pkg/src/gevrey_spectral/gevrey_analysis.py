"""Gevrey classification from spectral decay.

A distribution lies in the Gevrey class G^s exactly when its shell norms obey
``||F_lam u|| <= C exp(-h (1+lam)^{1/2s})`` for some ``C, h > 0``.  This module
fits that bound to finite shell data, and checks the equivalent factorial
form ``||Delta_G^k u|| <= C h^k (k!)^{2s}`` (Gevrey vectors of the partial
Laplacian).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, ParameterError, PreconditionError
from .spectral_core import (
    TRUNCATION_FRACTION,
    ModeCoeffs,
    _check_gevrey_params,
    g_shell_norms,
    gevrey_weight,
    sq,
)
from .verdict import Status

#: relative slack on the fitted rate allowed by the uniform-bound check
SLACK = 0.10
#: log-space tolerance for round-off in the uniform-bound check
LOG_TOL = 1e-9


@dataclass(frozen=True)
class GevreyEstimate:
    """Fitted bound ``C exp(-h w)`` with ``w = (1+eigenvalue)^{1/2s}``.

    When the verdict holds, every data point lies below
    ``C exp(-(h - slack) w)``; ``bound_rate`` is that certified rate.
    Estimates built from known constants carry ``slack = 0``.
    """

    s: float
    C: float
    h: float
    residual: float
    verdict: Status
    slack: float = 0.0
    n_points: int = 0
    top_fraction: float = 0.0
    reasons: tuple[str, ...] = ()

    @property
    def holds(self) -> bool:
        return self.verdict is Status.HOLDS

    @property
    def bound_rate(self) -> float:
        return self.h - self.slack

    def bound(self, eigenvalue) -> np.ndarray:
        return self.C * np.exp(-self.bound_rate * gevrey_weight(eigenvalue, self.s))

    @classmethod
    def known(cls, s: float, C: float, h: float) -> "GevreyEstimate":
        """Estimate carrying exact, externally known constants."""
        return cls(s=s, C=C, h=h, residual=0.0, verdict=Status.HOLDS)

    def to_json(self) -> dict:
        return {
            "s": self.s, "C": self.C, "h": self.h, "residual": self.residual,
            "verdict": self.verdict.value, "slack": self.slack,
            "n_points": self.n_points, "top_fraction": self.top_fraction,
            "reasons": list(self.reasons),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GevreyEstimate":
        return cls(s=float(d["s"]), C=float(d["C"]), h=float(d["h"]),
                   residual=float(d.get("residual", 0.0)), verdict=Status(d["verdict"]),
                   slack=float(d.get("slack", 0.0)), n_points=int(d.get("n_points", 0)),
                   top_fraction=float(d.get("top_fraction", 0.0)),
                   reasons=tuple(d.get("reasons", ())))


def fit_uniform_decay(weights, norms, s: float, top_fraction: float = 0.0) -> GevreyEstimate:
    """Least-squares fit of ``log N = log C - h w`` followed by the uniform-bound check.

    ``weights`` are the already computed ``w`` values.  Zero norms are ignored.
    """
    w = np.asarray(weights, dtype=float)
    y = np.asarray(norms, dtype=float)
    keep = y > 0
    w, y = w[keep], np.log(y[keep])
    if len(w) < 3:
        raise InsufficientDataError(f"need at least 3 nonzero shells, got {len(w)}")
    design = np.column_stack([np.ones_like(w), -w])
    (log_c, h), *_ = np.linalg.lstsq(design, y, rcond=None)
    log_c, h = float(log_c), float(h)
    residual = float(np.max(y - (log_c - h * w)))
    slack = SLACK * abs(h)
    reasons = []
    if h <= 0:
        status = Status.FAILS
        reasons.append(f"fitted decay rate h = {h:.6g} is not positive")
    else:
        excess = float(np.max(y - (log_c - (h - slack) * w)))
        if excess > LOG_TOL:
            status = Status.FAILS
            reasons.append(f"data exceed the relaxed bound by {excess:.6g} in log scale")
        elif top_fraction > TRUNCATION_FRACTION:
            status = Status.INCONCLUSIVE
            reasons.append(f"top shell carries {top_fraction:.3%} of the mass")
        else:
            status = Status.HOLDS
    return GevreyEstimate(s=s, C=math.exp(log_c), h=h, residual=residual, verdict=status,
                          slack=slack, n_points=len(w), top_fraction=top_fraction,
                          reasons=tuple(reasons))


def _shell_arrays(shell_norms):
    data = sorted((int(lam), float(nrm)) for lam, nrm in shell_norms)
    lam = np.array([d[0] for d in data], dtype=float)
    nrm = np.array([d[1] for d in data], dtype=float)
    if np.any(nrm < 0) or np.any(lam < 0):
        raise ParameterError("shell eigenvalues and norms must be nonnegative")
    return lam, nrm


def top_shell_fraction(shell_norms) -> float:
    lam, nrm = _shell_arrays(shell_norms)
    total = float(np.sum(nrm ** 2))
    if total == 0:
        return 0.0
    return float(nrm[np.argmax(lam)] ** 2 / total)


def decay_fit(shell_norms: Sequence[tuple[int, float]], s: float) -> GevreyEstimate:
    """Fit ``||F_lam u|| <= C exp(-h (1+lam)^{1/2s})`` to ``(lam, norm)`` pairs.

    Raises :class:`InsufficientDataError` with fewer than three nonzero shells;
    the zero function is the caller's business.
    """
    _check_gevrey_params(s)
    lam, nrm = _shell_arrays(shell_norms)
    return fit_uniform_decay(gevrey_weight(lam, s), nrm, s, top_shell_fraction(shell_norms))


@dataclass(frozen=True)
class OrderClassification:
    order: float | None
    estimates: tuple[GevreyEstimate, ...] = ()
    reason: str = ""

    def to_json(self) -> dict:
        return {"order": self.order, "reason": self.reason,
                "estimates": [e.to_json() for e in self.estimates]}


def classify_order(shell_norms, s_grid: Sequence[float]) -> OrderClassification:
    """Smallest order in ``s_grid`` whose decay fit holds, or ``None``."""
    s_grid = list(s_grid)
    if s_grid != sorted(s_grid):
        raise ParameterError("candidate orders must be sorted ascending")
    try:
        fits = tuple(decay_fit(shell_norms, s) for s in s_grid)
    except InsufficientDataError as exc:
        return OrderClassification(None, (), f"insufficient data: {exc}")
    for est in fits:
        if est.holds:
            return OrderClassification(est.s, fits, "")
    return OrderClassification(None, fits, "no candidate order holds")


# ---------------------------------------------------------------------------
# Gevrey vectors of the partial Laplacian
# ---------------------------------------------------------------------------

def apply_deltaG_power(u: ModeCoeffs, k: int) -> ModeCoeffs:
    """``Delta_G^k u``: each mode at G-eigenvalue ``lam`` is multiplied by ``lam^k``."""
    if k < 0:
        raise ParameterError("power of Delta_G must be nonnegative")
    out = u
    for _ in range(k):  # repeated products keep the composition law exact in floating point
        out = ModeCoeffs(u.grid, {(j, kk): sq(kk) * v for (j, kk), v in out.items()})
    return out


def _log_power_norms(shells, k_max: int) -> np.ndarray:
    """``log ||Delta_G^k u||`` for ``k = 0..k_max`` from ``(lam, norm)`` shells."""
    lam = np.array([s[0] for s in shells if s[1] > 0], dtype=float)
    ln = np.log(np.array([s[1] for s in shells if s[1] > 0], dtype=float))
    out = np.full(k_max + 1, -np.inf)
    if len(lam) == 0:
        return out
    for k in range(k_max + 1):
        if k == 0:
            terms = 2 * ln
        else:
            pos = lam > 0
            if not pos.any():
                continue
            terms = 2 * k * np.log(lam[pos]) + 2 * ln[pos]
        top = terms.max()
        out[k] = 0.5 * (top + math.log(np.exp(terms - top).sum()))
    return out


@dataclass(frozen=True)
class VectorBoundFit:
    """``||Delta_G^k u|| <= C h^k (k!)^{2s}`` for ``0 <= k <= k_max``.

    ``growth`` is ``h`` at the full cutoff divided by ``h`` at half the
    G-cutoff; it stays near one when the estimate has converged.
    """

    s: float
    C: float
    h: float
    k_max: int
    verdict: Status
    log_norms: tuple[float, ...] = ()
    h_per_k: tuple[float, ...] = ()
    h_half_cutoff: float = 0.0
    growth: float = 1.0
    shells: tuple[tuple[int, float], ...] = ()
    reasons: tuple[str, ...] = ()

    @property
    def holds(self) -> bool:
        return self.verdict is Status.HOLDS

    def to_json(self) -> dict:
        return {
            "s": self.s, "C": self.C, "h": self.h, "kMax": self.k_max,
            "verdict": self.verdict.value, "h_half_cutoff": self.h_half_cutoff,
            "growth": self.growth,
            "growth_curve": [{"k": k, "log_norm": ln} for k, ln in enumerate(self.log_norms)],
            "h_per_k": list(self.h_per_k), "reasons": list(self.reasons),
        }


#: h may at most double when the G-cutoff doubles before the estimate is
#: declared divergent (polynomial decay makes it grow like the top eigenvalue)
VECTOR_GROWTH_LIMIT = 2.0


def _vector_h(shells, s: float, k_max: int):
    logs = _log_power_norms(shells, k_max)
    log_c0 = logs[0]
    hk = []
    for k in range(1, k_max + 1):
        if not np.isfinite(logs[k]) or not np.isfinite(log_c0):
            hk.append(0.0)
            continue
        hk.append(math.exp((logs[k] - log_c0 - 2 * s * math.lgamma(k + 1)) / k))
    return logs, hk


def gevrey_vector_fit(u: ModeCoeffs, s: float, k_max: int) -> VectorBoundFit:
    """Minimal ``h`` with ``C = ||u||`` making the factorial bound hold up to ``k_max``."""
    _check_gevrey_params(s)
    if k_max < 2:
        raise ParameterError("k_max must be at least 2")
    shells = tuple(g_shell_norms(u))
    logs, hk = _vector_h(shells, s, k_max)
    c0 = math.exp(logs[0]) if np.isfinite(logs[0]) else 0.0
    h = max(hk) if hk else 0.0
    reasons = []
    if c0 == 0.0:
        return VectorBoundFit(s, 0.0, 0.0, k_max, Status.HOLDS, tuple(logs), tuple(hk),
                              0.0, 1.0, shells, ("zero input",))
    half = max(u.grid.cutoff // 2, 1)
    half_shells = g_shell_norms(u.filter(lambda j, k: max(map(abs, k), default=0) <= half))
    _, hk_half = _vector_h(half_shells, s, k_max)
    h_half = max(hk_half) if hk_half else 0.0
    if h == 0.0:
        growth = 1.0
        status = Status.HOLDS
    elif h_half == 0.0:
        growth = math.inf
        status = Status.INCONCLUSIVE
        reasons.append("no mass below half the G-cutoff; trend unavailable")
    else:
        growth = h / h_half
        if growth > VECTOR_GROWTH_LIMIT:
            status = Status.FAILS
            reasons.append(f"h grows by a factor {growth:.3g} when the G-cutoff doubles")
        else:
            status = Status.HOLDS
    return VectorBoundFit(s, c0, h, k_max, status, tuple(float(x) for x in logs), tuple(hk),
                          h_half, growth, shells, tuple(reasons))


@dataclass(frozen=True)
class ExponentialBound:
    estimate: GevreyEstimate
    valid_on_data: bool
    worst_ratio: float
    normalized_h: float

    def to_json(self) -> dict:
        return {"estimate": self.estimate.to_json(), "valid_on_data": self.valid_on_data,
                "worst_ratio": self.worst_ratio, "normalized_h": self.normalized_h}


def factorial_envelope(fit: VectorBoundFit, lam) -> np.ndarray:
    """``log`` of ``C min_k (2h)^k (k!)^{2s} (1+lam)^{-k}`` over ``0 <= k <= k_max``.

    Uses ``h`` raised to at least one, so that ``(1+lam)^k <= (2 lam)^k`` folds
    the two bounds into one.
    """
    h = max(fit.h, 1.0)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    ks = np.arange(fit.k_max + 1)
    lg = np.array([math.lgamma(k + 1) for k in ks])
    table = (ks[None, :] * math.log(2 * h) + 2 * fit.s * lg[None, :]
             - ks[None, :] * np.log1p(lam)[:, None])
    return math.log(fit.C) + table.min(axis=1)


def vector_to_exponential(fit: VectorBoundFit) -> ExponentialBound:
    """Turn a factorial bound into ``||F_lam u|| <= C' exp(-h' (1+lam)^{1/2s})``.

    ``h'`` is the least-squares rate of the optimized factorial envelope over
    the retained shells; ``C'`` is the smallest amplitude making the
    exponential bound dominate that envelope.  The result is then checked
    pointwise against the shell data.
    """
    if not fit.holds:
        raise PreconditionError(f"factorial fit does not hold (verdict {fit.verdict.value})")
    if fit.C == 0.0:
        est = GevreyEstimate(s=fit.s, C=0.0, h=0.0, residual=0.0, verdict=Status.HOLDS)
        return ExponentialBound(est, True, 0.0, max(fit.h, 1.0))
    lam = np.array(sorted({s[0] for s in fit.shells}), dtype=float)
    env = factorial_envelope(fit, lam)
    w = gevrey_weight(lam, fit.s)
    if len(lam) >= 2:
        design = np.column_stack([np.ones_like(w), -w])
        (_, h_prime), *_ = np.linalg.lstsq(design, env, rcond=None)
        h_prime = max(float(h_prime), 0.0)
    else:
        h_prime = 0.0
    log_c = float(np.max(env + h_prime * w))
    est = GevreyEstimate(s=fit.s, C=math.exp(log_c), h=h_prime, residual=0.0,
                         verdict=Status.HOLDS, n_points=len(lam))
    data_lam = np.array([s[0] for s in fit.shells], dtype=float)
    data_nrm = np.array([s[1] for s in fit.shells], dtype=float)
    ratio = data_nrm / est.bound(data_lam)
    worst = float(np.max(ratio)) if len(ratio) else 0.0
    return ExponentialBound(est, bool(worst <= 1.0 + 1e-9), worst, max(fit.h, 1.0))
