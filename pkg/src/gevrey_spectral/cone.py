"""Cone split of the joint spectrum and the two-estimate Gevrey reconstruction.

Cells are pairs ``(mu, lam)`` of eigenvalues of ``Delta_T`` and ``Delta_G``.
Inside ``Gamma_theta = {lam <= theta mu}`` the data must decay in the full
eigenvalue; outside it the G-shell decay controls everything because there
``1 + mu + lam < (2 / theta)(1 + lam)``.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ParameterError, PreconditionError
from .gevrey_analysis import GevreyEstimate, decay_fit, fit_uniform_decay
from .spectral_core import EigenIndex, GridSpec, _check_gevrey_params
from .verdict import Status, Verdict

Cells = Mapping[tuple[int, int], float]


def _theta(theta) -> Fraction:
    th = Fraction(theta)
    if not 0 < th < 1:
        raise ParameterError(f"theta must lie in (0, 1), got {theta}")
    return th


def cone_membership(mu: int, lam: int, theta) -> bool:
    """``lam <= theta mu``, decided in exact rational arithmetic."""
    return lam <= _theta(theta) * mu


def split_cells(cells: Cells, theta) -> tuple[dict, dict]:
    """Partition cells into ``(in_cone, off_cone)``."""
    th = _theta(theta)
    inside, outside = {}, {}
    for (mu, lam), v in cells.items():
        (inside if lam <= th * mu else outside)[(mu, lam)] = v
    return inside, outside


def check_cone_inequalities(grid: GridSpec, theta) -> Verdict:
    """Exhaustive check of the two comparison inequalities on every retained cell.

    In the cone ``1 + mu + lam <= 2 (1 + mu)``; off the cone
    ``1 + mu + lam < (2 / theta)(1 + lam)``.  Exact arithmetic throughout.
    """
    th = _theta(theta)
    idx = EigenIndex.build(grid)
    bad = []
    n_in = n_off = 0
    for mu in idx.t_values():
        for lam in idx.g_values():
            total = 1 + mu + lam
            if lam <= th * mu:
                n_in += 1
                ok = total <= 2 * (1 + mu)
            else:
                n_off += 1
                ok = total < (2 / th) * (1 + lam)
            if not ok:
                bad.append((mu, lam))
    return Verdict.of(not bad, [] if not bad else ["comparison inequality violated"], bad,
                      cells=n_in + n_off, in_cone=n_in, off_cone=n_off, theta=float(th))


def _full_weight(cells, s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keys = sorted(cells)
    tot = np.array([1 + mu + lam for mu, lam in keys], dtype=float)
    nrm = np.array([cells[k] for k in keys], dtype=float)
    return tot, tot ** (1.0 / (2 * s)), nrm


def _top_fraction(tot: np.ndarray, nrm: np.ndarray) -> float:
    mass = float(np.sum(nrm ** 2))
    if mass == 0:
        return 0.0
    return float(np.sum(nrm[tot == tot.max()] ** 2) / mass)


def cone_decay_fit(cells: Cells, theta, s: float) -> GevreyEstimate:
    """Uniform-bound fit of ``C exp(-h (1 + mu + lam)^{1/2s})`` on the cells in the cone."""
    _check_gevrey_params(s)
    inside, _ = split_cells(cells, theta)
    if not inside:
        return fit_uniform_decay([], [], s)  # raises the insufficient-data error
    tot, w, nrm = _full_weight(inside, s)
    return fit_uniform_decay(w, nrm, s, _top_fraction(tot, nrm))


def g_shells_from_cells(cells: Cells) -> list[tuple[int, float]]:
    """``||F^G_lam u||`` from the double-shell norms."""
    acc: dict = {}
    for (mu, lam), v in cells.items():
        acc[lam] = acc.get(lam, 0.0) + v * v
    return [(lam, math.sqrt(v)) for lam, v in sorted(acc.items())]


def off_cone_factor(theta, s: float) -> float:
    """``(theta / 2)^{1/2s}``."""
    return (float(_theta(theta)) / 2) ** (1.0 / (2 * s))


def combine(in_cone: GevreyEstimate, g_shell: GevreyEstimate, theta, s: float) -> GevreyEstimate:
    """Merge the in-cone bound ``(C, h)`` and the G-shell bound ``(C', h')``.

    Returns ``C'' = max(C, C')`` and ``h'' = min(h, h' (theta/2)^{1/2s})``,
    using the certified rates of the inputs.  If either input does not
    hold the result is inconclusive.  ``C' = 0`` (nothing off the cone)
    leaves ``h'' = h``.
    """
    _check_gevrey_params(s)
    factor = off_cone_factor(theta, s)
    if not (in_cone.holds and g_shell.holds):
        bad = [name for name, e in (("in-cone", in_cone), ("G-shell", g_shell)) if not e.holds]
        return GevreyEstimate(s=s, C=math.nan, h=math.nan, residual=math.nan,
                              verdict=Status.INCONCLUSIVE,
                              reasons=tuple(f"{b} estimate does not hold" for b in bad))
    h_in = in_cone.bound_rate
    if g_shell.C == 0:
        h2 = h_in
    else:
        h2 = min(h_in, g_shell.bound_rate * factor)
    return GevreyEstimate(s=s, C=max(in_cone.C, g_shell.C), h=h2, residual=0.0, verdict=Status.HOLDS)


def validate_bound(cells: Cells, est: GevreyEstimate, rel_tol: float = 1e-12) -> Verdict:
    """Does ``C exp(-h (1 + mu + lam)^{1/2s})`` dominate every cell?"""
    if not est.holds:
        return Verdict(Status.INCONCLUSIVE, ("estimate does not hold",))
    bad, worst = [], 0.0
    for (mu, lam), v in cells.items():
        bound = est.C * math.exp(-est.bound_rate * (1 + mu + lam) ** (1.0 / (2 * est.s)))
        if v > 0:
            worst = max(worst, v / bound if bound > 0 else math.inf)
        if v > bound * (1 + rel_tol):
            bad.append((mu, lam))
    return Verdict.of(not bad, [] if not bad else ["combined bound violated"], bad,
                      worst_ratio=worst, cells=len(cells))


def sharpest_rate(cells: Cells, C: float, s: float) -> float:
    """Largest ``h`` with every cell below ``C exp(-h (1 + mu + lam)^{1/2s})``."""
    rates = [(math.log(C) - math.log(v)) / (1 + mu + lam) ** (1.0 / (2 * s))
             for (mu, lam), v in cells.items() if v > 0]
    return min(rates) if rates else math.inf


def lemma_constant_transfer(h_T: float, s: float) -> float:
    """``h' = (h_T - 2) / 2^{1/2s}``; needs ``h_T > 2``."""
    _check_gevrey_params(s)
    if not h_T > 2:
        raise PreconditionError(f"rate transfer needs h_T > 2, got {h_T}")
    return (h_T - 2) / 2 ** (1.0 / (2 * s))


def verify_lemma_transfer(cells: Cells, C: float, h_T: float, theta, s: float) -> Verdict:
    """Check the transferred in-cone bound against data.

    Hypothesis on the cone: ``N <= C exp(2 (1+lam)^{1/2s} - h_T (1+mu)^{1/2s})``.
    Conclusion: ``N <= C exp(-h' (1 + mu + lam)^{1/2s})``.  A violated
    hypothesis makes the check vacuous (inconclusive).
    """
    hp = lemma_constant_transfer(h_T, s)
    inside, _ = split_cells(cells, theta)
    p = 1.0 / (2 * s)
    hyp_bad, concl_bad = [], []
    for (mu, lam), v in inside.items():
        if v <= 0:
            continue
        lv = math.log(v)
        if lv > math.log(C) + 2 * (1 + lam) ** p - h_T * (1 + mu) ** p + 1e-12:
            hyp_bad.append((mu, lam))
        if lv > math.log(C) - hp * (1 + mu + lam) ** p + 1e-12:
            concl_bad.append((mu, lam))
    if hyp_bad:
        return Verdict(Status.INCONCLUSIVE, ("intermediate hypothesis fails on data",),
                       tuple(hyp_bad), {"h_prime": hp})
    return Verdict.of(not concl_bad, [] if not concl_bad else ["transferred bound violated"],
                      concl_bad, h_prime=hp)


@dataclass(frozen=True)
class ConeReport:
    theta: float
    s: float
    in_cone: GevreyEstimate
    off_cone_source: GevreyEstimate
    combined: GevreyEstimate
    factor: float
    validation: Verdict | None
    sharpest_empirical_h: float | None

    def to_json(self) -> dict:
        return {"theta": self.theta, "s": self.s, "in_cone": self.in_cone.to_json(),
                "off_cone_source": self.off_cone_source.to_json(),
                "combined": self.combined.to_json(), "off_cone_factor": self.factor,
                "validation": None if self.validation is None else self.validation.to_json(),
                "sharpest_empirical_h": self.sharpest_empirical_h}


def cone_report(cells: Cells, theta, s: float) -> ConeReport:
    """Fit both hypotheses from the cells, combine them and validate on every cell."""
    inside = cone_decay_fit(cells, theta, s)
    shell = decay_fit(g_shells_from_cells(cells), s)
    combined = combine(inside, shell, theta, s)
    validation = sharpest = None
    if combined.holds:
        validation = validate_bound(cells, combined)
        sharpest = sharpest_rate(cells, combined.C, s)
    return ConeReport(float(_theta(theta)), s, inside, shell, combined,
                      off_cone_factor(theta, s), validation, sharpest)
