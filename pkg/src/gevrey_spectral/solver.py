"""Mode-by-mode solution of ``P u = f`` for constant-coefficient invariant operators.

The solution is ``u(j, k) = f(j, k) / p(j, k)`` off the kernel of the symbol
and zero on it, the minimal-norm choice.  Near-zero divisors are kept as
divisors: they are exactly what degrades the Gevrey class of ``u``.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .diagnostics import MultiplierTable, ZERO_ULPS, multiplier_table
from .errors import IncompatibleDataError, InsufficientDataError, PreconditionError
from .gevrey_analysis import SLACK, GevreyEstimate, decay_fit
from .invariant_op import (
    InvariantOperator,
    apply,
    family_matrix,
    g_components,
    hat_P_lambda,
    t_basis,
)
from .spectral_core import (
    EigenIndex,
    GridSpec,
    Mode,
    ModeCoeffs,
    full_shell_norms,
    g_shell_norms,
    l2_norm,
    sq,
)
from .verdict import Status, Verdict

DEFAULT_TOL = 1e-12


def _abs_tol(f: ModeCoeffs, tol: float) -> float:
    return tol * max(l2_norm(f), np.finfo(float).tiny)


def compatibility_check(f: ModeCoeffs, tbl: MultiplierTable, tol: float = DEFAULT_TOL) -> Verdict:
    """``|f(j, k)| <= tol ||f||`` on every kernel mode of the symbol."""
    thr = _abs_tol(f, tol)
    bad = [mode for mode in tbl.kernel() if abs(f[mode]) > thr]
    return Verdict.of(not bad, [] if not bad else [f"f does not vanish on {len(bad)} kernel modes"],
                      bad, kernel_size=len(tbl.kernel()), threshold=thr)


def _safe_fit(shells, s: float) -> GevreyEstimate | None:
    try:
        return decay_fit(shells, s)
    except InsufficientDataError:
        return None


def complete_full_shells(c: ModeCoeffs, cutoff: int | None = None) -> list[tuple[int, float]]:
    """Full-shell norms for ``alpha <= cutoff^2``, the shells the box retains entirely."""
    top = (c.grid.cutoff if cutoff is None else cutoff) ** 2
    return [(a, v) for a, v in full_shell_norms(c) if a <= top]


def class_trend(u: ModeCoeffs, s: float, cutoffs: Sequence[int] | None = None) -> Verdict:
    """Fitted rate of ``u`` on nested boxes.

    Holds when every fitted ``h`` is positive and the last step keeps at
    least ``1 - SLACK`` of the previous rate.  Isolated small-divisor spikes
    barely move a least-squares rate, while a collapsing rate signals loss
    of the class.
    """
    c = u.grid.cutoff
    cutoffs = tuple(cutoffs or (max(1, c // 4), max(1, c // 2), c))
    rates = []
    for ci in cutoffs:
        est = _safe_fit(complete_full_shells(u, ci), s)
        rates.append(None if est is None else est.h)
    if any(h is None for h in rates):
        return Verdict(Status.INCONCLUSIVE, ("too few shells at some cutoff",), (),
                       {"cutoffs": cutoffs, "rates": rates})
    ok = all(h > 0 for h in rates) and rates[-1] >= (1 - SLACK) * rates[-2]
    return Verdict.of(ok, [] if ok else ["fitted rate collapses with the cutoff"],
                      cutoffs=cutoffs, rates=rates)


@dataclass(frozen=True)
class SolveReport:
    u: ModeCoeffs
    kernel_modes: tuple[Mode, ...]
    small_divisor_log: tuple[tuple[int, float], ...]
    output_class: GevreyEstimate | None
    input_class: GevreyEstimate | None
    output_trend: Verdict
    dominated: bool
    range_closure_risk: bool
    residual: float

    def to_json(self) -> dict:
        return {
            "kernel_modes": [[list(j), list(k)] for j, k in self.kernel_modes],
            "small_divisor_log": [[a, v] for a, v in self.small_divisor_log],
            "output_class": None if self.output_class is None else self.output_class.to_json(),
            "input_class": None if self.input_class is None else self.input_class.to_json(),
            "output_trend": self.output_trend.to_json(),
            "dominated": self.dominated,
            "range_closure_risk": self.range_closure_risk,
            "residual": self.residual,
        }


def solve(f: ModeCoeffs, P: InvariantOperator, s: float = 1.0, tol: float = DEFAULT_TOL,
          table: MultiplierTable | None = None) -> SolveReport:
    """Divide mode by mode and audit the Gevrey class of the result.

    ``output_class`` and ``input_class`` are decay fits of the complete
    full shells at order ``s``.  ``range_closure_risk`` flags an input that
    fits while the output neither fits, nor keeps its rate on nested
    cutoffs (``output_trend``), nor is ``dominated`` (``|p| >= 1`` on every
    non-kernel mode, so ``|u| <= |f|`` mode by mode).

    ``table`` overrides the floating-point symbol, e.g. with an exactly
    evaluated witness table whose divisors are below double resolution of
    the coefficients.
    """
    tbl = multiplier_table(P, f.grid) if table is None else table
    compat = compatibility_check(f, tbl, tol)
    if not compat.holds:
        raise IncompatibleDataError("f violates the compatibility condition", modes=list(compat.offending))
    lookup = {m: i for i, m in enumerate(tbl.modes)}
    out = {}
    for mode, v in f.items():
        i = lookup.get(mode)
        if i is None:
            raise PreconditionError(f"multiplier table lacks mode {mode}")
        if not tbl.zero[i] and v != 0:
            out[mode] = v / tbl.values[i]
    u = ModeCoeffs(f.grid, out)
    divisors: dict = {}
    for i, mode in enumerate(tbl.modes):
        if tbl.zero[i]:
            continue
        a = sq(mode[0]) + sq(mode[1])
        divisors[a] = min(divisors.get(a, math.inf), float(abs(tbl.values[i])))
    Pu = apply(P, u)
    kernel = set(tbl.kernel())
    diff = (Pu - f).filter(lambda j, k: (j, k) not in kernel)
    residual = l2_norm(diff) / max(l2_norm(f), np.finfo(float).tiny)
    out_cls = _safe_fit(complete_full_shells(u), s)
    in_cls = _safe_fit(complete_full_shells(f), s)
    trend = class_trend(u, s)
    dominated = bool(min(divisors.values(), default=math.inf) >= 1.0)
    risk = bool(in_cls is not None and in_cls.holds and not dominated
                and not (out_cls is not None and out_cls.holds) and not trend.holds)
    return SolveReport(u, tuple(sorted(kernel)), tuple(sorted(divisors.items())), out_cls, in_cls,
                       trend, dominated, risk, residual)


@dataclass(frozen=True)
class TailStep:
    nu: int
    partial: ModeCoeffs
    tail: float
    bound: float | None

    @property
    def within_bound(self) -> bool | None:
        return None if self.bound is None else self.tail <= self.bound * (1 + 1e-12)


def truncated_reconstruction(u: ModeCoeffs, nu_schedule: Sequence[int],
                             estimate: GevreyEstimate | None = None, s: float = 1.0) -> list[TailStep]:
    """Partial sums ``sum_{lam <= nu} F^G_lam u`` and their tails.

    With a holding G-shell estimate ``(C, h)`` (fitted from ``u`` at order
    ``s`` when not supplied) each tail is compared with
    ``(sum_{lam > nu} (C e^{-h (1+lam)^{1/2s}})^2)^{1/2}`` over the retained
    G-spectrum, which is at most ``C e^{-h (1+nu)^{1/2s}}`` times the square
    root of the shell count.
    """
    if estimate is None:
        estimate = _safe_fit(g_shell_norms(u), s)
    by_lam: dict = {}
    for (j, k), v in u.items():
        by_lam.setdefault(sq(k), {})[(j, k)] = v
    lams = EigenIndex.build(u.grid).g_values()
    steps = []
    for nu in nu_schedule:
        part = {m: v for lam, tab in by_lam.items() if lam <= nu for m, v in tab.items()}
        partial = ModeCoeffs(u.grid, part)
        tail = l2_norm(u - partial)
        bound = None
        if estimate is not None and estimate.holds:
            rest = np.array([lam for lam in lams if lam > nu], dtype=float)
            bound = float(np.sqrt(np.sum(estimate.bound(rest) ** 2))) if len(rest) else 0.0
        steps.append(TailStep(int(nu), partial, tail, bound))
    return steps


@dataclass(frozen=True)
class LambdaSolve:
    """Solution of ``hat P_lambda v = F^G_lambda f`` as ``{k: {j: coeff}}``."""

    lam: int
    components: dict
    kernel: tuple[Mode, ...]
    experimental: bool
    residual: float

    @property
    def singular(self) -> bool:
        return bool(self.kernel)


def per_lambda_solve(f: ModeCoeffs, P: InvariantOperator, lam: int) -> LambdaSolve:
    """Solve the ``lambda``-block of ``P u = f``.

    Constant coefficients: the torus family is diagonal with scalar entries
    ``P_0 + sum (ik)^alpha P_alpha``, inverted frequency by frequency in ``j``,
    kernel components set to zero.  Variable coefficients: minimal-norm
    least squares on the dense truncated block (experimental, no
    convergence claim).
    """
    grid = f.grid
    family = hat_P_lambda(P, lam, grid)
    rhs = g_components(f, lam)
    js = t_basis(grid.n, grid.cutoff)
    if P.is_constant:
        comps, kernel = {}, []
        for k, op in family.diagonal().items():
            tab = {}
            for j in js:
                terms = [c.constant_value * np.prod([(1j * x) ** b for x, b in zip(j, beta)])
                         for beta, c in op.terms.items()]
                p = complex(sum(terms))
                if abs(p) <= ZERO_ULPS * np.finfo(float).eps * sum(abs(t) for t in terms):
                    kernel.append((j, k))
                    continue
                v = rhs.get(k, {}).get(j, 0)
                if v != 0:
                    tab[j] = v / p
            comps[k] = tab
        return LambdaSolve(lam, comps, tuple(kernel), False, 0.0)
    size = len(js)
    mat = family_matrix(family, grid.n, grid.cutoff)
    b = np.zeros(family.dim * size, dtype=complex)
    for a, k in enumerate(family.basis):
        for i, j in enumerate(js):
            b[a * size + i] = rhs.get(k, {}).get(j, 0)
    x, *_ = np.linalg.lstsq(mat, b, rcond=None)
    res = float(np.linalg.norm(mat @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny))
    comps = {k: {j: complex(x[a * size + i]) for i, j in enumerate(js) if x[a * size + i] != 0}
             for a, k in enumerate(family.basis)}
    return LambdaSolve(lam, comps, (), True, res)


def assemble(grid: GridSpec, blocks: Sequence[LambdaSolve]) -> ModeCoeffs:
    """Sum of per-lambda solutions as one table."""
    out = {}
    for blk in blocks:
        for k, tab in blk.components.items():
            for j, v in tab.items():
                if v != 0:
                    out[(j, k)] = v
    return ModeCoeffs(grid, out)
