"""Small-divisor probes for constant-coefficient invariant operators.

A constant-coefficient ``P`` acts on the mode ``(j, k)`` by its full symbol
``p(j, k)``.  Lower bounds ``|p| >= c (1 + |j|^2 + |k|^2)^{-M}`` (or the
exponential analog) are the standard multiplier criterion for global
(Gevrey) hypoellipticity.  Finitely many modes cannot decide an asymptotic
property, so every verdict here is a trend over nested cutoffs.

Liouville witnesses ``a = sum 2^{-m_l}`` are built and certified in exact
integer arithmetic.
"""
from __future__ import annotations

import math
import os
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InsufficientDataError, ParameterError, PreconditionError
from .gevrey_analysis import decay_fit
from .invariant_op import InvariantOperator, apply, constant_operator, family_matrix, hat_P_lambda
from .spectral_core import GridSpec, Mode, ModeCoeffs, g_shell_norms
from .verdict import Status, Verdict

#: largest tolerated rise of the required exponent per cutoff doubling
SLOPE_LIMIT = 0.2
#: symbols below this many ulps of their rounding scale count as exact zeros
ZERO_ULPS = 8
#: largest gap exponent accepted by ``make_liouville`` (bits of the denominator)
MAX_GAP_BITS = 1 << 22

EXTERNAL_CRITERION = ("multiplier lower bound is an external criterion, valid for "
                      "constant coefficients only")


# ---------------------------------------------------------------------------
# multiplier tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplierTable:
    """Full symbol ``p(j, k)`` on a set of modes.

    ``log_abs`` is ``log |p|`` (``-inf`` on exact zeros) and may be computed
    exactly even where ``values`` underflow.  ``box`` is ``max(|j|_inf, |k|_inf)``,
    ``eig`` is ``|j|^2 + |k|^2``.  ``complete_cutoff`` is the
    largest box on which every lattice mode is present.
    """

    modes: tuple[Mode, ...]
    values: np.ndarray
    log_abs: np.ndarray
    zero: np.ndarray
    box: np.ndarray
    eig: np.ndarray
    complete_cutoff: int

    def __len__(self) -> int:
        return len(self.modes)

    def __getitem__(self, mode) -> complex:
        return complex(self.values[self.modes.index(mode)])

    def scaled(self, factor: complex) -> "MultiplierTable":
        """Table of ``factor * p``."""
        if factor == 0:
            raise ParameterError("scale factor must be nonzero")
        return MultiplierTable(self.modes, self.values * factor, self.log_abs + math.log(abs(factor)),
                               self.zero, self.box, self.eig, self.complete_cutoff)

    def kernel(self) -> list[Mode]:
        return [m for m, z in zip(self.modes, self.zero) if z]

    def as_dict(self) -> dict[Mode, complex]:
        return {m: complex(v) for m, v in zip(self.modes, self.values)}


def _mode_arrays(grid: GridSpec):
    modes = tuple(grid.modes())
    J = np.array([j for j, _ in modes], dtype=float).reshape(len(modes), grid.n)
    K = np.array([k for _, k in modes], dtype=float).reshape(len(modes), grid.m)
    return modes, J, K


def multiplier_table(P: InvariantOperator, grid: GridSpec) -> MultiplierTable:
    """Symbol of a constant-coefficient ``P`` on every mode of ``grid``.

    Exact zeros are detected against the rounding scale ``sum |c (ij)^beta (ik)^alpha|``,
    so integer-coefficient symbols are classified exactly.
    """
    if not P.is_constant:
        raise PreconditionError("multiplier table needs constant coefficients")
    if (grid.n, grid.m) != (P.n, P.m):
        raise ParameterError("grid dimensions do not match the operator")
    modes, J, K = _mode_arrays(grid)
    values = np.zeros(len(modes), dtype=complex)
    scale = np.zeros(len(modes))
    for alpha, op in P.terms.items():
        for beta, coeff in op.terms.items():
            c = coeff.constant_value
            mono = np.prod((1j * J) ** np.asarray(beta), axis=1) * np.prod((1j * K) ** np.asarray(alpha), axis=1)
            values += c * mono
            scale += abs(c) * np.abs(mono)
    zero = np.abs(values) <= ZERO_ULPS * np.finfo(float).eps * scale
    with np.errstate(divide="ignore"):
        log_abs = np.where(zero, -np.inf, np.log(np.abs(values)))
    eig = np.sum(J ** 2, axis=1) + np.sum(K ** 2, axis=1)
    box = np.maximum(np.abs(J).max(axis=1), np.abs(K).max(axis=1)).astype(int)
    return MultiplierTable(modes, values, log_abs, zero, box, eig, grid.cutoff)


# ---------------------------------------------------------------------------
# trend fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundFit:
    """Per-cutoff lower-bound exponents and the trend verdict.

    Unpacks as ``(c, exponent, verdict)`` where ``exponent`` is the value at
    the largest cutoff (``M`` for power fits, ``epsilon`` for Gevrey fits).
    """

    kind: str
    c: float
    cutoffs: tuple[int, ...]
    exponents: tuple[float, ...]
    zero_counts: tuple[int, ...]
    slope: float
    verdict: Verdict
    s: float | None = None

    @property
    def exponent(self) -> float:
        return self.exponents[-1]

    def __iter__(self):
        return iter((self.c, self.exponent, self.verdict))

    def to_json(self) -> dict:
        out = {"kind": self.kind, "c": self.c, "cutoffs": list(self.cutoffs),
               "exponents": list(self.exponents), "zero_counts": list(self.zero_counts),
               "slope_per_doubling": self.slope, "verdict": self.verdict.to_json()}
        if self.s is not None:
            out["s"] = self.s
        return out


def _default_cutoffs(tbl: MultiplierTable) -> tuple[int, ...]:
    c = tbl.complete_cutoff
    if c < 4:
        raise PreconditionError("trend fits need a table with cutoff at least 4")
    return (c // 4, c // 2, c)


def _trend_fit(tbl: MultiplierTable, cutoffs, denom: Callable[[np.ndarray], np.ndarray],
               kind: str, s: float | None) -> BoundFit:
    cutoffs = tuple(int(c) for c in (cutoffs or _default_cutoffs(tbl)))
    if len(cutoffs) < 3 or list(cutoffs) != sorted(set(cutoffs)) or cutoffs[0] < 1:
        raise ParameterError("need at least 3 strictly increasing positive cutoffs")
    base = (tbl.box <= cutoffs[0]) & ~tbl.zero
    if not np.any(base):
        raise PreconditionError("no nonzero symbol values inside the smallest cutoff")
    log_c = float(np.min(tbl.log_abs[base]))
    d = denom(tbl.eig)
    exponents, zeros = [], []
    for c in cutoffs:
        sel = (tbl.box <= c) & ~tbl.zero & (tbl.eig > 0)
        need = (log_c - tbl.log_abs[sel]) / d[sel] if np.any(sel) else np.zeros(1)
        exponents.append(max(0.0, float(np.max(need))))
        zeros.append(int(np.sum(tbl.zero & (tbl.box <= c))))
    x = np.log2(np.asarray(cutoffs, dtype=float))
    slope = float(np.polyfit(x, np.asarray(exponents), 1)[0])
    reasons = [EXTERNAL_CRITERION]
    ok = True
    if slope > SLOPE_LIMIT:
        ok = False
        reasons.append(f"required exponent rises {slope:.3g} per cutoff doubling (limit {SLOPE_LIMIT})")
    if zeros[-1] > zeros[0]:
        ok = False
        reasons.append(f"exact zeros keep appearing: {zeros} across cutoffs")
    incomplete = [c for c in cutoffs if c > tbl.complete_cutoff]
    if incomplete:
        reasons.append(f"cutoffs {incomplete} only sample listed modes; exponents there are lower bounds")
    offending = ()
    if not ok:
        offending = tuple(m for m, z in zip(tbl.modes, tbl.zero) if z)[:20]
    verdict = Verdict(Status.HOLDS if ok else Status.FAILS, tuple(reasons), offending,
                      {"slope": slope, "exponents": exponents, "zero_counts": zeros})
    return BoundFit(kind, math.exp(log_c), cutoffs, tuple(exponents), tuple(zeros), slope, verdict, s)


def power_bound_fit(tbl: MultiplierTable, cutoffs: Sequence[int] | None = None) -> BoundFit:
    """Required ``M`` in ``|p| >= c (1 + |j|^2 + |k|^2)^{-M}`` at nested cutoffs.

    ``c`` is the smallest nonzero ``|p|`` inside the smallest cutoff, which
    makes ``M`` invariant under ``p -> c p``.  Fails when ``M`` rises more than
    ``SLOPE_LIMIT`` per doubling (least-squares slope against ``log2 cutoff``)
    or when the exact-zero count grows with the cutoff.
    """
    return _trend_fit(tbl, cutoffs, lambda e: np.log1p(e), "power", None)


def gevrey_bound_fit(tbl: MultiplierTable, s: float, cutoffs: Sequence[int] | None = None) -> BoundFit:
    """Required ``epsilon`` in ``|p| >= c exp(-epsilon (1 + |j|^2 + |k|^2)^{1/2s})``.

    Same trend rule as :func:`power_bound_fit`.  For large ``s`` the weight
    grows slowly and a desk-scale cutoff range may not separate the classes.
    """
    if s < 1:
        raise ParameterError("Gevrey order s must be at least 1")
    return _trend_fit(tbl, cutoffs, lambda e: (1.0 + e) ** (1.0 / (2 * s)), "gevrey", s)


# ---------------------------------------------------------------------------
# Liouville witnesses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Approximant:
    """``p / q`` with the certified bound ``|a q - p| <= 2^{bound_log2}``."""

    p: int
    q: int
    bound_log2: int | None  # None only for the exact (degenerate) approximant

    def to_json(self) -> dict:
        return {"p": _dec(self.p), "q": _dec(self.q), "bound_log2": self.bound_log2}


def _dec(x: int) -> str:
    try:
        return str(x)
    except ValueError:  # interpreter limit on huge int -> str conversions
        old = sys.get_int_max_str_digits()
        sys.set_int_max_str_digits(0)
        try:
            return str(x)
        finally:
            sys.set_int_max_str_digits(old)


@dataclass(frozen=True)
class DiophantineWitness:
    """``a = sum_{l <= D} 2^{-m_l}`` held exactly, with approximants ``q_l = 2^{m_l}``.

    For ``l < D`` the tail gives ``|a q_l - p_l| <= 2^{m_l - m_{l+1} + 1}``.
    With ``D = 1`` the number is the rational ``2^{-m_1}`` and the only
    approximant is exact; such witnesses are flagged degenerate.
    """

    gaps: tuple[int, ...]
    a: Fraction
    approximants: tuple[Approximant, ...]
    degenerate: bool

    @property
    def depth(self) -> int:
        return len(self.gaps)

    def gap(self, idx: int) -> Fraction:
        """Exact ``|a q - p|`` for the ``idx``-th approximant."""
        ap = self.approximants[idx]
        return abs(self.a * ap.q - ap.p)

    def certify(self) -> Verdict:
        """Re-check every listed bound in exact rational arithmetic."""
        bad = []
        for i, ap in enumerate(self.approximants):
            g = self.gap(i)
            bound = Fraction(0) if ap.bound_log2 is None else Fraction(2) ** ap.bound_log2
            if g > bound:
                bad.append(i)
        qs = [ap.q for ap in self.approximants]
        if any(q2 <= q1 for q1, q2 in zip(qs, qs[1:])):
            bad.append("q not increasing")
        return Verdict.of(not bad, [] if not bad else ["certified bound violated"], bad)

    def to_json(self) -> dict:
        return {"gaps": list(self.gaps), "degenerate": self.degenerate,
                "approximants": [ap.to_json() for ap in self.approximants]}

    @classmethod
    def from_json(cls, doc: dict) -> "DiophantineWitness":
        return make_liouville([int(g) for g in doc["gaps"]])


def make_liouville(gap_rule: Sequence[int] | Callable[[int], int], depth: int | None = None) -> DiophantineWitness:
    """Lacunary binary number from exponents ``m_1 < m_2 < ...``.

    ``gap_rule`` is either the exponent list or a callable ``l -> m_{l+1}``
    evaluated for ``l = 0, ..., depth - 1``.  Requires ``m_{l+1} >= 2^{m_l}``.
    """
    if callable(gap_rule):
        if depth is None or depth < 1:
            raise ParameterError("a callable gap rule needs depth >= 1")
        gaps = [int(gap_rule(l)) for l in range(depth)]
    else:
        gaps = [int(g) for g in gap_rule]
        if depth is not None:
            gaps = gaps[:depth]
    if not gaps:
        raise ParameterError("witness needs at least one exponent")
    if gaps[0] < 1:
        raise ParameterError("exponents must be positive")
    for lo, hi in zip(gaps, gaps[1:]):
        if lo.bit_length() > 30 or hi < (1 << lo):
            raise ParameterError(f"gap rule violates m_(l+1) >= 2^(m_l): {lo} -> {hi}")
    if gaps[-1] > MAX_GAP_BITS:
        raise ParameterError(f"exponent {gaps[-1]} exceeds the supported {MAX_GAP_BITS} bits")
    top = gaps[-1]
    numer = sum(1 << (top - m) for m in gaps)
    a = Fraction(numer, 1 << top)
    approximants = []
    partial = 0  # numerator of the partial sum over 2^{m_l}
    for l, m in enumerate(gaps):
        prev = gaps[l - 1] if l else m
        partial = (partial << (m - prev)) + 1
        if l + 1 < len(gaps):
            approximants.append(Approximant(partial, 1 << m, m - gaps[l + 1] + 1))
    degenerate = len(gaps) == 1
    if degenerate:
        approximants.append(Approximant(1, 1 << gaps[0], None))
    return DiophantineWitness(tuple(gaps), a, tuple(approximants), degenerate)


def _exact_flow_log_abs(a: Fraction, j: int, k: int) -> tuple[float, bool]:
    """``log |j + a k|`` exactly, and whether it vanishes."""
    num = j * a.denominator + k * a.numerator
    if num == 0:
        return -math.inf, True
    return math.log(abs(num)) - math.log(a.denominator), False


def witness_multiplier_table(w: DiophantineWitness, cutoff: int) -> MultiplierTable:
    """Symbol ``i (j + a k)`` of ``d_t + a d_x`` in exact arithmetic.

    Holds every mode with ``|j|, |k| <= cutoff`` plus the witness modes
    ``(-p_l, q_l)`` beyond it.
    """
    modes = [((j,), (k,)) for j in range(-cutoff, cutoff + 1) for k in range(-cutoff, cutoff + 1)]
    seen = set(modes)
    for ap in w.approximants:
        mode = ((-ap.p,), (ap.q,))
        if mode not in seen:
            modes.append(mode)
            seen.add(mode)
    logs, zeros, vals, box, eig = [], [], [], [], []
    af = float(w.a)
    for (j,), (k,) in modes:
        la, z = _exact_flow_log_abs(w.a, j, k)
        logs.append(la)
        zeros.append(z)
        vals.append(0j if z else 1j * math.copysign(math.exp(la), j + af * k) if la > -700 else 0j)
        box.append(max(abs(j), abs(k)))
        eig.append(float(j * j + k * k))
    return MultiplierTable(tuple(modes), np.array(vals), np.array(logs), np.array(zeros),
                           np.array(box), np.array(eig), cutoff)


def flow_operator(a: float) -> InvariantOperator:
    """``L = d_t + a d_x`` on T^1 x T^1."""
    return constant_operator(1, 1, {((1,), (0,)): 1.0, ((0,), (1,)): a})


def witness_distribution(w: DiophantineWitness, grid: GridSpec, s: float = 1.0):
    """``u = sum_l e^{i(-p_l t + q_l x)}`` and the certified size of ``L u``.

    Returns ``(u, report)``.  Approximants outside the grid are skipped and
    listed in the report.  ``L u`` is evaluated exactly; its float image via
    :func:`apply` is reported alongside.
    """
    if (grid.n, grid.m) != (1, 1):
        raise ParameterError("witness distributions live on T^1 x T^1")
    entries, rows, skipped = {}, [], []
    for i, ap in enumerate(w.approximants):
        mode = ((-ap.p,), (ap.q,))
        if not grid.contains(*mode):
            skipped.append(i)
            continue
        entries[mode] = 1.0 + 0j
        gap = w.gap(i)
        bound = Fraction(0) if ap.bound_log2 is None else Fraction(2) ** ap.bound_log2
        log2_gap = -math.inf if gap == 0 else (math.log2(gap.numerator) - math.log2(gap.denominator))
        rows.append({"mode": mode, "p": _dec(ap.p), "q": _dec(ap.q), "u_coeff": 1.0,
                     "Lu_log2_abs": log2_gap, "bound_log2": ap.bound_log2,
                     "certified": gap <= bound, "resonant": gap == 0})
    u = ModeCoeffs(grid, entries)
    Lu = apply(flow_operator(float(w.a)), u)
    for row in rows:
        row["Lu_float_abs"] = abs(Lu[row.pop("mode")])
    shells = [(lam, nrm) for lam, nrm in g_shell_norms(_exact_Lu(w, entries))]
    try:
        fit = decay_fit(shells, s).to_json()
    except InsufficientDataError as exc:
        fit = {"verdict": Status.INCONCLUSIVE.value, "reasons": [str(exc)]}
    report = {"witness": w.to_json(), "modes": rows, "skipped": skipped,
              "all_certified": all(r["certified"] for r in rows), "Lu_decay_fit": fit}
    return u, report


def _exact_Lu(w: DiophantineWitness, entries) -> ModeCoeffs:
    """Float image of the exact ``L u`` with underflowing gaps kept at the smallest double."""
    out = {}
    grid = GridSpec(1, 1, max([max(abs(j[0]), abs(k[0])) for j, k in entries] + [1]))
    for (j, k) in entries:
        la, z = _exact_flow_log_abs(w.a, j[0], k[0])
        if not z:
            out[(j, k)] = 1j * max(math.exp(la), np.finfo(float).tiny)
    return ModeCoeffs(grid, out)


# ---------------------------------------------------------------------------
# variable coefficients
# ---------------------------------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GEVREY_SPECTRAL_THREADS", "1")))
    except ValueError:
        return 1


def sigma_min_profile(P: InvariantOperator, lams: Sequence[int], cutoff: int) -> list[tuple[int, float]]:
    """Smallest singular value of the truncated ``hat P_lambda`` for each ``lambda``.

    Reported without a verdict.  ``GEVREY_SPECTRAL_THREADS`` caps the worker count.
    """
    grid = GridSpec(P.n, P.m, cutoff)

    def one(lam: int) -> tuple[int, float]:
        mat = family_matrix(hat_P_lambda(P, lam, grid), P.n, cutoff)
        return lam, float(np.linalg.svd(mat, compute_uv=False)[-1])

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return list(pool.map(one, lams))
