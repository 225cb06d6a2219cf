"""G-invariant operators ``P = sum_alpha P_alpha X^alpha`` on T^n x T^m.

``X^alpha`` are monomials in the invariant frame ``X_d = d/dx_d`` of the torus
``G = T^m``; each ``P_alpha`` is a differential operator on ``T`` with
trigonometric-polynomial coefficients stored spectrally.  On a lattice mode
``(j, k)`` the frame acts as ``X^alpha -> (ik)^alpha`` and ``d_t^beta -> (ij)^beta``;
variable coefficients act by convolution in ``j``.
"""
from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import DimensionError, OrderError, ParameterError, PreconditionError, TruncationError
from .spectral_core import GridSpec, ModeCoeffs, l2_norm, sq
from .verdict import Status, Verdict

MultiIndex = tuple[int, ...]

#: dropped convolution mass, relative to the input norm, tolerated by strict apply
OVERFLOW_TOL = 1e-8


def _mono(freq: Sequence[int], index: Sequence[int]) -> complex:
    """``(i freq)^index`` for integer or real multi-indices."""
    out = 1 + 0j
    for f, e in zip(freq, index):
        if e:
            out *= (1j * f) ** e
    return out


# ---------------------------------------------------------------------------
# coefficients on T
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TCoeff:
    """Trigonometric polynomial ``a(t) = sum_l a_l e^{i<l,t>}`` on T^n."""

    n: int
    entries: Mapping[MultiIndex, complex] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, v in dict(self.entries).items():
            key = tuple(int(a) for a in key)
            if len(key) != self.n:
                raise DimensionError(f"coefficient index {key} has wrong length for n={self.n}")
            if v != 0:
                clean[key] = complex(v)
        object.__setattr__(self, "entries", MappingProxyType(clean))

    @classmethod
    def const(cls, n: int, value: complex) -> "TCoeff":
        return cls(n, {(0,) * n: value})

    @classmethod
    def from_function(cls, fn: Callable[..., complex], n: int, band: int) -> "TCoeff":
        """Sample ``fn(t_1, ..., t_n)`` and keep the frequencies up to ``band``."""
        size = 2 * band + 1
        pts = 2 * np.pi * np.arange(size) / size
        mesh = np.meshgrid(*([pts] * n), indexing="ij")
        vals = np.vectorize(fn, otypes=[complex])(*mesh)
        coeffs = np.fft.fftshift(np.fft.fftn(vals)) / size ** n
        ent = {}
        for idx in np.ndindex(coeffs.shape):
            if abs(coeffs[idx]) > 1e-14:
                ent[tuple(i - band for i in idx)] = coeffs[idx]
        return cls(n, ent)

    @property
    def is_zero(self) -> bool:
        return not self.entries

    @property
    def is_constant(self) -> bool:
        return all(not any(key) for key in self.entries)

    @property
    def band(self) -> int:
        return max((max(map(abs, key), default=0) for key in self.entries), default=0)

    @property
    def constant_value(self) -> complex:
        return self.entries.get((0,) * self.n, 0j)

    def __call__(self, t) -> complex:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return complex(sum(v * np.exp(1j * float(np.dot(key, t))) for key, v in self.entries.items()))

    def values_on(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at an ``(P, n)`` array of points."""
        points = np.atleast_2d(points)
        out = np.zeros(len(points), dtype=complex)
        for key, v in self.entries.items():
            out += v * np.exp(1j * points @ np.asarray(key, dtype=float))
        return out

    def __add__(self, other: "TCoeff") -> "TCoeff":
        out = dict(self.entries)
        for key, v in other.entries.items():
            out[key] = out.get(key, 0j) + v
        return TCoeff(self.n, out)

    def scale(self, factor: complex) -> "TCoeff":
        return TCoeff(self.n, {key: factor * v for key, v in self.entries.items()})

    def __mul__(self, other: "TCoeff") -> "TCoeff":
        out: dict = {}
        for k1, v1 in self.entries.items():
            for k2, v2 in other.entries.items():
                key = tuple(a + b for a, b in zip(k1, k2))
                out[key] = out.get(key, 0j) + v1 * v2
        return TCoeff(self.n, out)

    def derivative(self, index: MultiIndex) -> "TCoeff":
        return TCoeff(self.n, {key: _mono(key, index) * v for key, v in self.entries.items()})

    def to_json(self):
        if self.is_constant:
            v = self.constant_value
            return f"const:{v.real!r}" if v.imag == 0 else f"const:{v!r}"
        return {"entries": [{"j": list(key), "re": v.real, "im": v.imag}
                            for key, v in sorted(self.entries.items())]}


# ---------------------------------------------------------------------------
# operators on T
# ---------------------------------------------------------------------------

def _binom(beta: MultiIndex, delta: MultiIndex) -> int:
    return math.prod(math.comb(b, d) for b, d in zip(beta, delta))


@dataclass(frozen=True)
class TOperator:
    """``sum_beta a_beta(t) d_t^beta`` with the coefficient on the left."""

    n: int
    terms: Mapping[MultiIndex, TCoeff] = field(default_factory=dict)

    def __post_init__(self):
        raw = self.terms.items() if isinstance(self.terms, Mapping) else self.terms
        clean: dict = {}
        for beta, coeff in raw:
            beta = tuple(int(b) for b in beta)
            if len(beta) != self.n or any(b < 0 for b in beta):
                raise DimensionError(f"derivative index {beta} invalid for n={self.n}")
            if coeff.n != self.n:
                raise DimensionError("coefficient dimension does not match operator")
            clean[beta] = clean[beta] + coeff if beta in clean else coeff
        clean = {b: c for b, c in sorted(clean.items()) if not c.is_zero}
        object.__setattr__(self, "terms", MappingProxyType(clean))

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls, n: int) -> "TOperator":
        return cls(n, {})

    @classmethod
    def identity(cls, n: int, value: complex = 1.0) -> "TOperator":
        return cls(n, {(0,) * n: TCoeff.const(n, value)})

    @classmethod
    def partial(cls, n: int, d: int, power: int = 1, coeff: complex | TCoeff = 1.0) -> "TOperator":
        beta = tuple(power if i == d else 0 for i in range(n))
        c = coeff if isinstance(coeff, TCoeff) else TCoeff.const(n, coeff)
        return cls(n, {beta: c})

    @classmethod
    def constant(cls, n: int, terms: Mapping[MultiIndex, complex]) -> "TOperator":
        return cls(n, {beta: TCoeff.const(n, v) for beta, v in terms.items()})

    # structure ----------------------------------------------------------
    @property
    def order(self) -> int:
        """Order of the operator; zero operator has order ``-1``."""
        return max((sum(b) for b in self.terms), default=-1)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_constant(self) -> bool:
        return all(c.is_constant for c in self.terms.values())

    @property
    def band(self) -> int:
        return max((c.band for c in self.terms.values()), default=0)

    def __add__(self, other: "TOperator") -> "TOperator":
        return TOperator(self.n, list(self.terms.items()) + list(other.terms.items()))

    def __sub__(self, other: "TOperator") -> "TOperator":
        return self + other.scale(-1.0)

    def scale(self, factor: complex) -> "TOperator":
        return TOperator(self.n, {b: c.scale(factor) for b, c in self.terms.items()})

    def multiply_left(self, coeff: TCoeff) -> "TOperator":
        """``a(t) * self``."""
        return TOperator(self.n, {b: coeff * c for b, c in self.terms.items()})

    def compose(self, other: "TOperator") -> "TOperator":
        """``self o other`` expanded with the Leibniz rule."""
        out = []
        for beta, a in self.terms.items():
            for gamma, b in other.terms.items():
                for delta in itertools.product(*(range(x + 1) for x in beta)):
                    rest = tuple(x - y for x, y in zip(beta, delta))
                    coeff = (a * b.derivative(rest)).scale(_binom(beta, delta))
                    out.append((tuple(x + y for x, y in zip(delta, gamma)), coeff))
        return TOperator(self.n, out)

    # action ---------------------------------------------------------------
    def symbol(self, j: Sequence[int]) -> complex:
        """Full symbol at integer frequency ``j``; only for constant coefficients."""
        return sum(c.constant_value * _mono(j, beta) for beta, c in self.terms.items())

    def homogeneous_symbol(self, tau, t0=None, order: int | None = None) -> complex:
        """``sum_{|beta| = order} a_beta(t0) (i tau)^beta``."""
        r = self.order if order is None else order
        t0 = np.zeros(self.n) if t0 is None else np.asarray(t0, dtype=float)
        total = 0j
        for beta, c in self.terms.items():
            if sum(beta) == r:
                total += c(t0) * _mono(tau, beta)
        return complex(total)

    def apply_table(self, psi: Mapping[MultiIndex, complex], cutoff: int):
        """Act on a function on T given as ``{j: coefficient}``.

        Returns ``(result, dropped_norm)``; modes pushed beyond ``cutoff`` by
        the coefficient convolution are dropped and their norm reported.
        """
        full: dict = {}
        for beta, coeff in self.terms.items():
            for j, v in psi.items():
                dv = _mono(j, beta) * v
                if dv == 0:
                    continue
                for shift, a in coeff.entries.items():
                    key = tuple(x + y for x, y in zip(j, shift))
                    full[key] = full.get(key, 0j) + a * dv
        kept = {key: v for key, v in full.items() if max(map(abs, key), default=0) <= cutoff}
        dropped = math.sqrt(sum(abs(v) ** 2 for key, v in full.items() if key not in kept))
        return kept, dropped

    def to_json(self) -> dict:
        return {"terms": [{"beta": list(b), "coeff": c.to_json()} for b, c in self.terms.items()]}


# ---------------------------------------------------------------------------
# invariant operators on T x G
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvariantOperator:
    """``P = sum_{|alpha| <= r} P_alpha X^alpha`` in canonical form.

    Construction enforces ``ord(P_alpha) <= r - |alpha|``; ``r`` defaults
    to the smallest admissible value.
    """

    n: int
    m: int
    terms: Mapping[MultiIndex, TOperator] = field(default_factory=dict)
    r: int | None = None

    def __post_init__(self):
        raw = self.terms.items() if isinstance(self.terms, Mapping) else self.terms
        clean: dict = {}
        for alpha, op in raw:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.m or any(a < 0 for a in alpha):
                raise DimensionError(f"frame index {alpha} invalid for m={self.m}")
            if op.n != self.n:
                raise DimensionError("T-operator dimension does not match")
            clean[alpha] = clean[alpha] + op if alpha in clean else op
        clean = {a: op for a, op in sorted(clean.items()) if not op.is_zero}
        needed = max((sum(a) + op.order for a, op in clean.items()), default=0)
        r = needed if self.r is None else int(self.r)
        for alpha, op in clean.items():
            if op.order > r - sum(alpha):
                raise OrderError(
                    f"term alpha={alpha} has ord(P_alpha)={op.order} > r - |alpha| = {r - sum(alpha)}")
        object.__setattr__(self, "terms", MappingProxyType(clean))
        object.__setattr__(self, "r", r)

    @property
    def P0(self) -> TOperator:
        return self.terms.get((0,) * self.m, TOperator.zero(self.n))

    @property
    def order(self) -> int:
        """Actual order ``max |alpha| + ord(P_alpha)``; ``-1`` for the zero operator."""
        return max((sum(a) + op.order for a, op in self.terms.items()), default=-1)

    @property
    def is_constant(self) -> bool:
        return all(op.is_constant for op in self.terms.values())

    @property
    def band(self) -> int:
        return max((op.band for op in self.terms.values()), default=0)

    def __add__(self, other: "InvariantOperator") -> "InvariantOperator":
        return InvariantOperator(self.n, self.m, list(self.terms.items()) + list(other.terms.items()))

    def scale(self, factor: complex) -> "InvariantOperator":
        return InvariantOperator(self.n, self.m, {a: op.scale(factor) for a, op in self.terms.items()})

    def symbol(self, j: Sequence[int], k: Sequence[int]) -> complex:
        """Full symbol ``p(j, k)`` of a constant-coefficient operator."""
        return sum(_mono(k, alpha) * op.symbol(j) for alpha, op in self.terms.items())

    def entry_operator(self, k: Sequence[int]) -> TOperator:
        """``P_0 + sum_{alpha != 0} (ik)^alpha P_alpha``: the action on the character ``k``."""
        out = TOperator.zero(self.n)
        for alpha, op in self.terms.items():
            out = out + op.scale(_mono(k, alpha))
        return out

    def to_json(self) -> dict:
        return {"r": self.r, "n": self.n, "m": self.m,
                "terms": [{"alpha": list(a), "op": op.to_json()} for a, op in self.terms.items()]}

    def __call__(self, u: ModeCoeffs) -> ModeCoeffs:
        return apply(self, u, strict=False)


def constant_operator(n: int, m: int, terms: Mapping[tuple[MultiIndex, MultiIndex], complex],
                      r: int | None = None) -> InvariantOperator:
    """Build ``sum c_{beta,alpha} d_t^beta X^alpha`` from ``{(beta, alpha): c}``."""
    grouped: dict = {}
    for (beta, alpha), v in terms.items():
        grouped.setdefault(tuple(alpha), {})[tuple(beta)] = v
    return InvariantOperator(n, m, {a: TOperator.constant(n, t) for a, t in grouped.items()}, r)


def vector_field(W: TOperator, a: Sequence[TCoeff | complex], m: int | None = None) -> InvariantOperator:
    """``Y = W + sum_d a_d(t) X_d``."""
    n = W.n
    m = len(a) if m is None else m
    terms = [((0,) * m, W)]
    for d, coeff in enumerate(a):
        c = coeff if isinstance(coeff, TCoeff) else TCoeff.const(n, coeff)
        alpha = tuple(1 if i == d else 0 for i in range(m))
        terms.append((alpha, TOperator(n, {(0,) * n: c})))
    return InvariantOperator(n, m, terms)


def laplacian(n: int, m: int, shift: complex = 0.0) -> InvariantOperator:
    """``-Delta_T - Delta_G + shift`` (nonnegative Laplacians)."""
    terms = {}
    for d in range(n):
        terms[(tuple(2 if i == d else 0 for i in range(n)), (0,) * m)] = -1.0
    for d in range(m):
        terms[((0,) * n, tuple(2 if i == d else 0 for i in range(m)))] = -1.0
    if shift:
        terms[((0,) * n, (0,) * m)] = shift
    return constant_operator(n, m, terms)


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def _check_grid(P: InvariantOperator, u: ModeCoeffs):
    if (u.grid.n, u.grid.m) != (P.n, P.m):
        raise DimensionError(f"operator acts on T^{P.n} x T^{P.m}, table lives on "
                             f"T^{u.grid.n} x T^{u.grid.m}")


def apply_with_overflow(P: InvariantOperator, u: ModeCoeffs) -> tuple[ModeCoeffs, float]:
    """``P u`` on the grid of ``u`` together with the norm of the dropped overflow."""
    _check_grid(P, u)
    if P.is_constant:
        out = {(j, k): P.symbol(j, k) * v for (j, k), v in u.items()}
        return ModeCoeffs(u.grid, out), 0.0
    grid = u.grid
    n, m = grid.n, grid.m
    dense = u.to_dense()
    freqs = grid.frequencies()
    t_axes = [freqs.reshape((-1,) + (1,) * (n + m - 1 - d)) for d in range(n)]
    g_axes = [freqs.reshape((-1,) + (1,) * (m - 1 - d)) for d in range(m)]
    pad = P.band
    ext = np.zeros((grid.size + 2 * pad,) * n + (grid.size,) * m, dtype=complex)
    for alpha, op in P.terms.items():
        k_mult = np.ones((grid.size,) * m, dtype=complex)
        for d, a in enumerate(alpha):
            if a:
                k_mult = k_mult * (1j * g_axes[d]) ** a
        for beta, coeff in op.terms.items():
            field_ = dense * k_mult
            for d, b in enumerate(beta):
                if b:
                    field_ = field_ * (1j * t_axes[d]) ** b
            for shift, val in coeff.entries.items():
                sl = tuple(slice(pad + s, pad + s + grid.size) for s in shift)
                ext[sl] += val * field_
    inner = tuple(slice(pad, pad + grid.size) for _ in range(n))
    kept = ext[inner]
    outside = np.ones(ext.shape, dtype=bool)
    outside[inner] = False
    dropped = math.sqrt(float(np.sum(np.abs(ext[outside]) ** 2)))
    return ModeCoeffs.from_dense(grid, kept), dropped


def apply(P: InvariantOperator, u: ModeCoeffs, strict: bool = True) -> ModeCoeffs:
    """``P u``; with ``strict`` set, overflow above ``OVERFLOW_TOL * ||u||`` raises."""
    out, dropped = apply_with_overflow(P, u)
    if strict and dropped > OVERFLOW_TOL * l2_norm(u):
        raise TruncationError(
            f"coefficient convolution pushed norm {dropped:.3e} beyond cutoff {u.grid.cutoff}",
            dropped_norm=dropped)
    return out


# ---------------------------------------------------------------------------
# lambda-family
# ---------------------------------------------------------------------------

Gamma = Callable[[Sequence[MultiIndex], MultiIndex], np.ndarray]


def torus_structure_coefficients(basis: Sequence[MultiIndex], alpha: MultiIndex) -> np.ndarray:
    """``gamma[i, j]`` with ``X^alpha phi_i = sum_j gamma[i, j] phi_j``; diagonal for characters."""
    return np.diag([_mono(k, alpha) for k in basis])


@dataclass(frozen=True)
class LambdaFamilyMatrix:
    """Operator ``hat P_lambda`` on ``T x E_lambda``.

    ``blocks[j][i]`` maps the ``i``-th component onto the ``j``-th one, in the
    basis ``basis`` of the eigenspace.
    """

    lam: int
    basis: tuple[MultiIndex, ...]
    blocks: tuple[tuple[TOperator, ...], ...]

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def is_diagonal(self) -> bool:
        return all(self.blocks[a][b].is_zero for a in range(self.dim) for b in range(self.dim) if a != b)

    @property
    def order(self) -> int:
        return max((op.order for row in self.blocks for op in row), default=-1)

    def diagonal(self) -> dict[MultiIndex, TOperator]:
        return {k: self.blocks[i][i] for i, k in enumerate(self.basis)}

    def apply(self, components: Mapping[MultiIndex, Mapping[MultiIndex, complex]], cutoff: int):
        """Act on ``{k: {j: coeff}}``; returns ``(components, dropped_norm)``."""
        out: dict = {}
        dropped_sq = 0.0
        for a, k_out in enumerate(self.basis):
            acc: dict = {}
            for b, k_in in enumerate(self.basis):
                op = self.blocks[a][b]
                if op.is_zero or k_in not in components:
                    continue
                res, dr = op.apply_table(components[k_in], cutoff)
                dropped_sq += dr * dr
                for j, v in res.items():
                    acc[j] = acc.get(j, 0j) + v
            out[k_out] = acc
        return out, math.sqrt(dropped_sq)


def g_eigenbasis(m: int, lam: int, cutoff: int | None = None) -> tuple[MultiIndex, ...]:
    """Lattice points ``k`` in ``Z^m`` with ``|k|^2 = lam``, optionally within a box."""
    bound = math.isqrt(lam)
    if cutoff is not None:
        bound = min(bound, cutoff)
    rng = range(-bound, bound + 1)
    return tuple(k for k in itertools.product(rng, repeat=m) if sq(k) == lam)


def hat_P_lambda(P: InvariantOperator, lam: int, grid: GridSpec | None = None,
                 gamma: Gamma = torus_structure_coefficients) -> LambdaFamilyMatrix:
    """Restriction of ``P`` to sections of ``T x E_lambda``."""
    basis = g_eigenbasis(P.m, lam, None if grid is None else grid.cutoff)
    if not basis:
        raise PreconditionError(f"lambda = {lam} is not an eigenvalue of Delta_G on the grid")
    d = len(basis)
    blocks = [[TOperator.zero(P.n) for _ in range(d)] for _ in range(d)]
    for a in range(d):
        blocks[a][a] = P.P0
    for alpha, op in P.terms.items():
        if not any(alpha):
            continue
        g = gamma(basis, alpha)
        for i in range(d):
            for j in range(d):
                if g[i, j] != 0:
                    blocks[j][i] = blocks[j][i] + op.scale(g[i, j])
    return LambdaFamilyMatrix(lam, basis, tuple(tuple(row) for row in blocks))


def g_components(u: ModeCoeffs, lam: int) -> dict[MultiIndex, dict[MultiIndex, complex]]:
    """``F^G_lambda u`` as ``{k: {j: coeff}}``."""
    out: dict = {}
    for (j, k), v in u.items():
        if sq(k) == lam:
            out.setdefault(k, {})[j] = v
    return out


def components_to_coeffs(grid: GridSpec, comps) -> ModeCoeffs:
    return ModeCoeffs(grid, {(j, k): v for k, tab in comps.items() for j, v in tab.items()})


# ---------------------------------------------------------------------------
# symbols and class T
# ---------------------------------------------------------------------------

def principal_symbol_P0(P: InvariantOperator, tau, t0=None, order: int | None = None) -> complex:
    """Top-order homogeneous part of ``P_0`` at ``(t0, tau)``, ``tau != 0``."""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (P.n,):
        raise DimensionError(f"covector must have length {P.n}")
    if not np.any(tau):
        raise ParameterError("principal symbol needs a nonzero covector")
    return P.P0.homogeneous_symbol(tau, t0, order)


def _limit_matrix(family: LambdaFamilyMatrix, t0, tau, rho: float, r: int) -> np.ndarray:
    """``rho^{-r} e^{-i rho psi} hat P(e^{i rho psi} phi_i)`` at ``t0`` with ``d psi = tau``."""
    d = family.dim
    out = np.zeros((d, d), dtype=complex)
    for a in range(d):
        for b in range(d):
            op = family.blocks[a][b]
            total = 0j
            for beta, c in op.terms.items():
                total += c(t0) * _mono(tau, beta) * rho ** (sum(beta) - r)
            out[a, b] = total
    return out


def symbol_identity_check(P: InvariantOperator, lam: int, samples, grid: GridSpec | None = None,
                          rho: float = 1e4, tol: float = 1e-8) -> Verdict:
    """Compare the principal symbol of ``hat P_lambda`` with ``Symb(P_0) id``.

    The symbol of the family is the large-``rho`` limit of the oscillatory
    test expression, evaluated at ``rho, 2 rho, 4 rho`` and Richardson
    extrapolated.  ``samples`` are ``(t0, tau0)`` pairs.
    """
    family = hat_P_lambda(P, lam, grid)
    r_hat = family.order
    reasons = []
    if P.order != P.P0.order:
        reasons.append(f"precondition: ord P = {P.order} differs from ord P0 = {P.P0.order}")
    if r_hat < 0:
        return Verdict(Status.HOLDS, tuple(reasons + ["family vanishes identically"]), (),
                       {"order": r_hat, "deviation": 0.0})
    worst = 0.0
    worst_raw = 0.0
    offending = []
    for t0, tau in samples:
        t0 = np.atleast_1d(np.asarray(t0, dtype=float))
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        e1, e2, e4 = (_limit_matrix(family, t0, tau, f * rho, r_hat) for f in (1, 2, 4))
        r1, r2 = 2 * e2 - e1, 2 * e4 - e2
        limit = (4 * r2 - r1) / 3
        target = P.P0.homogeneous_symbol(tau, t0, r_hat) * np.eye(family.dim)
        scale = max(1.0, float(np.abs(target).max()))
        dev = float(np.abs(limit - target).max()) / scale
        worst_raw = max(worst_raw, float(np.abs(e1 - target).max()) / scale)
        if dev > tol:
            offending.append((tuple(map(float, t0)), tuple(map(float, tau))))
        worst = max(worst, dev)
    ok = not offending
    if not ok:
        reasons.append(f"symbol of hat P_{lam} deviates from Symb(P0) id by {worst:.3e}")
    return Verdict(Status.HOLDS if ok else Status.FAILS, tuple(reasons), tuple(offending),
                   {"order": r_hat, "deviation": worst, "raw_deviation": worst_raw, "rho": rho})


def _check_points(n: int, band: int, resolution: int | None = None) -> np.ndarray:
    size = resolution or max(64, 8 * band + 1)
    if n > 2:
        size = min(size, 12)
    axes = [2 * np.pi * np.arange(size) / size] * n
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def _sphere_directions(n: int, count: int = 2000, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


#: directions used for the two-dimensional ellipticity sweep
ANGULAR_SWEEP = 720


def ellipticity_check(op: TOperator, rel_tol: float = 1e-10, resolution: int | None = None) -> Verdict:
    """Is the principal symbol of ``op`` nonvanishing for every ``tau != 0``?

    ``n = 1``: leading coefficient nonvanishing on the check grid.  Order one,
    any ``n``: exact rank test on ``(Re c, Im c)``.  ``n = 2``: sweep of 720
    directions with a segment-through-origin detector.  ``n >= 3`` and order
    at least two: random directions, reported as sampled.
    """
    r = op.order
    if r <= 0:
        return Verdict.of(r == 0 and not op.is_zero and _nonvanishing_zeroth(op, rel_tol, resolution),
                          ["zeroth-order operator" if r == 0 else "zero operator"])
    pts = _check_points(op.n, op.band, resolution)
    top = {beta: c.values_on(pts) for beta, c in op.terms.items() if sum(beta) == r}
    n = op.n
    if n == 1:
        lead = np.abs(top[(r,)])
        bad = pts[lead <= rel_tol * max(1.0, float(lead.max()))]
        return Verdict.of(len(bad) == 0, [] if len(bad) == 0 else ["leading coefficient vanishes"],
                          [tuple(map(float, p)) for p in bad[:10]], method="exact-n1", min_abs=float(lead.min()))
    if r == 1:
        coeffs = np.stack([top.get(tuple(1 if i == d else 0 for i in range(n)), np.zeros(len(pts)))
                           for d in range(n)], axis=1)
        bad = []
        smin = math.inf
        for p, c in zip(pts, coeffs):
            mat = np.vstack([c.real, c.imag])
            sv = np.linalg.svd(mat, compute_uv=False)
            s_low = float(sv[-1]) if n <= 2 else 0.0
            smin = min(smin, s_low)
            if s_low <= rel_tol * max(1.0, float(sv[0])):
                bad.append(tuple(map(float, p)))
        reasons = [] if not bad else [
            "first-order symbol <Re c, tau> = <Im c, tau> = 0 has a nonzero real solution"
            + (" (always, n >= 3)" if n >= 3 else "")]
        return Verdict.of(not bad, reasons, bad[:10], method="exact-rank", min_singular=smin)
    if n == 2:
        theta = 2 * np.pi * np.arange(ANGULAR_SWEEP) / ANGULAR_SWEEP
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        method = "sweep-720"
    else:
        dirs = _sphere_directions(n)
        method = "sampled-sphere"
    sym = np.zeros((len(pts), len(dirs)), dtype=complex)
    for beta, vals in top.items():
        sym += vals[:, None] * np.prod((1j * dirs) ** np.asarray(beta), axis=1)[None, :]
    scale = max(1.0, float(np.abs(sym).max()))
    low = np.abs(sym).min(axis=1)
    if n == 2:
        nxt = np.roll(sym, -1, axis=1)
        seg = nxt - sym
        denom = np.where(np.abs(seg) > 0, np.abs(seg) ** 2, 1.0)
        tpar = np.clip(-(np.conj(seg) * sym).real / denom, 0.0, 1.0)
        low = np.minimum(low, np.abs(sym + tpar * seg).min(axis=1))
    bad = pts[low <= rel_tol * scale]
    reasons = [] if len(bad) == 0 else ["principal symbol vanishes in some direction"]
    if n > 2:
        reasons.append("sampled check, not certified")
    return Verdict.of(len(bad) == 0, reasons, [tuple(map(float, p)) for p in bad[:10]], method=method,
                      min_abs=float(low.min()))


def _nonvanishing_zeroth(op: TOperator, rel_tol, resolution) -> bool:
    pts = _check_points(op.n, op.band, resolution)
    vals = np.abs(op.terms[(0,) * op.n].values_on(pts))
    return bool(vals.min() > rel_tol * max(1.0, float(vals.max())))


def is_class_T(P: InvariantOperator, resolution: int | None = None) -> Verdict:
    """Membership in class T: invariant form, ``ord P = ord P_0``, ``P_0`` elliptic."""
    reasons = ["G-invariance holds by construction of the canonical form"]
    if P.order != P.P0.order:
        reasons.append(f"ord P = {P.order} but ord P0 = {P.P0.order}")
        return Verdict(Status.FAILS, tuple(reasons), (), {"order_P": P.order, "order_P0": P.P0.order})
    ell = ellipticity_check(P.P0, resolution=resolution)
    reasons.extend(ell.reasons)
    if not ell.holds:
        reasons.append("P0 is not elliptic on T")
    return Verdict(ell.status, tuple(reasons), ell.offending,
                   {"order_P": P.order, "order_P0": P.P0.order, **ell.details})


# ---------------------------------------------------------------------------
# commutation with Delta_G
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeCouplingOperator:
    """A raw linear map sending mode ``(j, k)`` to ``(j + dj, k + dk)`` with weight
    ``factor(j, k)``, for each ``((dj, dk), factor)`` in ``couplings``.  Used
    to express operators that are not G-invariant."""

    couplings: tuple[tuple[tuple[MultiIndex, MultiIndex], Callable], ...]

    def __call__(self, u: ModeCoeffs) -> ModeCoeffs:
        out: dict = {}
        for (dj, dk), factor in self.couplings:
            for (j, k), v in u.items():
                j2 = tuple(a + b for a, b in zip(j, dj))
                k2 = tuple(a + b for a, b in zip(k, dk))
                if u.grid.contains(j2, k2):
                    out[(j2, k2)] = out.get((j2, k2), 0j) + factor(j, k) * v
        return ModeCoeffs(u.grid, out)


def sin_x_dt(n: int, m: int) -> ModeCouplingOperator:
    """``sin(x_1) d/dt_1``: depends on the G variable, hence not invariant."""
    e1 = tuple(1 if i == 0 else 0 for i in range(m))
    minus = tuple(-a for a in e1)
    zero = (0,) * n
    return ModeCouplingOperator((
        ((zero, e1), lambda j, k: 1j * j[0] / 2j),
        ((zero, minus), lambda j, k: -1j * j[0] / 2j),
    ))


def _delta_G(u: ModeCoeffs) -> ModeCoeffs:
    return ModeCoeffs(u.grid, {(j, k): sq(k) * v for (j, k), v in u.items()})


def commutator_deltaG_check(P, inputs: Sequence[ModeCoeffs], tol: float = 1e-10) -> Verdict:
    """``||P Delta_G u - Delta_G P u|| <= tol (||u|| + 1)`` on every input.

    ``P`` may be an :class:`InvariantOperator` or any callable on tables.
    """
    act = (lambda u: apply(P, u, strict=False)) if isinstance(P, InvariantOperator) else P
    defects = []
    offending = []
    for idx, u in enumerate(inputs):
        d = l2_norm(act(_delta_G(u)) - _delta_G(act(u)))
        rel = d / (l2_norm(u) + 1)
        defects.append(rel)
        if rel > tol:
            offending.append(idx)
    ok = not offending
    return Verdict(Status.HOLDS if ok else Status.FAILS,
                   () if ok else (f"commutator defect up to {max(defects):.3e}",),
                   tuple(offending), {"max_defect": max(defects, default=0.0), "trials": len(inputs)})


# ---------------------------------------------------------------------------
# sums of squares
# ---------------------------------------------------------------------------

def build_sum_of_squares(Q: TOperator, vfs: Sequence[tuple[TOperator, Sequence[TCoeff | complex]]],
                         m: int) -> InvariantOperator:
    """Canonical form of ``Q - sum_l Y_l^2`` with ``Y_l = W_l + sum_d a_{l d}(t) X_d``."""
    n = Q.n
    zero_alpha = (0,) * m
    terms: list = [(zero_alpha, Q)]
    unit = lambda d: tuple(1 if i == d else 0 for i in range(m))
    for W, coeffs in vfs:
        if W.order > 1:
            raise OrderError("vector field part W must have order at most one")
        a = [c if isinstance(c, TCoeff) else TCoeff.const(n, c) for c in coeffs]
        if len(a) != m:
            raise DimensionError(f"expected {m} frame coefficients, got {len(a)}")
        terms.append((zero_alpha, W.compose(W).scale(-1)))
        for d, ad in enumerate(a):
            mult = TOperator(n, {(0,) * n: ad})
            cross = W.compose(mult) + mult.compose(W)
            terms.append((unit(d), cross.scale(-1)))
        for d1, a1 in enumerate(a):
            for d2, a2 in enumerate(a):
                alpha = tuple(x + y for x, y in zip(unit(d1), unit(d2)))
                terms.append((alpha, TOperator(n, {(0,) * n: (a1 * a2).scale(-1)})))
    return InvariantOperator(n, m, terms)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _coeff_from_json(doc, n: int) -> TCoeff:
    if isinstance(doc, (int, float)):
        return TCoeff.const(n, doc)
    if isinstance(doc, str):
        if not doc.startswith("const:"):
            raise ParameterError(f"coefficient string must look like 'const:v', got {doc!r}")
        return TCoeff.const(n, complex(doc[len("const:"):].strip().replace(" ", "")))
    if isinstance(doc, dict) and "entries" in doc:
        return TCoeff(n, {tuple(e["j"]): complex(e.get("re", 0.0), e.get("im", 0.0))
                          for e in doc["entries"]})
    raise ParameterError(f"cannot parse coefficient {doc!r}")


def operator_from_json(doc: dict) -> InvariantOperator:
    """Parse ``{"r": .., "terms": [{"alpha": [..], "op": {"terms": [{"beta": [..], "coeff": ..}]}}]}``."""
    terms_doc = doc.get("terms")
    if not isinstance(terms_doc, list) or not terms_doc:
        raise ParameterError("operator document needs a nonempty 'terms' list")
    m = int(doc.get("m", len(terms_doc[0]["alpha"])))
    n = doc.get("n")
    if n is None:
        n = len(terms_doc[0]["op"]["terms"][0]["beta"])
    n = int(n)
    terms = []
    for t in terms_doc:
        op = TOperator(n, [(tuple(bt["beta"]), _coeff_from_json(bt["coeff"], n)) for bt in t["op"]["terms"]])
        terms.append((tuple(t["alpha"]), op))
    return InvariantOperator(n, m, terms, doc.get("r"))


# ---------------------------------------------------------------------------
# dense truncations
# ---------------------------------------------------------------------------

def t_basis(n: int, cutoff: int) -> list[MultiIndex]:
    """Frequencies ``j`` with ``|j|_inf <= cutoff`` in lexicographic order."""
    return list(itertools.product(range(-cutoff, cutoff + 1), repeat=n))


def family_matrix(family: LambdaFamilyMatrix, n: int, cutoff: int) -> np.ndarray:
    """Dense truncation of ``hat P_lambda`` on ``{|j|_inf <= cutoff} x basis``.

    Rows and columns are ordered block-wise by basis vector, then by ``j``.
    Overflowing convolution terms are dropped.
    """
    js = t_basis(n, cutoff)
    pos = {j: i for i, j in enumerate(js)}
    size = len(js)
    d = family.dim
    mat = np.zeros((d * size, d * size), dtype=complex)
    for a in range(d):
        for b in range(d):
            op = family.blocks[a][b]
            if op.is_zero:
                continue
            for col, j in enumerate(js):
                res, _ = op.apply_table({j: 1.0}, cutoff)
                for key, v in res.items():
                    mat[a * size + pos[key], b * size + col] += v
    return mat
