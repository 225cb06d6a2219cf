"""Lattice-mode representation of functions on the product torus T^n x T^m.

A function on ``T^n x T^m`` is stored through its Fourier coefficients
``c(j, k)`` in the orthonormal basis ``e^{i<j,t>} e^{i<k,x>}`` of
``L^2`` with the normalized Haar measure.  Only modes with
``|j|_inf <= cutoff`` and ``|k|_inf <= cutoff`` are retained.

Eigenvalues of the flat Laplacians are the exact integers ``mu = |j|^2``
and ``lambda = |k|^2``; every grouping below compares integers, never floats.

Dense arrays appear only inside the transforms and a few vectorized
helpers.  Their axes are ordered ``(t_1..t_n, x_1..x_m)`` and are
*centered*: index ``a`` along any axis corresponds to frequency ``a - cutoff``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DimensionError, ParameterError

Mode = tuple[tuple[int, ...], tuple[int, ...]]

#: fraction of the total carried by the outer layer of the retained box above
#: which a computed norm is flagged as unreliable at this cutoff
TRUNCATION_FRACTION = 0.01


@dataclass(frozen=True)
class GridSpec:
    n: int
    m: int
    cutoff: int

    def __post_init__(self):
        for name in ("n", "m", "cutoff"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"GridSpec.{name} must be a positive integer, got {value!r}")

    @property
    def size(self) -> int:
        """Number of sample points (and retained frequencies) per axis."""
        return 2 * self.cutoff + 1

    @property
    def ndim(self) -> int:
        return self.n + self.m

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.size,) * self.ndim

    @property
    def mode_count(self) -> int:
        return self.size ** self.ndim

    def contains(self, j: Iterable[int], k: Iterable[int]) -> bool:
        j, k = tuple(j), tuple(k)
        return (
            len(j) == self.n
            and len(k) == self.m
            and all(abs(v) <= self.cutoff for v in j)
            and all(abs(v) <= self.cutoff for v in k)
        )

    def with_cutoff(self, cutoff: int) -> "GridSpec":
        return GridSpec(self.n, self.m, cutoff)

    def points(self) -> np.ndarray:
        """Uniform sample points ``2 pi a / size`` along one axis."""
        return 2 * np.pi * np.arange(self.size) / self.size

    def frequencies(self) -> np.ndarray:
        """Centered frequencies ``-cutoff..cutoff`` along one axis."""
        return np.arange(-self.cutoff, self.cutoff + 1)

    def modes(self) -> Iterator[Mode]:
        rng = range(-self.cutoff, self.cutoff + 1)
        for js in itertools.product(rng, repeat=self.n):
            for ks in itertools.product(rng, repeat=self.m):
                yield js, ks

    def to_json(self) -> dict:
        return {"n": self.n, "m": self.m, "cutoff": self.cutoff}


def _as_mode(key) -> Mode:
    j, k = key
    return tuple(int(v) for v in j), tuple(int(v) for v in k)


@dataclass(frozen=True)
class ModeCoeffs:
    """Sparse, immutable table of Fourier coefficients; absent modes are zero."""

    grid: GridSpec
    entries: Mapping[Mode, complex] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, value in dict(self.entries).items():
            mode = _as_mode(key)
            if not self.grid.contains(*mode):
                raise DimensionError(f"mode {mode} lies outside grid {self.grid}")
            clean[mode] = complex(value)
        object.__setattr__(self, "entries", MappingProxyType(clean))

    # construction -----------------------------------------------------
    @classmethod
    def zeros(cls, grid: GridSpec) -> "ModeCoeffs":
        return cls(grid, {})

    @classmethod
    def single(cls, grid: GridSpec, j, k, amplitude: complex = 1.0) -> "ModeCoeffs":
        return cls(grid, {(tuple(j), tuple(k)): amplitude})

    @classmethod
    def from_dense(cls, grid: GridSpec, arr: np.ndarray, drop_zeros: bool = True) -> "ModeCoeffs":
        arr = np.asarray(arr)
        if arr.shape != grid.shape:
            raise DimensionError(f"dense array shape {arr.shape} != grid shape {grid.shape}")
        c, n = grid.cutoff, grid.n
        idx = np.argwhere(arr != 0) if drop_zeros else np.array(list(np.ndindex(arr.shape)))
        entries = {}
        for row in idx.reshape(-1, grid.ndim):
            freq = tuple(int(a) - c for a in row)
            entries[(freq[:n], freq[n:])] = arr[tuple(row)]
        return cls(grid, entries)

    def to_dense(self) -> np.ndarray:
        arr = np.zeros(self.grid.shape, dtype=complex)
        c = self.grid.cutoff
        for (j, k), v in self.entries.items():
            arr[tuple(a + c for a in j + k)] = v
        return arr

    # mapping-ish access -------------------------------------------------
    @classmethod
    def from_json(cls, doc: Mapping) -> "ModeCoeffs":
        """Inverse of :meth:`to_json`."""
        try:
            g = doc["grid"]
            grid = GridSpec(int(g["n"]), int(g["m"]), int(g["cutoff"]))
            entries = {(tuple(e["j"]), tuple(e["k"])): complex(e.get("re", 0.0), e.get("im", 0.0))
                       for e in doc.get("entries", [])}
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed coefficient table: {exc}") from exc
        return cls(grid, entries)

    def to_json(self) -> dict:
        rows = [{"j": list(j), "k": list(k), "re": v.real, "im": v.imag}
                for (j, k), v in sorted(self.entries.items())]
        return {"grid": self.grid.to_json(), "entries": rows}

    def __getitem__(self, mode) -> complex:
        return self.entries.get(_as_mode(mode), 0j)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def support(self) -> list[Mode]:
        return sorted(m for m, v in self.entries.items() if v != 0)

    def filter(self, keep) -> "ModeCoeffs":
        """Table restricted to the modes ``(j, k)`` for which ``keep(j, k)`` is true."""
        return ModeCoeffs(self.grid, {m: v for m, v in self.entries.items() if keep(*m)})

    def restrict(self, cutoff: int) -> "ModeCoeffs":
        """Same function truncated to a smaller box, on the smaller grid."""
        sub = self.grid.with_cutoff(cutoff)
        return ModeCoeffs(sub, {m: v for m, v in self.entries.items() if sub.contains(*m)})

    # linear structure -----------------------------------------------------
    def _check(self, other: "ModeCoeffs"):
        if self.grid != other.grid:
            raise DimensionError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other: "ModeCoeffs") -> "ModeCoeffs":
        self._check(other)
        out = dict(self.entries)
        for m, v in other.entries.items():
            out[m] = out.get(m, 0j) + v
        return ModeCoeffs(self.grid, out)

    def __sub__(self, other: "ModeCoeffs") -> "ModeCoeffs":
        return self + (-1.0) * other

    def __mul__(self, scalar: complex) -> "ModeCoeffs":
        return ModeCoeffs(self.grid, {m: scalar * v for m, v in self.entries.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "ModeCoeffs":
        return (-1.0) * self

    def inner(self, other: "ModeCoeffs") -> complex:
        """``L^2`` inner product, conjugate-linear in ``other``."""
        self._check(other)
        small, big = (self, other) if len(self) <= len(other) else (other, self)
        total = 0j
        for m in small.entries:
            total += self[m] * np.conj(other[m])
        return complex(total)

    def equals(self, other: "ModeCoeffs", tol: float = 0.0) -> bool:
        """Sparse-table equality; absent and explicit-zero entries agree."""
        if self.grid != other.grid:
            return False
        keys = set(self.entries) | set(other.entries)
        return all(abs(self[m] - other[m]) <= tol for m in keys)


def sq(v: Iterable[int]) -> int:
    """Exact squared Euclidean norm of an integer vector."""
    return sum(int(a) * int(a) for a in v)


# ---------------------------------------------------------------------------
# eigenvalue bookkeeping
# ---------------------------------------------------------------------------

def lattice_shells(dim: int, cutoff: int) -> dict[int, list[tuple[int, ...]]]:
    """Group the integer points of ``[-cutoff, cutoff]^dim`` by ``|v|^2``."""
    shells: dict[int, list[tuple[int, ...]]] = {}
    for v in itertools.product(range(-cutoff, cutoff + 1), repeat=dim):
        shells.setdefault(sq(v), []).append(v)
    return dict(sorted(shells.items()))


@dataclass(frozen=True)
class EigenIndex:
    """Eigenspaces of the flat Laplacians on each factor, restricted to the grid box.

    A shell ``|v|^2 = value`` is complete (has its true multiplicity) whenever
    ``value <= cutoff^2``; larger shells are cut by the box.
    """

    grid: GridSpec
    t_spectrum: Mapping[int, tuple[tuple[int, ...], ...]]
    g_spectrum: Mapping[int, tuple[tuple[int, ...], ...]]

    @classmethod
    def build(cls, grid: GridSpec) -> "EigenIndex":
        t = {mu: tuple(pts) for mu, pts in lattice_shells(grid.n, grid.cutoff).items()}
        g = t if grid.m == grid.n else {
            lam: tuple(pts) for lam, pts in lattice_shells(grid.m, grid.cutoff).items()
        }
        return cls(grid, MappingProxyType(t), MappingProxyType(g))

    @property
    def complete_up_to(self) -> int:
        return self.grid.cutoff ** 2

    def d_T(self, mu: int) -> int:
        return len(self.t_spectrum.get(mu, ()))

    def d_G(self, lam: int) -> int:
        return len(self.g_spectrum.get(lam, ()))

    def t_values(self) -> list[int]:
        return list(self.t_spectrum)

    def g_values(self) -> list[int]:
        return list(self.g_spectrum)

    def full_values(self) -> list[int]:
        return sorted({mu + lam for mu in self.t_spectrum for lam in self.g_spectrum})


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def forward_transform(samples: np.ndarray, grid: GridSpec) -> ModeCoeffs:
    """Fourier coefficients of uniform samples of a function on T^n x T^m.

    The coefficients satisfy ``f = sum c(j,k) e^{i(<j,t> + <k,x>)}`` at the
    grid points and Parseval ``sum |c|^2 = mean |f|^2`` (normalized measure).
    """
    samples = np.asarray(samples)
    if samples.shape != grid.shape:
        raise DimensionError(f"samples shape {samples.shape} does not match grid shape {grid.shape}")
    coeffs = np.fft.fftshift(np.fft.fftn(samples)) / grid.mode_count
    return ModeCoeffs.from_dense(grid, coeffs)


def inverse_transform(c: ModeCoeffs) -> np.ndarray:
    """Samples on the uniform grid of the trigonometric polynomial ``c``."""
    dense = np.fft.ifftshift(c.to_dense())
    return np.fft.ifftn(dense) * c.grid.mode_count


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_G(c: ModeCoeffs, lam: int) -> ModeCoeffs:
    """Partial projection onto the ``lam``-eigenspace of the Laplacian on G."""
    return c.filter(lambda j, k: sq(k) == lam)


def project_T(c: ModeCoeffs, mu: int) -> ModeCoeffs:
    """Partial projection onto the ``mu``-eigenspace of the Laplacian on T."""
    return c.filter(lambda j, k: sq(j) == mu)


def project_full(c: ModeCoeffs, alpha: int) -> ModeCoeffs:
    """Projection onto the ``alpha``-eigenspace of the Laplacian on T x G."""
    return c.filter(lambda j, k: sq(j) + sq(k) == alpha)


def _shell_sums(c: ModeCoeffs, key) -> dict:
    sums: dict = {}
    for (j, k), v in c.items():
        lab = key(j, k)
        sums[lab] = sums.get(lab, 0.0) + abs(v) ** 2
    return sums


def g_shell_norms(c: ModeCoeffs, include_empty: bool = False) -> list[tuple[int, float]]:
    """``(lam, ||F^G_lam c||)`` sorted by ``lam``."""
    sums = _shell_sums(c, lambda j, k: sq(k))
    if include_empty:
        for lam in EigenIndex.build(c.grid).g_values():
            sums.setdefault(lam, 0.0)
    return [(lam, math.sqrt(v)) for lam, v in sorted(sums.items())]


def t_shell_norms(c: ModeCoeffs) -> list[tuple[int, float]]:
    sums = _shell_sums(c, lambda j, k: sq(j))
    return [(mu, math.sqrt(v)) for mu, v in sorted(sums.items())]


def full_shell_norms(c: ModeCoeffs) -> list[tuple[int, float]]:
    """``(alpha, ||F^M_alpha c||)`` for the Laplacian of the product."""
    sums = _shell_sums(c, lambda j, k: sq(j) + sq(k))
    return [(a, math.sqrt(v)) for a, v in sorted(sums.items())]


def double_shell_norms(c: ModeCoeffs) -> dict[tuple[int, int], float]:
    """``(mu, lam) -> ||F^T_mu F^G_lam c||``."""
    sums = _shell_sums(c, lambda j, k: (sq(j), sq(k)))
    return {key: math.sqrt(v) for key, v in sorted(sums.items())}


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

_EIGEN = {
    "full": lambda j, k: sq(j) + sq(k),
    "G": lambda j, k: sq(k),
    "T": lambda j, k: sq(j),
}


def _eigen_key(variant: str):
    try:
        return _EIGEN[variant]
    except KeyError:
        raise ParameterError(f"unknown norm variant {variant!r}; expected one of {sorted(_EIGEN)}") from None


def l2_norm(c: ModeCoeffs) -> float:
    return math.sqrt(sum(abs(v) ** 2 for v in c.entries.values()))


def sobolev_norm(c: ModeCoeffs, t: float, variant: str = "full") -> float:
    """Adapted Sobolev norm ``(sum (1+alpha)^{2t} ||F_alpha c||^2)^{1/2}``."""
    key = _eigen_key(variant)
    return math.sqrt(sum((1 + key(j, k)) ** (2 * t) * abs(v) ** 2 for (j, k), v in c.items()))


def _check_gevrey_params(s: float, h: float | None = None):
    if not s >= 1:
        raise ParameterError(f"Gevrey order must satisfy s >= 1, got {s}")
    if h is not None and not h > 0:
        raise ParameterError(f"Gevrey parameter h must be positive, got {h}")


def gevrey_weight(eigenvalue, s: float):
    """``(1 + eigenvalue)^{1/(2s)}``, the exponent scale of the Gevrey classes."""
    return (1.0 + np.asarray(eigenvalue, dtype=float)) ** (1.0 / (2.0 * s))


def gevrey_norm(c: ModeCoeffs, s: float, h: float, variant: str = "full") -> float:
    """Adapted Gevrey norm ``(sum e^{2h (1+alpha)^{1/2s}} ||F_alpha c||^2)^{1/2}``.

    ``variant="G"`` uses the eigenvalues of the Laplacian on G alone and
    ``variant="T"`` those on T alone.
    """
    _check_gevrey_params(s, h)
    key = _eigen_key(variant)
    if not c.entries:
        return 0.0
    logs = [2 * h * float(gevrey_weight(key(j, k), s)) + 2 * math.log(abs(v))
            for (j, k), v in c.items() if v != 0]
    if not logs:
        return 0.0
    top = max(logs)
    return math.exp(0.5 * (top + math.log(sum(math.exp(x - top) for x in logs))))


@dataclass(frozen=True)
class NormReport:
    """A norm as computed at the cutoff, plus the share of its square carried
    by the outer layer ``max(|j|_inf, |k|_inf) = cutoff`` of the retained box."""

    value: float
    boundary_fraction: float

    @property
    def truncated(self) -> bool:
        return self.boundary_fraction > TRUNCATION_FRACTION

    def to_json(self) -> dict:
        return {"value": self.value, "boundary_fraction": self.boundary_fraction,
                "truncated": self.truncated}


def norm_report(c: ModeCoeffs, kind: str = "l2", *, t: float = 0.0, s: float = 1.0,
                h: float = 1.0, variant: str = "full") -> NormReport:
    """Evaluate ``l2``, ``sobolev`` or ``gevrey`` norms with a truncation flag."""
    key = _eigen_key(variant)
    if kind == "l2":
        weight = lambda j, k: 1.0
    elif kind == "sobolev":
        weight = lambda j, k: (1 + key(j, k)) ** (2 * t)
    elif kind == "gevrey":
        _check_gevrey_params(s, h)
        top = max((2 * h * float(gevrey_weight(key(j, k), s)) for (j, k) in c.entries), default=0.0)
        weight = lambda j, k: math.exp(2 * h * float(gevrey_weight(key(j, k), s)) - top)
    else:
        raise ParameterError(f"unknown norm kind {kind!r}")
    cut = c.grid.cutoff
    total = edge = 0.0
    for (j, k), v in c.items():
        w = weight(j, k) * abs(v) ** 2
        total += w
        if max(map(abs, j + k), default=0) == cut:
            edge += w
    frac = edge / total if total > 0 else 0.0
    if kind == "l2":
        value = math.sqrt(total)
    elif kind == "sobolev":
        value = sobolev_norm(c, t, variant)
    else:
        value = gevrey_norm(c, s, h, variant)
    return NormReport(value, frac)


def conjugate_symmetry_violations(c: ModeCoeffs, tol: float = 1e-12) -> list[Mode]:
    """Modes where ``c(-j,-k) != conj(c(j,k))``; empty iff ``c`` represents a real function."""
    bad = []
    for (j, k), v in c.items():
        mirror = (tuple(-a for a in j), tuple(-a for a in k))
        if abs(c[mirror] - np.conj(v)) > tol:
            bad.append((j, k))
    return sorted(bad)
