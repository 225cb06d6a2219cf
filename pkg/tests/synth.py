"""Synthetic fixtures shared by the test modules."""
import math

import numpy as np

from gevrey_spectral.invariant_op import InvariantOperator, TCoeff, TOperator
from gevrey_spectral.spectral_core import GridSpec, ModeCoeffs, sq


def random_coeffs(grid: GridSpec, rng, density: float = 1.0) -> ModeCoeffs:
    out = {}
    for mode in grid.modes():
        if rng.random() < density:
            out[mode] = complex(rng.normal(), rng.normal())
    return ModeCoeffs(grid, out)


def _phase(rng) -> complex:
    return complex(np.exp(2j * np.pi * rng.random()))


def shells_with_norms(grid: GridSpec, key, norm_of, top: int, rng=None) -> ModeCoeffs:
    """Table whose shells ``key(j, k) = e <= top`` have norm exactly ``norm_of(e)``."""
    groups: dict = {}
    for j, k in grid.modes():
        e = key(j, k)
        if e <= top:
            groups.setdefault(e, []).append((j, k))
    out = {}
    for e, modes in groups.items():
        amp = norm_of(e) / math.sqrt(len(modes))
        for mode in modes:
            out[mode] = amp * (1.0 if rng is None else _phase(rng))
    return ModeCoeffs(grid, out)


def gevrey_full(grid, C, h, s, rng=None) -> ModeCoeffs:
    """Full shells ``C exp(-h (1+alpha)^{1/2s})`` on every complete shell."""
    return shells_with_norms(grid, lambda j, k: sq(j) + sq(k),
                             lambda a: C * math.exp(-h * (1 + a) ** (1 / (2 * s))), grid.cutoff ** 2, rng)


def gevrey_g(grid, C, h, s, rng=None) -> ModeCoeffs:
    """G-shells ``C exp(-h (1+lam)^{1/2s})`` on every complete G-shell."""
    return shells_with_norms(grid, lambda j, k: sq(k),
                             lambda lam: C * math.exp(-h * (1 + lam) ** (1 / (2 * s))), grid.cutoff ** 2, rng)


def _trig(rng, n: int, band: int, size: float) -> TCoeff:
    ent = {}
    for _ in range(2):
        key = tuple(int(v) for v in rng.integers(-band, band + 1, n))
        ent[key] = ent.get(key, 0) + size * complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
    return TCoeff(n, ent)


def _units(n: int, order: int):
    if order == 0:
        return [(0,) * n]
    if n == 1:
        return [(b,) for b in range(order + 1)]
    return [(a, b) for a in range(order + 1) for b in range(order + 1 - a)]


def random_class_T(rng, n: int, m: int, order: int, band: int = 1) -> InvariantOperator:
    """Class-T operator of the given order with variable coefficients.

    The principal part of ``P_0`` is a nonvanishing multiple of ``d_t^r``
    (n = 1), of ``(d_1 + i d_2)^r`` (n = 2, r = 1) or of ``-Delta_T`` (n = 2, r = 2).
    """
    lead = TCoeff.const(n, 2.0 + rng.random()) + _trig(rng, n, band, 0.15)
    if n == 1:
        P0 = TOperator(n, {(order,): lead})
    elif order == 1:
        P0 = TOperator(n, {(1, 0): lead, (0, 1): lead.scale(1j)})
    else:
        P0 = TOperator(n, {(2, 0): lead.scale(-1), (0, 2): lead.scale(-1)})
    for beta in _units(n, order - 1):
        P0 = P0 + TOperator(n, {beta: _trig(rng, n, band, 0.5)})
    terms = [((0,) * m, P0)]
    for d in range(m):
        for size in range(1, order + 1):
            alpha = tuple(size if i == d else 0 for i in range(m))
            for beta in _units(n, order - size):
                terms.append((alpha, TOperator(n, {beta: _trig(rng, n, band, 0.5)})))
    return InvariantOperator(n, m, terms, order)
