"""Acceptance criteria 1-9, each at its stated tolerance."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from gevrey_spectral.cone import check_cone_inequalities, combine, validate_bound
from gevrey_spectral.diagnostics import (
    flow_operator,
    make_liouville,
    multiplier_table,
    power_bound_fit,
    witness_distribution,
    witness_multiplier_table,
)
from gevrey_spectral.errors import IncompatibleDataError
from gevrey_spectral.gevrey_analysis import GevreyEstimate, decay_fit, gevrey_vector_fit, vector_to_exponential
from gevrey_spectral.invariant_op import (
    InvariantOperator,
    TOperator,
    apply,
    commutator_deltaG_check,
    constant_operator,
    is_class_T,
    laplacian,
    sin_x_dt,
    symbol_identity_check,
)
from gevrey_spectral.solver import solve, truncated_reconstruction
from gevrey_spectral.spectral_core import (
    EigenIndex,
    GridSpec,
    ModeCoeffs,
    forward_transform,
    inverse_transform,
    l2_norm,
    project_full,
    project_G,
    project_T,
)
from synth import gevrey_full, gevrey_g, random_class_T, random_coeffs


def naive_dft(samples: np.ndarray, grid: GridSpec) -> dict:
    size, c = grid.size, grid.cutoff
    pts = grid.points()
    out = {}
    for j in range(-c, c + 1):
        for k in range(-c, c + 1):
            acc = 0j
            for a in range(size):
                for b in range(size):
                    acc += samples[a, b] * np.exp(-1j * (j * pts[a] + k * pts[b]))
            out[((j,), (k,))] = acc / size ** 2
    return out


@pytest.mark.criterion(1)
def test_transform_fidelity(rng):
    grid = GridSpec(1, 1, 16)
    inputs = [rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape) for _ in range(50)]
    start = time.perf_counter()
    coeffs = [forward_transform(f, grid) for f in inputs]
    trips = [inverse_transform(c) for c in coeffs]
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    assert max(float(np.abs(t - f).max()) for t, f in zip(trips, inputs)) <= 1e-12
    # the same double sum as a matrix product, on every input
    E = np.exp(-1j * np.outer(grid.frequencies(), grid.points()))
    for f, c in zip(inputs, coeffs):
        assert np.abs(c.to_dense() - E @ f @ E.T / grid.size ** 2).max() <= 1e-12
    # and as a literal loop on two of them
    for f, c in zip(inputs[:2], coeffs[:2]):
        ref = naive_dft(f, grid)
        assert max(abs(c[m] - v) for m, v in ref.items()) <= 1e-12


@pytest.mark.criterion(2)
def test_parseval_and_projection_algebra(rng):
    grid = GridSpec(1, 2, 4)
    f = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    c = forward_transform(f, grid)
    mean_sq = float(np.mean(np.abs(f) ** 2))
    assert abs(l2_norm(c) ** 2 - mean_sq) <= 1e-10 * mean_sq
    idx = EigenIndex.build(grid)
    shells = sum(l2_norm(project_full(c, a)) ** 2 for a in idx.full_values())
    assert abs(l2_norm(c) ** 2 - shells) <= 1e-10 * l2_norm(c) ** 2

    sparse = random_coeffs(grid, rng, density=0.2)
    for proj, values in ((project_G, idx.g_values()), (project_T, idx.t_values()),
                         (project_full, idx.full_values())):
        total = ModeCoeffs.zeros(grid)
        for a in values:
            p = proj(sparse, a)
            assert proj(p, a).equals(p)
            for b in values:
                if b != a:
                    assert proj(p, b).entries == {}
                    assert p.inner(proj(sparse, b)) == 0
            total = total + p
        assert total.equals(sparse)

    lattice = [(a, b) for a in range(-5, 6) for b in range(-5, 6) if a * a + b * b == 25]
    assert len(lattice) == 12
    assert EigenIndex.build(GridSpec(1, 2, 5)).d_G(25) == 12


@pytest.mark.criterion(3)
def test_classifier_recovery():
    start = time.perf_counter()
    lams = [lam for lam in EigenIndex.build(GridSpec(1, 2, 24)).g_values() if lam <= 24 ** 2]
    for s in (1, 2, 3):
        for h0 in (0.5, 1.5):
            C0 = 2.0
            est = decay_fit([(lam, C0 * math.exp(-h0 * (1 + lam) ** (1 / (2 * s)))) for lam in lams], s)
            assert est.holds
            assert abs(est.h - h0) <= 0.01 * h0
            assert abs(est.C - C0) <= 0.05 * C0
    for p in (1, 2, 3):
        poly = [(lam, (1 + lam) ** -p) for lam in lams]
        for s in (1, 2, 3):
            assert not decay_fit(poly, s).holds
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(4)
def test_symbol_identity_on_random_class_T(rng):
    cases = [(n, order) for n in (1, 2) for order in (1, 2)] * 5
    for n, order in cases:
        m = int(rng.integers(1, 3))
        P = random_class_T(rng, n, m, order)
        assert is_class_T(P).holds
        lam = 1 if m == 1 else int(rng.choice([1, 2]))
        samples = [(rng.uniform(0, 2 * np.pi, n), rng.normal(size=n)) for _ in range(3)]
        v = symbol_identity_check(P, lam, samples, rho=1e4, tol=1e-6)
        assert v.holds, (n, order, v.details)
        assert v.details["deviation"] <= 1e-6


@pytest.mark.criterion(4)
def test_symbol_identity_rejects_order_violation():
    dx = constant_operator(1, 1, {((0,), (1,)): 1.0})
    v = symbol_identity_check(dx, 1, [((0.3,), (1.0,)), ((2.0,), (-1.0,))], rho=1e4, tol=1e-6)
    assert not v.holds


@pytest.mark.criterion(5)
def test_commutation_with_partial_laplacian(rng):
    pairs = []
    for _ in range(100):
        n, m = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        P = random_class_T(rng, n, m, int(rng.integers(1, 3)))
        grid = GridSpec(n, m, 4)
        u = random_coeffs(grid, rng, density=0.3).restrict(2)
        pairs.append((P, ModeCoeffs(grid, dict(u.items()))))
    worst = 0.0
    for P, u in pairs:
        v = commutator_deltaG_check(P, [u], tol=1e-10)
        assert v.holds
        worst = max(worst, v.details["max_defect"])
    assert worst <= 1e-10
    u = random_coeffs(GridSpec(1, 1, 6), rng, density=0.5)
    bad = commutator_deltaG_check(sin_x_dt(1, 1), [u], tol=1e-10)
    assert not bad.holds and bad.details["max_defect"] > 1e-3


def _cone_instance(rng, s):
    """Cells ``A exp(-a w_mu - b w_lam) U`` with ``U`` uniform in [0.5, 1]."""
    A, a, b = rng.uniform(0.5, 3), rng.uniform(0.5, 2), rng.uniform(0.5, 2)
    idx = EigenIndex.build(GridSpec(1, 1, 12))
    p = 1 / (2 * s)
    cells = {(mu, lam): A * math.exp(-a * (1 + mu) ** p - b * (1 + lam) ** p) * rng.uniform(0.5, 1)
             for mu in idx.t_values() for lam in idx.g_values()}
    g_amp = A * math.sqrt(sum(math.exp(-2 * a * (1 + mu) ** p) for mu in idx.t_values()))
    return cells, GevreyEstimate.known(s, A, min(a, b)), GevreyEstimate.known(s, g_amp, b)


@pytest.mark.criterion(6)
def test_cone_inequalities_exhaustive():
    for theta in (0.1, 0.5, 0.9):
        v = check_cone_inequalities(GridSpec(1, 1, 24), theta)
        assert v.holds and v.details["cells"] == 25 * 25


@pytest.mark.criterion(6)
def test_combined_bound_dominates(rng):
    from gevrey_spectral.cone import g_shells_from_cells, split_cells
    for trial in range(10):
        s = (1, 2)[trial % 2]
        theta = (0.1, 0.5, 0.9)[trial % 3]
        cells, in_cone, g_shell = _cone_instance(rng, s)
        inside, _ = split_cells(cells, theta)
        assert validate_bound(inside, in_cone).holds  # first hypothesis
        for lam, nrm in g_shells_from_cells(cells):  # second hypothesis
            assert nrm <= g_shell.bound(lam) * (1 + 1e-12)
        est = combine(in_cone, g_shell, theta, s)
        assert est.holds
        assert est.h == pytest.approx(min(in_cone.h, g_shell.h * (theta / 2) ** (1 / (2 * s))))
        assert validate_bound(cells, est).holds


@pytest.mark.criterion(7)
def test_gevrey_vector_equivalence(rng):
    grid = GridSpec(1, 1, 32)
    for trial in range(10):
        s = (1, 2)[trial % 2]
        h0 = 1 + 2 * trial / 9
        u = gevrey_g(GridSpec(1, 1, 32), rng.uniform(0.5, 2), h0, s, rng).filter(lambda j, k: j == (0,))
        u = ModeCoeffs(grid, dict(u.items()))
        fit = gevrey_vector_fit(u, s, 30)
        assert fit.holds
        bound = vector_to_exponential(fit)
        assert bound.valid_on_data
        h1 = bound.estimate.h
        assert max(h1, h0) / min(h1, h0) < 4


@pytest.mark.criterion(8)
def test_diophantine_witness():
    start = time.perf_counter()
    w = make_liouville([2, 4, 16, 65536])
    assert w.certify().holds
    ap = w.approximants[1]
    assert ap.q == 2 ** 4
    assert abs(w.a * ap.q - ap.p) <= Fraction(1, 2 ** 11)

    grid = GridSpec(1, 1, 65536)
    u, report = witness_distribution(w, grid, s=1.0)
    assert report["all_certified"]
    assert len(report["modes"]) == len(w.approximants)
    for (mode, v), row in zip(sorted(u.items(), key=lambda t: t[0][1]), report["modes"]):
        assert v == 1.0
        assert row["Lu_log2_abs"] <= row["bound_log2"]

    liouville = power_bound_fit(witness_multiplier_table(w, 32), (8, 16, 32))
    assert not liouville.verdict.holds
    assert any(b - a >= 0.2 for a, b in zip(liouville.exponents, liouville.exponents[1:]))
    sqrt2 = power_bound_fit(multiplier_table(flow_operator(math.sqrt(2)), GridSpec(1, 1, 32)), (8, 16, 32))
    assert sqrt2.verdict.holds
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion(9)
def test_solver_elliptic_roundtrip(rng):
    P = laplacian(1, 1, 1.0)
    grid = GridSpec(1, 1, 16)
    for _ in range(20):
        f = gevrey_full(grid, rng.uniform(0.5, 2), rng.uniform(0.5, 2), 1, rng)
        rep = solve(f, P, s=1.0)
        assert l2_norm(apply(P, rep.u) - f) <= 1e-10 * l2_norm(f)
        assert rep.input_class.holds
        assert rep.output_class.h >= rep.input_class.h


@pytest.mark.criterion(9)
def test_solver_compatibility_failure(rng):
    grid = GridSpec(1, 1, 8)
    f = gevrey_full(grid, 1.0, 1.0, 1, rng).filter(lambda j, k: j != (0,)) + ModeCoeffs.single(grid, (0,), (0,), 1.0)
    dt = InvariantOperator(1, 1, {(0,): TOperator.partial(1, 0)})
    with pytest.raises(IncompatibleDataError) as info:
        solve(f, dt)
    assert info.value.modes == [((0,), (0,))]


@pytest.mark.criterion(9)
def test_reconstruction_tails_below_bound(rng):
    u = gevrey_g(GridSpec(1, 1, 12), 1.5, 1.0, 1, rng)
    steps = truncated_reconstruction(u, [0, 1, 4, 9, 25, 64, 100, 144])
    assert all(st.bound is not None for st in steps)
    for st in steps:
        assert st.within_bound, (st.nu, st.tail, st.bound)
