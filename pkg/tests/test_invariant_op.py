import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_spectral.errors import OrderError, PreconditionError, TruncationError
from gevrey_spectral.invariant_op import (
    InvariantOperator,
    TCoeff,
    TOperator,
    apply,
    apply_with_overflow,
    build_sum_of_squares,
    commutator_deltaG_check,
    components_to_coeffs,
    constant_operator,
    ellipticity_check,
    g_components,
    hat_P_lambda,
    is_class_T,
    laplacian,
    operator_from_json,
    principal_symbol_P0,
    sin_x_dt,
    symbol_identity_check,
    vector_field,
)
from gevrey_spectral.spectral_core import GridSpec, ModeCoeffs, l2_norm, project_G
from synth import random_class_T, random_coeffs


def flow(a):
    return constant_operator(1, 1, {((1,), (0,)): 1.0, ((0,), (1,)): a})


def test_flow_multiplier_on_single_modes():
    grid = GridSpec(1, 1, 5)
    a = 0.7
    for j in range(-5, 6):
        for k in range(-5, 6):
            out = apply(flow(a), ModeCoeffs.single(grid, (j,), (k,)))
            assert out[((j,), (k,))] == pytest.approx(1j * (j + a * k), abs=1e-15)
            assert len(out) <= 1


def test_variable_coefficient_moves_mode():
    grid = GridSpec(1, 1, 5)
    P = InvariantOperator(1, 1, {(1,): TOperator(1, {(0,): TCoeff(1, {(1,): 1.0})})})
    out = apply(P, ModeCoeffs.single(grid, (2,), (3,), 0.5))
    assert out.support() == [((3,), (3,))]
    assert out[((3,), (3,))] == pytest.approx(3j * 0.5)


def test_overflow_is_counted_and_strict_mode_raises():
    grid = GridSpec(1, 1, 3)
    P = InvariantOperator(1, 1, {(0,): TOperator(1, {(0,): TCoeff(1, {(1,): 1.0})})})
    u = ModeCoeffs.single(grid, (3,), (0,))
    out, dropped = apply_with_overflow(P, u)
    assert dropped == pytest.approx(1.0) and len(out) == 0
    with pytest.raises(TruncationError):
        apply(P, u)


def test_order_bookkeeping_rejects_violation():
    with pytest.raises(OrderError):
        InvariantOperator(1, 1, {(1,): TOperator.partial(1, 0)}, r=1)
    P = random_class_T(np.random.default_rng(3), 2, 2, 2)
    assert all(op.order <= P.r - sum(alpha) for alpha, op in P.terms.items())


def test_flow_family_entries():
    a = 0.3
    fam = hat_P_lambda(flow(a), 4)
    assert fam.is_diagonal
    diag = fam.diagonal()
    assert set(diag) == {(-2,), (2,)}
    for k, op in diag.items():
        assert op.terms[(1,)].constant_value == 1.0
        assert op.terms[(0,)].constant_value == pytest.approx(1j * a * k[0])


def test_family_needs_eigenvalue():
    with pytest.raises(PreconditionError):
        hat_P_lambda(flow(1.0), 3)


def test_principal_symbols():
    dt = TOperator.partial(1, 0)
    as_P = lambda op: InvariantOperator(1, 1, {(0,): op})
    assert principal_symbol_P0(as_P(dt), [2.0]) == pytest.approx(2j)
    assert principal_symbol_P0(as_P(TOperator.partial(1, 0, 2, -1.0)), [3.0]) == pytest.approx(9.0)
    a = TCoeff(1, {(0,): 1.0, (1,): 0.5, (-1,): 0.5})  # 1 + cos t, equal to 2 at t = 0
    assert principal_symbol_P0(as_P(TOperator(1, {(1,): a})), [3.0], [0.0]) == pytest.approx(6j)


def test_symbol_identity_examples():
    samples = [((0.4,), (1.0,)), ((1.3,), (-2.0,))]
    for lam in (0, 1, 4, 9):
        v = symbol_identity_check(flow(1.7), lam, samples, rho=1e4, tol=1e-8)
        assert v.holds and v.details["deviation"] <= 1e-8
    dx = constant_operator(1, 1, {((0,), (1,)): 1.0})
    assert not symbol_identity_check(dx, 1, samples).holds
    assert symbol_identity_check(dx, 0, samples).holds


def test_vector_fields_and_class_T():
    a = TCoeff(1, {(0,): 2.0, (1,): 0.5})
    Y = vector_field(TOperator.partial(1, 0), [a])
    assert is_class_T(Y).holds
    dx = constant_operator(1, 1, {((0,), (1,)): 1.0})
    assert not is_class_T(dx).holds
    W3 = TOperator.constant(3, {(1, 0, 0): 1.0, (0, 1, 0): 2.0, (0, 0, 1): -0.5})
    assert not is_class_T(vector_field(W3, [1.0])).holds
    CR = TOperator.constant(2, {(1, 0): 1.0, (0, 1): 1j})
    assert ellipticity_check(CR).holds
    assert not ellipticity_check(TOperator.constant(2, {(1, 0): 1.0, (0, 1): 1.0})).holds


def test_sampled_ellipticity_for_second_order_variable_coefficients():
    lead = TCoeff(2, {(0, 0): 2.0, (1, 0): 0.3})
    ok = TOperator(2, {(2, 0): lead, (0, 2): lead})
    assert ellipticity_check(ok).holds
    vanishing = TCoeff(2, {(0, 0): 1.0, (1, 0): 0.5, (-1, 0): 0.5})  # 1 + cos t1 vanishes at pi
    assert not ellipticity_check(TOperator(2, {(2, 0): vanishing, (0, 2): vanishing})).holds


def test_commutator_examples(rng):
    inputs = [random_coeffs(GridSpec(1, 1, 5), rng, 0.4) for _ in range(3)]
    assert commutator_deltaG_check(laplacian(1, 1, 2.0), inputs).holds
    zero = InvariantOperator(1, 1, {})
    assert commutator_deltaG_check(zero, inputs).holds
    assert not commutator_deltaG_check(sin_x_dt(1, 1), inputs).holds


def test_sum_of_squares_expansion():
    Q = TOperator.partial(1, 0, 2, -1.0)
    P = build_sum_of_squares(Q, [(TOperator.zero(1), [1.0])], 1)
    a = 0.5
    P2 = build_sum_of_squares(Q, [(TOperator.partial(1, 0), [a])], 1)
    assert build_sum_of_squares(Q, [], 1).symbol((3,), (2,)) == pytest.approx(9.0)
    for j in range(-3, 4):
        for k in range(-3, 4):
            assert P.symbol((j,), (k,)) == pytest.approx(j * j + k * k)
            assert P2.symbol((j,), (k,)) == pytest.approx(j * j + (j + a * k) ** 2)


def test_operator_json_round_trip(rng):
    P = random_class_T(rng, 2, 1, 2)
    Q = operator_from_json(P.to_json())
    for j, k in (((1, 0), (2,)), ((-1, 3), (0,)), ((0, 0), (-1,))):
        assert Q.symbol(j, k) == pytest.approx(P.symbol(j, k))
    u = random_coeffs(GridSpec(2, 1, 3), rng, 0.3).restrict(2)
    u = ModeCoeffs(GridSpec(2, 1, 3), dict(u.items()))
    assert l2_norm(apply(P, u) - apply(Q, u)) <= 1e-12


@st.composite
def operator_and_input(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    n, m, order = draw(st.integers(1, 2)), draw(st.integers(1, 2)), draw(st.integers(1, 2))
    P = random_class_T(rng, n, m, order)
    grid = GridSpec(n, m, 4)
    u = ModeCoeffs(grid, dict(random_coeffs(GridSpec(n, m, 2), rng, 0.5).items()))
    return P, u, rng


@settings(max_examples=25, deadline=None)
@given(operator_and_input())
def test_linearity(case):
    P, u, rng = case
    v = ModeCoeffs(u.grid, {m: complex(rng.normal()) for m in u.support()[::2]})
    a, b = complex(rng.normal(), rng.normal()), complex(rng.normal())
    lhs = apply(P, u * a + v * b)
    rhs = apply(P, u) * a + apply(P, v) * b
    assert l2_norm(lhs - rhs) <= 1e-12 * max(1.0, l2_norm(lhs))


@settings(max_examples=25, deadline=None)
@given(operator_and_input(), st.integers(0, 8))
def test_shift_invariance_in_G(case, step):
    P, u, _ = case
    g = 2 * np.pi * step / u.grid.size
    shift = lambda c: ModeCoeffs(c.grid, {(j, k): v * np.exp(1j * g * sum(k)) for (j, k), v in c.items()})
    lhs, rhs = apply(P, shift(u)), shift(apply(P, u))
    assert l2_norm(lhs - rhs) <= 1e-13 * max(1.0, l2_norm(lhs))


@settings(max_examples=25, deadline=None)
@given(operator_and_input())
def test_family_agrees_with_projection_of_apply(case):
    P, u, _ = case
    Pu = apply(P, u, strict=False)
    for lam in (0, 1, 2):
        if P.m == 1 and lam == 2:
            continue
        fam = hat_P_lambda(P, lam, u.grid)
        out, _ = fam.apply(g_components(u, lam), u.grid.cutoff)
        got = components_to_coeffs(u.grid, out)
        assert l2_norm(got - project_G(Pu, lam)) <= 1e-12 * max(1.0, l2_norm(Pu))
