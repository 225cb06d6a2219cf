import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gevrey_spectral.errors import InsufficientDataError, ParameterError, PreconditionError
from gevrey_spectral.gevrey_analysis import (
    GevreyEstimate,
    apply_deltaG_power,
    classify_order,
    decay_fit,
    gevrey_vector_fit,
    vector_to_exponential,
)
from gevrey_spectral.spectral_core import GridSpec, ModeCoeffs, g_shell_norms, l2_norm
from gevrey_spectral.verdict import Status
from synth import gevrey_g, random_coeffs

LAMS = [k * k for k in range(33)]


def exp_shells(C, h, s, lams=LAMS):
    return [(lam, C * math.exp(-h * (1 + lam) ** (1 / (2 * s)))) for lam in lams]


def test_recovers_exact_constants():
    est = decay_fit(exp_shells(2.0, 1.5, 2), 2)
    assert est.holds
    assert est.C == pytest.approx(2.0, abs=1e-9)
    assert est.h == pytest.approx(1.5, abs=1e-9)


def test_polynomial_decay_rejected_and_rate_collapses():
    rates = []
    for cutoff in (8, 16, 32, 64):
        est = decay_fit([(k * k, (1 + k * k) ** -3.0) for k in range(cutoff + 1)], 1)
        assert est.verdict is Status.FAILS
        rates.append(est.h)
    assert all(b < a for a, b in zip(rates, rates[1:]))


def test_too_few_shells():
    with pytest.raises(InsufficientDataError):
        decay_fit([(0, 1.0), (1, 0.0)], 1)
    assert classify_order([(0, 0.0), (4, 0.0)], [1, 2]).order is None


def test_heavy_top_shell_is_inconclusive():
    shells = exp_shells(1.0, 1.0, 1, [0, 1, 4])[:2] + [(9, 5.0)]
    assert decay_fit(shells, 1).verdict is not Status.HOLDS
    slow = exp_shells(1.0, 0.1, 1, [0, 1, 4, 9])
    est = decay_fit(slow, 1)
    assert est.top_fraction > 0.01
    assert est.verdict is Status.INCONCLUSIVE


def test_classify_order_examples():
    assert classify_order(exp_shells(1.0, 2.0, 1), [1, 2, 3]).order == 1
    gev2 = exp_shells(1.0, 2.0, 2)
    res = classify_order(gev2, [1, 2, 3])
    assert res.order == 2
    assert res.estimates[0].verdict is Status.FAILS
    with pytest.raises(ParameterError):
        classify_order(gev2, [2, 1])


def test_estimate_json_round_trip():
    est = decay_fit(exp_shells(2.0, 1.5, 2), 2)
    assert GevreyEstimate.from_json(est.to_json()) == est


def test_deltaG_power_examples(rng):
    grid = GridSpec(1, 2, 3)
    u = ModeCoeffs.single(grid, (1,), (2, 0), 0.5)
    assert apply_deltaG_power(u, 0) is u
    assert apply_deltaG_power(u, 3)[((1,), (2, 0))] == pytest.approx(0.5 * 64)
    v = random_coeffs(grid, rng)
    for k in range(4):
        want = math.sqrt(sum(lam ** (2 * k) * n * n for lam, n in g_shell_norms(v)))
        assert l2_norm(apply_deltaG_power(v, k)) == pytest.approx(want, rel=1e-12)
    with pytest.raises(ParameterError):
        apply_deltaG_power(v, -1)


def test_factorial_bound_holds_against_direct_evaluation(rng):
    for s, h0 in ((1, 1.0), (2, 2.5)):
        u = gevrey_g(GridSpec(1, 1, 24), 1.0, h0, s, rng)
        fit = gevrey_vector_fit(u, s, 30)
        assert fit.holds
        shells = g_shell_norms(u)
        for k in range(31):
            direct = math.sqrt(sum(lam ** (2 * k) * n * n for lam, n in shells))
            if direct == 0:
                continue
            log_bound = math.log(fit.C) + k * math.log(fit.h) + 2 * s * math.lgamma(k + 1)
            assert math.log(direct) <= log_bound + 1e-9
        back = vector_to_exponential(fit)
        assert back.valid_on_data
        for lam, n in shells:
            assert n <= float(back.estimate.bound(lam)) * (1 + 1e-9)


def test_polynomial_data_fails_factorial_fit():
    grid = GridSpec(1, 1, 32)
    u = ModeCoeffs(grid, {((0,), (k,)): (1 + k * k) ** -2.0 for k in range(0, 33)})
    fit = gevrey_vector_fit(u, 1, 30)
    assert fit.verdict is Status.FAILS
    with pytest.raises(PreconditionError):
        vector_to_exponential(fit)


def test_trivial_vector_cases():
    grid = GridSpec(1, 1, 8)
    zero = gevrey_vector_fit(ModeCoeffs.zeros(grid), 1, 5)
    assert zero.holds and vector_to_exponential(zero).estimate.C == 0.0
    single = gevrey_vector_fit(ModeCoeffs.single(grid, (0,), (3,), 2.0), 1, 5)
    assert single.holds and vector_to_exponential(single).valid_on_data


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(1.0, 3.0), st.floats(1e-3, 1e3))
def test_scaling_covariance(h, s, a):
    shells = exp_shells(1.0, h, s)
    base, scaled = decay_fit(shells, s), decay_fit([(lam, a * n) for lam, n in shells], s)
    assert scaled.verdict is base.verdict
    assert scaled.h == pytest.approx(base.h, rel=1e-9, abs=1e-9)
    assert scaled.C == pytest.approx(a * base.C, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 3.0), st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.floats(0.0, 3.0))
def test_order_monotonicity_on_exact_data(h, s, ds):
    shells = exp_shells(1.0, h, s)
    est = decay_fit(shells, s)
    assume(est.holds)
    assert decay_fit(shells, s + ds).holds


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2 ** 32 - 1))
def test_deltaG_power_composes(k, seed):
    u = random_coeffs(GridSpec(1, 2, 2), np.random.default_rng(seed), 0.5)
    assert apply_deltaG_power(u, k + 1).equals(apply_deltaG_power(apply_deltaG_power(u, k), 1))
