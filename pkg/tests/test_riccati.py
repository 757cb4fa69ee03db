import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhlab.errors import NotSubcritical, ValidationError
from dhlab.model import REFERENCE_DIFFUSION, REFERENCE_DRIFT, State, stationary_mean, validate
from dhlab.riccati import (
    TransformArg,
    cir_riccati_closed_form,
    cir_stationary_laplace,
    decay_bounds,
    ergodic_average,
    integrate_riccati,
    riccati_rhs,
    simpson,
    solve_riccati,
    stationary_transform,
    transform_gradient,
)
from dhlab.sim import TimeGrid, simulate_path


def test_rhs_examples(model):
    d, s = model.drift, model.diffusion
    np.testing.assert_array_equal(riccati_rhs((0, 0), 0.7, TransformArg(1, 1, 0), model), [0, 0])
    got = riccati_rhs((0, 0), 0.0, TransformArg(0, 0, 1), model)
    np.testing.assert_allclose(got, [-1j * d.kappa1 - s.sigma21**2 / 2, -1j * d.kappa2 - s.sigma22**2 / 2])


@given(st.complex_numbers(max_magnitude=5), st.floats(0, 10))
def test_rhs_decoupled_second_component(k, t):
    m = validate(REFERENCE_DRIFT.replace(b21=0.0), REFERENCE_DIFFUSION)
    got = riccati_rhs((0.3, k), t, TransformArg(0, 0, 0), m)[1]
    expect = REFERENCE_DIFFUSION.sigma12**2 / 2 * k * k - REFERENCE_DRIFT.b22 * k
    assert abs(got - expect) < 1e-12


def test_simpson_exact_on_cubics():
    h = 0.25
    t = np.arange(9) * h
    assert simpson(t**3, h) == pytest.approx(2.0**4 / 4, rel=1e-14)
    with pytest.raises(ValueError):
        simpson(np.ones(4), h)


def test_zero_argument_gives_zero_solution(model):
    sol = solve_riccati(TransformArg(0, 0, 0), model)
    assert np.all(sol.k == 0) and sol.t_trunc == 0 and sol.tail_bound == 0
    assert stationary_transform(TransformArg(0, 0, 0), model).value == 1


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_first_component_matches_cir_riccati(decoupled, lam):
    sol = solve_riccati(TransformArg(lam, 0, 0), decoupled, tol=1e-10)
    exact = cir_riccati_closed_form(sol.times, lam, decoupled.drift.b11, decoupled.diffusion.sigma11)
    assert np.abs(sol.k[:, 0] - exact).max() < 1e-10
    assert np.all(sol.k[:, 1] == 0)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_transform_matches_gamma_laplace(decoupled, lam):
    d, s = decoupled.drift, decoupled.diffusion
    res = stationary_transform(TransformArg(lam, 0, 0), decoupled, tol=1e-10)
    oracle = cir_stationary_laplace(lam, d.a1, d.b11, s.sigma11)
    assert abs(res.value - oracle) / oracle < 1e-8
    assert abs(res.value - oracle) <= res.error_bound + 1e-15


def test_cir_laplace_examples():
    assert cir_stationary_laplace(0.0, 1, 1, 0.3) == 1.0
    assert cir_stationary_laplace(1.0, 1, 1, math.sqrt(2)) == pytest.approx(0.5, rel=1e-15)
    with pytest.raises(ValidationError):
        cir_stationary_laplace(-1.0, 1, 1, 1)


def test_gradient_at_origin_is_mean(model):
    grad = transform_gradient(model)
    mean = stationary_mean(model)
    np.testing.assert_allclose(grad, -mean, atol=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(-6, 6))
def test_modulus_at_most_one(model, l1, l2, mu):
    res = stationary_transform(TransformArg(l1, l2, mu), model, tol=1e-8)
    assert abs(res.value) <= 1 + res.error_bound
    if max(l1, l2, abs(mu)) > 0.05:
        assert abs(res.value) < 1


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(-6, 6))
def test_half_plane_and_decay_certificates(model, l1, l2, mu):
    arg = TransformArg(l1, l2, mu)
    sol = solve_riccati(arg, model, tol=1e-8)
    b = sol.bounds
    assert np.all(sol.k.real <= 1e-12)
    assert np.all(np.abs(sol.k[:, 1]) <= b.c1 * np.exp(-b.c2 * sol.times) + 1e-12)
    assert np.all(np.abs(sol.k[:, 0]) <= b.c9 * np.exp(-b.r1 * sol.times) + 1e-12)
    assert sol.tail_bound <= 1e-8 / 2 * (1 + 1e-9)


def test_decay_constants_reference_set(model):
    b = decay_bounds(TransformArg(1.0, 2.0, 3.0), model)
    assert b.c2 == min(model.drift.theta, model.drift.b22 / 2)
    # c3 = |u2| + |kappa2 mu| / |b22 - theta|
    assert b.c3 == pytest.approx(2.0 + 0.5 * 3.0 / 1.0)
    assert b.r1 == min(b.c2, model.drift.b11)


def test_coincident_branch_constant():
    m = validate(REFERENCE_DRIFT.replace(b22=2.0, theta=2.0), REFERENCE_DIFFUSION)
    b = decay_bounds(TransformArg(0.0, 1.0, 1.0), m)
    assert b.c3 == pytest.approx(1.0 + 0.5 * 2 / (math.e * 2.0))
    sol = solve_riccati(TransformArg(0.0, 1.0, 1.0), m, tol=1e-8)
    assert sol.steps > 0


def test_semigroup_property(model):
    arg = TransformArg(0.7, 1.3, 2.0)
    tol = 1e-10
    t, s, n = 1.5, 2.0, 1400
    times, full = integrate_riccati(model, arg.mu, (-arg.lambda1, -arg.lambda2), t + s, n)
    k_t = full[round(n * t / (t + s))]
    damped = arg.mu * math.exp(-model.drift.theta * t)
    _, rest = integrate_riccati(model, damped, k_t, s, round(n * s / (t + s)))
    assert np.abs(rest[-1] - full[-1]).max() < 10 * tol


def test_tail_certificate_is_honest(model):
    arg = TransformArg(0.5, 0.5, 1.5)
    res = stationary_transform(arg, model, tol=1e-6)
    # integrate twice as far with the same accuracy target
    times, k = integrate_riccati(model, arg.mu, (-0.5, -0.5), 2 * res.t_trunc, 2 * res.solution.steps)
    longer = np.exp(np.array([model.drift.a1, model.drift.a2]) @ simpson(k, times[1]) + 1j * arg.mu * model.drift.m / model.drift.theta)
    assert abs(longer - res.value) < res.error_bound


def test_requires_subcritical():
    m = validate(REFERENCE_DRIFT.replace(b11=0.0), REFERENCE_DIFFUSION)
    with pytest.raises(NotSubcritical):
        stationary_transform(TransformArg(1, 0, 0), m)


def test_transform_arg_validation():
    with pytest.raises(ValidationError):
        TransformArg(-0.1, 0, 0)


def test_ergodic_average_constant_and_callables(path200):
    assert ergodic_average(path200, lambda z: 2.5) == pytest.approx(2.5, rel=1e-14)
    a = ergodic_average(path200, lambda z: z[:, 0])
    b = ergodic_average(path200, lambda z: z.y1 if isinstance(z, State) else z.y1)
    assert a == pytest.approx(b, rel=1e-14)


def test_ergodic_average_near_stationary_mean(model, z0):
    p = simulate_path(model, z0, TimeGrid(500.0, 0.1), seed=21)
    avg = [ergodic_average(p, lambda z, k=k: z[:, k]) for k in range(3)]
    np.testing.assert_allclose(avg, stationary_mean(model), atol=0.05)
