import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from dhlab.errors import (
    CorrelationOutOfRange,
    CrossFeedPositive,
    DegenerateDiffusion,
    NegativeLevel,
    NotSubcritical,
    ValidationError,
)
from dhlab.bench import growth_slopes
from dhlab.model import (
    REFERENCE_DIFFUSION,
    REFERENCE_DRIFT,
    TAU_NAMES,
    DriftParams,
    Growth,
    Regime,
    classify,
    mean_trajectory,
    stationary_mean,
    validate,
)


def speeds(b11, b22, theta, base=REFERENCE_DRIFT):
    return base.replace(b11=b11, b22=b22, theta=theta)


# -- validation --------------------------------------------------------------


def test_reference_set_validates_with_feller_flags(model):
    assert model.feller_y1 and model.feller_y2 and model.feller_strict
    assert model.ergodicity_conditions


@pytest.mark.parametrize(
    "change, error",
    [
        (dict(a1=-0.1), NegativeLevel),
        (dict(a2=-1.0), NegativeLevel),
        (dict(b21=0.1), CrossFeedPositive),
    ],
)
def test_drift_rejections(change, error):
    with pytest.raises(error):
        validate(REFERENCE_DRIFT.replace(**change), REFERENCE_DIFFUSION)


@pytest.mark.parametrize(
    "change, error",
    [
        (dict(sigma11=0.0), DegenerateDiffusion),
        (dict(sigma22=-0.1), DegenerateDiffusion),
        (dict(rho11=1.01), CorrelationOutOfRange),
        (dict(rho22=-1.5), CorrelationOutOfRange),
    ],
)
def test_diffusion_rejections(change, error):
    with pytest.raises(error):
        validate(REFERENCE_DRIFT, REFERENCE_DIFFUSION.replace(**change))


def test_validation_errors_are_value_errors():
    with pytest.raises(ValueError):
        validate(REFERENCE_DRIFT.replace(b21=0.5), REFERENCE_DIFFUSION)
    with pytest.raises(ValidationError):
        validate(REFERENCE_DRIFT.replace(m=float("nan")), REFERENCE_DIFFUSION)


def test_feller_flags_boundary():
    # a1 exactly sigma11^2 / 2: weak flag holds, strict does not
    m = validate(REFERENCE_DRIFT.replace(a1=0.125), REFERENCE_DIFFUSION.replace(sigma11=0.5))
    assert m.feller_y1 and not m.feller_strict
    m = validate(REFERENCE_DRIFT.replace(a2=0.001), REFERENCE_DIFFUSION)
    assert not m.feller_y2


@given(st.floats(-1, 1))
def test_rhobar_identity(rho):
    d = REFERENCE_DIFFUSION.replace(rho11=rho, rho22=rho)
    assert abs(d.rho11**2 + d.rhobar11**2 - 1) < 1e-12
    assert abs(d.rho22**2 + d.rhobar22**2 - 1) < 1e-12


def test_tau_vector_order():
    tau = REFERENCE_DRIFT.as_vector()
    assert TAU_NAMES == ("a1", "b11", "a2", "b21", "b22", "m", "kappa1", "kappa2", "theta")
    assert list(tau) == [1, 1, 1, -0.5, 3, 1, 0.5, 0.5, 2]
    assert DriftParams.from_vector(tau) == REFERENCE_DRIFT


# -- classification ------------------------------------------------------------


def test_classify_reference_subcritical():
    label = classify(REFERENCE_DRIFT)
    assert label.tag is Regime.SUBCRITICAL
    assert all(g.kind == "bounded" for g in label.growth)


def test_classify_triple_zero_cesaro_cascade():
    label = classify(speeds(0, 0, 0))
    assert label.tag is Regime.CRITICAL
    assert [g.degree for g in label.growth] == [1, 2, 3]
    assert all(g.kind == "polynomial" for g in label.growth)


def test_classify_supercritical_rate():
    label = classify(speeds(-0.2, 3, 2))
    assert label.tag is Regime.SUPERCRITICAL
    assert label.growth.y1 == Growth(0.2, 0)
    assert label.growth.y1.kind == "exponential"


@pytest.mark.parametrize(
    "sp, degrees",
    [
        ((0, 3, 2), (1, 1, 1)),
        ((0, 0, 2), (1, 2, 2)),
        ((0, 3, 0), (1, 1, 2)),
        ((1, 0, 2), (0, 1, 1)),
        ((1, 3, 0), (0, 0, 1)),
        ((1, 0, 0), (0, 1, 2)),
        ((0, 0, 0), (1, 2, 3)),
    ],
)
def test_critical_case_table(sp, degrees):
    label = classify(speeds(*sp))
    assert label.tag is Regime.CRITICAL
    assert tuple(g.degree for g in label.growth) == degrees
    assert all(g.rate == 0 for g in label.growth)


def test_zero_coupling_breaks_cascade():
    d = speeds(0, 0, 0).replace(b21=0.0, kappa1=0.0, kappa2=0.0)
    assert [g.degree for g in classify(d).growth] == [1, 1, 1]


def test_exponential_resonance_and_domination():
    # equal negative speeds: extra factor t
    g = classify(speeds(-1, -1, 2)).growth
    assert g.y2 == Growth(1.0, 1)
    # faster second factor dominates its own coordinate and the price
    g = classify(speeds(-0.5, -2, 2)).growth
    assert g.y1 == Growth(0.5, 0) and g.y2 == Growth(2.0, 0) and g.x == Growth(2.0, 0)
    # slower second factor inherits the first factor's rate
    g = classify(speeds(-2, -0.5, 2)).growth
    assert g.y2 == Growth(2.0, 0)


@settings(max_examples=60)
@given(
    st.tuples(*[st.floats(-2, 2)] * 3),
    st.floats(0.1, 10),
    st.floats(0.1, 10),
    st.floats(0.1, 10),
)
def test_classify_scale_invariant(sp, ca, cm, ck):
    base = speeds(*sp)
    scaled = base.replace(a1=base.a1 * ca, a2=base.a2 * ca, m=base.m * cm, kappa1=base.kappa1 * ck, kappa2=base.kappa2 * ck)
    assert classify(base) == classify(scaled)


@settings(max_examples=60)
@given(st.tuples(*[st.sampled_from([-1.0, -0.3, 0.0, 0.7, 2.0])] * 3))
def test_tag_sign_rules(sp):
    tag = classify(speeds(*sp)).tag
    lo = min(sp)
    if lo > 0:
        assert tag is Regime.SUBCRITICAL
    elif lo == 0:
        assert tag is Regime.CRITICAL
    else:
        assert tag is Regime.SUPERCRITICAL


# -- first moments ---------------------------------------------------------------


def test_mean_y1_closed_forms():
    t = np.linspace(0, 10, 11)
    e = mean_trajectory(REFERENCE_DRIFT, (0.5, 0.5, 0.0), t)
    np.testing.assert_allclose(e[:, 0], 1 + (0.5 - 1) * np.exp(-t), rtol=0, atol=1e-14)
    e = mean_trajectory(speeds(0, 3, 2), (0.5, 0.5, 0.0), t)
    np.testing.assert_allclose(e[:, 0], 0.5 + t, rtol=1e-14)


def _ode_oracle(drift, z0, t):
    a, c = drift.mean_matrix(), drift.mean_source()
    sol = solve_ivp(lambda s, e: c - a @ e, (0, t[-1]), z0, t_eval=t, method="DOP853", rtol=1e-12, atol=1e-12)
    return sol.y.T


@pytest.mark.parametrize(
    "sp", [(1, 3, 2), (0, 3, 2), (0, 0, 0), (-0.3, 3, 2), (1, 1, 2), (2, 2, 2), (1, 3, 3), (0.5, 1.5, 0.5)]
)
def test_mean_trajectory_matches_ode_solver(sp):
    d = speeds(*sp)
    t = np.linspace(0, 8, 41)
    np.testing.assert_allclose(mean_trajectory(d, (0.5, 0.5, 0.1), t), _ode_oracle(d, (0.5, 0.5, 0.1), t), rtol=1e-8, atol=1e-9)


def test_coincident_branch_is_continuous():
    t = np.linspace(0, 5, 21)
    exact = mean_trajectory(speeds(1, 2, 2), (0.5, 0.5, 0.0), t)
    near = mean_trajectory(speeds(1, 2, 2 + 1e-6), (0.5, 0.5, 0.0), t)
    np.testing.assert_allclose(exact, near, atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.0, 3), st.floats(0.05, 2), st.floats(0.0, 2))
def test_decoupled_first_coordinate_is_cir_mean(b11, a1, y0, t_end):
    d = REFERENCE_DRIFT.replace(b11=b11, a1=a1, b21=0.0, kappa1=0.0, kappa2=0.0)
    t = np.array([0.0, t_end])
    e = mean_trajectory(d, (y0, 0.5, 0.0), t)
    cir = a1 / b11 + (y0 - a1 / b11) * np.exp(-b11 * t)
    np.testing.assert_allclose(e[:, 0], cir, rtol=1e-12, atol=1e-12)


def test_convergence_rate_to_stationary_mean():
    t = np.linspace(5, 15, 101)
    e = mean_trajectory(REFERENCE_DRIFT, (0.5, 0.5, 0.0), t)
    resid = np.abs(e - stationary_mean(REFERENCE_DRIFT)).max(axis=1)
    slope = np.polyfit(t, np.log(resid), 1)[0]
    assert abs(-slope - min(REFERENCE_DRIFT.speeds)) < 0.05


@pytest.mark.parametrize("sp", [(0, 3, 2), (0, 0, 2), (0, 0, 0), (1, 0, 0), (-1, 3, 2), (-0.5, -0.5, 2), (1, -0.7, 2)])
def test_growth_descriptor_consistent_with_trajectory(sp):
    d = speeds(*sp)
    label = classify(d)
    T = 2000.0 if label.tag is Regime.CRITICAL else 300.0
    t = np.linspace(0, T, 4001)
    e = mean_trajectory(d, (0.5, 0.5, 0.0), t)
    for k, g in enumerate(label.growth):
        s = growth_slopes(t, e[:, k], T / 2, T)
        if g.kind == "polynomial":
            assert abs(s["loglog"] - g.degree) < 0.1 * g.degree
        elif g.kind == "exponential":
            assert abs(s["log"] - g.rate) < 0.1 * g.rate


def test_stationary_mean_reference_set():
    np.testing.assert_allclose(stationary_mean(REFERENCE_DRIFT), [1.0, 0.5, 0.125], rtol=1e-15)


def test_stationary_mean_zero_level_and_symmetry():
    assert stationary_mean(REFERENCE_DRIFT.replace(a1=0.0))[0] == 0.0
    sym = REFERENCE_DRIFT.replace(b21=0.0, a2=REFERENCE_DRIFT.a1, b22=REFERENCE_DRIFT.b11)
    y = stationary_mean(sym)
    assert y[0] == y[1]


def test_stationary_mean_is_fixed_point():
    e = mean_trajectory(REFERENCE_DRIFT, stationary_mean(REFERENCE_DRIFT), np.linspace(0, 10, 5))
    np.testing.assert_allclose(e, np.tile(stationary_mean(REFERENCE_DRIFT), (5, 1)), atol=1e-13)


@pytest.mark.parametrize("sp", [(0, 3, 2), (1, -1, 2), (1, 3, 0)])
def test_stationary_mean_requires_subcritical(sp):
    with pytest.raises(NotSubcritical):
        stationary_mean(speeds(*sp))
