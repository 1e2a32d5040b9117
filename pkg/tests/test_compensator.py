import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msmkp.compensator import Compensator, run_compensation
from msmkp.hysteresis import KpModel, KpOperator
from msmkp.simulate import ReferenceSpec, make_reference
from msmkp.timeseries import TimeSeries

from conftest import random_model

H = 1 / 2000


def identity_model(gain=1.0):
    return KpModel([KpOperator(0, 0, 1e6, gain)], [1.0])


def constant(value, n, h=H):
    return TimeSeries(h, {"reference": np.full(n, float(value))})


# ---- examples

def test_identity_inversion():
    c = Compensator(identity_model(), 2000)
    for _ in range(50):
        c.step(0.5, H)
    assert c.u == pytest.approx(0.5, abs=1e-15)
    assert abs(0.5 - c.y_hat) < 1e-15


def test_play_slot_drift_is_linear():
    model = KpModel([KpOperator(0, 4, 10)], [1.0])  # slot [-2, 2] around p = 0
    c = Compensator(model, 100)
    us = [c.step(0.3, H) for _ in range(40)]
    np.testing.assert_allclose(np.diff(us), H * 100 * 0.3, rtol=1e-12)
    assert c.model.tangent(c._applied).gain == 0


def test_slope_equilibrium():
    # one saturated operator contributes the 0.2 bias, the other a 0.5 slope
    model = KpModel([KpOperator(0, 0, 0.2), KpOperator(0, 0, 100, 0.5)], [1.0, 1.0])
    model.reset([0.2, 0.0])
    c = Compensator(model, 1000)
    c.reset(None, 0.5)
    for _ in range(2000):
        c.step(0.7, H)
    assert c.u == pytest.approx(1.0, abs=1e-12)


def test_reset_virgin_and_replay():
    model = random_model(np.random.default_rng(3))
    c = Compensator(model, 2000)
    ref = np.sin(np.linspace(0, 6, 300)) * 0.5 * model.bound
    c.reset(0.0, 0.0)
    assert c.y_hat == 0.0
    first = [c.step(r, H) for r in ref]
    c.reset(0.0, 0.0)
    assert [c.step(r, H) for r in ref] == first


def test_reset_positive_saturation_decreases_u():
    model = KpModel([KpOperator(0, 0.5, 1.0)], [1.0])
    c = Compensator(model, 2000)
    c.reset(10.0, 2.0)
    assert c.model.output == 1.0
    u = [c.step(0.2, H) for _ in range(3)]
    assert u[0] < 2.0 and u[1] < u[0] and u[2] < u[1]


def test_reset_rejects_nonfinite():
    c = Compensator(identity_model(), 1)
    with pytest.raises(ValueError):
        c.reset(0.0, math.nan)
    with pytest.raises(ValueError):
        c.step(math.inf, H)
    with pytest.raises(ValueError):
        Compensator(identity_model(), 0)


def test_internal_model_is_private():
    external = identity_model()
    c = Compensator(external, 2000)
    external.apply(5.0)
    assert c.model.output == 0.0
    c.step(1.0, H)
    assert external.output == 5.0


def test_u_limits():
    c = Compensator(identity_model(), 2000, u_limits=(0.0, 1.0))
    for _ in range(100):
        c.step(3.0, H)
    assert c.u == 1.0
    with pytest.raises(ValueError):
        Compensator(identity_model(), 1, u_limits=(1.0, 0.0))


def test_zero_reference_zero_output():
    # zero shifts, so H(0) = 0 from the zero state
    model = KpModel([KpOperator(0, w, 1.0) for w in (0, 0.5, 1.5)], [0.3, 0.5, 0.2])
    ts = run_compensation(model, 2000, constant(0.0, 500), y0=0.0)
    assert not np.any(ts["u"])
    assert ts.names == ["y_star", "y_hat", "u", "error"]


def test_unreachable_reference_flagged(fixture_model):
    ts = run_compensation(fixture_model, 2000, constant(1.2 * fixture_model.bound, 6000))
    assert ts.metadata["unreachable"] is True
    assert ts["u"][-1] > ts["u"][-2] > ts["u"][0]  # keeps ramping
    assert ts.metadata["stall_time"] == pytest.approx(1.0, abs=0.01)


def test_reachable_reference_not_flagged(fixture_model):
    ts = run_compensation(fixture_model, 2000, constant(0.5, 6000))
    assert ts.metadata["unreachable"] is False
    assert abs(ts["error"][-1]) < 1e-12


def test_multi_amplitude_sine_tracking(fixture_model):
    spec = ReferenceSpec("sine", frequency=0.1, amplitudes=(0.8, 0.4, 0.6))
    ts = run_compensation(fixture_model, 2000, make_reference(spec, 30, 2000))
    span = 2 * fixture_model.bound
    assert np.max(np.abs(ts["error"][5000:])) <= 0.01 * span


# ---- properties

@settings(max_examples=1000, derandomize=True, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.98), st.booleans())
def test_euler_stability_boundary(seed, frac, unstable):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    ops = [KpOperator(rng.uniform(-1, 1), 0.0, 1e12, rng.uniform(0.2, 3)) for _ in range(n)]
    model = KpModel(ops, rng.uniform(0.2, 2, n))
    g = rng.uniform(10, 5000)
    gamma_tot = model.max_gain
    c = Compensator(model, g)
    # all operators sit on their slopes, so the error obeys e <- (1 - h g gamma) e
    factor = 2 * (1 + frac) if unstable else 2 * (1 - frac)
    h = factor / (g * gamma_tot)
    assert c.max_stable_step() == pytest.approx(2 / (g * gamma_tot))
    target = model.output + 1.0
    errs = []
    for _ in range(12):
        c.step(target, h)
        errs.append(target - c.y_hat)
    assert c.euler_factor(h) == pytest.approx(factor, rel=1e-12)
    ratio = abs(errs[-1]) / abs(errs[0])
    if unstable:
        assert ratio > 1
    else:
        assert ratio < 1


def test_euler_boundary_exactly_two():
    c = Compensator(identity_model(), 1000)
    h = 2 / 1000
    errs = []
    for _ in range(20):
        c.step(1.0, h)
        errs.append(1.0 - c.y_hat)
    assert np.allclose(np.abs(errs), 1.0)  # neutral oscillation at the boundary


@settings(max_examples=200, derandomize=True, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_monotone_transient_in_slope_regime(seed, factor):
    rng = np.random.default_rng(seed)
    model = KpModel([KpOperator(rng.uniform(-1, 1), 0.0, 1e9, rng.uniform(0.2, 3))],
                    [rng.uniform(0.2, 2)])
    g = 2000.0
    h = factor / (g * model.max_gain)
    c = Compensator(model, g)
    target = rng.uniform(-5, 5)
    errs = []
    for _ in range(30):
        c.step(target, h)
        errs.append(target - c.y_hat)
    errs = np.array(errs)
    nz = errs[np.abs(errs) > 1e-12]
    assert np.all(np.sign(nz) == np.sign(nz[0]))
    assert np.all(np.abs(np.diff(nz)) >= 0) and np.all(np.abs(nz[1:]) <= np.abs(nz[:-1]))


@settings(max_examples=200, derandomize=True, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-0.95, 0.95))
def test_steady_state_convergence(seed, level):
    model = random_model(np.random.default_rng(seed))
    target = level * model.bound
    g = 500.0
    h = 0.9 / (g * model.max_gain)
    ts = run_compensation(model, g, constant(target, 20000, h))
    range_ = 2 * model.bound
    assert abs(ts["error"][-1]) < 1e-6 * range_


@pytest.mark.parametrize("eps", [-0.1, -0.05, 0.05, 0.1])
def test_inversion_with_perturbed_plant(fixture_model, eps):
    levels = (0.3, -0.4, 0.7, 0.0)
    ref = make_reference(ReferenceSpec("levels", levels=levels, hold=2.0), 8, 2000)
    ts = run_compensation(fixture_model, 2000, ref)
    exact = fixture_model.copy()
    plant = fixture_model.scaled(1 + eps)
    y_exact = exact.simulate(ts["u"])
    y_plant = plant.simulate(ts["u"])
    ends = [3999, 7999, 11999, 15999]
    np.testing.assert_allclose(y_exact[ends], levels, atol=1e-9)
    # a uniform weight error maps into a proportional steady-state residual
    np.testing.assert_allclose(y_plant[ends] - np.array(levels), eps * np.array(levels),
                               atol=1e-9)
