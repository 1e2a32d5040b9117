import math

import numpy as np
import pytest
from scipy.integrate import quad

from msmkp.feedback import (DESIGN_KI, DESIGN_KP, NoCrossoverError, PiController, open_loop,
                            pi_transfer, shape, stability_margins)
from msmkp.lti import TransferFunction, lowpass_filter, plant_identified
from msmkp.simulate import ReferenceSpec, ScenarioConfig, run_scenario

H = 1 / 2000


def design_loop():
    return open_loop(DESIGN_KP, DESIGN_KI, plant_identified(), lowpass_filter(10))


# ---- PI law

def test_pi_ramp():
    pi = PiController(2.0, 3.0, H)
    out = [pi.step(0.5) for _ in range(10)]
    k = np.arange(1, 11)
    np.testing.assert_allclose(out, 2.0 * 0.5 + 3.0 * 0.5 * k * H, rtol=1e-14)


def test_pi_zero():
    assert PiController(1, 1, H).step(0.0) == 0.0


def test_pi_design_gains_first_sample():
    # 1.13e4 * 1e-6 + 3.06e5 * 1e-6 / 2000
    assert PiController(DESIGN_KP, DESIGN_KI, H).step(1e-6) == pytest.approx(0.011453, rel=1e-12)


@pytest.mark.parametrize("kp, ki, h", [(0, 1, H), (1, 0, H), (1, 1, 0), (-1, 1, H)])
def test_pi_validation(kp, ki, h):
    with pytest.raises(ValueError):
        PiController(kp, ki, h)


def test_pi_rejects_nonfinite():
    with pytest.raises(ValueError):
        PiController(1, 1, H).step(math.nan)


def test_pi_matches_continuous_integral(rng):
    levels = rng.normal(size=40)
    pi = PiController(1.7, 250.0, H)
    out = [pi.step(e) for e in levels]

    def e(t):
        return levels[min(int(t / H), len(levels) - 1)]

    for k in range(len(levels)):
        integral = sum(quad(e, j * H, (j + 1) * H, points=[(j + 0.5) * H])[0] for j in range(k + 1))
        assert out[k] == pytest.approx(1.7 * levels[k] + 250.0 * integral, rel=1e-12, abs=1e-12)


def test_pi_clamp_and_conditional_integration():
    pi = PiController(1.0, 100.0, H, u_limits=(-1, 1))
    for _ in range(100):
        assert pi.step(5.0) == 1.0
    assert pi.saturated
    assert pi.integ == 0.0  # frozen from the first clamped sample
    # an error of opposite sign still integrates
    pi.step(-0.5)
    assert pi.integ == pytest.approx(-0.5 * H)


def test_pi_without_anti_windup_keeps_integrating():
    pi = PiController(1.0, 100.0, H, u_limits=(-1, 1), anti_windup=False)
    for _ in range(100):
        pi.step(5.0)
    assert pi.integ == pytest.approx(100 * 5.0 * H)


def test_anti_windup_reduces_overshoot():
    # an unreachable set point winds the integrator up; the excess over the next,
    # reachable set point is the windup overshoot
    def run(aw):
        cfg = ScenarioConfig(mode="feedback-only", duration=1.5, seed=7, anti_windup=aw,
                             reference=ReferenceSpec("levels", levels=(560e-6, 300e-6), hold=0.5))
        ts = run_scenario(cfg)
        excess = ts["plant_output"][1000:] - 300e-6
        return ts, excess
    ts_aw, ex_aw = run(True)
    ts_plain, ex_plain = run(False)
    assert np.any(ts_aw["plant_input"][:1000] == 5.0)  # the clamp is active
    late = slice(200, None)  # from 100 ms after the set-point change
    assert ex_aw[late].max() < ex_plain[late].max()
    assert np.mean(np.abs(ex_aw)) < np.mean(np.abs(ex_plain))
    # without anti-windup the command stays pinned long after the change
    assert (ts_plain["plant_input"][1000:] == 5.0).sum() > (ts_aw["plant_input"][1000:] == 5.0).sum()


# ---- open loop

def test_open_loop_structure():
    L = design_loop()
    assert len(L.den) - 1 == 5
    assert L.delay == pytest.approx(0.002)
    G, F = plant_identified(), lowpass_filter(10)
    assert L.relative_degree == G.relative_degree + F.relative_degree


def test_open_loop_integrator_asymptote():
    L = design_loop()
    w = 1e-4
    assert abs(L(1j * w)) == pytest.approx(DESIGN_KI * plant_identified().dc_gain() / w, rel=1e-5)


def test_pi_transfer():
    C = pi_transfer(2.0, 3.0)
    assert C.num == (2.0, 3.0) and C.den == (1.0, 0.0)


# ---- margins

def test_design_margin_snapshot():
    rep = stability_margins(design_loop())
    assert rep.phase_margin_deg > 60
    assert rep.phase_margin_deg == pytest.approx(80.04016, abs=1e-4)
    assert rep.gain_crossover_rad_s == pytest.approx(31.44838, rel=1e-5)
    assert rep.gain_margin_db == pytest.approx(18.1466, abs=1e-3)
    assert rep.phase_crossover_rad_s == pytest.approx(165.5489, rel=1e-5)
    L = design_loop()
    assert abs(L(1j * rep.gain_crossover_rad_s)) == pytest.approx(1, rel=1e-10)
    assert rep.phase_margin_deg == pytest.approx(
        180 + math.degrees(L.phase(rep.gain_crossover_rad_s)), abs=1e-9)


def test_integrator_margin():
    rep = stability_margins(TransferFunction([1], [1, 0]))
    assert rep.phase_margin_deg == pytest.approx(90, abs=1e-9)
    assert rep.gain_crossover_rad_s == pytest.approx(1, rel=1e-10)
    assert rep.gain_margin_db == math.inf and math.isnan(rep.phase_crossover_rad_s)


@pytest.mark.parametrize("d", [0.01, 0.1, 0.5])
def test_integrator_with_delay(d):
    rep = stability_margins(TransferFunction([1], [1, 0], d))
    assert rep.phase_margin_deg == pytest.approx(90 - math.degrees(d), abs=1e-9)
    # phase reaches -180 deg where w d = pi / 2
    assert rep.phase_crossover_rad_s == pytest.approx(math.pi / (2 * d), rel=1e-9)
    assert rep.gain_margin_db == pytest.approx(20 * math.log10(math.pi / (2 * d)), abs=1e-9)


def test_no_crossover():
    with pytest.raises(NoCrossoverError, match="no gain crossover"):
        stability_margins(TransferFunction([1e-9], [1, 1]))


def brute_force_margins(L, n=1_000_000):
    w = np.logspace(-1, 5, n)
    resp = L(1j * w)
    logmag = np.log(np.abs(resp))
    k = np.flatnonzero(np.sign(logmag[:-1]) != np.sign(logmag[1:]))[0]
    t = logmag[k] / (logmag[k] - logmag[k + 1])
    wc = w[k] * (w[k + 1] / w[k]) ** t
    pm = (180 + math.degrees(np.angle(L(1j * wc)))) % 360
    pm = pm - 360 if pm > 180 else pm
    im, re = resp.imag, resp.real
    idx = np.flatnonzero((np.sign(im[:-1]) != np.sign(im[1:])) & (re[:-1] < 0))
    if idx.size == 0:
        return pm, math.inf
    j = idx[0]
    t = im[j] / (im[j] - im[j + 1])
    wp = w[j] * (w[j + 1] / w[j]) ** t
    return pm, -20 * math.log10(abs(L(1j * wp)))


@pytest.mark.parametrize("seed", range(12))
def test_margins_agree_with_dense_scan(seed):
    rng = np.random.default_rng(seed)
    poles = [-rng.uniform(2, 200)]
    wn, z = rng.uniform(50, 2000), rng.uniform(0.2, 0.9)
    den = np.polymul(np.poly(poles), [1, 2 * z * wn, wn * wn])
    den = np.polymul(den, [1, 0])
    dc = np.polyval(den[:-1], 0.0)
    k = dc * rng.uniform(1, 50)
    L = TransferFunction([k], den, rng.uniform(0, 0.005))
    rep = stability_margins(L)
    pm, gm = brute_force_margins(L)
    assert rep.phase_margin_deg == pytest.approx(pm, abs=0.05)
    if math.isinf(gm):
        assert math.isinf(rep.gain_margin_db)
    else:
        assert rep.gain_margin_db == pytest.approx(gm, abs=0.01)


def test_margin_report_rows():
    rows = dict(stability_margins(design_loop()).as_rows())
    assert set(rows) == {"phase_margin_deg", "gain_margin_db", "gain_crossover_rad_s",
                         "phase_crossover_rad_s"}


def test_shape_returns_pareto_set():
    kp = np.geomspace(3e3, 3e4, 5)
    ki = np.geomspace(1e5, 1e6, 5)
    designs = shape(plant_identified(), lowpass_filter(10), kp, ki, min_pm=60)
    assert designs
    bw = [d["bandwidth_rad_s"] for d in designs]
    pm = [d["phase_margin_deg"] for d in designs]
    assert bw == sorted(bw)
    assert all(a > b for a, b in zip(pm, pm[1:]))  # more bandwidth costs margin
    assert all(p >= 60 for p in pm)
