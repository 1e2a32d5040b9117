"""Closed-loop scenarios for the hysteresis-plus-linear actuator plant.

A scenario drives the plant with the PI branch, the feedforward compensator,
or both (two-degree-of-freedom) and records every loop signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compensator import Compensator
from .feedback import DESIGN_KI, DESIGN_KP, PiController
from .fixtures import KAPPA_TILDE, load_fixture
from .hysteresis import KpModel
from .lti import DiscreteSystem, TransferFunction, discretize, lowpass_filter, plant_identified
from .timeseries import TimeSeries

MODES = ("feedback-only", "feedforward-only", "two-dof")
FEEDBACK_REFERENCES = ("raw", "filtered", "model")
REFERENCE_KINDS = ("step", "sine", "triangle", "random", "levels")
CHANNELS = ("reference", "plant_output", "measured_output", "filtered_output",
            "u_ff", "u_fb", "plant_input", "error")


@dataclass
class ReferenceSpec:
    """Reference waveform ``offset + A * shape(2 pi f t + phase)``.

    ``step`` jumps from ``offset`` to ``offset + amplitude`` at ``step_time``;
    ``sine``/``triangle`` cycle through ``amplitudes`` period by period when given;
    ``random`` draws one amplitude per carrier period, uniform in
    ``[amp_min, amplitude]``; ``levels`` holds each entry of ``levels`` for
    ``hold`` seconds.  The triangle starts at zero phase rising and peaks at a
    quarter period.
    """

    kind: str = "step"
    amplitude: float = 1.0
    frequency: float = 1.0
    offset: float = 0.0
    phase_deg: float = 0.0
    step_time: float = 0.0
    amplitudes: tuple = ()
    amp_min: float = 0.0
    levels: tuple = ()
    hold: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"reference kind must be one of {REFERENCE_KINDS}, got {self.kind!r}")
        if self.kind in ("sine", "triangle", "random") and not self.frequency > 0:
            raise ValueError(f"{self.kind} reference needs frequency > 0")
        if self.kind == "levels" and (not self.levels or not self.hold > 0):
            raise ValueError("levels reference needs a non-empty levels list and hold > 0")
        self.amplitudes = tuple(float(a) for a in self.amplitudes)
        self.levels = tuple(float(a) for a in self.levels)


def _triangle(x: np.ndarray) -> np.ndarray:
    x = x % 1.0
    return np.where(x < 0.25, 4 * x, np.where(x < 0.75, 2 - 4 * x, 4 * x - 4))


def make_reference(spec: ReferenceSpec, duration: float, rate: float) -> TimeSeries:
    if not (duration > 0 and rate > 0):
        raise ValueError("duration and rate must be positive")
    n = int(round(duration * rate))
    k = np.arange(n)
    t = k / rate
    if spec.kind == "step":
        values = np.where(t >= spec.step_time, spec.offset + spec.amplitude, spec.offset)
    elif spec.kind == "levels":
        idx = np.minimum((t / spec.hold).astype(int), len(spec.levels) - 1)
        values = np.asarray(spec.levels)[idx]
    else:
        cycles = k * spec.frequency / rate + spec.phase_deg / 360.0
        shape = _triangle(cycles) if spec.kind == "triangle" else np.sin(2 * np.pi * cycles)
        period = np.floor(k * spec.frequency / rate).astype(int)
        if spec.kind == "random":
            rng = np.random.default_rng(spec.seed)
            amps = rng.uniform(spec.amp_min, spec.amplitude, period.max(initial=0) + 1)[period]
        elif spec.amplitudes:
            amps = np.asarray(spec.amplitudes)[period % len(spec.amplitudes)]
        else:
            amps = spec.amplitude
        values = spec.offset + amps * shape
    return TimeSeries(1.0 / rate, {"reference": values}, {"kind": spec.kind})


class PlantModel:
    """Hysteresis stage in series with the identified linear dynamics.

    The linear block sees ``kappa * (H(i) + offset + dist)``; ``offset`` defaults to
    minus the hysteresis rest output so the displacement is zero at rest.  Commands
    outside ``i_limits`` are clamped and counted in ``clipped``; disturbance samples
    are clipped to ``+/- disturbance_bound``.
    """

    def __init__(self, hysteresis: KpModel, linear: DiscreteSystem, kappa: float = KAPPA_TILDE,
                 offset: float | None = None, i_limits=(0.0, 5.0),
                 disturbance_bound: float = 0.0):
        self.hysteresis = hysteresis
        self.linear = linear
        self.kappa = float(kappa)
        self.offset = -hysteresis.output if offset is None else float(offset)
        self.i_limits = tuple(i_limits)
        self.disturbance_bound = float(disturbance_bound)
        self.clipped = 0

    @classmethod
    def default(cls, hysteresis: KpModel | None = None, h: float = 1 / 2000, **kw) -> "PlantModel":
        model = load_fixture() if hysteresis is None else hysteresis.copy()
        return cls(model, discretize(plant_identified(), h), **kw)

    def reset(self) -> None:
        self.hysteresis.reset()
        self.linear.reset()
        self.clipped = 0

    def output(self) -> float:
        """Displacement at the current sample (the input cannot reach it yet)."""
        return self.linear.peek()

    def step(self, i_cmd: float, dist: float = 0.0) -> float:
        lo, hi = self.i_limits
        if i_cmd < lo or i_cmd > hi:
            self.clipped += 1
            i_cmd = min(hi, max(lo, i_cmd))
        b = self.disturbance_bound
        dist = min(b, max(-b, dist))
        y_h = self.hysteresis.apply(i_cmd) + self.offset + dist
        return self.linear.step(self.kappa * y_h)


@dataclass
class ScenarioConfig:
    mode: str = "two-dof"
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    duration: float = 2.0
    rate: float = 2000.0
    noise_std: float = 8e-6
    seed: int = 0
    kp: float = DESIGN_KP
    ki: float = DESIGN_KI
    anti_windup: bool = True
    filter_cutoff_hz: float = 10.0
    feedback_reference: str = "filtered"
    comp_gain: float = 2000.0
    model: KpModel | None = None
    plant_weight_scale: float | tuple = 1.0
    kappa: float = KAPPA_TILDE
    plant_kappa_scale: float = 1.0
    i_limits: tuple = (0.0, 5.0)
    disturbance_amplitude: float = 0.0
    disturbance_frequency: float = 0.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("duration", "rate", "kp", "ki", "filter_cutoff_hz", "comp_gain",
                     "kappa", "plant_kappa_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.feedback_reference not in FEEDBACK_REFERENCES:
            raise ValueError(f"feedback_reference must be one of {FEEDBACK_REFERENCES}, "
                             f"got {self.feedback_reference!r}")
        if self.disturbance_amplitude < 0:
            raise ValueError("disturbance_amplitude must be >= 0")
        lo, hi = self.i_limits
        if not lo < hi:
            raise ValueError(f"i_limits must satisfy lo < hi, got {self.i_limits}")


def run_scenario(cfg: ScenarioConfig) -> TimeSeries:
    """Simulate one loop topology sample by sample.

    Per sample: read the (delayed) plant output and add sensor noise, low-pass
    filter the measurement, update the compensator from the raw reference, update
    the PI law on ``e = r_fb - filtered`` and step the plant with the sum of the
    two branches.  The PI output is limited so the sum stays inside ``i_limits``.

    ``feedback_reference`` selects ``r_fb``. The default ``"filtered"`` passes the
    reference through the measurement filter so both sides of the junction carry
    the same lag. ``"raw"`` uses the reference as is; ``"model"`` also applies the
    normalized linear plant, so the PI branch only sees what the feedforward
    branch failed to produce.

    The compensator works in hysteresis units, so its reference is mapped through
    the nominal static gain ``kappa * G(0)`` and the plant offset.
    """
    cfg.validate()
    h = 1.0 / cfg.rate
    ref = make_reference(cfg.reference, cfg.duration, cfg.rate)["reference"]
    n = ref.size
    nominal = load_fixture() if cfg.model is None else cfg.model.copy()
    nominal.reset()

    G = plant_identified()
    plant = PlantModel(nominal.scaled(cfg.plant_weight_scale), discretize(G, h),
                       kappa=cfg.kappa * cfg.plant_kappa_scale,
                       i_limits=cfg.i_limits,
                       disturbance_bound=cfg.disturbance_amplitude)
    F = lowpass_filter(cfg.filter_cutoff_hz)
    filt = discretize(F, h)
    if cfg.feedback_reference == "model":
        shaped = TransferFunction(np.asarray(G.num) / G.dc_gain(), G.den, G.delay) * F
        ref_fb = discretize(shaped, h).simulate(ref)
    elif cfg.feedback_reference == "filtered":
        ref_fb = discretize(F, h).simulate(ref)
    else:
        ref_fb = ref
    use_fb = cfg.mode != "feedforward-only"
    use_ff = cfg.mode != "feedback-only"
    pi = PiController(cfg.kp, cfg.ki, h, anti_windup=cfg.anti_windup)
    comp = Compensator(nominal, cfg.comp_gain, u_limits=cfg.i_limits)
    comp.reset(None, cfg.i_limits[0] if cfg.i_limits[0] > 0 else 0.0)
    static_gain = cfg.kappa * G.dc_gain()
    ref_h = ref / static_gain - plant.offset

    noise = np.random.default_rng(cfg.seed).normal(0.0, cfg.noise_std, n) if cfg.noise_std \
        else np.zeros(n)
    t = np.arange(n) * h
    dist = cfg.disturbance_amplitude * np.sin(2 * np.pi * cfg.disturbance_frequency * t)

    out = {name: np.zeros(n) for name in CHANNELS}
    out["reference"] = ref
    lo, hi = cfg.i_limits
    for k in range(n):
        y = plant.output()
        ym = y + noise[k]
        yf = filt.step(ym)
        e = ref_fb[k] - yf
        u_ff = comp.step(ref_h[k], h) if use_ff else 0.0
        if use_fb:
            pi.u_limits = (lo - u_ff, hi - u_ff)
            u_fb = pi.step(e)
        else:
            u_fb = 0.0
        i_cmd = u_ff + u_fb
        plant.step(i_cmd, dist[k])
        out["plant_output"][k] = y
        out["measured_output"][k] = ym
        out["filtered_output"][k] = yf
        out["error"][k] = e
        out["u_ff"][k] = u_ff
        out["u_fb"][k] = u_fb
        out["plant_input"][k] = i_cmd

    meta = {"mode": cfg.mode, "seed": cfg.seed, "noise_std": cfg.noise_std,
            "clipped_samples": plant.clipped}
    return TimeSeries(h, out, meta)


def tracking_rms(ts: TimeSeries, start: float = 0.0) -> float:
    """RMS of ``reference - plant_output`` from time ``start`` on."""
    k0 = int(round(start / ts.h))
    err = ts["reference"][k0:] - ts["plant_output"][k0:]
    return float(np.sqrt(np.mean(err ** 2)))


def fluctuation_band(ts: TimeSeries, start: float) -> float:
    """Peak-to-peak spread of the true plant output from time ``start`` on."""
    y = ts["plant_output"][int(round(start / ts.h)):]
    return float(y.max() - y.min())


def settled_band(ts: TimeSeries, level: float, after: float = 0.0) -> float:
    """Peak-to-peak spread of the plant output around a constant ``level``,
    measured from the first sample at or past ``level`` after time ``after``.

    Returns ``inf`` if the output never reaches the level.
    """
    y = ts["plant_output"]
    k0 = int(round(after / ts.h))
    rising = level >= y[k0]
    hit = np.flatnonzero(y[k0:] >= level if rising else y[k0:] <= level)
    if hit.size == 0:
        return math.inf
    tail = y[k0 + hit[0]:]
    return float(tail.max() - tail.min())
