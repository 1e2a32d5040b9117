"""PI feedback control and open-loop stability margins."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .lti import TransferFunction

# Loop-shaped gains for the identified actuator with the 10 Hz measurement filter.
DESIGN_KP = 1.13e4
DESIGN_KI = 3.06e5


class NoCrossoverError(ValueError):
    """Raised when |L(jw)| never crosses 1 inside the scanned band."""


class PiController:
    """Discrete PI law ``kp*e + ki*integ`` with forward-Euler integration.

    With ``u_limits`` set the output is clamped; when ``anti_windup`` is on the
    integrator is frozen for any sample where the clamp is active and the error
    would push further into it (conditional integration).
    """

    def __init__(self, kp: float, ki: float, h: float, u_limits=None, anti_windup: bool = True):
        if not (kp > 0 and ki > 0):
            raise ValueError(f"PI gains must be positive, got kp={kp}, ki={ki}")
        if not h > 0:
            raise ValueError(f"sample period must be > 0, got {h}")
        self.kp = float(kp)
        self.ki = float(ki)
        self.h = float(h)
        self.u_limits = u_limits
        self.anti_windup = anti_windup
        self.integ = 0.0
        self.saturated = False

    def reset(self, integ: float = 0.0) -> None:
        self.integ = float(integ)
        self.saturated = False

    def step(self, e: float) -> float:
        e = float(e)
        if not math.isfinite(e):
            raise ValueError(f"error sample must be finite, got {e}")
        integ = self.integ + self.h * e
        u = self.kp * e + self.ki * integ
        self.saturated = False
        if self.u_limits is not None:
            lo, hi = self.u_limits
            if u > hi or u < lo:
                self.saturated = True
                if self.anti_windup and (u > hi and e > 0 or u < lo and e < 0):
                    integ = self.integ
                u = min(hi, max(lo, u))
        self.integ = integ
        return u


def pi_transfer(kp: float, ki: float) -> TransferFunction:
    return TransferFunction((kp, ki), (1.0, 0.0))


def open_loop(kp: float, ki: float, plant: TransferFunction,
              filt: TransferFunction) -> TransferFunction:
    """``L(s) = C(s) G(s) F(s)`` with ``C(s) = (kp*s + ki)/s``; delays add."""
    return pi_transfer(kp, ki) * plant * filt


@dataclass(frozen=True)
class MarginReport:
    phase_margin_deg: float
    gain_margin_db: float
    gain_crossover_rad_s: float
    phase_crossover_rad_s: float

    def as_rows(self) -> list[tuple[str, float]]:
        return [("phase_margin_deg", self.phase_margin_deg),
                ("gain_margin_db", self.gain_margin_db),
                ("gain_crossover_rad_s", self.gain_crossover_rad_s),
                ("phase_crossover_rad_s", self.phase_crossover_rad_s)]


def _wrap_deg(angle: float) -> float:
    return (angle + 180.0) % 360.0 - 180.0


def _bracket_roots(f, grid: np.ndarray, values: np.ndarray) -> list[float]:
    roots = []
    for k in np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0):
        a, b = grid[k], grid[k + 1]
        if values[k] == 0:
            roots.append(a)
        elif values[k + 1] != 0:
            roots.append(brentq(f, a, b, xtol=1e-14 * b, rtol=1e-14, maxiter=200))
    return sorted(set(roots))


def stability_margins(L: TransferFunction, w_min: float = 1e-1, w_max: float = 1e5,
                      points: int = 2000) -> MarginReport:
    """Phase and gain margins of an open loop, delay phase included.

    Gain crossovers are bracketed on a log grid over ``[w_min, w_max]`` and refined
    by bracketing root search on ``log|L(jw)|``; margins refer to the lowest one.
    The gain margin is taken at the lowest frequency where the phase crosses
    ``-180 deg (mod 360)``, or reported as infinite if there is none.
    """
    grid = np.logspace(math.log10(w_min), math.log10(w_max), points)

    def logmag(w):
        return float(np.log(np.abs(L(1j * w))))

    mags = np.log(np.abs(L(1j * grid)))
    crossings = _bracket_roots(logmag, grid, mags)
    if not crossings:
        raise NoCrossoverError(
            f"no gain crossover in band [{w_min:g}, {w_max:g}] rad/s")
    wc = crossings[0]
    pm = _wrap_deg(180.0 + math.degrees(float(L.phase(wc))))

    def phase_gap(w):
        # signed distance of the phase from -180 deg (mod 360)
        return np.remainder(L.phase(w), 2 * math.pi) - math.pi

    gaps = phase_gap(grid)
    # keep sign changes through zero, not the wrap-around jumps at +/-pi
    candidates = []
    for k in np.flatnonzero(np.sign(gaps[:-1]) * np.sign(gaps[1:]) <= 0):
        if abs(gaps[k] - gaps[k + 1]) < math.pi:
            a, b = grid[k], grid[k + 1]
            candidates.append(a if gaps[k] == 0 else
                              brentq(phase_gap, a, b, xtol=1e-14 * b, rtol=1e-14))
    if candidates:
        wpc = min(candidates)
        gm = -20.0 * math.log10(abs(complex(L(1j * wpc))))
    else:
        wpc, gm = math.nan, math.inf
    return MarginReport(pm, gm, wc, wpc)


def shape(plant: TransferFunction, filt: TransferFunction, kp_grid, ki_grid,
          min_pm: float = 0.0) -> list[dict]:
    """Sweep PI gains and return the Pareto set of (bandwidth, phase margin).

    Bandwidth is the gain crossover frequency.  Designs with no crossover in the
    default band or a phase margin below ``min_pm`` are discarded.  The result is
    sorted by increasing bandwidth.
    """
    designs = []
    for kp in kp_grid:
        for ki in ki_grid:
            try:
                rep = stability_margins(open_loop(kp, ki, plant, filt), points=400)
            except NoCrossoverError:
                continue
            if rep.phase_margin_deg >= min_pm:
                designs.append({"kp": float(kp), "ki": float(ki),
                                "bandwidth_rad_s": rep.gain_crossover_rad_s,
                                "phase_margin_deg": rep.phase_margin_deg})
    designs.sort(key=lambda d: (-d["bandwidth_rad_s"], -d["phase_margin_deg"]))
    pareto, best_pm = [], -math.inf
    for d in designs:
        if d["phase_margin_deg"] > best_pm:
            pareto.append(d)
            best_pm = d["phase_margin_deg"]
    return pareto[::-1]
