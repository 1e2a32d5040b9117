"""Inversion-free feedforward hysteresis compensation.

An integrator closed around an internal copy of the hysteresis model drives the
model output towards the reference, so the integrator state approximates the
inverse hysteresis map.  The loop is integrated with explicit Euler at the
controller sample rate.
"""

from __future__ import annotations

import math

import numpy as np

from .hysteresis import KpModel
from .timeseries import TimeSeries


class Compensator:
    """Integrator ``du/dt = gain * (y_star - H(u))`` around a private KP model."""

    def __init__(self, model: KpModel, gain: float, u_limits: tuple[float, float] | None = None):
        if not (math.isfinite(gain) and gain > 0):
            raise ValueError(f"loop gain must be > 0, got {gain}")
        if u_limits is not None:
            lo, hi = map(float, u_limits)
            if not lo < hi:
                raise ValueError(f"u_limits must satisfy lo < hi, got {u_limits}")
            u_limits = (lo, hi)
        self.model = model.copy()
        self.gain = float(gain)
        self.u_limits = u_limits
        self.u = 0.0
        self._applied = 0.0  # last input fed to the internal model
        self.y_hat = self.model.output

    def reset(self, y0=None, u0: float = 0.0) -> None:
        """Reset the internal model (see :meth:`KpModel.reset`) and set ``u``."""
        u0 = float(u0)
        if not math.isfinite(u0):
            raise ValueError(f"u0 must be finite, got {u0}")
        self.model.reset(y0)
        self.u = self._clamp(u0)
        self._applied = self.u
        self.y_hat = self.model.output

    def _clamp(self, u: float) -> float:
        if self.u_limits is None:
            return u
        return min(self.u_limits[1], max(self.u_limits[0], u))

    def step(self, y_star: float, h: float) -> float:
        y_star = float(y_star)
        if not math.isfinite(y_star):
            raise ValueError(f"reference must be finite, got {y_star}")
        if h <= 0:
            raise ValueError(f"sample period must be > 0, got {h}")
        self.y_hat = self.model.apply(self.u)
        self._applied = self.u
        self.u = self._clamp(self.u + h * self.gain * (y_star - self.y_hat))
        return self.u

    def euler_factor(self, h: float, gamma_tot: float | None = None) -> float:
        """``h * gain * gamma_tot``; the discrete slope regime is stable iff this is < 2.

        ``gamma_tot`` defaults to the instantaneous slope of the internal model at
        the input it was last evaluated at.
        """
        if gamma_tot is None:
            gamma_tot = self.model.tangent(self._applied).gain
        return h * self.gain * gamma_tot

    def max_stable_step(self, gamma_tot: float | None = None) -> float:
        """Largest sample period keeping ``h * gain * gamma_tot < 2``.

        With no argument the worst case ``gamma_tot = model.max_gain`` is used.
        """
        if gamma_tot is None:
            gamma_tot = self.model.max_gain
        if gamma_tot <= 0:
            return math.inf
        return 2.0 / (self.gain * gamma_tot)


def run_compensation(model: KpModel, gain: float, reference: TimeSeries, *,
                     channel: str | None = None, u0: float = 0.0, y0=None,
                     u_limits=None, stall_window: float = 1.0,
                     stall_tol: float = 1e-9) -> TimeSeries:
    """Drive a fresh compensator with a sampled reference.

    Returns channels ``y_star``, ``y_hat``, ``u`` and ``error``.  ``y_hat[k]`` is the
    internal model output evaluated during sample ``k`` (at the pre-update ``u``),
    and ``u[k]`` is the updated integrator state.

    A stall monitor watches windows of ``stall_window`` seconds over which the
    reference is constant: if the error magnitude exceeds ``stall_tol`` and has
    not decreased across the window, the run is flagged ``unreachable`` in the
    metadata along with the time the stall was detected.
    """
    y_star = reference[channel] if channel else reference.first()
    comp = Compensator(model, gain, u_limits)
    comp.reset(y0, u0)
    h = reference.h
    n = len(y_star)
    u = np.empty(n)
    y_hat = np.empty(n)
    for k in range(n):
        u[k] = comp.step(y_star[k], h)
        y_hat[k] = comp.y_hat
    err = y_star - y_hat

    window = max(1, int(round(stall_window / h)))
    stalled_at = None
    for k in range(window, n):
        if abs(err[k]) <= stall_tol or y_star[k] != y_star[k - window]:
            continue
        seg = y_star[k - window:k + 1]
        if np.all(seg == y_star[k]) and abs(err[k]) >= abs(err[k - window]):
            stalled_at = k * h
            break

    meta = dict(reference.metadata)
    meta.update(gain=gain, unreachable=stalled_at is not None,
                stall_time=stalled_at if stalled_at is not None else "")
    return TimeSeries(h, {"y_star": y_star, "y_hat": y_hat, "u": u, "error": err}, meta)
