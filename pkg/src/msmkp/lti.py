"""Continuous SISO transfer functions with input delay and their exact ZOH discretization."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

# Identified actuator model, current command [A] -> displacement [m].
PLANT_NUM = (45.57,)
PLANT_DEN = (1.0, 737.9, 5.439e5)
PLANT_DELAY = 0.002

DELAY_TOL = 1e-9


def _trim(coeffs) -> np.ndarray:
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[nz[0]:]


@dataclass(frozen=True)
class TransferFunction:
    """``num(s)/den(s) * exp(-delay*s)`` with coefficients in descending powers of s."""

    num: tuple
    den: tuple
    delay: float = 0.0

    def __post_init__(self):
        num = _trim(self.num)
        den = _trim(self.den)
        if not np.all(np.isfinite(num)) or not np.all(np.isfinite(den)):
            raise ValueError("transfer function coefficients must be finite")
        if den[0] == 0:
            raise ValueError("denominator must have a nonzero leading coefficient")
        if num.size > den.size:
            raise ValueError(
                f"improper transfer function: numerator degree {num.size - 1} "
                f"> denominator degree {den.size - 1}")
        if not (math.isfinite(self.delay) and self.delay >= 0):
            raise ValueError(f"delay must be finite and >= 0, got {self.delay}")
        object.__setattr__(self, "num", tuple(num.tolist()))
        object.__setattr__(self, "den", tuple(den.tolist()))
        object.__setattr__(self, "delay", float(self.delay))

    @property
    def order(self) -> int:
        return len(self.den) - 1

    @property
    def relative_degree(self) -> int:
        return len(self.den) - len(self.num)

    def poles(self) -> np.ndarray:
        return np.roots(self.den)

    def zeros(self) -> np.ndarray:
        return np.roots(self.num)

    def dc_gain(self) -> float:
        return self.num[-1] / self.den[-1]

    def is_stable(self) -> bool:
        return bool(np.all(self.poles().real < 0))

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return np.polyval(self.num, s) / np.polyval(self.den, s) * np.exp(-self.delay * s)

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return TransferFunction(np.polymul(self.num, other.num),
                                np.polymul(self.den, other.den),
                                self.delay + other.delay)

    def freq_response(self, omegas) -> np.ndarray:
        return freq_response(self, omegas)

    def phase(self, omegas) -> np.ndarray:
        """Continuous (unwrapped) phase in radians, delay included.

        Summed from the angles of the individual zero and pole factors, so no
        2*pi jumps occur as omega sweeps.
        """
        w = np.asarray(omegas, dtype=float)
        jw = 1j * w[..., None]
        ph = np.zeros_like(w)
        if len(self.num) > 1:
            ph = ph + np.angle(jw - self.zeros()).sum(axis=-1)
        if len(self.den) > 1:
            ph = ph - np.angle(jw - self.poles()).sum(axis=-1)
        k = self.num[0] / self.den[0]
        if k < 0:
            ph = ph + np.pi
        return ph - w * self.delay


def plant_identified() -> TransferFunction:
    """Second-order-plus-delay actuator model identified from FRF data."""
    return TransferFunction(PLANT_NUM, PLANT_DEN, PLANT_DELAY)


def lowpass_filter(cutoff_hz: float) -> TransferFunction:
    """``(mu*s + 1)**-2`` with each first-order pole at ``cutoff_hz``."""
    if not (math.isfinite(cutoff_hz) and cutoff_hz > 0):
        raise ValueError(f"cutoff frequency must be > 0, got {cutoff_hz}")
    mu = 1.0 / (2 * math.pi * cutoff_hz)
    return TransferFunction((1.0,), (mu * mu, 2 * mu, 1.0))


def freq_response(tf: TransferFunction, omegas) -> np.ndarray:
    w = np.asarray(omegas, dtype=float)
    if np.any(w <= 0):
        raise ValueError("frequencies must be positive")
    return tf(1j * w)


class DiscreteSystem:
    """Sampled state-space realization with an integer-sample input delay.

    Each :meth:`step` pushes one input sample into the delay line, emits the output
    for the current sample, then advances the state by one period.
    """

    def __init__(self, A, B, C, D, h: float, delay_samples: int = 0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(-1)
        self.C = np.asarray(C, dtype=float).reshape(-1)
        self.D = float(D)
        self.h = float(h)
        self.delay_samples = int(delay_samples)
        if self.A.size == 0:
            self.A = np.zeros((0, 0))
        self.n = self.A.shape[0]
        self.reset()

    def reset(self) -> None:
        self.x = np.zeros(self.n)
        self._buffer = deque([0.0] * self.delay_samples)

    def peek(self) -> float:
        """Output of the current sample without supplying the current input.

        Only defined when the current input cannot reach the output, i.e. the
        system is strictly proper or delayed.
        """
        if self.delay_samples > 0:
            return float(self.C @ self.x) + self.D * self._buffer[0]
        if self.D != 0:
            raise ValueError("peek() needs a strictly proper or delayed system")
        return float(self.C @ self.x)

    def step(self, u: float) -> float:
        if self.delay_samples:
            self._buffer.append(float(u))
            u = self._buffer.popleft()
        y = float(self.C @ self.x) + self.D * u
        if self.n:
            self.x = self.A @ self.x + self.B * u
        return y

    def simulate(self, u) -> np.ndarray:
        return np.array([self.step(x) for x in np.asarray(u, dtype=float)])


def discretize(tf: TransferFunction, h: float) -> DiscreteSystem:
    """Exact zero-order-hold discretization of ``tf`` at sample period ``h``."""
    if not (math.isfinite(h) and h > 0):
        raise ValueError(f"sample period must be > 0, got {h}")
    ratio = tf.delay / h
    nd = round(ratio)
    if abs(ratio - nd) > DELAY_TOL * max(1.0, abs(ratio)):
        raise ValueError(
            f"delay {tf.delay} s is not an integer multiple of the sample period {h} s "
            f"(ratio {ratio!r}); fractional delays are not supported")
    if tf.order == 0:
        return DiscreteSystem(np.zeros((0, 0)), np.zeros(0), np.zeros(0),
                              tf.num[-1] / tf.den[-1], h, nd)
    A, B, C, D = signal.tf2ss(tf.num, tf.den)
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n:] = B
    E = linalg.expm(M * h)
    return DiscreteSystem(E[:n, :n], E[:n, n], C.reshape(-1), D.item(), h, nd)
