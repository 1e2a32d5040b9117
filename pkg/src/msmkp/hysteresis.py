"""Krasnoselskii-Pokrovskii hysteresis operators realized as saturated play operators.

Each elementary operator is a play (backlash) operator acting on the shifted
input ``u + delta``, with its memory state clamped to ``[-m, m]`` and a slope
gain ``gamma`` applied to the clamped state.  A :class:`KpModel` is a positively
weighted finite sum of such operators.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def zero_crossing_to_play(alpha: float, beta: float) -> tuple[float, float]:
    """Convert output zero-crossing inputs ``(alpha, beta)`` to ``(delta, w)``."""
    alpha = _finite("alpha", alpha)
    beta = _finite("beta", beta)
    if alpha < beta:
        raise ValueError(f"zero crossings require alpha >= beta, got alpha={alpha}, beta={beta}")
    return -(alpha + beta) / 2.0, alpha - beta


def play_to_zero_crossing(delta: float, w: float) -> tuple[float, float]:
    """Inverse of :func:`zero_crossing_to_play`."""
    return -delta + 0.5 * w, -delta - 0.5 * w


@dataclass
class KpOperator:
    """One elementary hysteresis operator plus its play memory ``p``.

    ``w`` is the full slot width; the play update uses the half width ``w/2``.
    """

    delta: float
    w: float
    m: float
    gamma: float = 1.0
    p: float = 0.0

    def __post_init__(self):
        self.delta = _finite("delta", self.delta)
        self.w = _finite("w", self.w)
        self.m = _finite("m", self.m)
        self.gamma = _finite("gamma", self.gamma)
        self.p = _finite("p", self.p)
        if self.w < 0:
            raise ValueError(f"slot width w must be >= 0, got {self.w}")
        if self.m <= 0:
            raise ValueError(f"saturation magnitude m must be > 0, got {self.m}")
        if self.gamma <= 0:
            raise ValueError(f"slope gain gamma must be > 0, got {self.gamma}")
        self.p = min(self.m, max(-self.m, self.p))

    @property
    def alpha(self) -> float:
        return -self.delta + 0.5 * self.w

    @property
    def beta(self) -> float:
        return -self.delta - 0.5 * self.w

    @property
    def output(self) -> float:
        return self.gamma * self.p

    def reset(self, y0: float = 0.0) -> None:
        """Set the memory so that the operator output equals ``y0`` (clamped)."""
        y0 = _finite("y0", y0)
        self.p = min(self.m, max(-self.m, y0 / self.gamma))

    def apply(self, u: float) -> float:
        u = _finite("input", u)
        v = u + self.delta
        r = 0.5 * self.w
        p = max(v - r, min(v + r, self.p))
        self.p = min(self.m, max(-self.m, p))
        return self.gamma * self.p

    def on_slope(self, u: float, direction: int) -> bool:
        """True if continuing the input in ``direction`` moves the output.

        Assumes ``u`` was the last applied input.
        """
        v = u + self.delta
        r = 0.5 * self.w
        if direction >= 0:
            return self.p == v - r and self.p < self.m
        return self.p == v + r and self.p > -self.m


@dataclass(frozen=True)
class TangentInfo:
    """Local linearization ``y = gain * u + bias`` of a model at its current state."""

    gain: float
    bias: float


class KpModel:
    """Weighted superposition of :class:`KpOperator` instances.

    The output is ``sum(rho_n * operator_n(u))`` with no normalization.  The model
    tracks the direction of the last input change so that :meth:`tangent` can
    report the slope for a continuation of that movement (ascending before any
    movement has been seen).
    """

    def __init__(self, operators: Sequence[KpOperator], weights: Sequence[float]):
        operators = list(operators)
        weights = [_finite("rho", r) for r in weights]
        if not operators:
            raise ValueError("a KP model needs at least one operator")
        if len(weights) != len(operators):
            raise ValueError(
                f"got {len(weights)} weights for {len(operators)} operators")
        for n, rho in enumerate(weights):
            if rho <= 0:
                raise ValueError(f"weight rho[{n}] must be > 0, got {rho}")
        self.operators = operators
        self.weights = weights
        self._initial = [op.output for op in operators]
        self._last_u: float | None = None
        self._direction = 1

    def __len__(self) -> int:
        return len(self.operators)

    def __repr__(self) -> str:
        return f"KpModel(N={len(self)}, bound={self.bound:.6g})"

    @property
    def output(self) -> float:
        return sum(rho * op.output for rho, op in zip(self.weights, self.operators))

    @property
    def bound(self) -> float:
        """Largest possible output magnitude, ``sum(rho * gamma * m)``."""
        return sum(rho * op.gamma * op.m for rho, op in zip(self.weights, self.operators))

    @property
    def max_gain(self) -> float:
        """Slope with every operator active, ``sum(rho * gamma)``."""
        return sum(rho * op.gamma for rho, op in zip(self.weights, self.operators))

    @property
    def direction(self) -> int:
        return self._direction

    @property
    def initial_outputs(self) -> list[float]:
        return list(self._initial)

    def reset(self, y0: float | Iterable[float] | None = None) -> None:
        """Reset operator memories.

        ``None`` restores the per-operator outputs the model was built with; a
        scalar applies the same initial output to every operator; a sequence
        gives one initial output per operator.
        """
        if y0 is None:
            values = self._initial
        elif np.ndim(y0) == 0:
            values = [float(y0)] * len(self)
        else:
            values = [float(v) for v in y0]
            if len(values) != len(self):
                raise ValueError(f"expected {len(self)} initial outputs, got {len(values)}")
        for op, value in zip(self.operators, values):
            op.reset(value)
        self._last_u = None
        self._direction = 1

    def apply(self, u: float) -> float:
        u = _finite("input", u)
        if self._last_u is not None:
            if u > self._last_u:
                self._direction = 1
            elif u < self._last_u:
                self._direction = -1
        self._last_u = u
        y = 0.0
        for rho, op in zip(self.weights, self.operators):
            y += rho * op.apply(u)
        return y

    def tangent(self, u: float, direction: int | None = None) -> TangentInfo:
        """Instantaneous slope and bias at input ``u`` (the last applied input)."""
        if direction is None:
            direction = self._direction
        gain = 0.0
        for rho, op in zip(self.weights, self.operators):
            if op.on_slope(u, direction):
                gain += rho * op.gamma
        return TangentInfo(gain=gain, bias=self.output - gain * u)

    def simulate(self, u: Iterable[float]) -> np.ndarray:
        """Apply a whole input sequence, returning the output at every sample."""
        return np.array([self.apply(x) for x in u], dtype=float)

    def copy(self) -> "KpModel":
        return copy.deepcopy(self)

    def scaled(self, factors: float | Sequence[float]) -> "KpModel":
        """Copy with weights multiplied by ``factors`` (scalar or per operator)."""
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (len(self),))
        new = self.copy()
        new.weights = [rho * f for rho, f in zip(self.weights, factors)]
        if any(rho <= 0 for rho in new.weights):
            raise ValueError("scaled weights must stay positive")
        return new

    def to_dict(self) -> dict:
        return {
            "N": len(self),
            "operator": [
                {"delta": op.delta, "w": op.w, "m": op.m, "gamma": op.gamma,
                 "rho": rho, "y0": y0}
                for op, rho, y0 in zip(self.operators, self.weights, self._initial)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KpModel":
        entries = data.get("operator")
        if not entries:
            raise ValueError("KP parameters need at least one [[operator]] entry")
        n = data.get("N", len(entries))
        if n != len(entries):
            raise ValueError(f"N = {n} but {len(entries)} operators were given")
        ops, weights = [], []
        for k, entry in enumerate(entries):
            unknown = set(entry) - {"delta", "w", "m", "gamma", "rho", "y0"}
            if unknown:
                raise ValueError(f"operator[{k}]: unknown field(s) {sorted(unknown)}")
            try:
                op = KpOperator(entry["delta"], entry["w"], entry["m"], entry.get("gamma", 1.0))
                weights.append(entry["rho"])
            except KeyError as exc:
                raise ValueError(f"operator[{k}]: missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise ValueError(f"operator[{k}]: {exc}") from None
            op.reset(entry.get("y0", 0.0))
            ops.append(op)
        return cls(ops, weights)


def play_response(u: np.ndarray, delta, w, m, gamma=1.0, p0=0.0) -> np.ndarray:
    """Vectorized response of many operators to one input sequence.

    Parameters are broadcast to a common shape ``(K,)``; the result has shape
    ``(len(u), K)`` and holds ``gamma * p`` for every operator at every sample.
    """
    u = np.asarray(u, dtype=float)
    delta, w, m, gamma, p = (np.array(a, dtype=float) for a in
                             np.broadcast_arrays(delta, w, m, gamma, p0))
    if delta.ndim == 0:
        delta, w, m, gamma, p = (a.reshape(1) for a in (delta, w, m, gamma, p))
    r = 0.5 * w
    p = np.clip(p, -m, m)
    out = np.empty((u.size, delta.size))
    for k, x in enumerate(u):
        v = x + delta
        p = np.clip(np.maximum(v - r, np.minimum(v + r, p)), -m, m)
        out[k] = p
    return out * gamma
