"""Identification of the linear dynamics from sine records and of the KP
hysteresis model from quasi-static loop data."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .hysteresis import KpModel, KpOperator, play_response
from .lti import TransferFunction
from .timeseries import TimeSeries


class FitError(RuntimeError):
    """Nonlinear fit did not converge; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RankDeficientError(ValueError):
    def __init__(self, message, operators):
        super().__init__(message)
        self.operators = operators


def _samples(x, channel=None):
    if isinstance(x, TimeSeries):
        return (x[channel] if channel else x.first()), x.h, x.t0
    return np.asarray(x, dtype=float), None, 0.0


# --- frequency response -----------------------------------------------------

def sine_records(tf: TransferFunction, freqs_hz, rate: float = 2000.0, n_periods: int = 20,
                 amplitude: float = 1.0, noise_std: float = 0.0, seed=0):
    """Steady-state sine responses of ``tf`` sampled at ``rate``.

    The output is the analytic steady state ``a |G| sin(w t + arg G)`` plus optional
    white Gaussian measurement noise; returns ``(f, u, y)`` tuples of TimeSeries.
    """
    rng = np.random.default_rng(seed)
    h = 1.0 / rate
    records = []
    for f in freqs_hz:
        n = int(math.ceil(n_periods * rate / f)) + 1
        t = np.arange(n) * h
        g = complex(tf(2j * math.pi * f))
        u = amplitude * np.sin(2 * math.pi * f * t)
        y = amplitude * abs(g) * np.sin(2 * math.pi * f * t + np.angle(g))
        if noise_std:
            y = y + rng.normal(0.0, noise_std, n)
        records.append((float(f), TimeSeries(h, {"u": u}), TimeSeries(h, {"y": y})))
    return records


def _phasor(x: np.ndarray, t: np.ndarray, omega: float) -> complex:
    # x ~ Re(P) sin(wt) + Im(P) cos(wt) + c, solved by least squares
    basis = np.column_stack([np.sin(omega * t), np.cos(omega * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return complex(coef[0], coef[1])


def estimate_frf(records, settle_periods: int = 0, min_periods: int = 3):
    """FRF points from single-frequency sine records.

    Each record is ``(frequency_hz, u, y)`` with ``u``/``y`` TimeSeries (first channel
    used) or arrays plus a shared sample period via TimeSeries.  After discarding
    ``settle_periods``, the largest integer number of trailing periods is fitted
    with sine/cosine/offset regressors; the FRF point is the ratio of the output
    and input phasors.
    """
    points = []
    for f, u_ts, y_ts in records:
        u, h, t0 = _samples(u_ts)
        y, hy, _ = _samples(y_ts)
        h = h or hy
        if h is None:
            raise ValueError("records need TimeSeries inputs to know the sample period")
        if u.size != y.size:
            raise ValueError(f"{f} Hz: input and output lengths differ")
        periods = math.floor((u.size - 1) * h * f + 1e-9) - settle_periods
        if periods < min_periods:
            raise ValueError(
                f"{f} Hz record holds {periods} usable periods, need at least {min_periods}")
        ns = int(math.floor(periods * (1.0 / f) / h + 1e-9)) + 1
        t = t0 + np.arange(u.size) * h
        t, u, y = t[-ns:], u[-ns:], y[-ns:]
        omega = 2 * math.pi * f
        pu = _phasor(u, t, omega)
        if abs(pu) <= 1e-12 * max(1.0, np.max(np.abs(u))):
            raise ValueError(f"{f} Hz: input has no component at the excitation frequency")
        points.append((float(f), _phasor(y, t, omega) / pu))
    return points


@dataclass
class SosFit:
    gain: float
    wn: float
    zeta: float
    delay: float
    residual: float

    @property
    def tf(self) -> TransferFunction:
        return TransferFunction((self.gain,), (1.0, 2 * self.zeta * self.wn, self.wn ** 2),
                                self.delay)


def _sos_model(theta, omega):
    gain, wn, zeta, delay = theta
    s = 1j * omega
    return gain / (s * s + 2 * zeta * wn * s + wn * wn) * np.exp(-delay * s)


def fit_sos_delay(points, max_delay: float = 0.01, max_nfev: int = 2000,
                  delay_starts: int = 21) -> SosFit:
    """Weighted least-squares fit of ``b/(s^2 + 2 zeta wn s + wn^2) exp(-d s)``.

    Residuals are complex errors relative to the measured magnitude.  The natural
    frequency starts from the magnitude peak (assuming zeta = 0.5), the gain from
    the lowest-frequency magnitude; several delay starts in ``[0, max_delay]`` guard
    against phase-wrapping local minima.
    """
    if len(points) < 6:
        raise ValueError(f"need at least 6 FRF points, got {len(points)}")
    freqs = np.array([p[0] for p in points], dtype=float)
    data = np.array([p[1] for p in points], dtype=complex)
    order = np.argsort(freqs)
    omega, data = 2 * math.pi * freqs[order], data[order]
    weight = 1.0 / np.abs(data)

    k = int(np.argmax(np.abs(data)))
    if 0 < k < omega.size - 1:
        wn0 = omega[k] / math.sqrt(0.5)
    else:
        wn0 = math.sqrt(omega[0] * omega[-1])
    zeta0 = 0.5
    gain0 = abs(data[0]) * abs(wn0 ** 2 - omega[0] ** 2 + 2j * zeta0 * wn0 * omega[0])
    scale = np.array([gain0, wn0, 1.0, max_delay])

    def resid(x):
        e = (_sos_model(x * scale, omega) - data) * weight
        return np.concatenate([e.real, e.imag])

    best = None
    for d0 in np.linspace(0.0, max_delay, delay_starts):
        x0 = np.array([1.0, 1.0, zeta0, d0 / max_delay])
        res = optimize.least_squares(resid, x0, bounds=([1e-9, 1e-6, 1e-4, 0.0],
                                                        [np.inf, np.inf, 10.0, 1.0]),
                                     x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                     max_nfev=max_nfev)
        if best is None or res.cost < best.cost:
            best = res
    gain, wn, zeta, delay = best.x * scale
    fit = SosFit(float(gain), float(wn), float(zeta), float(delay),
                 float(math.sqrt(2 * best.cost / omega.size)))
    if best.status == 0:
        raise FitError(f"FRF fit hit the evaluation cap ({max_nfev})", best=fit)
    return fit


# --- hysteresis ---------------------------------------------------------------

def prefilter(y, h: float, cutoff_hz: float = 10.0) -> np.ndarray:
    """Zero-phase second-order Butterworth low-pass for offline loop data."""
    b, a = signal.butter(2, cutoff_hz, fs=1.0 / h)
    return signal.filtfilt(b, a, np.asarray(y, dtype=float))


def turning_point_decimate(u, stride: int) -> np.ndarray:
    """Indices keeping every ``stride``-th sample plus every input turning point.

    Play operators are rate independent, so dropping samples inside monotone
    stretches leaves the operator outputs at the kept samples unchanged.
    """
    u = np.asarray(u, dtype=float)
    keep = np.zeros(u.size, dtype=bool)
    keep[::max(1, stride)] = True
    keep[-1] = True
    du = np.sign(np.diff(u))
    nz = np.flatnonzero(du)
    if nz.size > 1:
        flips = nz[1:][du[nz[1:]] != du[nz[:-1]]]
        keep[flips] = True
    return np.flatnonzero(keep)


def regressors(u, grid) -> np.ndarray:
    """Response of every grid operator (from its own memory state) to ``u``."""
    return play_response(u, [op.delta for op in grid], [op.w for op in grid],
                         [op.m for op in grid], [op.gamma for op in grid],
                         [op.p for op in grid])


@dataclass
class KpWeightFit:
    weights: np.ndarray
    rms: float


def fit_kp_weights(u, y, grid) -> KpWeightFit:
    """Nonnegative least-squares weights for fixed operator shapes.

    Raises :class:`RankDeficientError` naming collinear operators when the
    regressor matrix lacks full column rank.
    """
    u, _, _ = _samples(u)
    y, _, _ = _samples(y)
    if u.size != y.size:
        raise ValueError("input and output lengths differ")
    phi = regressors(u, grid)
    _check_rank(phi)
    rho, rnorm = optimize.nnls(phi, y, maxiter=50 * phi.shape[1])
    return KpWeightFit(rho, float(rnorm / math.sqrt(y.size)))


def _check_rank(phi: np.ndarray) -> None:
    _, sv, vt = np.linalg.svd(phi, full_matrices=False)
    tol = sv.max(initial=0.0) * max(phi.shape) * np.finfo(float).eps
    null = vt[sv <= tol]
    if null.size:
        involved = sorted({int(i) for v in null for i in np.flatnonzero(np.abs(v) > 1e-8)})
        raise RankDeficientError(
            f"regressor matrix is rank deficient; collinear operators: {involved}", involved)


def descending_memory(u0: float, op: KpOperator) -> float:
    """Memory of ``op`` after a descending approach to input ``u0``."""
    return min(op.m, max(-op.m, u0 + op.delta + 0.5 * op.w))


@dataclass
class KpModelFit:
    model: KpModel
    rms: float


def fit_kp_model(u, y, n_operators: int = 3, rounds: int = 4, stride: int = 10,
                 delta_range=None, w_min: float = 0.0, w_max=None, m_range=(0.05, 1.5),
                 grid_points=(15, 10, 8), refine: int = 3) -> KpModelFit:
    """Fit operator shapes and weights of an ``n_operators`` KP model.

    Shapes ``(delta, w, m)`` (slope gain fixed to 1) are chosen by coordinate grid
    search: each operator in turn is replaced by the candidate minimizing the NNLS
    fit residual with the others held fixed.  The candidate grids shrink around
    the incumbent after every sweep.  Operators start from a descending approach
    to the first input sample.  Operators with zero weight are dropped from the
    returned model.
    """
    u, _, _ = _samples(u)
    y, _, _ = _samples(y)
    idx = turning_point_decimate(u, stride)
    u, y = u[idx], y[idx]
    lo, hi = float(u.min()), float(u.max())
    span = hi - lo
    if delta_range is None:
        delta_range = (-hi, -lo)
    if w_max is None:
        w_max = span

    def make(delta, w, m):
        op = KpOperator(delta, w, m)
        op.p = descending_memory(u[0], op)
        return op

    nd, nw, nm = grid_points
    centres = np.linspace(*delta_range, n_operators + 2)[1:-1]
    current = [make(d, 0.3 * w_max, 0.5 * (m_range[0] + m_range[1])) for d in centres]
    d_half = 0.5 * (delta_range[1] - delta_range[0])
    w_half = 0.5 * w_max
    m_half = 0.5 * (m_range[1] - m_range[0])
    phi_cur = regressors(u, current)

    for sweep in range(rounds):
        for j in range(n_operators):
            op = current[j]
            ds = np.clip(np.linspace(op.delta - d_half, op.delta + d_half, nd), *delta_range)
            ws = np.clip(np.linspace(op.w - w_half, op.w + w_half, nw), w_min, w_max)
            ms = np.clip(np.linspace(op.m - m_half, op.m + m_half, nm), *m_range)
            cands = [make(d, w, m) for d, w, m in itertools.product(ds, ws, ms)]
            cands.append(op)
            phi_c = regressors(u, cands)
            others = np.delete(phi_cur, j, axis=1)
            best = None
            for c in range(len(cands)):
                phi = np.column_stack([others, phi_c[:, c]])
                _, rnorm = optimize.nnls(phi, y)
                if best is None or rnorm < best[0] - 1e-15:
                    best = (rnorm, c)
            current[j] = cands[best[1]]
            phi_cur[:, j] = phi_c[:, best[1]]
        if sweep + 1 >= rounds - refine:
            d_half, w_half, m_half = d_half / 2, w_half / 2, m_half / 2

    rho, rnorm = optimize.nnls(phi_cur, y)
    keep = [k for k in range(n_operators) if rho[k] > 0]
    if not keep:
        raise FitError("all fitted weights are zero")
    # carry each operator's memory through the data so the model ends in a consistent state
    model = KpModel([current[k] for k in keep], [float(rho[k]) for k in keep])
    model.simulate(u)
    final = KpModel([KpOperator(op.delta, op.w, op.m, op.gamma, op.p) for op in model.operators],
                    model.weights)
    return KpModelFit(final, float(rnorm / math.sqrt(y.size)))


def msm_loop_branches(i, stroke: float = 500e-6, i_max: float = 5.0,
                      centres=(3.1, 1.9), width: float = 0.5):
    """Synthetic quasi-static MSM loop: (ascending, descending) displacement at ``i``.

    Both branches are logistic transitions rescaled to run from 0 at ``i = 0`` to
    ``stroke`` at ``i = i_max``; the ascending transition sits at the higher
    current, giving a counterclockwise loop.
    """
    i = np.asarray(i, dtype=float)

    def branch(c):
        s = lambda x: 1.0 / (1.0 + np.exp(-(x - c) / width))
        return stroke * (s(i) - s(0.0)) / (s(i_max) - s(0.0))

    return branch(centres[0]), branch(centres[1])


def synthetic_msm_loop(rate: float = 2000.0, frequency: float = 0.1, i_max: float = 5.0,
                       periods: int = 2, stroke: float = 500e-6, noise_std: float = 0.0,
                       seed=0) -> TimeSeries:
    """Triangle current sweep ``0 -> i_max -> 0`` and the synthetic loop response."""
    h = 1.0 / rate
    n = int(round(periods * rate / frequency)) + 1
    k = np.arange(n)
    x = (k * frequency / rate) % 1.0
    current = i_max * np.where(x < 0.5, 2 * x, 2 - 2 * x)
    rising = np.r_[True, np.diff(current) > 0]
    asc, desc = msm_loop_branches(current, stroke, i_max)
    disp = np.where(rising, asc, desc)
    if noise_std:
        disp = disp + np.random.default_rng(seed).normal(0.0, noise_std, n)
    return TimeSeries(h, {"current": current, "displacement": disp},
                      {"frequency_hz": frequency, "stroke_m": stroke})
