"""Uniformly sampled multi-channel records and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TIME_COLUMN = "time_s"
FLOAT_FMT = "%.12g"


@dataclass
class TimeSeries:
    """Equal-length named channels sampled every ``h`` seconds from ``t0``."""

    h: float
    channels: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    t0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValueError(f"sample period must be > 0, got {self.h}")
        chans = {}
        length = None
        for name, values in self.channels.items():
            if name == TIME_COLUMN:
                raise ValueError(f"{TIME_COLUMN!r} is implicit and cannot be a channel")
            arr = np.asarray(values, dtype=float).reshape(-1)
            if length is None:
                length = arr.size
            elif arr.size != length:
                raise ValueError(
                    f"channel {name!r} has {arr.size} samples, expected {length}")
            chans[name] = arr
        self.channels = chans

    def __len__(self) -> int:
        for arr in self.channels.values():
            return arr.size
        return 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"no channel {name!r}; have {list(self.channels)}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.h

    @property
    def rate(self) -> float:
        return 1.0 / self.h

    def first(self) -> np.ndarray:
        if not self.channels:
            raise ValueError("time series has no channels")
        return next(iter(self.channels.values()))

    def select(self, *names: str) -> "TimeSeries":
        return TimeSeries(self.h, {n: self[n] for n in names}, dict(self.metadata), self.t0)

    def tail(self, n: int) -> "TimeSeries":
        start = max(0, len(self) - n)
        return TimeSeries(self.h, {k: v[start:] for k, v in self.channels.items()},
                          dict(self.metadata), self.t0 + start * self.h)

    def to_csv(self, path) -> Path:
        path = Path(path)
        data = np.column_stack([self.time] + list(self.channels.values())) if len(self) \
            else np.empty((0, len(self.channels) + 1))
        with open(path, "w", newline="") as fh:
            fh.write(",".join([TIME_COLUMN] + self.names) + "\n")
            np.savetxt(fh, data, fmt=FLOAT_FMT, delimiter=",")
        return path

    @classmethod
    def from_csv(cls, path, h: float | None = None) -> "TimeSeries":
        """Read a CSV written by :meth:`to_csv`.

        The sample period is recovered from the time column unless given.
        """
        path = Path(path)
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if not header or header[0] != TIME_COLUMN:
            raise ValueError(f"{path}: first column must be {TIME_COLUMN!r}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] and data.shape[1] != len(header):
            raise ValueError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
        t = data[:, 0] if data.shape[0] else np.zeros(0)
        if h is None:
            if t.size < 2:
                raise ValueError(f"{path}: need two samples to infer the sample period")
            h = (t[-1] - t[0]) / (t.size - 1)
            # time stamps carry 12 significant digits; snap to that precision
            h = float(f"{h:.11g}")
        chans = {name: data[:, i + 1] for i, name in enumerate(header[1:])}
        return cls(h, chans, {"source": str(path)}, float(t[0]) if t.size else 0.0)
