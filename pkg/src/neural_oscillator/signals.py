from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Signal:
    """Vector-valued series on the uniform grid ``t_i = i * dt``.

    ``values`` has shape ``(n_times, dim)``.
    """

    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError(f"signal values must be (time, dim), got {v.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.isfinite(v).all():
            raise ValueError("signal contains non-finite values")
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_times(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt

    @property
    def horizon(self) -> float:
        return (self.n_times - 1) * self.dt


def time_grid(n_times: int, dt: float) -> np.ndarray:
    return np.arange(n_times) * dt
