"""Seeded excitation generators: random harmonic sums and a nonstationary
Gaussian ground motion defined by its Wigner-Ville spectrum.

Random numbers come from the counter-based Philox4x64-10 generator keyed by
``(seed, stream)``.  Each sample owns one stream, so sample ``l`` is
reproducible on its own and independent of every other stream.  Normal
variates use the Box-Muller transform on that uniform stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .signals import Signal

ALGORITHM = "philox4x64-10"
HARMONIC_AMPLITUDE = 35.0
# (kind, angular frequency) of the five harmonic terms
HARMONIC_TERMS = (
    ("sin", 0.4 * np.pi),
    ("cos", 0.8 * np.pi),
    ("sin", 1.2 * np.pi),
    ("cos", 1.6 * np.pi),
    ("sin", 2.0 * np.pi),
)
DEFAULT_DT = 0.01
DEFAULT_N_TIMES = 1000
DEFAULT_F_MAX = 10.0
DEFAULT_N_FREQ = 512


@dataclass(frozen=True)
class SeededRng:
    seed: int
    stream: int = 0
    algorithm: str = ALGORITHM

    def generator(self) -> np.random.Generator:
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported generator {self.algorithm!r}")
        key = [int(self.seed) & 0xFFFFFFFFFFFFFFFF, int(self.stream) & 0xFFFFFFFFFFFFFFFF]
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """First ``n`` uniforms of the stream mapped to ``[low, high)``."""
        return low + (high - low) * self.generator().random(n)

    def normal(self, n: int) -> np.ndarray:
        """First ``n`` standard normals of the stream (Box-Muller)."""
        m = (n + 1) // 2
        u = self.generator().random(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], keeps log finite
        u2 = u[m:]
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
        return z[:n]

    def integers(self, n: int) -> np.ndarray:
        return self.generator().integers(0, 2**63 - 1, size=n, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator().permutation(n)


# ------------------------------------------------------------ harmonic sum
def harmonic_excitation(coefficients, times) -> np.ndarray:
    c = np.asarray(coefficients, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    out = np.zeros(t.shape)
    for cj, (kind, w) in zip(c, HARMONIC_TERMS):
        out += cj * (np.sin(w * t) if kind == "sin" else np.cos(w * t))
    return out


def sample_harmonic_coefficients(rng: SeededRng) -> np.ndarray:
    return rng.uniform(len(HARMONIC_TERMS), -HARMONIC_AMPLITUDE, HARMONIC_AMPLITUDE)


def sample_harmonic_excitation(rng: SeededRng, n_times: int = DEFAULT_N_TIMES,
                               dt: float = DEFAULT_DT, coefficients=None) -> Signal:
    """One draw of the five-term random harmonic ground acceleration.

    ``coefficients`` overrides the random draw (used to pin values in tests).
    """
    c = sample_harmonic_coefficients(rng) if coefficients is None else coefficients
    return Signal(dt, harmonic_excitation(c, np.arange(n_times) * dt))


# ------------------------------------------------------- harmonizable motion
def wigner_ville_spectrum(t, f):
    t = np.asarray(t, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return 2500.0 * t**2 * f**2 * np.exp(-0.3 * (1.0 + f**2) * t)


@dataclass
class SpectrumGrid:
    times: np.ndarray
    freqs: np.ndarray
    df: float
    values: np.ndarray  # (n_times, n_freq), W(t_i, f_k)

    def __post_init__(self):
        if len(self.freqs) == 0:
            raise ValueError("empty frequency grid")
        if np.any(self.values < 0):
            raise ValueError("spectrum must be nonnegative")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else DEFAULT_DT


def make_spectrum_grid(times=None, f_max: float = DEFAULT_F_MAX,
                       n_freq: int = DEFAULT_N_FREQ, spectrum=wigner_ville_spectrum) -> SpectrumGrid:
    """Midpoint frequency grid ``f_k = (k - 1/2) df`` on ``[0, f_max]``."""
    if n_freq < 1:
        raise ValueError("empty frequency grid")
    if times is None:
        times = np.arange(DEFAULT_N_TIMES) * DEFAULT_DT
    times = np.asarray(times, dtype=np.float64)
    df = f_max / n_freq
    freqs = (np.arange(n_freq) + 0.5) * df
    values = spectrum(times[:, None], freqs[None, :])
    return SpectrumGrid(times, freqs, df, np.asarray(values, dtype=np.float64))


def _amplitude_bases(grid: SpectrumGrid):
    amp = np.sqrt(2.0 * grid.values * grid.df)
    phase = 2.0 * np.pi * grid.times[:, None] * grid.freqs[None, :]
    return amp * np.cos(phase), amp * np.sin(phase)


def sample_harmonizable_batch(seed: int, streams, grid: SpectrumGrid, chunk: int = 512) -> np.ndarray:
    """Spectral-representation draws, one row per stream: ``(len(streams), n_times)``.

    ``U(t) = sum_k sqrt(2 W(t, f_k) df) [A_k cos(2 pi f_k t) + B_k sin(2 pi f_k t)]``
    with ``A_k, B_k`` i.i.d. standard normal taken from the sample's stream.
    """
    streams = list(streams)
    cos_b, sin_b = _amplitude_bases(grid)
    nf = len(grid.freqs)
    out = np.empty((len(streams), len(grid.times)))
    for start in range(0, len(streams), chunk):
        block = streams[start:start + chunk]
        z = np.stack([SeededRng(seed, s).normal(2 * nf) for s in block], axis=1)
        out[start:start + len(block)] = (cos_b @ z[:nf] + sin_b @ z[nf:]).T
    return out


def sample_harmonizable_excitation(rng: SeededRng, grid: SpectrumGrid) -> Signal:
    u = sample_harmonizable_batch(rng.seed, [rng.stream], grid)[0]
    return Signal(grid.dt, u)


def evolutionary_variance(grid: SpectrumGrid) -> np.ndarray:
    """Discrete variance ``sum_k 2 W(t, f_k) df`` of the spectral sum."""
    return 2.0 * grid.values.sum(axis=1) * grid.df


def variance_by_quadrature(t: float, f_max: float = np.inf, spectrum=wigner_ville_spectrum) -> float:
    """``int_0^f_max 2 W(t, f) df`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda f: 2.0 * spectrum(t, f), 0.0, f_max, limit=200)
    return float(val)


def spectral_mass_coverage(grid: SpectrumGrid, spectrum=wigner_ville_spectrum) -> float:
    """Fraction of the spectral mass over the time grid captured by the band."""
    f_max = grid.freqs[-1] + 0.5 * grid.df
    inside = sum(variance_by_quadrature(t, f_max, spectrum) for t in grid.times)
    total = sum(variance_by_quadrature(t, np.inf, spectrum) for t in grid.times)
    return inside / total if total > 0 else 1.0
