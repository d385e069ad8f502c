import numpy as np
import pytest

from neural_oscillator.stochastic import (HARMONIC_AMPLITUDE, SeededRng, SpectrumGrid, evolutionary_variance,
                                          make_spectrum_grid, sample_harmonic_excitation,
                                          sample_harmonizable_batch, sample_harmonizable_excitation,
                                          spectral_mass_coverage, variance_by_quadrature,
                                          wigner_ville_spectrum)


def test_harmonic_pinned_value_at_zero():
    u = sample_harmonic_excitation(SeededRng(0), coefficients=np.full(5, 35.0))
    assert u.values[0, 0] == 70.0
    assert u.dt == 0.01 and u.n_times == 1000


def test_harmonic_bounded_and_deterministic():
    for stream in range(50):
        u = sample_harmonic_excitation(SeededRng(4, stream))
        assert np.abs(u.values).max() <= 5 * HARMONIC_AMPLITUDE
    a = sample_harmonic_excitation(SeededRng(4, 3)).values
    b = sample_harmonic_excitation(SeededRng(4, 3)).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_harmonic_excitation(SeededRng(4, 2)).values)


def test_harmonic_is_band_limited():
    # 10 s window at 0.1 Hz resolution: the five frequencies fall on bins 2, 4, 6, 8, 10
    u = sample_harmonic_excitation(SeededRng(1, 0)).values[:, 0]
    power = np.abs(np.fft.rfft(u)) ** 2
    mask = np.zeros(power.size, bool)
    mask[[2, 4, 6, 8, 10]] = True
    assert power[~mask].sum() <= 1e-20 * power[mask].sum()


def test_spectrum_values():
    assert wigner_ville_spectrum(1.0, 1.0) == pytest.approx(2500 * np.exp(-0.6))
    assert wigner_ville_spectrum(1.0, 1.0) == pytest.approx(1372.029, abs=1e-3)
    assert np.all(wigner_ville_spectrum(0.0, np.linspace(0, 10, 5)) == 0)
    assert np.all(wigner_ville_spectrum(np.linspace(0, 10, 5), 0.0) == 0)


def test_zero_spectrum_gives_zero_signal():
    grid = make_spectrum_grid(spectrum=lambda t, f: 0.0 * t * f)
    assert np.array_equal(sample_harmonizable_excitation(SeededRng(2), grid).values, np.zeros((1000, 1)))


def test_grid_validation():
    with pytest.raises(ValueError):
        make_spectrum_grid(n_freq=0)
    with pytest.raises(ValueError):
        SpectrumGrid(np.zeros(2), np.array([]), 0.1, np.zeros((2, 0)))
    with pytest.raises(ValueError):
        SpectrumGrid(np.zeros(1), np.ones(1), 0.1, -np.ones((1, 1)))


def test_harmonizable_deterministic_and_per_stream():
    grid = make_spectrum_grid()
    a = sample_harmonizable_excitation(SeededRng(9, 5), grid).values
    b = sample_harmonizable_excitation(SeededRng(9, 5), grid).values
    assert a.tobytes() == b.tobytes()
    batch = sample_harmonizable_batch(9, [4, 5, 6], grid)
    assert np.allclose(batch[1], a[:, 0], rtol=0, atol=1e-12)


def test_streams_uncorrelated():
    draws = np.stack([SeededRng(0, s).normal(4000) for s in range(2)])
    assert abs(np.corrcoef(draws)[0, 1]) < 4 / np.sqrt(4000)


def test_box_muller_moments():
    z = SeededRng(3).normal(20001)
    assert z.size == 20001
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert z.var() == pytest.approx(1.0, abs=0.05)


def test_discrete_variance_matches_quadrature():
    grid = make_spectrum_grid()
    var = evolutionary_variance(grid)
    for t in (1.0, 3.0, 5.0):
        i = int(round(t / 0.01))
        assert var[i] == pytest.approx(variance_by_quadrature(t, 10.0), rel=1e-3)


def test_ensemble_mean_and_variance():
    grid = make_spectrum_grid()
    U = sample_harmonizable_batch(17, range(3000), grid)
    for t in (1.0, 3.0, 5.0):
        col = U[:, int(round(t / 0.01))]
        target = variance_by_quadrature(t)
        assert abs(col.mean()) < 3 * np.sqrt(target / col.size)
        assert col.var() == pytest.approx(target, rel=0.1)


def test_band_captures_spectral_mass():
    assert spectral_mass_coverage(make_spectrum_grid(np.arange(0, 10, 0.5))) >= 0.99
