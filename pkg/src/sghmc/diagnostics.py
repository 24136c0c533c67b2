"""Chain-quality and distribution-distance measurements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DegenerateSeriesError
from .models import PhaseState, hamiltonian


def autocorrelation(series) -> np.ndarray:
    """Normalized autocorrelation ``rho_s`` for all lags, via FFT."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n]
    if acf[0] <= 0:
        raise DegenerateSeriesError("series has zero variance")
    return acf / acf[0]


def autocorrelation_time(series) -> float:
    """``1 + sum_s rho_s``, truncated at the first negative autocorrelation.

    Truncation keeps the noisy tail of the empirical autocorrelation out of
    the sum; the result is always >= 1.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 100:
        raise ValueError("need at least 100 samples to estimate an autocorrelation time")
    if np.ptp(x) == 0:
        raise DegenerateSeriesError("series is constant")
    rho = autocorrelation(x)
    neg = np.flatnonzero(rho[1:] < 0)
    stop = neg[0] + 1 if neg.size else rho.size
    return float(1.0 + rho[1:stop].sum())


def mean_autocorrelation_time(samples) -> float:
    """Average ACT over chains and coordinates of a ``(n, [chains,] d)`` array."""
    s = np.asarray(samples, dtype=float)
    s = s.reshape(s.shape[0], -1)
    return float(np.mean([autocorrelation_time(s[:, j]) for j in range(s.shape[1])]))


@dataclass
class HistogramDensity:
    edges: np.ndarray
    counts: np.ndarray
    heights: np.ndarray
    n_outside: int = 0

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def rows(self):
        """``(bin_left, bin_right, height)`` rows for CSV output."""
        return list(zip(self.edges[:-1], self.edges[1:], self.heights))


def histogram(samples, bounds, n_bins: int) -> HistogramDensity:
    """Normalized histogram on uniform bins; out-of-range samples are counted apart."""
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    lo, hi = map(float, bounds)
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise ValueError("bounds must be finite and increasing")
    x = np.asarray(samples, dtype=float).ravel()
    inside = (x >= lo) & (x <= hi)
    n_in = int(inside.sum())
    if n_in == 0:
        raise ValueError("all samples fall outside the histogram bounds")
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(x[inside], bins=edges)
    heights = counts / (n_in * (edges[1] - edges[0]))
    return HistogramDensity(edges, counts, heights, n_outside=int(x.size - n_in))


def bin_averages(density, edges, support=None) -> np.ndarray:
    """Average of ``density`` over each bin.

    The density is normalized by adaptive quadrature over ``support``
    (default: the span of ``edges``).
    """
    edges = np.asarray(edges, dtype=float)
    mass = np.array([integrate.quad(density, a, b, epsabs=0.0, epsrel=1e-10, limit=200)[0]
                     for a, b in zip(edges[:-1], edges[1:])])
    if support is None:
        z = mass.sum()
    else:
        lo, hi = support
        # split at the bin edges so quad sees every mode
        pts = np.concatenate([[lo], edges[(edges > lo) & (edges < hi)], [hi]])
        z = sum(integrate.quad(density, a, b, epsabs=0.0, epsrel=1e-10, limit=200)[0]
                for a, b in zip(pts[:-1], pts[1:]))
    return mass / z / np.diff(edges)


def l1_distance(h: HistogramDensity, true_density) -> float:
    """``sum_i |height_i - mean of true density over bin i| * width``, in [0, 2].

    ``true_density`` may be a callable (normalized on the histogram support
    by quadrature) or another histogram on the same bins.
    """
    if isinstance(true_density, HistogramDensity):
        if not np.allclose(true_density.edges, h.edges):
            raise ValueError("histograms use different bins")
        ref = true_density.heights
    else:
        ref = bin_averages(true_density, h.edges)
    return float(np.sum(np.abs(h.heights - ref) * np.diff(h.edges)))


def covariance_error(samples, sigma_true) -> float:
    """Mean absolute error over the distinct entries of the unbiased sample covariance."""
    s = np.asarray(samples, dtype=float)
    s = s.reshape(-1, s.shape[-1])
    if s.shape[0] < 2:
        raise ValueError("need at least two samples")
    est = np.atleast_2d(np.cov(s, rowvar=False))
    iu = np.triu_indices(est.shape[0])
    return float(np.mean(np.abs(est[iu] - np.asarray(sigma_true, dtype=float)[iu])))


def energy_trace(model, thetas, rs, mass=None) -> np.ndarray:
    """``H(theta_i, r_i)`` for each recorded state."""
    return hamiltonian(model, PhaseState(thetas, rs), mass)


def direction_autocorrelation(samples) -> float:
    """Mean cosine between consecutive increments of a ``(n, d)`` path.

    Near zero for a random walk; positive when momentum carries the path
    along a direction for several steps.
    """
    s = np.asarray(samples, dtype=float)
    d = np.diff(s, axis=0)
    norms = np.linalg.norm(d, axis=1)
    ok = (norms[:-1] > 0) & (norms[1:] > 0)
    cos = np.sum(d[:-1] * d[1:], axis=1)[ok] / (norms[:-1] * norms[1:])[ok]
    return float(np.mean(cos))
