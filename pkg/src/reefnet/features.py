"""Supplementary feature-map channels: decorrelation whitening, a Weber-law
texture descriptor, and phase congruency.

Every operation takes a single-channel grid and returns a grid of the same
height and width with values in [0, 1], ready to be stacked as an extra
network input channel. All are pure functions; the phase-congruency filter
bank is cached per (shape, spec) and shared safely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reefnet.gridcore import ImageGrid


@dataclass(frozen=True)
class ZcaSpec:
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class WldSpec:
    """Weber descriptor parameters.

    ``delta`` guards the division by the center intensity; it is sized for
    inputs on a [0, 1] scale and can be set to 0 on strictly positive images,
    which makes the excitation map exactly invariant to global rescaling.
    """

    alpha: float = 1.0
    delta: float = 1e-6
    emit: str = "excitation"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.emit not in ("excitation", "orientation", "both"):
            raise ValueError(f"unknown emit mode {self.emit!r}")


@dataclass(frozen=True)
class PcSpec:
    scales: int = 4
    orientations: int = 6
    min_wavelength: float = 3.0
    mult: float = 2.1
    sigma_on_f: float = 0.55
    noise_k: float = 2.0
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.scales < 2 or self.orientations < 2:
            raise ValueError("need at least 2 scales and 2 orientations")
        if self.mult <= 1.0:
            raise ValueError("mult must exceed 1")
        if not 0.0 < self.sigma_on_f < 1.0:
            raise ValueError("sigma_on_f must lie in (0, 1)")


def _require_gray(img: ImageGrid) -> np.ndarray:
    if img.channels != 1:
        raise ValueError(f"expected a single-channel grid, got {img.channels} channels")
    return img.data[:, :, 0]


def _rescale_unit(arr: np.ndarray) -> np.ndarray:
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.full_like(arr, 0.5)
    return (arr - lo) / (hi - lo)


def zca_transform(x: np.ndarray, epsilon: float) -> np.ndarray:
    """Whiten the columns of ``x`` (rows are observations).

    Columns are mean-centered; with the column covariance C = U diag(l) U^T
    the map U diag(1/sqrt(l + eps)) U^T is applied. The column covariance of
    the result approaches identity on the non-null eigenspace as eps -> 0.
    """
    centered = x - x.mean(axis=0)
    n = x.shape[0]
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    # eigh can return slightly negative values for a singular spectrum
    scale = 1.0 / np.sqrt(np.maximum(eigvals, 0.0) + epsilon)
    return centered @ (eigvecs * scale) @ eigvecs.T


def zca_whiten(img: ImageGrid, spec: ZcaSpec = ZcaSpec()) -> ImageGrid:
    """Decorrelate a grayscale patch and rescale the result to [0, 1]."""
    x = _require_gray(img)
    if img.height < 2:
        raise ValueError("need at least 2 rows of observations")
    whitened = zca_transform(x, spec.epsilon)
    return ImageGrid(_rescale_unit(whitened)[:, :, np.newaxis])


def _edge_pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, 1, mode="edge")


def wld(img: ImageGrid, spec: WldSpec = WldSpec()) -> ImageGrid:
    """Weber-law texture maps over the 8-neighborhood.

    Excitation is arctan(alpha * sum(neighbor - center) / (center + delta)),
    mapped from [-pi/2, pi/2] onto [0, 1]. Orientation is the gradient angle
    atan2(below - above, right - left) mapped from [-pi, pi] onto [0, 1].
    Borders replicate edge pixels.
    """
    x = _require_gray(img)
    if min(x.shape) < 3:
        raise ValueError("need at least a 3x3 grid")
    p = _edge_pad(x)
    h, w = x.shape
    neighbor_sum = np.zeros_like(x)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neighbor_sum += p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    excitation = np.arctan(spec.alpha * (neighbor_sum - 8.0 * x) / (x + spec.delta))
    excitation = (excitation + np.pi / 2) / np.pi

    if spec.emit == "excitation":
        return ImageGrid(excitation[:, :, np.newaxis])

    below = p[2:2 + h, 1:1 + w]
    above = p[0:h, 1:1 + w]
    right = p[1:1 + h, 2:2 + w]
    left = p[1:1 + h, 0:w]
    orientation = (np.arctan2(below - above, right - left) + np.pi) / (2 * np.pi)
    if spec.emit == "orientation":
        return ImageGrid(orientation[:, :, np.newaxis])
    return ImageGrid(np.stack([excitation, orientation], axis=2))


_FILTER_CACHE: dict = {}


def _log_gabor_bank(shape: tuple[int, int], spec: PcSpec) -> list[list[np.ndarray]]:
    """Frequency-domain filters, indexed [orientation][scale], DC zeroed."""
    key = (shape, spec)
    cached = _FILTER_CACHE.get(key)
    if cached is not None:
        return cached

    rows, cols = shape
    cy, cx = rows // 2, cols // 2
    y = (np.arange(rows)[:, np.newaxis] - cy) / rows
    x = (np.arange(cols)[np.newaxis, :] - cx) / cols
    radius = np.hypot(x, y)
    radius[cy, cx] = 1.0  # avoid log(0); the DC bin is zeroed below
    theta = np.arctan2(-y, x)
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    log_sigma = np.log(spec.sigma_on_f)
    radial = []
    for s in range(spec.scales):
        f0 = 1.0 / (spec.min_wavelength * spec.mult ** s)
        g = np.exp(-(np.log(radius / f0) ** 2) / (2 * log_sigma ** 2))
        g[cy, cx] = 0.0
        radial.append(g)

    bank = []
    for o in range(spec.orientations):
        angle = o * np.pi / spec.orientations
        ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
        dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        sigma_theta = np.pi / spec.orientations / 1.3
        spread = np.exp(-(dtheta ** 2) / (2 * sigma_theta ** 2))
        bank.append([np.fft.ifftshift(g * spread) for g in radial])

    _FILTER_CACHE[key] = bank
    return bank


def phase_congruency(img: ImageGrid, spec: PcSpec = PcSpec()) -> ImageGrid:
    """Phase congruency of a grayscale grid, in [0, 1] per pixel.

    A log-Gabor bank over (scales x orientations) measures, per orientation,
    how consistently the filter responses agree in phase; the energy is
    denoised with a threshold derived from the smallest-scale amplitude
    (Rayleigh statistics, ``noise_k`` deviations above the mean), summed over
    orientations, and normalized by the total amplitude. The result is
    independent of global brightness (the bank has no DC response) and, up
    to the epsilon guard, of global contrast.
    """
    x = _require_gray(img)
    bank = _log_gabor_bank(x.shape, spec)
    spectrum = np.fft.fft2(x)

    total_energy = np.zeros_like(x)
    total_amplitude = np.zeros_like(x)
    for filters in bank:
        responses = [np.fft.ifft2(spectrum * f) for f in filters]
        even = [r.real for r in responses]
        odd = [r.imag for r in responses]
        amps = [np.hypot(e, o) for e, o in zip(even, odd)]

        sum_e = np.sum(even, axis=0)
        sum_o = np.sum(odd, axis=0)
        sum_a = np.sum(amps, axis=0)

        norm = np.hypot(sum_e, sum_o) + spec.epsilon
        mean_e = sum_e / norm
        mean_o = sum_o / norm
        energy = np.zeros_like(x)
        for e, o in zip(even, odd):
            energy += e * mean_e + o * mean_o - np.abs(e * mean_o - o * mean_e)

        # Noise statistics from the smallest-scale response, extrapolated
        # across scales as a geometric series of shrinking bandwidths.
        tau = np.median(amps[0]) / np.sqrt(np.log(4.0))
        total_tau = tau * (1 - (1 / spec.mult) ** spec.scales) / (1 - 1 / spec.mult)
        noise_mean = total_tau * np.sqrt(np.pi / 2)
        noise_sigma = total_tau * np.sqrt((4 - np.pi) / 2)
        threshold = noise_mean + spec.noise_k * noise_sigma

        total_energy += np.maximum(energy - threshold, 0.0)
        total_amplitude += sum_a

    pc = total_energy / (total_amplitude + spec.epsilon)
    return ImageGrid(np.clip(pc, 0.0, 1.0)[:, :, np.newaxis])
