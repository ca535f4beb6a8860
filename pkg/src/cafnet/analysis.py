"""
Quality metrics and the checkerboard-artifact probe.

The probe feeds a constant gray image through an untrained (or trained)
network in eval mode and looks at the log-amplitude spectrum of the output.
Period-2 artifacts from the samplers show up as energy on the Nyquist row
and column of the centered spectrum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, InvalidInputError
from .network import Network
from .tensor import Tensor, no_grad

PSNR_CAP_DB = 100.0


# -- full-reference metrics ---------------------------------------------------------
def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def _ssim_2d(a: np.ndarray, b: np.ndarray, window: np.ndarray, c1: float, c2: float) -> float:
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a ** 2
    var_b = _filter_valid(b * b, window) - mu_b ** 2
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Mean SSIM over valid window positions.

    Accepts ``(h, w)`` images or ``(c, h, w)`` stacks, in which case the
    per-channel indices are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise DimensionError(f"ssim expects (h, w) or (c, h, w), got {a.shape}")
    if min(a.shape[-2:]) < window_size:
        raise InvalidInputError(f"image {a.shape[-2:]} smaller than the {window_size}px window")
    window = gaussian_window(window_size, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    if a.ndim == 2:
        return _ssim_2d(a, b, window, c1, c2)
    return float(np.mean([_ssim_2d(a[i], b[i], window, c1, c2) for i in range(a.shape[0])]))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float


def compare(reference: np.ndarray, test: np.ndarray) -> MetricReport:
    return MetricReport(psnr(test, reference), ssim(test, reference))


# -- Fourier transform ------------------------------------------------------------
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def _fft_last_axis(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n & (n - 1):
        return x @ _dft_matrix(n).T
    levels = n.bit_length() - 1
    # bit-reversal permutation, then iterative butterflies
    idx = np.arange(n)
    rev = np.zeros(n, dtype=int)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    y = x[..., rev].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        y = y.reshape(*x.shape[:-1], n // size, size)
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(*x.shape[:-1], n)
        size *= 2
    return y


def fft2(image: np.ndarray) -> np.ndarray:
    """2-D DFT: radix-2 row-column for power-of-two sides, direct DFT otherwise."""
    x = np.asarray(image)
    if x.ndim != 2:
        raise DimensionError(f"fft2 expects a 2-D array, got {x.shape}")
    rows = _fft_last_axis(x)
    return _fft_last_axis(rows.T).T


# -- spectrum probe ---------------------------------------------------------------
def luminance(image: np.ndarray) -> np.ndarray:
    """Unweighted channel mean of a ``(c, h, w)`` image; 2-D input passes through."""
    image = np.asarray(image, dtype=np.float64)
    return image.mean(axis=0) if image.ndim == 3 else image


def amplitude_spectrum(image: np.ndarray) -> np.ndarray:
    """``|F|`` of the luminance with DC moved to the center."""
    lum = luminance(image)
    if min(lum.shape) < 2:
        raise InvalidInputError(f"spectrum needs at least 2x2 pixels, got {lum.shape}")
    return np.fft.fftshift(np.abs(fft2(lum)))


def log_amplitude_spectrum(image: np.ndarray) -> np.ndarray:
    """``log(1 + |F|)`` with DC moved to the center, scaled so the maximum is 1."""
    amp = np.log1p(amplitude_spectrum(image))
    top = amp.max()
    return amp / top if top > 0 else np.zeros_like(amp)


def artifact_mask(shape: tuple[int, int], rate: int = 2) -> np.ndarray:
    """Rows/columns at multiples of ``1/rate`` of the sampling frequency, minus a 3x3 DC block."""
    h, w = shape
    ch, cw = h // 2, w // 2
    mask = np.zeros(shape, dtype=bool)
    for k in range(1, rate):
        mask[(ch + int(round(k * h / rate))) % h, :] = True
        mask[:, (cw + int(round(k * w / rate))) % w] = True
    mask[max(ch - 1, 0):ch + 2, max(cw - 1, 0):cw + 2] = False
    return mask


def checkerboard_score(spectrum: np.ndarray, rate: int = 2) -> float:
    """Largest log-amplitude on the rate-``rate`` artifact lines.

    Measured relative to the largest non-DC bin so that the DC term (and with
    it any constant offset of the image) does not enter the score. 1.0 means
    the strongest non-DC component lies on an artifact line.
    """
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.ndim != 2 or min(spectrum.shape) < 4:
        raise InvalidInputError(f"checkerboard_score needs a spectrum of at least 4x4, got {spectrum.shape}")
    h, w = spectrum.shape
    ac = spectrum.copy()
    ac[h // 2, w // 2] = 0.0
    top = ac.max()
    if top <= 0:
        return 0.0
    return float(spectrum[artifact_mask(spectrum.shape, rate)].max() / top)


def artifact_peak_ratio(amplitude: np.ndarray, rate: int = 2) -> float:
    """Artifact-line maximum of an amplitude spectrum over its median off-line amplitude."""
    mask = artifact_mask(amplitude.shape, rate)
    off = np.median(amplitude[~mask])
    peak = amplitude[mask].max()
    if off <= 0:
        return float("inf") if peak > 0 else 0.0
    return float(peak / off)


@dataclass
class SpectrumReport:
    spectrum: np.ndarray = field(repr=False)
    checkerboard_score: float
    peaks: list[tuple[int, int, float]]


def spectral_peaks(spectrum: np.ndarray, threshold: float = 0.5,
                   limit: int = 64) -> list[tuple[int, int, float]]:
    """Bins at or above ``threshold`` as (u, v, value), u/v relative to DC, strongest first."""
    h, w = spectrum.shape
    ys, xs = np.nonzero(spectrum >= threshold)
    vals = spectrum[ys, xs]
    order = np.lexsort((xs, ys, -vals))[:limit]
    return [(int(xs[i] - w // 2), int(ys[i] - h // 2), float(vals[i])) for i in order]


def analyze(image: np.ndarray, rate: int = 2, threshold: float = 0.5) -> SpectrumReport:
    spec = log_amplitude_spectrum(image)
    return SpectrumReport(spec, checkerboard_score(spec, rate), spectral_peaks(spec, threshold))


def gray_probe(net: Network, h: int, w: Optional[int] = None, level: float = 0.5) -> np.ndarray:
    """Eval-mode output ``(3, h, w)`` for a constant input image of value ``level``."""
    w = h if w is None else w
    x = Tensor(np.full((1, 3, h, w), level), dtype=net.dtype)
    g = None
    if net.config.variant == "local_global":
        size = net.config.global_input_size
        g = Tensor(np.full((1, 3, size, size), level), dtype=net.dtype)
    with no_grad():
        return net.forward(x, g, train=False).data[0]
