"""Radix-2 FFT and the power periodogram of analysis frames."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError

DEFAULT_NFFT = 512


def _check_nfft(n_fft: int) -> int:
    n_fft = int(n_fft)
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise DataError(f"n_fft must be a power of two, got {n_fft}")
    return n_fft


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=None)
def _twiddles(n: int) -> np.ndarray:
    # exp(-2j*pi*k/n) for k < n/2; angles from exact integer ratios
    tw = np.exp(-2j * np.pi * np.arange(max(n // 2, 1)) / n)
    tw.setflags(write=False)
    return tw


def fft(frame, n_fft: int = DEFAULT_NFFT) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT along the last axis.

    Frames shorter than ``n_fft`` are zero padded at the end. Leading axes
    are transformed independently, so a whole ``(n_w, W)`` frame matrix can
    be passed at once.

    Raises:
        DataError: if ``n_fft`` is not a power of two or a frame is longer
            than ``n_fft``.
    """
    n = _check_nfft(n_fft)
    x = np.asarray(frame)
    if x.ndim == 0:
        raise DataError("fft needs at least a 1-D frame")
    if x.shape[-1] > n:
        raise DataError(f"frame of {x.shape[-1]} samples exceeds n_fft={n}; choose a larger n_fft")
    lead = x.shape[:-1]
    buf = np.zeros(lead + (n,), dtype=complex)
    buf[..., : x.shape[-1]] = x
    buf = buf[..., _bit_reversal(n)]
    tw_full = _twiddles(n)
    half = 1
    while half < n:
        span = 2 * half
        tw = tw_full[:: n // span][:half]
        blocks = buf.reshape(lead + (n // span, 2, half))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * tw
        buf = np.stack((even + odd, even - odd), axis=-2).reshape(lead + (n,))
        half = span
    return buf


@dataclass(frozen=True)
class Periodogram:
    """Power spectrum ``|FFT|^2 / n_fft`` up to Nyquist.

    ``bins`` has shape ``(..., n_fft // 2 + 1)``; the leading axes follow the
    frames that produced it.
    """

    bins: np.ndarray
    n_fft: int
    sr: float | None = None

    @property
    def bin_hz(self) -> float | None:
        return None if self.sr is None else self.sr / self.n_fft

    @property
    def n_bins(self) -> int:
        return self.bins.shape[-1]


def periodogram(frame, n_fft: int = DEFAULT_NFFT, sr: float | None = None) -> Periodogram:
    """Periodogram of one frame or of a stack of frames."""
    coeffs = fft(frame, n_fft)[..., : n_fft // 2 + 1]
    bins = (coeffs.real ** 2 + coeffs.imag ** 2) / n_fft
    return Periodogram(bins=bins, n_fft=int(n_fft), sr=sr)
