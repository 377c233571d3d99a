"""Mel filter banks, log filter-bank energies (MFB) and cepstral coefficients (MFCC)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .spectral import Periodogram, _check_nfft

ENERGY_FLOOR = 1e-12

MFB = "MFB"
MFCC = "MFCC"
_KIND_CODES = {MFB: 1, MFCC: 2}
_QCT_MAGIC = b"QCT1"
_QCT_HEADER = struct.Struct("<4sIII")


def hz_to_mel(f):
    """Mel value of a frequency in Hz, ``2595 * log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DataError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    """Inverse of :func:`hz_to_mel`."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DataError("mel value must be non-negative")
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class FilterBank:
    """Triangular filters as rows over the ``n_fft // 2 + 1`` periodogram bins."""

    weights: np.ndarray
    sr: float
    n_fft: int
    mel_points: np.ndarray
    bin_points: np.ndarray

    @property
    def n_fl(self) -> int:
        return self.weights.shape[0]

    @property
    def hz_points(self) -> np.ndarray:
        return mel_to_hz(self.mel_points)


def build_filterbank(sr: float, n_fl: int = 26, n_fft: int = 512) -> FilterBank:
    """Build ``n_fl`` triangular filters equally spaced on the Mel scale.

    ``n_fl + 2`` anchors are spread evenly in Mel over ``[0, mel(sr/2)]``,
    mapped back to Hz and snapped to FFT bins with
    ``floor((n_fft + 1) * f / sr)``. Filter ``k`` rises from anchor ``k-1`` to
    a peak of exactly 1 at anchor ``k`` and falls to zero at anchor ``k+1``.

    Raises:
        DataError: when two anchors snap to the same bin, i.e. the sampling
            rate is too low to resolve ``n_fl`` distinct filters.
    """
    n_fft = _check_nfft(n_fft)
    if n_fl < 1:
        raise DataError(f"need at least one filter, got n_fl={n_fl}")
    if not sr > 0:
        raise DataError(f"sampling rate must be positive, got {sr}")
    mel_points = np.linspace(0.0, hz_to_mel(sr / 2.0), n_fl + 2)
    hz = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz / sr).astype(int)
    same = np.flatnonzero(np.diff(bins) == 0)
    if same.size:
        j = int(same[0])
        raise DataError(
            f"anchors {j} and {j + 1} both snap to FFT bin {bins[j]} at sr={sr}, n_fft={n_fft}; "
            f"filters {max(j, 1)} and {min(j + 1, n_fl)} collide (reduce n_fl or raise n_fft)"
        )
    n_bins = n_fft // 2 + 1
    weights = np.zeros((n_fl, n_bins))
    k = np.arange(n_bins)
    for m in range(1, n_fl + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        rise = (k >= lo) & (k < mid)
        fall = (k >= mid) & (k <= hi)
        weights[m - 1, rise] = (k[rise] - lo) / (mid - lo)
        weights[m - 1, fall] = (hi - k[fall]) / (hi - mid)
    for arr in (weights, mel_points, bins):
        arr.setflags(write=False)
    return FilterBank(weights=weights, sr=float(sr), n_fft=n_fft,
                      mel_points=mel_points, bin_points=bins)


@dataclass(frozen=True)
class CepstralTensor:
    """``n_w x n_keep`` time-feature matrix of MFB or MFCC values."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise DataError(f"unknown tensor kind {self.kind!r}")
        if self.values.ndim != 2:
            raise DataError("cepstral tensor must be 2-D (frames x coefficients)")

    @property
    def n_w(self) -> int:
        return self.values.shape[0]

    @property
    def n_keep(self) -> int:
        return self.values.shape[1]

    def truncate(self, n_keep: int) -> "CepstralTensor":
        if n_keep > self.n_keep:
            raise DataError(f"cannot keep {n_keep} of {self.n_keep} coefficients")
        return CepstralTensor(self.values[:, :n_keep], self.kind)


def mfb(p: Periodogram, fb: FilterBank, n_keep: int | None = None,
        log_base: str = "10") -> CepstralTensor:
    """Log filter-bank energies, ``log(max(1e-12, w_k . X_t))`` per frame.

    Args:
        p: periodogram of a ``(n_w, n_bins)`` frame stack (a single frame is
            promoted to one row).
        fb: filter bank matching the periodogram's bin count.
        n_keep: number of leading filters to retain; all by default.
        log_base: ``"10"`` or ``"e"``.
    """
    bins = np.atleast_2d(p.bins)
    if bins.shape[-1] != fb.weights.shape[1]:
        raise DataError(
            f"periodogram has {bins.shape[-1]} bins but the filter bank expects {fb.weights.shape[1]}"
        )
    n_keep = fb.n_fl if n_keep is None else n_keep
    if not 1 <= n_keep <= fb.n_fl:
        raise DataError(f"n_keep={n_keep} outside 1..{fb.n_fl}")
    energy = np.maximum(bins @ fb.weights[:n_keep].T, ENERGY_FLOOR)
    if log_base == "10":
        values = np.log10(energy)
    elif log_base == "e":
        values = np.log(energy)
    else:
        raise DataError(f"log_base must be '10' or 'e', got {log_base!r}")
    return CepstralTensor(values, MFB)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``k`` holds the ``k``-th cosine."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    scale = np.full((n, 1), np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    return basis * scale


def dct_mfcc(mfb_tensor: CepstralTensor) -> CepstralTensor:
    """Orthonormal DCT-II of every MFB row; shape is unchanged."""
    if mfb_tensor.kind != MFB:
        raise DataError(f"expected an MFB tensor, got {mfb_tensor.kind}")
    basis = dct_matrix(mfb_tensor.n_keep)
    return CepstralTensor(mfb_tensor.values @ basis.T, MFCC)


def idct_rows(values: np.ndarray) -> np.ndarray:
    """Inverse of the orthonormal DCT-II applied along the last axis."""
    return np.asarray(values) @ dct_matrix(np.shape(values)[-1])


def write_qct(path, values: np.ndarray, kind: str) -> None:
    """Write a ``QCT1`` tensor: header then row-major little-endian float64."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise DataError("QCT1 tensors are 2-D")
    header = _QCT_HEADER.pack(_QCT_MAGIC, _KIND_CODES[kind], values.shape[0], values.shape[1])
    Path(path).write_bytes(header + values.tobytes())


def read_qct(path) -> tuple[np.ndarray, str]:
    """Read a ``QCT1`` tensor; returns ``(values, kind)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _QCT_HEADER.size:
        raise DataError(f"{path}: truncated QCT1 header")
    magic, code, n_w, n_cols = _QCT_HEADER.unpack_from(raw)
    if magic != _QCT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if code not in kinds:
        raise DataError(f"{path}: unknown kind code {code}")
    body = raw[_QCT_HEADER.size:]
    if len(body) != 8 * n_w * n_cols:
        raise DataError(f"{path}: expected {n_w}x{n_cols} float64 payload")
    values = np.frombuffer(body, dtype="<f8").reshape(n_w, n_cols).astype(float)
    return values, kinds[code]


def write_tensor_csv(path, values: np.ndarray, prefix: str = "c") -> None:
    """One row per frame with a ``frame`` index column."""
    values = np.asarray(values)
    header = ",".join(["frame"] + [f"{prefix}{j}" for j in range(values.shape[1])])
    cols = np.column_stack([np.arange(values.shape[0]), values])
    fmt = ["%d"] + ["%.17g"] * values.shape[1]
    np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt=fmt)
