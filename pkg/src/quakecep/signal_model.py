"""Acceleration records and overlapping framing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CHANNELS = ("ax_top", "ay_top", "ax_bot", "ay_bot")

_SR_RTOL = 1e-6


@dataclass(frozen=True)
class AccelRecord:
    """One uniformly sampled acceleration channel.

    Attributes:
        samples: acceleration values (units consistent within a dataset).
        sr: sampling rate in Hz.
        channel_id: sensor position and direction, e.g. ``"ax_top"``.
    """

    samples: np.ndarray
    sr: float
    channel_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError(f"record {self.channel_id!r}: samples must be a non-empty 1-D array")
        if not self.sr > 0:
            raise DataError(f"record {self.channel_id!r}: sampling rate must be positive, got {self.sr}")
        bad = np.flatnonzero(~np.isfinite(samples))
        if bad.size:
            raise DataError(
                f"record {self.channel_id!r}: non-finite sample at index {bad[0]} "
                f"({bad.size} total)"
            )
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sr", float(self.sr))

    @property
    def duration(self) -> float:
        """Record duration t_g in seconds (sample count / sr)."""
        return self.samples.size / self.sr

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class FrameSet:
    """Fixed-length windows cut from a record; the tail frame is zero padded."""

    frames: np.ndarray
    window_len_s: float
    stride_s: float
    sr: float
    starts: np.ndarray = field(repr=False)

    @property
    def n_w(self) -> int:
        return self.frames.shape[0]

    @property
    def window_samples(self) -> int:
        return self.frames.shape[1]


def frame_count(n_samples: int, window: int, stride: int) -> int:
    return 1 + math.ceil(max(0, n_samples - window) / stride)


def frame_signal(rec: AccelRecord, window_len_s: float = 1.0, stride_s: float = 0.4,
                 taper: str | None = None) -> FrameSet:
    """Split a record into overlapping frames.

    Frame ``i`` starts at sample ``i * round(stride_s * sr)`` and holds
    ``round(window_len_s * sr)`` samples. Samples past the last full window
    land in a final frame padded with zeros, so nothing is dropped.

    Args:
        rec: the record to frame.
        window_len_s: frame length in seconds.
        stride_s: hop between frame starts in seconds.
        taper: optional window name applied to every frame (``"hamming"`` or
            ``"hann"``). Off by default; frames are rectangular.

    Returns:
        FrameSet with ``n_w = 1 + ceil(max(0, L - W) / S)`` frames.
    """
    if not (stride_s > 0 and window_len_s >= stride_s):
        raise DataError(f"need window_len_s >= stride_s > 0, got {window_len_s}, {stride_s}")
    window = int(round(window_len_s * rec.sr))
    stride = int(round(stride_s * rec.sr))
    if window < 1 or stride < 1:
        raise DataError(f"window/stride round to zero samples at sr={rec.sr}")
    x = rec.samples
    n_w = frame_count(x.size, window, stride)
    starts = np.arange(n_w) * stride
    padded = np.zeros(starts[-1] + window)
    padded[: x.size] = x
    idx = starts[:, None] + np.arange(window)[None, :]
    frames = padded[idx]
    if taper is not None:
        frames = frames * _taper(taper, window)
    frames.setflags(write=False)
    return FrameSet(frames=frames, window_len_s=window_len_s, stride_s=stride_s,
                    sr=rec.sr, starts=starts)


def _taper(name: str, n: int) -> np.ndarray:
    if name == "hamming":
        return np.hamming(n)
    if name in ("hann", "hanning"):
        return np.hanning(n)
    raise DataError(f"unknown taper {name!r}")


def infer_sampling_rate(t: np.ndarray) -> float:
    """Sampling rate from a time column; steps must agree within 1e-6 relative."""
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise DataError("need at least two time stamps to infer the sampling rate")
    dt = np.diff(t)
    step = dt.mean()
    if not step > 0 or np.max(np.abs(dt - step)) > _SR_RTOL * step:
        raise DataError("time column is not uniformly sampled (tolerance 1e-6 relative)")
    return 1.0 / step


def read_record_csv(path, sr: float | None = None) -> dict[str, AccelRecord]:
    """Load a ``t,value`` or ``t,ax_top,ay_top,ax_bot,ay_bot`` CSV.

    Returns a mapping from column name to record. A single-channel file maps
    under ``"value"``. ``sr`` overrides the rate inferred from the time column.
    """
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read record {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed record {path}: {exc}") from exc
    header = [h.strip() for h in header]
    if not header or header[0] != "t" or len(header) < 2:
        raise DataError(f"{path}: header must start with 't' and name at least one channel")
    if data.shape[1] != len(header):
        raise DataError(f"{path}: {data.shape[1]} columns but header names {len(header)}")
    rate = float(sr) if sr is not None else infer_sampling_rate(data[:, 0])
    return {name: AccelRecord(data[:, j], rate, name) for j, name in enumerate(header) if j > 0}


def write_record_csv(path, t: np.ndarray, channels: dict[str, np.ndarray]) -> None:
    """Write a multi-channel record with a ``t`` column first."""
    names = list(channels)
    cols = np.column_stack([t] + [channels[n] for n in names])
    fmt = ["%.12g"] + ["%.9g"] * len(names)
    np.savetxt(path, cols, delimiter=",", header=",".join(["t"] + names),
               comments="", fmt=fmt)
