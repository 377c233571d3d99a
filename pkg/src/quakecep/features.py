"""Cumulative-intensity benchmark features and multi-sensor MFB/MFCC fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cepstral import MFB, MFCC, CepstralTensor, build_filterbank, dct_mfcc, mfb
from .errors import DataError
from .signal_model import CHANNELS, AccelRecord, frame_signal
from .spectral import periodogram

MAX_FRAMES = 500
ETAS = tuple(round(0.2 * k, 1) for k in range(1, 11))

INTENSITY = "INTENSITY"
FEATURE_KINDS = (MFB, MFCC, INTENSITY)


@dataclass(frozen=True)
class FeatureConfig:
    window_len_s: float = 1.0
    stride_s: float = 0.4
    n_fft: int = 512
    n_fl: int = 26
    n_keep: int = 8
    log_base: str = "10"
    taper: str | None = None
    max_frames: int = MAX_FRAMES
    etas: tuple = ETAS


def intensity(rec: AccelRecord, eta: float) -> float:
    """Trapezoidal estimate of the integral of ``|a(t)|**eta`` over the record."""
    if not eta > 0:
        raise DataError(f"eta must be positive, got {eta}")
    return float(np.trapezoid(np.abs(rec.samples) ** eta, dx=1.0 / rec.sr))


@dataclass(frozen=True)
class IntensityVector:
    values: np.ndarray
    etas: tuple
    channels: tuple = CHANNELS

    @property
    def columns(self) -> list[str]:
        return [f"{ch}_eta{eta:g}" for ch in self.channels for eta in self.etas]


def intensity_vector(channels, etas=ETAS) -> IntensityVector:
    """Stack ``I^eta`` for every channel and exponent, channel-major.

    ``channels`` is a sequence of records or a mapping keyed by channel name
    (ordered as ``ax_top, ay_top, ax_bot, ay_bot``).
    """
    if isinstance(channels, dict):
        names = tuple(n for n in CHANNELS if n in channels) or tuple(channels)
        recs = [channels[n] for n in names]
    else:
        recs = list(channels)
        names = tuple(r.channel_id for r in recs)
    if len({r.sr for r in recs}) > 1 or len({len(r) for r in recs}) > 1:
        raise DataError("all channels must share sampling rate and length")
    values = np.array([intensity(r, eta) for r in recs for eta in etas])
    return IntensityVector(values=values, etas=tuple(etas), channels=names)


@dataclass(frozen=True)
class FusedTensor:
    """Padded ``max_frames x 16`` difference tensor with its validity mask.

    Columns 0-7 hold top minus bottom in X, columns 8-15 the same in Y.
    """

    values: np.ndarray
    mask: np.ndarray
    kind: str = MFB
    n_w: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n_w", int(self.mask.sum()))

    @classmethod
    def from_rows(cls, rows: np.ndarray, kind: str = MFB, max_frames: int = MAX_FRAMES):
        rows = np.asarray(rows, dtype=float)
        n_w = rows.shape[0]
        if n_w > max_frames:
            raise DataError(f"{n_w} frames exceed the {max_frames}-frame cap")
        if n_w < 1:
            raise DataError("fused tensor needs at least one frame")
        values = np.zeros((max_frames, rows.shape[1]))
        values[:n_w] = rows
        mask = np.arange(max_frames) < n_w
        return cls(values=values, mask=mask, kind=kind)

    @property
    def valid(self) -> np.ndarray:
        return self.values[: self.n_w]


def fuse(top_x: CepstralTensor, bot_x: CepstralTensor, top_y: CepstralTensor,
         bot_y: CepstralTensor, max_frames: int = MAX_FRAMES, n_keep: int = 8) -> FusedTensor:
    """Subtract bottom from top per direction and place Y beside X."""
    parts = (top_x, bot_x, top_y, bot_y)
    shapes = {t.values.shape for t in parts}
    if len(shapes) != 1:
        raise DataError(f"sensor tensors disagree in shape: {sorted(shapes)}")
    if len({t.kind for t in parts}) != 1:
        raise DataError("cannot fuse MFB with MFCC tensors")
    if top_x.n_keep != n_keep:
        raise DataError(f"expected {n_keep} coefficients per sensor, got {top_x.n_keep}")
    rows = np.hstack([top_x.values - bot_x.values, top_y.values - bot_y.values])
    return FusedTensor.from_rows(rows, kind=top_x.kind, max_frames=max_frames)


def cepstral_tensor(rec: AccelRecord, kind: str, cfg: FeatureConfig = FeatureConfig()) -> CepstralTensor:
    """Frame, transform and pool one channel into ``n_w x n_keep`` MFB or MFCC.

    The DCT runs over the whole filter bank before truncation, so MFCC
    coefficient ``k`` does not depend on ``n_keep``.
    """
    frames = frame_signal(rec, cfg.window_len_s, cfg.stride_s, taper=cfg.taper)
    fb = build_filterbank(rec.sr, cfg.n_fl, cfg.n_fft)
    power = periodogram(frames.frames, cfg.n_fft, rec.sr)
    full = mfb(power, fb, log_base=cfg.log_base)
    if kind == MFB:
        return full.truncate(cfg.n_keep)
    if kind == MFCC:
        return dct_mfcc(full).truncate(cfg.n_keep)
    raise DataError(f"not a cepstral kind: {kind!r}")


def event_features(channels: dict[str, AccelRecord], kind: str,
                   cfg: FeatureConfig = FeatureConfig()):
    """Features of one four-channel event: a FusedTensor or an IntensityVector."""
    missing = [c for c in CHANNELS if c not in channels]
    if missing:
        raise DataError(f"event is missing channels {missing}")
    if kind == INTENSITY:
        return intensity_vector(channels, cfg.etas)
    t = {c: cepstral_tensor(channels[c], kind, cfg) for c in CHANNELS}
    return fuse(t["ax_top"], t["ax_bot"], t["ay_top"], t["ay_bot"],
                max_frames=cfg.max_frames, n_keep=cfg.n_keep)


def normalize_kind(kind: str) -> str:
    k = kind.upper()
    if k in ("I", "IETA", "INTENSITY"):
        return INTENSITY
    if k not in FEATURE_KINDS:
        raise DataError(f"unknown feature kind {kind!r}; expected mfb, mfcc or intensity")
    return k
