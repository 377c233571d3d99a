"""Synthetic bi-directional ground motions and a bilinear-hysteretic pier.

Stands in for the finite-element bridge dataset: each event rotates a
synthetic two-component ground motion, drives one bilinear SDOF oscillator
per horizontal direction, and records accelerations at the pier base
(ground) and top (ground + relative), labelled with the peak resultant drift
ratio.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import ConvergenceError, DataError
from .signal_model import CHANNELS, write_record_csv

G = 9.80665
ANGLES = (0, 60, 90, 120, 150)
MAX_DRIFT = 0.10

_NEWTON_MAXITER = 50


@dataclass(frozen=True)
class PierModel:
    period_x: float = 0.8
    period_y: float = 0.9
    damping: float = 0.05
    yield_drift: float = 0.004
    hardening: float = 0.05
    height: float = 7.0

    def __post_init__(self):
        if not (self.period_x > 0 and self.period_y > 0):
            raise DataError("periods must be positive")
        if not 0 < self.damping < 1:
            raise DataError("damping ratio must lie in (0, 1)")
        if not self.yield_drift > 0:
            raise DataError("yield drift must be positive")
        if not self.height > 0:
            raise DataError("height must be positive")


@dataclass(frozen=True)
class SyntheticGM:
    """Two orthogonal ground-acceleration components in g."""

    x: np.ndarray
    y: np.ndarray
    sr: float
    seed: int = 0
    envelope: tuple = (0.15, 0.55)

    @property
    def duration(self) -> float:
        return self.x.size / self.sr

    @property
    def pga(self) -> float:
        return float(np.max(np.hypot(self.x, self.y)))


def envelope(n: int, rise: float = 0.15, plateau_end: float = 0.55) -> np.ndarray:
    """Trapezoidal amplitude envelope: linear rise, plateau, linear decay to zero."""
    s = np.arange(n) / max(n - 1, 1)
    return np.clip(np.minimum(s / rise, (1.0 - s) / (1.0 - plateau_end)), 0.0, 1.0)


def generate_gm(seed: int, sr: float = 100.0, duration: float = 40.0,
                intensity_scale: float = 1.0, band=(0.3, 12.0)) -> SyntheticGM:
    """Band-limited, envelope-shaped white noise in two components.

    The pair is normalized so its peak resultant acceleration equals
    ``intensity_scale`` (in g); the minor component carries 0.8 of the major
    component's energy scale before normalization.
    """
    if not 50 <= sr <= 500:
        raise DataError(f"sampling rate {sr} outside the supported 50-500 Hz range")
    if not 10 <= duration <= 120:
        raise DataError(f"duration {duration} outside 10-120 s")
    n = int(round(sr * duration))
    rng = np.random.default_rng(seed)
    hi = min(band[1], 0.45 * sr)
    sos = signal.butter(4, [band[0], hi], btype="bandpass", fs=sr, output="sos")
    env = envelope(n)
    comps = []
    for amp in (1.0, 0.8):
        w = rng.standard_normal(n)
        comps.append(amp * signal.sosfilt(sos, w) * env)
    peak = np.max(np.hypot(comps[0], comps[1]))
    x, y = (c / peak * intensity_scale for c in comps)
    return SyntheticGM(x=x, y=y, sr=float(sr), seed=int(seed))


def rotate_gm(gm: SyntheticGM, angle_deg: float) -> SyntheticGM:
    """Rotate the component pair counter-clockwise by ``angle_deg``."""
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    if angle_deg % 90 == 0:
        # exact values at right angles
        c, s = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(angle_deg // 90) % 4]
    x = c * gm.x - s * gm.y
    y = s * gm.x + c * gm.y
    return SyntheticGM(x=x, y=y, sr=gm.sr, seed=gm.seed, envelope=gm.envelope)


def bilinear_sdof(ag, dt, period, damping, yield_disp, hardening=0.05):
    """Relative displacement and acceleration of a bilinear SDOF (unit mass).

    Newmark average acceleration (gamma=1/2, beta=1/4) with Newton iteration
    on the resisting force. The restoring force is ``alpha k u + (1-alpha) f_p``
    where ``f_p`` is elastic-perfectly-plastic with stiffness ``k`` and yield
    force ``k * yield_disp``. ``ag`` is ground acceleration in m/s^2.

    Returns:
        ``(u, acc)`` relative displacement (m) and relative acceleration (m/s^2).

    Raises:
        ConvergenceError: if Newton fails within 50 iterations; ``step`` holds
            the time-step index.
    """
    ag = np.asarray(ag, dtype=float)
    n = ag.size
    omega = 2.0 * math.pi / period
    k = omega * omega
    c = 2.0 * damping * omega
    alpha = hardening
    fy = k * yield_disp
    gamma, beta = 0.5, 0.25
    a1 = 1.0 / (beta * dt * dt)
    a2 = 1.0 / (beta * dt)
    a3 = 1.0 / (2.0 * beta) - 1.0
    c1 = gamma / (beta * dt)
    k_dyn = a1 + c * c1

    u = np.zeros(n)
    acc = np.zeros(n)
    ui = vi = 0.0
    fp = 0.0
    ai = -ag[0]
    acc[0] = ai
    for i in range(n - 1):
        p = -ag[i + 1]
        # Newmark predictors collapse into: m a + c v = k_dyn u - rhs
        rhs = a1 * ui + a2 * vi + a3 * ai + c * (c1 * ui + (gamma / beta - 1.0) * vi
                                                 + dt * (gamma / (2.0 * beta) - 1.0) * ai)
        uk = ui
        for it in range(_NEWTON_MAXITER):
            trial = fp + k * (uk - ui)
            if trial > fy:
                fpk, kt = fy, alpha * k
            elif trial < -fy:
                fpk, kt = -fy, alpha * k
            else:
                fpk, kt = trial, k
            fs = alpha * k * uk + (1.0 - alpha) * fpk
            resid = p + rhs - k_dyn * uk - fs
            if abs(resid) <= 1e-12 * (abs(p) + abs(rhs) + k_dyn * abs(uk) + abs(fs)):
                break
            uk += resid / (k_dyn + kt)
        else:
            raise ConvergenceError(f"Newton iteration did not converge at step {i + 1}", step=i + 1)
        fp = fpk
        a_new = a1 * (uk - ui) - a2 * vi - a3 * ai
        vi = vi + dt * ((1.0 - gamma) * ai + gamma * a_new)
        ui, ai = uk, a_new
        u[i + 1] = ui
        acc[i + 1] = ai
    return u, acc


def linear_sdof(ag, dt, period, damping):
    """Linear-elastic counterpart of :func:`bilinear_sdof` (no iteration)."""
    ag = np.asarray(ag, dtype=float)
    n = ag.size
    omega = 2.0 * math.pi / period
    k = omega * omega
    c = 2.0 * damping * omega
    gamma, beta = 0.5, 0.25
    k_hat = k + gamma * c / (beta * dt) + 1.0 / (beta * dt * dt)
    A = 1.0 / (beta * dt) + gamma * c / beta
    Bc = 1.0 / (2.0 * beta) + dt * (gamma / (2.0 * beta) - 1.0) * c
    u = np.zeros(n)
    acc = np.zeros(n)
    ui = vi = 0.0
    ai = -ag[0]
    acc[0] = ai
    for i in range(n - 1):
        dp = -(ag[i + 1] - ag[i]) + A * vi + Bc * ai
        du = dp / k_hat
        dv = gamma / (beta * dt) * du - gamma / beta * vi + dt * (1.0 - gamma / (2.0 * beta)) * ai
        da = du / (beta * dt * dt) - vi / (beta * dt) - ai / (2.0 * beta)
        ui, vi, ai = ui + du, vi + dv, ai + da
        u[i + 1] = ui
        acc[i + 1] = ai
    return u, acc


@dataclass
class EventSample:
    """One simulated realization: four channels (g), metadata and label."""

    channels: dict
    sr: float
    gm_id: int
    angle_deg: float
    scale: float
    drift_ratio: float
    event_id: str = ""

    def metadata(self) -> dict:
        return {"event_id": self.event_id, "gm_id": self.gm_id, "angle_deg": self.angle_deg,
                "scale": self.scale, "drift_ratio": self.drift_ratio}


def simulate_response(model: PierModel, gm: SyntheticGM, nonlinear: bool = True) -> EventSample:
    """Drive the pier with ``gm`` in both directions and record the sensors.

    Bottom sensors see the ground; top sensors see ground plus relative
    acceleration. The label is the peak resultant relative displacement
    divided by the pier height.
    """
    dt = 1.0 / gm.sr
    out = {}
    disp = []
    for axis, period, ag in (("x", model.period_x, gm.x), ("y", model.period_y, gm.y)):
        ag_ms2 = ag * G
        if nonlinear:
            u, a_rel = bilinear_sdof(ag_ms2, dt, period, model.damping,
                                     model.yield_drift * model.height, model.hardening)
        else:
            u, a_rel = linear_sdof(ag_ms2, dt, period, model.damping)
        out[f"a{axis}_bot"] = np.array(ag, dtype=float)
        out[f"a{axis}_top"] = ag + a_rel / G
        disp.append(u)
    drift = float(np.max(np.hypot(disp[0], disp[1])) / model.height)
    channels = {name: out[name] for name in CHANNELS}
    return EventSample(channels=channels, sr=gm.sr, gm_id=-1, angle_deg=0.0, scale=gm.pga,
                       drift_ratio=drift)


@dataclass(frozen=True)
class SynthConfig:
    n_gms: int = 30
    angles: tuple = ANGLES
    n_scales: int = 4
    sr: float = 100.0
    duration: float = 40.0
    pga_range: tuple = (0.2, 1.5)
    noise_std: float = 0.0
    pier: PierModel = field(default_factory=PierModel)

    @property
    def n_events(self) -> int:
        return self.n_gms * len(self.angles) * self.n_scales

    def to_dict(self) -> dict:
        d = asdict(self)
        d["angles"] = list(self.angles)
        d["pga_range"] = list(self.pga_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "pier" in d and isinstance(d["pier"], dict):
            d["pier"] = PierModel(**d["pier"])
        for key in ("angles", "pga_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def gm_seed(root_seed: int, gm_id: int) -> np.random.SeedSequence:
    """Per-ground-motion seed stream derived from the root seed."""
    return np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF, int(gm_id)])


def simulate_gm_events(cfg: SynthConfig, root_seed: int, gm_id: int) -> list[EventSample]:
    """All angle x scale realizations of one ground motion.

    Scales are drawn log-uniformly from ``pga_range``; a realization whose
    drift exceeds 10% is regenerated at half the scale until it fits.
    """
    ss = gm_seed(root_seed, gm_id)
    rng = np.random.default_rng(ss)
    lo, hi = cfg.pga_range
    scales = np.exp(rng.uniform(math.log(lo), math.log(hi), cfg.n_scales))
    noise_rng = np.random.default_rng(ss.spawn(1)[0])
    base_seed = int(ss.generate_state(1, np.uint64)[0])
    base = generate_gm(base_seed, cfg.sr, cfg.duration, 1.0)
    events = []
    for angle in cfg.angles:
        rotated = rotate_gm(base, angle)
        for scale in scales:
            scale = float(scale)
            while True:
                gm = SyntheticGM(x=rotated.x * scale, y=rotated.y * scale, sr=cfg.sr,
                                 seed=base_seed)
                ev = simulate_response(cfg.pier, gm)
                if ev.drift_ratio <= MAX_DRIFT:
                    break
                scale *= 0.5
            if cfg.noise_std > 0:
                for name in CHANNELS:
                    ev.channels[name] = ev.channels[name] + noise_rng.normal(
                        0.0, cfg.noise_std, ev.channels[name].size)
            ev.gm_id, ev.angle_deg, ev.scale = gm_id, float(angle), scale
            events.append(ev)
    return events


def worker_count() -> int:
    """Worker cap from ``QC_THREADS`` (defaults to the CPU count)."""
    env = os.environ.get("QC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DataError(f"QC_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _gm_job(args):
    cfg, root_seed, gm_id = args
    return simulate_gm_events(cfg, root_seed, gm_id)


def build_dataset(cfg: SynthConfig, root_seed: int, workers: int | None = None) -> list[EventSample]:
    """Simulate every event; ordering is by ground motion, angle, then scale."""
    jobs = [(cfg, root_seed, g) for g in range(cfg.n_gms)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_gm = list(pool.map(_gm_job, jobs))
    else:
        per_gm = [_gm_job(j) for j in jobs]
    events = [ev for group in per_gm for ev in group]
    for i, ev in enumerate(events):
        ev.event_id = f"e{i:04d}"
    return events


def write_dataset(events: list[EventSample], out_dir, manifest_path=None, meta: dict | None = None):
    """Write one multi-channel CSV per event plus the JSON manifest.

    Record paths in the manifest are relative to the manifest's directory.
    """
    out_dir = Path(out_dir)
    manifest_path = Path(manifest_path) if manifest_path else out_dir / "manifest.json"
    rec_dir = out_dir / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for ev in events:
        path = rec_dir / f"{ev.event_id}.csv"
        n = ev.channels[CHANNELS[0]].size
        write_record_csv(path, np.arange(n) / ev.sr, ev.channels)
        entry = ev.metadata()
        entry["record"] = os.path.relpath(path, manifest_path.parent)
        entries.append(entry)
    manifest = {"format": "quakecep-manifest", "version": 1, "units": "g",
                "sr": events[0].sr if events else None, "events": entries}
    manifest.update(meta or {})
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path
