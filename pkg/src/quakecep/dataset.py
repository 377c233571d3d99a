"""Manifest I/O and feature extraction/storage for whole datasets."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cepstral import read_qct, write_qct
from .errors import DataError
from .features import INTENSITY, FeatureConfig, event_features, normalize_kind
from .signal_model import CHANNELS, AccelRecord, read_record_csv
from .training import FeatureSet, pad_batch


@dataclass
class Manifest:
    path: Path
    events: list
    meta: dict = field(default_factory=dict)

    @property
    def root(self) -> Path:
        return self.path.parent

    def gm_ids(self) -> np.ndarray:
        return np.array([int(e["gm_id"]) for e in self.events])


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    events = raw.get("events")
    if not isinstance(events, list) or not events:
        raise DataError(f"manifest {path} lists no events")
    for i, ev in enumerate(events):
        missing = {"event_id", "gm_id", "drift_ratio"} - set(ev)
        if missing:
            raise DataError(f"manifest event {i} lacks {sorted(missing)}")
        if "record" not in ev and "channels" not in ev:
            raise DataError(f"manifest event {ev['event_id']} names no record files")
    meta = {k: v for k, v in raw.items() if k != "events"}
    return Manifest(path=path, events=events, meta=meta)


def load_event_channels(manifest: Manifest, event: dict, sr: float | None = None) -> dict[str, AccelRecord]:
    """Read the four sensor channels of one manifest entry.

    An entry either points at one multi-channel CSV (``record``) or maps each
    channel name to a single-channel ``t,value`` CSV (``channels``).
    """
    if "record" in event:
        recs = read_record_csv(manifest.root / event["record"], sr=sr)
    else:
        recs = {}
        for name, rel in event["channels"].items():
            one = read_record_csv(manifest.root / rel, sr=sr)
            (rec,) = one.values()
            recs[name] = AccelRecord(rec.samples, rec.sr, name)
    missing = [c for c in CHANNELS if c not in recs]
    if missing:
        raise DataError(f"event {event['event_id']}: missing channels {missing}")
    return {c: recs[c] for c in CHANNELS}


def extract_dataset(manifest: Manifest, kind: str, cfg: FeatureConfig = FeatureConfig(),
                    out_dir=None, on_error=None):
    """Compute features for every event; optionally persist them.

    Cepstral kinds write ``<out_dir>/<kind>/<event_id>.qct``; intensity
    writes ``<out_dir>/intensity.csv``. Events that fail are reported to
    ``on_error(event_id, exc)`` and skipped.

    Returns:
        ``(feature_set, failures)``.
    """
    kind = normalize_kind(kind)
    rows, kept, failures = [], [], []
    for ev in manifest.events:
        try:
            feats = event_features(load_event_channels(manifest, ev), kind, cfg)
        except DataError as exc:
            failures.append((ev["event_id"], str(exc)))
            if on_error:
                on_error(ev["event_id"], exc)
            continue
        rows.append(feats.values if kind == INTENSITY else feats.valid)
        kept.append(ev)
    if not kept:
        raise DataError("no event could be processed")
    fs = _assemble(kind, rows, kept, cfg)
    if out_dir is not None:
        save_features(fs, out_dir, cfg)
    return fs, failures


def _assemble(kind, rows, events, cfg: FeatureConfig) -> FeatureSet:
    drift = np.array([float(e["drift_ratio"]) for e in events])
    gm = np.array([int(e["gm_id"]) for e in events])
    ids = [e["event_id"] for e in events]
    if kind == INTENSITY:
        return FeatureSet(kind, np.vstack(rows), drift, gm, ids)
    X, mask = pad_batch(rows, cfg.max_frames)
    return FeatureSet(kind, X, drift, gm, ids, mask=mask)


def save_features(fs: FeatureSet, out_dir, cfg: FeatureConfig = FeatureConfig()) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fs.kind == INTENSITY:
        cols = [f"{ch}_eta{eta:g}" for ch in CHANNELS for eta in cfg.etas]
        with (out_dir / "intensity.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_id"] + cols)
            for eid, row in zip(fs.event_ids, fs.X):
                w.writerow([eid] + [repr(float(v)) for v in row])
        return
    sub = out_dir / fs.kind.lower()
    sub.mkdir(exist_ok=True)
    for eid, x, m in zip(fs.event_ids, fs.X, fs.mask):
        write_qct(sub / f"{eid}.qct", x[: int(m.sum())], fs.kind)


def load_features(manifest: Manifest, kind: str, feature_dir,
                  cfg: FeatureConfig = FeatureConfig()) -> FeatureSet:
    """Load persisted features for the manifest's events (missing ones are skipped)."""
    kind = normalize_kind(kind)
    feature_dir = Path(feature_dir)
    rows, kept = [], []
    if kind == INTENSITY:
        path = feature_dir / "intensity.csv"
        if not path.exists():
            raise DataError(f"no intensity features at {path}; run extract first")
        with path.open() as fh:
            reader = csv.reader(fh)
            next(reader)
            table = {r[0]: np.array([float(v) for v in r[1:]]) for r in reader}
        for ev in manifest.events:
            if ev["event_id"] in table:
                rows.append(table[ev["event_id"]])
                kept.append(ev)
    else:
        sub = feature_dir / kind.lower()
        for ev in manifest.events:
            path = sub / f"{ev['event_id']}.qct"
            if path.exists():
                values, stored = read_qct(path)
                if stored != kind:
                    raise DataError(f"{path} holds {stored} features, expected {kind}")
                rows.append(values)
                kept.append(ev)
    if not kept:
        raise DataError(f"no {kind} features found under {feature_dir}")
    return _assemble(kind, rows, kept, cfg)
