"""Scatter tables, SVG figures and the three-way comparison report."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402
from .features import FEATURE_KINDS, INTENSITY, normalize_kind  # noqa: E402

SCATTER_COLUMNS = ("event_id", "truth_percent", "pred_percent", "abs_error_percent")
_LABELS = {"MFB": "MFB", "MFCC": "MFCC", INTENSITY: "I^eta"}

# Stable SVG output: fixed element ids and no timestamp.
matplotlib.rcParams["svg.hashsalt"] = "quakecep"


def write_scatter_csv(path, event_ids, truth, pred) -> None:
    """One row per test event; floats written with full round-trip precision."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCATTER_COLUMNS)
        for eid, t, p in zip(event_ids, truth, pred):
            w.writerow([eid, repr(float(t)), repr(float(p)), repr(float(abs(p - t)))])


def read_scatter_csv(path) -> dict:
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCATTER_COLUMNS:
            raise DataError(f"{path}: unexpected scatter columns {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no rows")
    out = {"event_id": [r["event_id"] for r in rows]}
    for col in SCATTER_COLUMNS[1:]:
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def scatter_figure(path, kind: str, truth, pred, poly_coeffs=None) -> None:
    """Two panels: absolute error vs. true drift (with its polynomial trend)
    and predicted vs. true drift, both in percent."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    err = np.abs(pred - truth)
    label = _LABELS.get(kind, kind)
    fig, (ax_e, ax_p) = plt.subplots(1, 2, figsize=(9, 4))
    ax_e.scatter(truth, err, s=8, alpha=0.6, color="tab:blue")
    if poly_coeffs is not None and truth.size > 1:
        grid = np.linspace(truth.min(), truth.max(), 200)
        ax_e.plot(grid, np.polyval(poly_coeffs, grid), color="tab:red", lw=1.5, label="cubic fit")
        ax_e.legend(loc="upper left")
    ax_e.set_xlabel("true drift ratio (%)")
    ax_e.set_ylabel("absolute error (%)")
    ax_e.set_title(f"{label}: error vs. drift")
    lim = float(max(truth.max(), pred.max(), 1e-3)) * 1.05
    ax_p.scatter(truth, pred, s=8, alpha=0.6, color="tab:green")
    ax_p.plot([0, lim], [0, lim], color="k", lw=1, ls="--")
    ax_p.set_xlim(0, lim)
    ax_p.set_ylim(0, lim)
    ax_p.set_xlabel("true drift ratio (%)")
    ax_p.set_ylabel("predicted drift ratio (%)")
    ax_p.set_title(f"{label}: MAE {np.mean(err):.4f}%")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_report(evaluations: dict, out_dir, seed=None, extra: dict | None = None) -> dict:
    """Write ``report.json`` plus ``scatter_<kind>.csv/.svg`` for all three kinds.

    Args:
        evaluations: feature kind -> dict with ``event_ids``, ``truth_percent``,
            ``pred_percent``, ``poly_coeffs`` and ``test_mae_percent``.
        out_dir: destination directory.

    Returns:
        The report dictionary that was written.
    """
    kinds = [normalize_kind(k) for k in evaluations]
    if sorted(kinds) != sorted(FEATURE_KINDS):
        missing = sorted(set(FEATURE_KINDS) - set(kinds))
        raise DataError(f"report needs evaluations for {list(FEATURE_KINDS)}; missing {missing}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in FEATURE_KINDS:
        ev = next(v for k, v in evaluations.items() if normalize_kind(k) == kind)
        stem = kind.lower()
        truth, pred = np.asarray(ev["truth_percent"]), np.asarray(ev["pred_percent"])
        write_scatter_csv(out_dir / f"scatter_{stem}.csv", ev["event_ids"], truth, pred)
        scatter_figure(out_dir / f"scatter_{stem}.svg", kind, truth, pred, ev.get("poly_coeffs"))
        rows.append({"feature_kind": kind,
                     "test_mae_percent": float(ev["test_mae_percent"]),
                     "n_test": int(truth.size),
                     "poly_coeffs_high_to_low": [float(c) for c in ev.get("poly_coeffs", [])],
                     "scatter_csv": f"scatter_{stem}.csv",
                     "scatter_svg": f"scatter_{stem}.svg"})
    by_kind = {r["feature_kind"]: r["test_mae_percent"] for r in rows}
    ref = by_kind[INTENSITY]
    report = {
        "seed": seed,
        "results": rows,
        "mfb_vs_intensity": {
            "mfb_le_intensity": bool(by_kind["MFB"] <= ref),
            "relative_improvement": (ref - by_kind["MFB"]) / ref if ref > 0 else None,
        },
    }
    report.update(extra or {})
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
