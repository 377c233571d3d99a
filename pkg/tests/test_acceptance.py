"""Acceptance gate: one test per criterion, summarized at the end of the run.

Run alone with ``pytest tests/test_acceptance.py -v``; criterion 9 trains
the full pipeline twice and takes a while on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import dft
from test_neural import TINY, _fd_check
from quakecep import cli
from quakecep.cepstral import CepstralTensor, build_filterbank, dct_mfcc, hz_to_mel, mel_to_hz
from quakecep.features import FeatureConfig, event_features, fuse, intensity
from quakecep.neural import Architecture, forward, init_params
from quakecep.signal_model import AccelRecord
from quakecep.spectral import fft, periodogram
from quakecep.synth import SynthConfig, build_dataset
from quakecep.training import (DEFAULT_LR, FeatureSet, fit_until, pad_batch,
                               split_by_ground_motion)

# tolerances pinned from the acceptance criteria
FFT_RTOL = 1e-9
MEL_RTOL = 1e-9
ANCHOR_TOL = 1e-9
DCT_TOL = 1e-9
SINE_TOL = 1e-4
GRAD_RTOL = 1e-5
OVERFIT_MAE = 0.01
OVERFIT_EPOCHS = 2000
RUN_BUDGET_S = 30 * 60


def test_criterion_1_fft_matches_dft(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        length = int(rng.integers(8, 513))
        n = 1 << (length - 1).bit_length()
        x = rng.normal(size=length)
        X = fft(x, n)
        ref = dft(x, n)
        worst = max(worst, np.max(np.abs(X - ref)) / np.max(np.abs(ref)))
        # Parseval: sum |x|^2 = sum |X|^2 / N
        assert np.sum(np.abs(X) ** 2) / n == pytest.approx(np.sum(x ** 2), rel=1e-12)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"worst rel {worst:.1e}, {elapsed:.2f}s")
    assert worst < FFT_RTOL
    assert elapsed < 10.0


def test_criterion_2_periodogram_and_mel_points():
    x = np.zeros(512)
    x[0] = 1.0
    np.testing.assert_allclose(periodogram(x, 512).bins, np.full(257, 1 / 512), rtol=1e-15)
    assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2), rel=1e-15)
    grid = np.linspace(0.0, 250.0, 100)
    back = mel_to_hz(hz_to_mel(grid))
    nz = grid > 0
    assert np.max(np.abs(back[nz] - grid[nz]) / grid[nz]) < MEL_RTOL
    assert back[0] == 0.0


@pytest.mark.parametrize("sr", [50, 100, 200, 500])
def test_criterion_3_filterbank_structure(sr):
    fb = build_filterbank(sr, n_fl=26, n_fft=512)
    assert np.all(fb.weights.max(axis=1) == 1.0)
    spacing = np.diff(fb.mel_points)
    assert np.max(np.abs(spacing - spacing[0])) < ANCHOR_TOL
    first, last = fb.bin_points[0], fb.bin_points[-1]
    covered = fb.weights[:, first:last + 1].max(axis=0)
    # every bin strictly inside the outer anchors gets some weight
    assert np.all(covered[1:-1] > 0)


def test_criterion_4_dct_orthonormal():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(50, 26))
    c = dct_mfcc(CepstralTensor(rows, "MFB")).values
    energy_gap = np.abs(np.sum(c ** 2, axis=1) - np.sum(rows ** 2, axis=1))
    assert np.max(energy_gap / np.sum(rows ** 2, axis=1)) < DCT_TOL
    const = dct_mfcc(CepstralTensor(np.full((1, 8), 1.0), "MFB")).values[0]
    assert const[0] == pytest.approx(math.sqrt(8), rel=1e-14)
    assert np.max(np.abs(const[1:])) < 1e-14


def test_criterion_5_intensity_homogeneity_and_sine():
    rng = np.random.default_rng(5)
    rec = AccelRecord(rng.normal(size=3000), 100.0, "ax_top")
    for eta in (0.2, 0.6, 1.0, 1.4, 2.0):
        base = intensity(rec, eta)
        for c in (0.5, 2.0, 10.0):
            scaled = intensity(AccelRecord(rec.samples * c, 100.0, "ax_top"), eta)
            assert scaled == pytest.approx(c ** eta * base, rel=1e-13)
    t = np.arange(1001) / 1000.0
    sine = AccelRecord(np.sin(2 * np.pi * t), 1000.0, "ax_top")
    assert abs(intensity(sine, 1.0) - 2 / math.pi) < SINE_TOL


def test_criterion_6_fusion_and_padding_invariance():
    rng = np.random.default_rng(6)
    parts = [CepstralTensor(rng.normal(size=(73, 8)), "MFB") for _ in range(4)]
    fused = fuse(*parts, max_frames=500)
    assert fused.values.shape == (500, 16)
    assert fused.mask.sum() == 73 and not fused.values[73:].any()
    np.testing.assert_array_equal(fused.values[:73, :8], parts[0].values - parts[1].values)
    np.testing.assert_array_equal(fused.values[:73, 8:], parts[2].values - parts[3].values)
    arch = Architecture(n_features=16, gru_units=(6, 5), dense_units=(9,))
    params = init_params(arch, 6)
    x, m = fused.values[None], fused.mask[None]
    y_full, _ = forward(params, arch, x, m)
    y_short, _ = forward(params, arch, x[:, :73], m[:, :73])
    x_long = np.concatenate([x, np.zeros((1, 200, 16))], axis=1)
    m_long = np.concatenate([m, np.zeros((1, 200), bool)], axis=1)
    y_long, _ = forward(params, arch, x_long, m_long)
    assert y_full.tobytes() == y_short.tobytes() == y_long.tobytes()
    with pytest.raises(ValueError):
        fuse(*[CepstralTensor(np.zeros((501, 8)), "MFB")] * 4, max_frames=500)


def test_criterion_7_gradient_suite(record_property):
    t0 = time.perf_counter()
    worst64 = worst_ext = 0.0
    for seed in range(5):
        w, checked, _ = _fd_check(TINY, seed)
        assert checked > 0.9 * TINY.n_params()
        worst64 = max(worst64, w)
        w, _, _ = _fd_check(TINY, seed, dtype=np.longdouble, floor=0.0)
        worst_ext = max(worst_ext, w)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"float64 worst {worst64:.1e} (denominator floor 1e-6), "
                              f"extended worst {worst_ext:.1e}, {elapsed:.1f}s")
    assert worst64 <= GRAD_RTOL and worst_ext <= GRAD_RTOL
    assert elapsed < 60.0


def ev_channels(ev):
    return {name: AccelRecord(x, ev.sr, name) for name, x in ev.channels.items()}


def _overfit_samples():
    cfg = SynthConfig(n_gms=2, angles=(0, 90), n_scales=4, duration=10.0)
    events = build_dataset(cfg, root_seed=8, workers=1)
    rows = [event_features(ev_channels(ev), "MFB", FeatureConfig()).valid for ev in events]
    X, mask = pad_batch(rows)
    drift = np.array([ev.drift_ratio for ev in events])
    return FeatureSet("MFB", X, drift, np.array([ev.gm_id for ev in events]),
                      [ev.event_id for ev in events], mask=mask)


@pytest.mark.slow
def test_criterion_8_overfit_floor(record_property):
    data = _overfit_samples()
    assert len(data) == 16
    arch = Architecture()
    assert arch.n_params() == 4_403_251
    t0 = time.perf_counter()
    _, epochs, mae = fit_until(data, arch, OVERFIT_MAE, OVERFIT_EPOCHS, lr=DEFAULT_LR, seed=0)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"MAE {mae:.5f} after {epochs} epochs, {elapsed:.0f}s")
    assert mae < OVERFIT_MAE
    assert elapsed < 600.0


def _full_run(out):
    t0 = time.perf_counter()
    code = cli.main(["run", "--out", str(out), "--seed", "0"])
    return code, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_9_end_to_end_report(tmp_path, record_property):
    code_a, secs_a = _full_run(tmp_path / "a")
    code_b, secs_b = _full_run(tmp_path / "b")
    assert code_a == 0 and code_b == 0
    rep = tmp_path / "a/report"
    report = json.loads((rep / "report.json").read_text())
    maes = {r["feature_kind"]: r["test_mae_percent"] for r in report["results"]}
    soft = report["mfb_vs_intensity"]["mfb_le_intensity"]
    record_property("detail", f"{secs_a:.0f}s/{secs_b:.0f}s; test MAE % "
                    + ", ".join(f"{k} {v:.3f}" for k, v in maes.items())
                    + f"; soft MFB<=I^eta: {'yes' if soft else 'no'}")
    assert sorted(maes) == ["INTENSITY", "MFB", "MFCC"]
    n_events = len(json.loads((tmp_path / "a/data/manifest.json").read_text())["events"])
    assert n_events == 600
    for kind in ("mfb", "mfcc", "intensity"):
        assert (rep / f"scatter_{kind}.svg").stat().st_size > 0
    for name in ("report.json", "scatter_mfb.csv", "scatter_mfcc.csv", "scatter_intensity.csv",
                 "scatter_mfb.svg", "scatter_mfcc.svg", "scatter_intensity.svg"):
        assert (rep / name).read_bytes() == (tmp_path / "b/report" / name).read_bytes(), name
    assert secs_a < RUN_BUDGET_S and secs_b < RUN_BUDGET_S


def test_criterion_10_split_integrity():
    plan = split_by_ground_motion(np.arange(180), seed=0)
    assert len(plan.train_gm_ids) + len(plan.val_gm_ids) == 144
    assert len(plan.test_gm_ids) == 36
    gm_ids = np.repeat(np.arange(180), 3)
    for seed in range(100):
        p = split_by_ground_motion(gm_ids, seed=seed)
        tr, va, te = set(p.train_gm_ids), set(p.val_gm_ids), set(p.test_gm_ids)
        assert not (tr & va) and not (tr & te) and not (va & te)
        assert len(tr | va) == 144 and len(te) == 36
