import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quakecep.cepstral import (MFB, MFCC, CepstralTensor, build_filterbank, dct_matrix, dct_mfcc,
                               hz_to_mel, idct_rows, mel_to_hz, mfb, read_qct, write_qct,
                               write_tensor_csv)
from quakecep.errors import DataError
from quakecep.spectral import Periodogram, periodogram


def test_mel_points():
    assert hz_to_mel(0) == 0.0
    assert hz_to_mel(700) == pytest.approx(2595 * math.log10(2), rel=1e-15)
    assert hz_to_mel(700) == pytest.approx(781.17, abs=0.01)
    assert hz_to_mel(250) == pytest.approx(2595 * math.log10(1 + 250 / 700), rel=1e-15)


def test_mel_inverse():
    assert mel_to_hz(0) == 0.0
    for f in (1, 25, 250):
        assert mel_to_hz(hz_to_mel(f)) == pytest.approx(f, rel=1e-9)
    assert hz_to_mel(mel_to_hz(100)) == pytest.approx(100, rel=1e-9)


def test_mel_rejects_negative():
    with pytest.raises(DataError):
        hz_to_mel(-1.0)
    with pytest.raises(DataError):
        mel_to_hz(-1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1000), st.floats(0, 1000))
def test_mel_monotone_and_invertible(a, b):
    if a < b:
        assert hz_to_mel(a) < hz_to_mel(b)
    assert mel_to_hz(hz_to_mel(a)) == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_single_filter_peak():
    fb = build_filterbank(100.0, n_fl=1, n_fft=512)
    assert fb.weights.shape == (1, 257)
    assert fb.weights.max() == 1.0
    centre = mel_to_hz(hz_to_mel(50.0) / 2)
    assert np.argmax(fb.weights[0]) == math.floor(513 * centre / 100.0)


def test_anchor_spacing_sr100():
    fb = build_filterbank(100.0, n_fl=8, n_fft=512)
    assert fb.mel_points.size == 10
    expected = np.array([j * hz_to_mel(50.0) / 9 for j in range(10)])
    np.testing.assert_allclose(fb.mel_points, expected, rtol=1e-12, atol=1e-12)
    gaps = np.diff(fb.mel_points)
    assert np.max(np.abs(gaps - gaps[0])) < 1e-9


@pytest.mark.parametrize("sr", [50.0, 100.0, 200.0, 500.0])
def test_filter_shape(sr):
    fb = build_filterbank(sr, 26, 512)
    for k, row in enumerate(fb.weights):
        assert row.max() == 1.0
        assert row.min() >= 0.0
        peak = int(np.argmax(row))
        assert peak == fb.bin_points[k + 1]
        assert np.all(np.diff(row[: peak + 1]) >= 0)
        assert np.all(np.diff(row[peak:]) <= 0)
        support = np.flatnonzero(row)
        assert support.min() > fb.bin_points[k] - 1 and support.max() < fb.bin_points[k + 2]


def test_collision_rejected():
    with pytest.raises(DataError, match="collide"):
        build_filterbank(50.0, n_fl=200, n_fft=64)


def test_mfb_zero_frame():
    fb = build_filterbank(100.0)
    out = mfb(periodogram(np.zeros((3, 100)), 512), fb, 8)
    np.testing.assert_array_equal(out.values, np.full((3, 8), -12.0))


def test_mfb_impulse_row_sum_oracle():
    fb = build_filterbank(100.0)
    x = np.zeros(100)
    x[0] = 1.0
    out = mfb(periodogram(x, 512), fb, 8)
    for k in range(8):
        row_sum = sum(float(w) for w in fb.weights[k])
        assert out.values[0, k] == pytest.approx(math.log10(row_sum / 512), abs=1e-12)


def test_mfb_scaling_shift(rng):
    fb = build_filterbank(100.0)
    x = rng.normal(size=(4, 100))
    a = mfb(periodogram(x, 512), fb, 8).values
    b = mfb(periodogram(10 * x, 512), fb, 8).values
    np.testing.assert_allclose(b - a, 2.0, atol=1e-9)


def test_mfb_energy_scaling(rng):
    fb = build_filterbank(200.0)
    p = periodogram(rng.normal(size=(3, 200)), 512)
    c = 3.7
    a = mfb(p, fb).values
    b = mfb(Periodogram(p.bins * c, 512), fb).values
    np.testing.assert_allclose(b - a, math.log10(c), atol=1e-9)


def test_mfb_natural_log(rng):
    fb = build_filterbank(100.0)
    p = periodogram(rng.normal(size=(2, 100)), 512)
    np.testing.assert_allclose(mfb(p, fb, log_base="e").values, mfb(p, fb).values * math.log(10),
                               rtol=1e-12)


def test_mfb_bin_mismatch():
    fb = build_filterbank(100.0, n_fft=512)
    with pytest.raises(DataError, match="bins"):
        mfb(periodogram(np.ones(100), 256), fb)


def test_mfb_n_keep_bound():
    fb = build_filterbank(100.0, n_fl=8)
    with pytest.raises(DataError):
        mfb(periodogram(np.ones(100), 512), fb, 9)


def test_coverage():
    for sr in (50.0, 100.0, 200.0, 500.0):
        fb = build_filterbank(sr)
        lo, hi = fb.bin_points[0], fb.bin_points[-1]
        assert np.all(fb.weights[:, lo + 1: hi].max(axis=0) > 0)


def test_dct_constant_row():
    t = dct_mfcc(CepstralTensor(np.ones((1, 4)), MFB))
    np.testing.assert_allclose(t.values, [[2.0, 0, 0, 0]], atol=1e-15)
    assert t.kind == MFCC


def test_dct_zero_row():
    assert not dct_mfcc(CepstralTensor(np.zeros((2, 8)), MFB)).values.any()


def test_dct_formula(rng):
    row = rng.normal(size=8)
    n = 8
    expected = []
    for k in range(n):
        s = math.sqrt(1 / n) if k == 0 else math.sqrt(2 / n)
        expected.append(s * sum(row[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n)))
    np.testing.assert_allclose(dct_mfcc(CepstralTensor(row[None], MFB)).values[0], expected,
                               rtol=1e-12, atol=1e-14)


def test_dct_roundtrip_and_energy(rng):
    m = rng.normal(size=(20, 8))
    c = dct_mfcc(CepstralTensor(m, MFB)).values
    np.testing.assert_allclose(idct_rows(c), m, atol=1e-9)
    np.testing.assert_allclose((c ** 2).sum(axis=1), (m ** 2).sum(axis=1), rtol=1e-9)
    np.testing.assert_allclose(dct_matrix(8) @ dct_matrix(8).T, np.eye(8), atol=1e-12)


def test_dct_requires_mfb():
    with pytest.raises(DataError):
        dct_mfcc(CepstralTensor(np.ones((1, 4)), MFCC))


def test_qct_roundtrip(tmp_path, rng):
    v = rng.normal(size=(37, 16))
    write_qct(tmp_path / "a.qct", v, MFCC)
    raw = (tmp_path / "a.qct").read_bytes()
    assert raw[:4] == b"QCT1"
    assert len(raw) == 16 + 37 * 16 * 8
    back, kind = read_qct(tmp_path / "a.qct")
    assert kind == MFCC
    np.testing.assert_array_equal(back, v)


def test_qct_bad_magic(tmp_path):
    (tmp_path / "x.qct").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(DataError, match="magic"):
        read_qct(tmp_path / "x.qct")


def test_tensor_csv(tmp_path):
    write_tensor_csv(tmp_path / "t.csv", np.arange(6.0).reshape(3, 2))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "frame,c0,c1"
    assert lines[2] == "1,2,3"
