import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quakecep.signal_model import CHANNELS
from quakecep.synth import (G, MAX_DRIFT, PierModel, SynthConfig, SyntheticGM, bilinear_sdof,
                            build_dataset, generate_gm, linear_sdof, rotate_gm, simulate_gm_events,
                            simulate_response, write_dataset)

SMALL = SynthConfig(n_gms=3, n_scales=2, duration=10.0)


def _burst(sr, duration=8.0, freq=1.1, amp=0.5):
    """Smooth analytic excitation (m/s^2) sampled at ``sr``."""
    t = np.arange(int(round(duration * sr)) + 1) / sr
    return amp * np.sin(2 * np.pi * freq * t) * np.sin(np.pi * t / duration) ** 2


# -- ground motions ------------------------------------------------------------------------

def test_generate_same_seed_bit_identical():
    a, b = generate_gm(7, duration=10.0), generate_gm(7, duration=10.0)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
    c = generate_gm(8, duration=10.0)
    assert not np.array_equal(a.x, c.x)


def test_generate_zero_scale_is_zero_record():
    gm = generate_gm(3, duration=10.0, intensity_scale=0.0)
    assert not gm.x.any() and not gm.y.any()


def test_generate_doubling_scale_doubles_pga():
    one = generate_gm(3, duration=10.0, intensity_scale=0.4)
    two = generate_gm(3, duration=10.0, intensity_scale=0.8)
    assert two.pga == pytest.approx(2 * one.pga, rel=1e-12)
    assert one.pga == pytest.approx(0.4, rel=1e-12)


def test_rotation_zero_and_ninety():
    gm = generate_gm(11, duration=10.0)
    same = rotate_gm(gm, 0)
    np.testing.assert_array_equal(same.x, gm.x)
    np.testing.assert_array_equal(same.y, gm.y)
    quarter = rotate_gm(gm, 90)
    np.testing.assert_array_equal(quarter.x, -gm.y)
    np.testing.assert_array_equal(quarter.y, gm.x)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-360, max_value=360, allow_nan=False))
def test_rotation_preserves_resultant(angle):
    gm = generate_gm(5, duration=10.0)
    rot = rotate_gm(gm, angle)
    np.testing.assert_allclose(np.hypot(rot.x, rot.y), np.hypot(gm.x, gm.y),
                               rtol=1e-12, atol=1e-15)


# -- SDOF integration -----------------------------------------------------------------------

def test_zero_excitation_zero_response():
    u, a = bilinear_sdof(np.zeros(500), 0.01, 0.8, 0.05, 0.028)
    assert not u.any() and not a.any()
    ev = simulate_response(PierModel(), SyntheticGM(np.zeros(300), np.zeros(300), 100.0, 0))
    assert ev.drift_ratio == 0.0


def test_elastic_limit_matches_linear_sdof():
    ag = _burst(100.0, amp=0.05)
    u_lin, a_lin = linear_sdof(ag, 0.01, 0.8, 0.05)
    # yield displacement far above the linear peak: the model never yields
    u_bil, a_bil = bilinear_sdof(ag, 0.01, 0.8, 0.05, yield_disp=100 * np.abs(u_lin).max())
    np.testing.assert_allclose(u_bil, u_lin, rtol=0, atol=1e-9 * np.abs(u_lin).max())
    np.testing.assert_allclose(a_bil, a_lin, rtol=0, atol=1e-9 * np.abs(a_lin).max())


def test_linear_sdof_matches_closed_form_free_vibration_period():
    # a single initial pulse, then the damped free vibration rings at T_d
    period, zeta, dt = 0.8, 0.02, 0.001
    ag = np.zeros(5000)
    ag[1] = 1.0
    u, _ = linear_sdof(ag, dt, period, zeta)
    tail = u[200:]
    ups = np.flatnonzero((tail[:-1] < 0) & (tail[1:] >= 0))
    t_d = np.diff(ups).mean() * dt
    assert t_d == pytest.approx(period / math.sqrt(1 - zeta ** 2), rel=2e-3)


def _refined_peak_error(seed, sr, scale, yield_disp):
    """Relative peak-displacement gap between the native step and a x32 finer step.

    The finer run integrates the same piecewise-linear ground motion.
    """
    gm = generate_gm(seed, sr=sr, duration=20.0, intensity_scale=scale)
    ag = gm.x * G
    t = np.arange(ag.size) / sr
    fine = np.interp(np.arange((ag.size - 1) * 32 + 1) / (32 * sr), t, ag)
    u_c, _ = bilinear_sdof(ag, 1 / sr, 0.8, 0.05, yield_disp)
    u_f, _ = bilinear_sdof(fine, 1 / (32 * sr), 0.8, 0.05, yield_disp)
    return abs(np.abs(u_c).max() / np.abs(u_f).max() - 1), np.abs(u_f).max()


@pytest.mark.parametrize("seed", range(4))
def test_refined_timestep_reference_elastic(seed):
    err, _ = _refined_peak_error(seed, 200.0, 0.05, yield_disp=1e3)
    assert err < 1e-3


@pytest.mark.parametrize("seed", range(4))
def test_refined_timestep_reference_yielding(seed):
    err, peak = _refined_peak_error(seed, 200.0, 0.5, yield_disp=0.028)
    assert peak > 0.028
    # kinks at yield reversals cost some accuracy over the purely elastic case
    assert err < 2e-3


@pytest.mark.parametrize("seed", range(4))
def test_refined_timestep_at_default_rate(seed):
    # average-acceleration period error grows with (omega dt)^2; at 100 Hz
    # broadband records sit in the low 1e-3 range
    err, _ = _refined_peak_error(seed, 100.0, 0.05, yield_disp=1e3)
    assert err < 5e-3


def _peak_force(u, period, dy, alpha, nonlinear):
    """Rebuild the restoring force history from displacements (unit mass)."""
    k = (2 * math.pi / period) ** 2
    if not nonlinear:
        return np.abs(k * u).max()
    fy, fp, f = k * dy, 0.0, []
    prev = 0.0
    for ui in u:
        fp = float(np.clip(fp + k * (ui - prev), -fy, fy))
        prev = ui
        f.append(alpha * k * ui + (1 - alpha) * fp)
    return np.abs(f).max()


def _paired_runs(seed):
    gm = generate_gm(seed, duration=20.0, intensity_scale=0.8)
    dy = PierModel().yield_drift * PierModel().height
    ag = gm.x * G
    u_y, _ = bilinear_sdof(ag, 0.01, 0.8, 0.05, dy)
    u_e, _ = linear_sdof(ag, 0.01, 0.8, 0.05)
    return u_y, u_e, dy


@pytest.mark.parametrize("seed", range(6))
def test_yielding_caps_restoring_force(seed):
    u_y, u_e, dy = _paired_runs(seed)
    assert np.abs(u_y).max() > dy
    f_y = _peak_force(u_y, 0.8, dy, 0.05, True)
    f_e = _peak_force(u_e, 0.8, dy, 0.05, False)
    assert f_y <= f_e


@pytest.mark.xfail(strict=True, reason="peak inelastic displacement can exceed the elastic "
                   "peak (inelastic displacement ratio > 1) for periods near 1 s")
def test_yielded_peak_displacement_not_above_elastic():
    for seed in range(12):
        u_y, u_e, _ = _paired_runs(seed)
        assert np.abs(u_y).max() <= np.abs(u_e).max()


# -- events and datasets ---------------------------------------------------------------------

def test_top_channel_is_ground_plus_relative():
    gm = generate_gm(2, duration=10.0, intensity_scale=0.3)
    ev = simulate_response(PierModel(), gm)
    np.testing.assert_array_equal(ev.channels["ax_bot"], gm.x)
    np.testing.assert_array_equal(ev.channels["ay_bot"], gm.y)
    dy = PierModel().yield_drift * PierModel().height
    _, a_rel = bilinear_sdof(gm.x * G, 0.01, PierModel().period_x, 0.05, dy, 0.05)
    np.testing.assert_allclose(ev.channels["ax_top"], gm.x + a_rel / G, rtol=0, atol=1e-15)


def test_drift_cap_regenerates_at_lower_scale():
    cfg = SynthConfig(n_gms=1, angles=(0,), n_scales=3, duration=10.0, pga_range=(6.0, 8.0))
    events = simulate_gm_events(cfg, 0, 0)
    assert all(ev.drift_ratio <= MAX_DRIFT for ev in events)
    # every requested scale was at least 6 g, so a surviving smaller scale means halving
    assert all(ev.scale < 6.0 for ev in events)
    for ev in events:
        k = math.log2(6.0 / ev.scale)
        assert k > 0


def test_dataset_size_and_determinism():
    a = build_dataset(SMALL, 42, workers=1)
    b = build_dataset(SMALL, 42, workers=1)
    assert len(a) == SMALL.n_events == 3 * 5 * 2
    assert [e.event_id for e in a] == [f"e{i:04d}" for i in range(30)]
    for ea, eb in zip(a, b):
        assert ea.drift_ratio == eb.drift_ratio
        for ch in CHANNELS:
            assert ea.channels[ch].tobytes() == eb.channels[ch].tobytes()
    assert all(0 < e.drift_ratio <= MAX_DRIFT for e in a)


def test_default_config_is_600_events():
    assert SynthConfig().n_events == 600


def test_parallel_build_matches_serial():
    serial = build_dataset(SMALL, 3, workers=1)
    parallel = build_dataset(SMALL, 3, workers=2)
    assert [e.drift_ratio for e in serial] == [e.drift_ratio for e in parallel]


def test_write_dataset_byte_identical(tmp_path):
    events = build_dataset(SynthConfig(n_gms=1, n_scales=1, duration=10.0), 9, workers=1)
    p1 = write_dataset(events, tmp_path / "a")
    p2 = write_dataset(events, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "a/records/e0000.csv").read_bytes() == (tmp_path / "b/records/e0000.csv").read_bytes()


def test_config_round_trip():
    cfg = SynthConfig(n_gms=4, angles=(0, 45), pier=PierModel(height=5.0))
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
