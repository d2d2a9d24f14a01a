import csv
import math

import mpmath
import numpy as np
import pytest

from latwsr.channel import (
    corrupt_csi,
    drop_users,
    dump_channel_csv,
    generate_channel,
    nmse_db_to_reliability,
    pathloss_gains,
    reliability_for_nmse,
    site_positions,
)
from latwsr.config import ConfigError, ScenarioConfig

SMALL = ScenarioConfig(B=3, U_b=2, N=2, N_T=4, N_R=2)


def test_site_positions_hexagonal():
    xy = site_positions(7, 250.0)
    assert np.allclose(xy[0], 0.0)
    assert np.allclose(np.linalg.norm(xy[1:], axis=1), 250.0)
    d = np.linalg.norm(xy[:, None] - xy[None], axis=-1)
    assert np.min(d[np.triu_indices(7, 1)]) == pytest.approx(250.0)


def test_drop_users_inside_serving_cell(rng):
    cfg = SMALL.replace(U_b=50)
    bs_xy, ue_xy = drop_users(cfg, rng)
    d = np.linalg.norm(ue_xy - bs_xy[cfg.serving_bs()], axis=1)
    assert np.all(d <= cfg.isd_m / 2 + 1e-9) and np.all(d >= cfg.min_distance_m - 1e-9)


def test_pathloss_law():
    cfg = SMALL
    g = pathloss_gains(cfg, np.zeros((1, 2)), np.array([[100.0, 0.0], [1.0, 0.0]]))
    expected = cfg.pathloss_ref_db + 10 * cfg.pathloss_exponent * 2
    assert -10 * math.log10(g[0, 0]) == pytest.approx(expected)
    # clamped at the minimum distance
    assert -10 * math.log10(g[0, 1]) == pytest.approx(cfg.pathloss_ref_db + 10 * cfg.pathloss_exponent)


def test_channel_shape_and_power(rng):
    cfg = SMALL.replace(N=64, N_T=8)
    ch = generate_channel(cfg, rng, 0)
    assert ch.shape == (3, 6, 64, 2, 8)
    # per-link average power over 64 x 2 x 8 entries matches the pathloss gain
    p = np.mean(np.abs(ch.h) ** 2, axis=(2, 3, 4)) / ch.pathloss
    assert np.all(np.abs(p - 1) < 5 / math.sqrt(64 * 16))


def test_gauss_markov_correlation(rng):
    cfg = SMALL.replace(N=32, time_corr=0.8)
    pl = np.ones((3, 6))
    a = generate_channel(cfg, rng, 0, pathloss=pl)
    b = generate_channel(cfg, rng, 1, previous=a)
    corr = np.real(np.vdot(a.h, b.h)) / a.h.size
    assert corr == pytest.approx(0.8, abs=5 / math.sqrt(a.h.size))
    assert np.mean(np.abs(b.h) ** 2) == pytest.approx(1.0, abs=5 / math.sqrt(a.h.size))
    assert b.tti == 1 and np.array_equal(b.pathloss, pl)


def test_static_channel_when_fully_correlated(rng):
    cfg = SMALL.replace(time_corr=1.0)
    a = generate_channel(cfg, rng, 0)
    assert np.array_equal(generate_channel(cfg, rng, 1, previous=a).h, a.h)


def test_jakes_coefficient_matches_bessel():
    cfg = ScenarioConfig()
    fd = 3 / 3.6 * 2e9 / 299_792_458.0
    assert cfg.gauss_markov_coef == pytest.approx(float(mpmath.besselj(0, 2 * math.pi * fd * 1e-3)), rel=1e-12)


def test_previous_shape_mismatch(rng):
    a = generate_channel(SMALL, rng, 0)
    with pytest.raises(ConfigError):
        generate_channel(SMALL.replace(N=3), rng, 1, previous=a)
    with pytest.raises(ConfigError):
        generate_channel(SMALL, rng, 0, pathloss=-np.ones((3, 6)))


def test_perfect_csi_is_exact(rng):
    ch = generate_channel(SMALL, rng, 0)
    est = corrupt_csi(ch, 1.0, rng)
    assert np.array_equal(est.h, ch.h) and est.h is not ch.h


def test_csi_error_statistics(rng):
    cfg = SMALL.replace(N=64, N_T=8)
    ch = generate_channel(cfg, rng, 0, pathloss=np.ones((3, 6)))
    est = corrupt_csi(ch, 0.9, rng)
    n = ch.h.size
    assert np.real(np.vdot(ch.h, est.h)) / n == pytest.approx(0.9, abs=5 / math.sqrt(n))
    assert np.mean(np.abs(est.h) ** 2) == pytest.approx(1.0, abs=5 / math.sqrt(n))
    nmse = np.mean(np.abs(est.h - ch.h) ** 2)
    assert nmse == pytest.approx(2 * (1 - 0.9), rel=0.05)
    with pytest.raises(ValueError):
        corrupt_csi(ch, 1.5, rng)


def test_reliability_conversions():
    assert reliability_for_nmse(0.2) == pytest.approx(0.9)
    assert nmse_db_to_reliability(-10.0) == pytest.approx(0.95)
    with pytest.raises(ValueError):
        reliability_for_nmse(3.0)


def test_channel_dump(tmp_path, rng):
    cfg = ScenarioConfig(B=1, U_b=1, N=1, N_T=2, N_R=1)
    ch = generate_channel(cfg, rng, 4)
    dump_channel_csv(tmp_path / "h.csv", [ch])
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert len(rows) == 2 and rows[1]["col"] == "1" and rows[0]["tti"] == "4"
    assert complex(float(rows[1]["re"]), float(rows[1]["im"])) == ch.h[0, 0, 0, 0, 1]


def test_seeded_channels_reproducible():
    a = generate_channel(SMALL, np.random.default_rng(9), 0)
    b = generate_channel(SMALL, np.random.default_rng(9), 0)
    assert np.array_equal(a.h, b.h)
