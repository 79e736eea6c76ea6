"""Geometry core: frozen reference values, derivative checks, recursions."""
import numpy as np
import pytest

from dopplerlab import geometry
from dopplerlab.geometry import wrap_angle


TX = np.array([8.0, 0.0])
TGT = np.array([12.0, -12.0])
RX = np.array([[15.0, 4.0], [15.0, 2.0], [15.0, 0.0], [15.0, -2.0]])
V_TX = 4.0 * np.array([np.cos(np.deg2rad(225.0)), np.sin(np.deg2rad(225.0))])
V_TGT = 4.0 * np.array([np.cos(np.deg2rad(315.0)), np.sin(np.deg2rad(315.0))])
LAM = 299792458.0 / 28e9

# hand-checked values for the reference scene at k = 0
ZETA_DEG = [-164.7449, -150.9454, -135.0, -119.0546]
ETA_DEG = -63.4349
ALPHA_DEG = -101.3099
BETA_DEG = [29.0546, 30.5297, 32.4712, 35.1342]
GAMMA_DEG = [-138.9076, -138.1701, -137.1994, -135.8679]
D_LOS_M = [8.0623, 7.2801, 7.0, 7.2801]
F_LOS1_HZ = -360.4278
F_TXTGT_HZ = 167.0753
F_TGT1_HZ = -545.1119


def random_scene(rng):
    tx = rng.uniform(-20, 20, 2)
    tgt = rng.uniform(-20, 20, 2)
    while np.linalg.norm(tgt - tx) < 1.0:
        tgt = rng.uniform(-20, 20, 2)
    rx = rng.uniform(-25, 25, (4, 2))
    v_tx = rng.uniform(0.5, 20) * _unit(rng.uniform(0, 2 * np.pi))
    v_tgt = rng.uniform(0.5, 20) * _unit(rng.uniform(0, 2 * np.pi))
    return tx, tgt, rx, v_tx, v_tgt


def _unit(a):
    return np.array([np.cos(a), np.sin(a)])


class TestWrap:
    def test_half_open_interval(self):
        x = np.array([0.0, np.pi, -np.pi, 2 * np.pi, -2 * np.pi, 3.5 * np.pi])
        w = wrap_angle(x)
        assert np.all(w > -np.pi) and np.all(w <= np.pi)

    def test_pi_maps_to_pi(self):
        assert wrap_angle(np.pi) == pytest.approx(np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)

    def test_idempotent_and_shift_invariant(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-40, 40, 1000)
        w = wrap_angle(x)
        assert np.allclose(wrap_angle(w), w, atol=1e-12)
        assert np.allclose(wrap_angle(x + 2 * np.pi), w, atol=1e-9)


class TestReferenceScene:
    def test_zeta(self):
        z = np.rad2deg(geometry.zeta_angles(TX, V_TX, RX))
        assert np.allclose(z, ZETA_DEG, atol=2e-4)

    def test_eta_alpha(self):
        assert np.rad2deg(geometry.eta_angle(TX, V_TX, TGT)) == pytest.approx(
            ETA_DEG, abs=2e-4)
        assert np.rad2deg(geometry.alpha_angle(TX, TGT, RX[0])) == pytest.approx(
            ALPHA_DEG, abs=2e-4)

    def test_eta_is_zeta1_minus_alpha(self):
        z1 = geometry.zeta_angles(TX, V_TX, RX[:1])[0]
        a = geometry.alpha_angle(TX, TGT, RX[0])
        eta = geometry.eta_angle(TX, V_TX, TGT)
        assert abs(wrap_angle(z1 - a - eta)) < 1e-12

    def test_beta_gamma(self):
        b = np.rad2deg(geometry.beta_angles(TGT, TX, RX))
        g = np.rad2deg(geometry.gamma_angles(TGT, V_TGT, TX, RX))
        assert np.allclose(b, BETA_DEG, atol=2e-4)
        assert np.allclose(g, GAMMA_DEG, atol=2e-4)

    def test_path_lengths(self):
        d_los, d1, d2 = geometry.path_lengths(TX, TGT, RX)
        assert np.allclose(d_los, D_LOS_M, atol=1e-4)
        assert d1 == pytest.approx(np.hypot(4.0, 12.0), abs=1e-12)

    def test_doppler_components(self):
        f_los = geometry.doppler_los(TX, V_TX, RX, LAM)
        f_tt = geometry.doppler_tx_tgt(TX, V_TX, TGT, LAM)
        f_tgt = geometry.doppler_tgt(TGT, V_TGT, TX, RX, LAM)
        assert f_los[0] == pytest.approx(F_LOS1_HZ, abs=1e-3)
        assert f_tt == pytest.approx(F_TXTGT_HZ, abs=1e-3)
        assert f_tgt[0] == pytest.approx(F_TGT1_HZ, abs=1e-3)

    def test_half_gain_is_exactly_half(self):
        full = geometry.doppler_tgt(TGT, V_TGT, TX, RX, LAM, g=2.0)
        half = geometry.doppler_tgt(TGT, V_TGT, TX, RX, LAM, g=1.0)
        assert np.allclose(half * 2.0, full, rtol=0, atol=1e-12)


class TestDerivativeConsistency:
    """Doppler formulas against finite differences of the path lengths."""

    N_SCENES = 1000
    DT = 1e-6
    TOL_HZ = 1e-3

    def test_target_doppler_matches_path_derivative(self):
        rng = np.random.default_rng(101)
        for _ in range(self.N_SCENES):
            tx, tgt, rx, v_tx, v_tgt = random_scene(rng)
            f = geometry.doppler_tgt(tgt, v_tgt, tx, rx, LAM)
            _, d1a, d2a = geometry.path_lengths(tx, tgt - 0.5 * self.DT * v_tgt, rx)
            _, d1b, d2b = geometry.path_lengths(tx, tgt + 0.5 * self.DT * v_tgt, rx)
            fd = -((d1b + d2b) - (d1a + d2a)) / (self.DT * LAM)
            assert np.allclose(f, fd, atol=self.TOL_HZ)

    def test_los_doppler_matches_path_derivative(self):
        rng = np.random.default_rng(102)
        for _ in range(self.N_SCENES):
            tx, tgt, rx, v_tx, v_tgt = random_scene(rng)
            f = geometry.doppler_los(tx, v_tx, rx, LAM)
            da, _, _ = geometry.path_lengths(tx - 0.5 * self.DT * v_tx, tgt, rx)
            db, _, _ = geometry.path_lengths(tx + 0.5 * self.DT * v_tx, tgt, rx)
            fd = -(db - da) / (self.DT * LAM)
            assert np.allclose(f, fd, atol=self.TOL_HZ)

    def test_tx_target_doppler_matches_path_derivative(self):
        rng = np.random.default_rng(103)
        for _ in range(self.N_SCENES):
            tx, tgt, rx, v_tx, v_tgt = random_scene(rng)
            f = geometry.doppler_tx_tgt(tx, v_tx, tgt, LAM)
            _, d1a, _ = geometry.path_lengths(tx - 0.5 * self.DT * v_tx, tgt, rx)
            _, d1b, _ = geometry.path_lengths(tx + 0.5 * self.DT * v_tx, tgt, rx)
            fd = -(d1b - d1a) / (self.DT * LAM)
            assert f == pytest.approx(fd, abs=self.TOL_HZ)


class TestRecursions:
    """Reference-receiver recursions against directly computed angle sets."""

    def test_zeta_recursion(self):
        rng = np.random.default_rng(104)
        for _ in range(1000):
            tx, tgt, rx, v_tx, v_tgt = random_scene(rng)
            z = geometry.zeta_angles(tx, v_tx, rx)
            d = geometry.cumulative_aoa_offsets(geometry.direction_angle(rx, tx))
            zr = geometry.zeta_from_reference(z[0], d)
            assert np.all(np.abs(wrap_angle(zr - z)) < 1e-9)

    def test_gamma_recursion(self):
        # the half-rate bisector recursion holds while the receiver fan,
        # tracked continuously from receiver 1, stays clear of the
        # forward-scatter ray (continuous bistatic angle inside +-180 deg)
        rng = np.random.default_rng(105)
        done = 0
        while done < 1000:
            tx, tgt, rx, v_tx, v_tgt = random_scene(rng)
            a = geometry.direction_angle(tgt, tx)
            b = geometry.direction_angle(tgt, rx)
            d = geometry.cumulative_aoa_offsets(geometry.direction_angle(rx, tgt))
            cont_beta = wrap_angle(b[0] - a) + d
            if np.abs(cont_beta).max() > np.deg2rad(170.0):
                continue
            g = geometry.gamma_angles(tgt, v_tgt, tx, rx)
            gr = geometry.gamma_from_reference(g[0], d)
            assert np.all(np.abs(wrap_angle(gr - g)) < 1e-9)
            done += 1

    def test_offsets_are_zero_based(self):
        aoas = np.array([0.3, 0.5, -0.2, 1.1])
        d = geometry.cumulative_aoa_offsets(aoas)
        assert d[0] == 0.0
        assert np.allclose(d, aoas - aoas[0], atol=1e-12)


class TestLocalization:
    def test_exact_aoas_recover_position(self):
        rng = np.random.default_rng(106)
        hits = 0
        for _ in range(1000):
            tx, tgt, rx, v_tx, v_tgt = random_scene(rng)
            aoas = geometry.direction_angle(rx, tgt)
            p = geometry.localize(rx, aoas)
            if p is None:
                continue            # collinear draw, skipped by design
            hits += 1
            assert np.linalg.norm(p - tgt) < 1e-9
        assert hits > 990

    def test_collinear_rays_return_none(self):
        rx = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        tgt = np.array([10.0, 0.0])
        aoas = geometry.direction_angle(rx, tgt)
        assert geometry.localize(rx, aoas) is None

    def test_series_marks_bad_rows_nan(self):
        rx = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]])
        tgt = np.array([[2.0, 9.0], [3.0, 7.0]])
        aoas = geometry.direction_angle(rx[None, :, :], tgt[:, None, :])
        aoas = np.vstack([aoas, np.full((1, 4), np.nan)])
        out = geometry.localize_series(rx, aoas)
        assert np.allclose(out[:2], tgt, atol=1e-9)
        assert np.isnan(out[2]).all()


class TestBatchShapes:
    def test_path_lengths_batched_trajectories(self):
        rng = np.random.default_rng(107)
        txs = rng.uniform(-10, 10, (50, 2))
        tgts = rng.uniform(-10, 10, (50, 2))
        rx = rng.uniform(-10, 10, 2)
        d_los, d1, d2 = geometry.path_lengths(txs, tgts, rx)
        for k in (0, 17, 49):
            a, b, c = geometry.path_lengths(txs[k], tgts[k], rx)
            assert (d_los[k], d1[k], d2[k]) == pytest.approx((a, b, c), abs=1e-12)

    def test_advance_and_heading_roundtrip(self):
        pos = np.array([1.0, 2.0])
        vel = np.array([3.0, -4.0])
        assert np.allclose(geometry.advance(pos, vel, 0.5), [2.5, 0.0])
        assert geometry.speed(vel) == pytest.approx(5.0)
        assert geometry.heading(vel) == pytest.approx(np.arctan2(-4.0, 3.0))
