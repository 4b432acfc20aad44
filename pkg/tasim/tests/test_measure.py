"""
Tests for TDOA/FDOA synthesis and the noise model.
"""
import csv

import numpy as np
import pytest

from tasim.config import config
from tasim.errors import FrameMismatchError, GeometryError, MeasurementError
from tasim.geom import Frame, SatelliteState, geodetic_to_ecef, satellite_track, ue_track_eci
from tasim.measure import (MeasurementSet, add_noise, common_reference_covariance, common_reference_noise,
                           make_noise_free, offsets_to_tdoa_fdoa, slant_range, slant_range_rate,
                           to_range_domain, write_csv)
from tasim.models import SyncConfig

from .conftest import SITES


@pytest.mark.unit
class TestRanges:
    """Slant range and range rate"""

    def test_overhead_range(self, aligned_orbit, earth):
        p = geodetic_to_ecef(*SITES["subsat"], 0.0, earth)
        s1 = satellite_track(aligned_orbit, 1, 0.02, earth, Frame.ECEF)[0]
        assert slant_range(s1, p) == pytest.approx(aligned_orbit.radius_r - np.linalg.norm(p), abs=1e-6)
        assert abs(slant_range_rate(s1, p, np.zeros(3))) < 1e2

    def test_coincident_points_raise(self):
        sat = SatelliteState(1, Frame.ECEF, (7e6, 0.0, 0.0), (0.0, 7e3, 0.0))
        with pytest.raises(GeometryError):
            slant_range_rate(sat, (7e6, 0.0, 0.0), (0.0, 0.0, 0.0))

    def test_frame_check(self):
        sat = SatelliteState(1, Frame.ECEF, (7e6, 0.0, 0.0), (0.0, 7e3, 0.0))
        with pytest.raises(FrameMismatchError):
            slant_range(sat, (6.4e6, 0.0, 0.0), p_frame=Frame.ECI)


@pytest.mark.unit
class TestNoiseFree:
    """Exact differences against SSB 1"""

    def test_differences_against_first_epoch(self, s1_case):
        states, meas, p = s1_case(window=20.0, T=2.0)
        assert meas.M == len(states) == 10
        assert len(meas) == 9
        assert meas.noise_free
        d = [slant_range(s, p) for s in states]
        dd = [slant_range_rate(s, p, np.zeros(3)) for s in states]
        np.testing.assert_allclose(meas.d_tilde, np.array(d[1:]) - d[0], atol=1e-6)
        np.testing.assert_allclose(meas.dd_tilde, np.array(dd[1:]) - dd[0], atol=1e-9)

    def test_nominal_covariance_structure(self):
        Q = common_reference_covariance(4, 2.0)
        np.testing.assert_allclose(np.diag(Q), 8.0)
        assert Q[0, 1] == Q[3, 2] == 4.0

    def test_mixed_frames_rejected(self):
        states = [SatelliteState(1, Frame.ECEF, (7e6, 0, 0), (0, 7e3, 0)),
                  SatelliteState(2, Frame.ECI, (7e6, 1e4, 0), (0, 7e3, 0))]
        with pytest.raises(FrameMismatchError):
            make_noise_free(states, (6.4e6, 0, 0), (0, 0, 0))

    def test_per_epoch_ue_shape_checked(self, s1_case):
        states, _, p = s1_case(window=20.0, T=2.0)
        with pytest.raises(GeometryError):
            make_noise_free(states, np.tile(p, (3, 1)), np.zeros(3))


@pytest.mark.unit
class TestNoise:
    """Common-reference Gaussian noise"""

    def test_empirical_covariance(self):
        rng = np.random.default_rng(3)
        draws = np.array([common_reference_noise(3, 1.0, rng) for _ in range(20000)])
        np.testing.assert_allclose(np.cov(draws.T), common_reference_covariance(3, 1.0), atol=0.1)

    def test_seeded_noise_is_reproducible(self, s1_case):
        _, clean, _ = s1_case(window=20.0, T=2.0)
        a = add_noise(clean, 1e-8, 5.0, 42)
        b = add_noise(clean, 1e-8, 5.0, 42)
        c = add_noise(clean, 1e-8, 5.0, 43)
        np.testing.assert_array_equal(a.d_tilde, b.d_tilde)
        np.testing.assert_array_equal(a.dd_tilde, b.dd_tilde)
        assert not np.array_equal(a.d_tilde, c.d_tilde)
        assert not a.noise_free

    def test_noise_scales_to_range_units(self, s1_case):
        _, clean, _ = s1_case(window=20.0, T=2.0)
        noisy = add_noise(clean, 1e-8, 5.0, 1)
        sigma_range = config.SPEED_OF_LIGHT * 1e-8
        sigma_rate = config.SPEED_OF_LIGHT * 5.0 / config.CARRIER_FREQ
        np.testing.assert_allclose(noisy.Qt, common_reference_covariance(9, sigma_range))
        np.testing.assert_allclose(noisy.Qf, common_reference_covariance(9, sigma_rate))

    def test_zero_sigma_leaves_channel_untouched(self, s1_case):
        _, clean, _ = s1_case(window=20.0, T=2.0)
        noisy = add_noise(clean, 1e-8, 0.0, 5)
        np.testing.assert_array_equal(noisy.dd_tilde, clean.dd_tilde)
        np.testing.assert_array_equal(noisy.Qf, clean.Qf)
        assert not np.array_equal(noisy.d_tilde, clean.d_tilde)
        # the timing draw is the same whether or not the frequency channel is active
        both = add_noise(clean, 1e-8, 5.0, 5)
        np.testing.assert_array_equal(noisy.d_tilde, both.d_tilde)

    def test_negative_sigma_rejected(self, s1_case):
        _, clean, _ = s1_case(window=20.0, T=2.0)
        with pytest.raises(MeasurementError):
            add_noise(clean, -1.0, 0.0)


@pytest.mark.unit
class TestMeasurementSet:
    """Validation of the measurement container"""

    def test_length_mismatch(self):
        with pytest.raises(MeasurementError):
            MeasurementSet(np.zeros(3), np.zeros(2), np.eye(3), np.eye(3))

    def test_covariance_must_be_positive_definite(self):
        with pytest.raises(MeasurementError):
            MeasurementSet(np.zeros(2), np.zeros(2), np.ones((2, 2)), np.eye(2))
        with pytest.raises(MeasurementError):
            MeasurementSet(np.zeros(2), np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))

    def test_arrays_are_read_only(self):
        meas = MeasurementSet(np.zeros(2), np.zeros(2), np.eye(2), np.eye(2))
        with pytest.raises(ValueError):
            meas.d_tilde[0] = 1.0


@pytest.mark.unit
class TestConversions:
    """Synchronization offsets to range domain"""

    def test_offsets_to_range_differences(self):
        cfg = SyncConfig(M=3)
        t, f = offsets_to_tdoa_fdoa([10.0, 11.0, 13.0], [0.1, 0.2, 0.4], cfg)
        np.testing.assert_allclose(t, np.array([1.0, 3.0]) * cfg.Ts)
        np.testing.assert_allclose(f, np.array([0.1, 0.3]) * cfg.delta_f)
        d, dd = to_range_domain(t, f, cfg.fc)
        np.testing.assert_allclose(d, config.SPEED_OF_LIGHT * t)
        np.testing.assert_allclose(dd, config.SPEED_OF_LIGHT * f / cfg.fc)

    def test_offset_lengths_checked(self):
        with pytest.raises(MeasurementError):
            offsets_to_tdoa_fdoa([1.0, 2.0], [1.0], SyncConfig(M=3))

    def test_csv_dump(self, s1_case, tmp_path):
        _, meas, _ = s1_case(window=20.0, T=2.0)
        path = tmp_path / "meas.csv"
        write_csv(meas, path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["i", "d_tilde", "dd_tilde"]
        assert len(rows) == 10
        assert rows[1][0] == "2"
        assert float(rows[-1][1]) == meas.d_tilde[-1]


@pytest.mark.unit
class TestInvariants:
    """Frame independence and differencing identities"""

    def test_ecef_and_eci_differences_agree(self, aligned_orbit, earth):
        M, T = 16, 4.0
        p = geodetic_to_ecef(*SITES["pos2"], 0.0, earth)
        ecef = make_noise_free(satellite_track(aligned_orbit, M, T, earth, Frame.ECEF), p, np.zeros(3),
                               Frame.ECEF)
        track = ue_track_eci(p, aligned_orbit.gst0, M, T, earth)
        eci = make_noise_free(satellite_track(aligned_orbit, M, T, earth, Frame.ECI), track.pos, track.vel,
                              Frame.ECI)
        np.testing.assert_allclose(eci.d_tilde, ecef.d_tilde, rtol=1e-9, atol=1e-6)
        np.testing.assert_allclose(eci.dd_tilde, ecef.dd_tilde, rtol=1e-9, atol=1e-9)

    def test_range_rate_matches_finite_difference(self, aligned_orbit, earth):
        h = 1e-3
        p = geodetic_to_ecef(*SITES["pos1"], 0.0, earth)
        before, mid, after = satellite_track(aligned_orbit, 3, h, earth, Frame.ECEF)
        numeric = (slant_range(after, p) - slant_range(before, p)) / (2 * h)
        assert slant_range_rate(mid, p, np.zeros(3)) == pytest.approx(numeric, rel=1e-6)

    def test_swapping_reference_negates_difference(self, s1_case):
        states, meas, p = s1_case(window=20.0, T=2.0)
        swapped = make_noise_free([states[1], states[0]] + states[2:], p, np.zeros(3))
        assert swapped.d_tilde[0] == pytest.approx(-meas.d_tilde[0], rel=1e-12)
        assert swapped.dd_tilde[0] == pytest.approx(-meas.dd_tilde[0], rel=1e-12)
        np.testing.assert_allclose(swapped.d_tilde[1:], meas.d_tilde[1:] - meas.d_tilde[0], atol=1e-6)
