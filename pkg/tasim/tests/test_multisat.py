"""
Tests for multi-satellite stacking and geometry dilution.
"""
import math

import numpy as np
import pytest

from tasim.config import config
from tasim.errors import ConfigError, GeometryError, SingularInformationError, VisibilityError
from tasim.geom import align_overpass, geodetic_to_ecef
from tasim.locest import build_problem, estimate
from tasim.measure import common_reference_covariance
from tasim.models import SolverKind, SyncConfig, WeightMode
from tasim.multisat import Constellation, Dilution, gdop_metric, make_constellation, stack_measurements

from .conftest import SITES


@pytest.fixture
def lead_orbit(table1_orbit, earth):
    """Satellite 1 over (6N, 5E), ten degrees west of Pos2"""
    return align_overpass(table1_orbit, geodetic_to_ecef(6.0, 5.0, 0.0, earth))


@pytest.fixture
def pos2(earth):
    return geodetic_to_ecef(*SITES["pos2"], 0.0, earth)


@pytest.fixture
def sync_1s():
    return SyncConfig.from_window(1.0, 0.02)


@pytest.mark.unit
class TestConstellation:
    """Constellation invariants and generation"""

    def test_round_robin_planes(self, lead_orbit):
        con = make_constellation(lead_orbit, 4, planes=2, raan_spacing=math.radians(20.0),
                                 anomaly_step=math.radians(2.0))
        assert con.G == 4
        raans = [s.raan_Omega - lead_orbit.raan_Omega for s in con.sats]
        np.testing.assert_allclose(raans, np.radians([0.0, 20.0, 0.0, 20.0]))
        offsets = [s.alpha0 - lead_orbit.alpha0 for s in con.sats]
        np.testing.assert_allclose(offsets, np.radians([0.0, 0.0, 2.0, 2.0]))
        assert con.sats[0] == lead_orbit
        assert len({s.gst0 for s in con.sats}) == 1

    def test_mixed_epochs_rejected(self, lead_orbit):
        with pytest.raises(ConfigError):
            Constellation((lead_orbit, lead_orbit.model_copy(update={"gst0": lead_orbit.gst0 + 0.1})))
        with pytest.raises(ConfigError):
            make_constellation(lead_orbit, 0)


@pytest.mark.unit
class TestStacking:
    """Satellite-major flattening against (satellite 1, SSB 1)"""

    def test_shapes_and_ordering(self, lead_orbit, pos2, sync_1s, earth):
        con = make_constellation(lead_orbit, 3)
        states, meas = stack_measurements(con, pos2, np.zeros(3), sync_1s, earth=earth)
        M = sync_1s.M
        assert M == 50
        assert len(states) == 3 * M
        assert len(meas) == 3 * M - 1
        assert [s.epoch_index for s in states[M - 1:M + 1]] == [M, 1]
        d1 = np.linalg.norm(states[0].pos - pos2)
        d_first_of_sat2 = np.linalg.norm(states[M].pos - pos2)
        assert meas.d_tilde[M - 1] == pytest.approx(d_first_of_sat2 - d1, abs=1e-6)
        assert meas.noise_free

    def test_noisy_stack(self, lead_orbit, pos2, sync_1s, earth):
        con = make_constellation(lead_orbit, 2)
        _, a = stack_measurements(con, pos2, np.zeros(3), sync_1s, noise=(1e-8, 5.0), rng_seed=3, earth=earth)
        _, b = stack_measurements(con, pos2, np.zeros(3), sync_1s, noise=(1e-8, 5.0), rng_seed=3, earth=earth)
        assert not a.noise_free
        np.testing.assert_array_equal(a.d_tilde, b.d_tilde)

    def test_duplicate_tracks(self, lead_orbit, pos2, sync_1s, earth):
        with pytest.raises(GeometryError):
            stack_measurements(Constellation((lead_orbit, lead_orbit)), pos2, np.zeros(3), sync_1s, earth=earth)

    def test_too_few_equations(self, lead_orbit, pos2, earth):
        with pytest.raises(GeometryError):
            stack_measurements(Constellation((lead_orbit,)), pos2, np.zeros(3), SyncConfig(M=3), earth=earth)

    def test_hidden_satellites_reported(self, lead_orbit, sync_1s, earth):
        far = geodetic_to_ecef(6.0, 120.0, 0.0, earth)
        with pytest.raises(VisibilityError) as exc:
            stack_measurements(make_constellation(lead_orbit, 2), far, np.zeros(3), sync_1s, earth=earth)
        assert (1, 1) in exc.value.epochs
        assert len(exc.value.epochs) == 2 * sync_1s.M

    def test_clock_bias_offsets_ranges(self, lead_orbit, pos2, sync_1s, earth):
        con = make_constellation(lead_orbit, 2)
        _, plain = stack_measurements(con, pos2, np.zeros(3), sync_1s, earth=earth)
        _, biased = stack_measurements(con, pos2, np.zeros(3), sync_1s, earth=earth, clock_bias_s=[0.0, 1e-6])
        M = sync_1s.M
        shift = biased.d_tilde - plain.d_tilde
        np.testing.assert_allclose(shift[:M - 1], 0.0, atol=1e-9)
        np.testing.assert_allclose(shift[M - 1:], config.SPEED_OF_LIGHT * 1e-6, rtol=1e-9)
        np.testing.assert_array_equal(biased.dd_tilde, plain.dd_tilde)
        assert plain.noise_free and not biased.noise_free
        with pytest.raises(ConfigError):
            stack_measurements(con, pos2, np.zeros(3), sync_1s, earth=earth, clock_bias_s=[0.0, 1e-6, 0.0])

    def test_noise_free_multi_satellite_recovery(self, lead_orbit, pos2, sync_1s, earth):
        con = make_constellation(lead_orbit, 4)
        states, meas = stack_measurements(con, pos2, np.zeros(3), sync_1s, earth=earth)
        prob = build_problem(states, meas, WeightMode.IDENTITY, earth=earth)
        res = estimate(prob, SolverKind.CWLS, resolve_mirror=False)
        assert np.linalg.norm(res.p_hat - pos2) < 1.0
        assert abs(res.d1_hat - np.linalg.norm(states[0].pos - pos2)) < 1.0

    def test_noisy_spread_constellation_within_cyclic_prefix(self, lead_orbit, pos2, sync_1s, earth):
        con = make_constellation(lead_orbit, 4, planes=2)
        ta_errors = []
        for seed in range(5):
            states, meas = stack_measurements(con, pos2, np.zeros(3), sync_1s, noise=(1e-8, 5.0), rng_seed=seed,
                                              earth=earth)
            prob = build_problem(states, meas, WeightMode.ITER_UPDATE, earth=earth)
            res = estimate(prob, SolverKind.CWLS, resolve_mirror=False)
            assert res.converged, f"seed {seed}"
            ta_errors.append(abs(res.d1_hat - np.linalg.norm(states[0].pos - pos2)))
        # a normal cyclic prefix of 4.7 us spans about 1.4 km of range
        assert np.median(ta_errors) < 1.4e3


@pytest.mark.unit
class TestDilution:
    """CRLB-based GDOP"""

    def _dilution(self, con, pos2, sync, earth):
        states, meas = stack_measurements(con, pos2, np.zeros(3), sync, earth=earth)
        n = len(meas)
        return gdop_metric(states, pos2, common_reference_covariance(n, 1.0),
                           common_reference_covariance(n, 1.0), earth=earth)

    def test_spread_planes_beat_single_plane(self, lead_orbit, pos2, sync_1s, earth):
        spread = self._dilution(make_constellation(lead_orbit, 4, planes=2), pos2, sync_1s, earth)
        trailing = self._dilution(make_constellation(lead_orbit, 4, planes=1, anomaly_step=math.radians(1.0)),
                                  pos2, sync_1s, earth)
        assert spread.observable and trailing.observable
        assert spread.value < trailing.value

    def test_unobservable_geometry(self, lead_orbit, pos2, sync_1s, earth, mocker):
        mocker.patch("tasim.multisat.crlb", side_effect=SingularInformationError("singular"))
        result = self._dilution(make_constellation(lead_orbit, 2), pos2, sync_1s, earth)
        assert result == Dilution(math.inf, False)
