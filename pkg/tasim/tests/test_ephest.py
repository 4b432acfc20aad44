"""
Tests for Scenario 2: ephemeris estimation from a UE with a known position.
"""
import numpy as np
import pytest

from tasim.errors import FrameMismatchError, GeometryError, MeasurementError
from tasim.geom import Frame, UeTrack, eci_to_opc
from tasim.ephest import (build_problem2, ephemeris_crlb, ephemeris_jacobian, ephemeris_measurements,
                          estimate_ephemeris, solve_ephemeris_cwls, solve_ephemeris_penalty, starting_point2)
from tasim.models import SolverKind, WeightMode


@pytest.mark.unit
class TestProblemAssembly:
    """b1, G1 and the four constraints"""

    def test_truth_solves_system_and_constraints(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case()
        prob = build_problem2(aligned_orbit, track, meas, T, WeightMode.IDENTITY)
        z2 = prob.z2_from_satellite(s1)
        np.testing.assert_allclose(prob.G1 @ z2, prob.b2, atol=1e-9 * np.linalg.norm(prob.b2))
        np.testing.assert_allclose(prob.program().residuals(z2), 0.0, atol=1e-10)

    def test_range_rate_constraint_sign(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case(site="pos2")
        prob = build_problem2(aligned_orbit, track, meas, T, WeightMode.IDENTITY)
        z2 = prob.z2_from_satellite(s1)
        rate = prob.constraints()[3]
        assert abs(rate.value(z2)) < 1e-10
        wrong = z2.copy()
        wrong[4] = -wrong[4]
        assert abs(rate.value(wrong)) > 1e-6

    def test_exact_weights_need_truth(self, s2_case, aligned_orbit):
        track, meas, _, T = s2_case()
        with pytest.raises(MeasurementError):
            build_problem2(aligned_orbit, track, meas, T, WeightMode.EXACT)

    def test_track_must_be_inertial(self, s2_case, aligned_orbit):
        track, meas, _, T = s2_case()
        ecef = UeTrack(Frame.ECEF, track.pos, track.vel)
        with pytest.raises(FrameMismatchError):
            build_problem2(aligned_orbit, ecef, meas, T)

    def test_needs_four_ssbs(self, s2_case, aligned_orbit):
        track, meas, _, T = s2_case(window=6.0, T=2.0)
        assert len(track) == 3
        with pytest.raises(GeometryError):
            build_problem2(aligned_orbit, track, meas, T)

    def test_measurements_from_transform_match_propagation(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case(site="pos2")
        stacked = ephemeris_measurements(aligned_orbit, track, s1, T)
        np.testing.assert_allclose(stacked[:len(meas)], meas.d_tilde, atol=1e-5)
        np.testing.assert_allclose(stacked[len(meas):], meas.dd_tilde, atol=1e-7)


@pytest.mark.unit
class TestEstimation:
    """Recovery of s1 by both solvers"""

    @pytest.mark.parametrize("solver", [SolverKind.CWLS, SolverKind.PENALTY])
    @pytest.mark.parametrize("site", ["subsat", "pos2"])
    def test_noise_free_recovery(self, s2_case, aligned_orbit, solver, site):
        track, meas, s1, T = s2_case(site=site)
        prob = build_problem2(aligned_orbit, track, meas, T, WeightMode.ITER_UPDATE)
        res = estimate_ephemeris(prob, solver)
        assert res.converged
        assert np.linalg.norm(res.s1_hat_eci - s1) < 1.0
        assert abs(res.d1_hat - np.linalg.norm(s1 - track.pos[0])) < 1.0
        assert res.method == solver

    def test_estimate_lies_on_orbit(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case(site="pos2", sigma_t=1e-10, sigma_f=0.01)
        prob = build_problem2(aligned_orbit, track, meas, T, WeightMode.ITER_UPDATE)
        res = solve_ephemeris_cwls(prob)
        assert res.converged
        assert np.linalg.norm(res.s1_hat_eci) == pytest.approx(aligned_orbit.radius_r, rel=1e-12)
        assert abs(eci_to_opc(aligned_orbit)[2] @ res.s1_hat_eci) < 1e-6
        np.testing.assert_allclose(res.constraint_residuals[:2], 0.0, atol=1e-9)
        assert np.linalg.norm(res.s1_hat_eci - s1) < 100.0

    def test_exact_weights(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case(sigma_t=1e-10, sigma_f=0.01)
        prob = build_problem2(aligned_orbit, track, meas, T, WeightMode.EXACT, s1_true=s1)
        res = solve_ephemeris_penalty(prob)
        assert res.converged
        assert np.linalg.norm(res.s1_hat_eci - s1) < 100.0


@pytest.mark.unit
class TestEphemerisCrlb:
    """Jacobian and the orbit-constrained bound"""

    def test_jacobian_matches_finite_differences(self, s2_case, aligned_orbit):
        track, _, s1, T = s2_case(site="pos2")
        D = ephemeris_jacobian(aligned_orbit, track, s1, T)
        fd = np.empty_like(D)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            fd[:, k] = (ephemeris_measurements(aligned_orbit, track, s1 + e, T)
                        - ephemeris_measurements(aligned_orbit, track, s1 - e, T)) / 2.0
        np.testing.assert_allclose(fd, D, rtol=1e-5, atol=1e-5 * np.max(np.abs(D)))

    def test_bound_respects_orbit_constraints(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case(sigma_t=1e-8, sigma_f=5.0)
        bound = ephemeris_crlb(aligned_orbit, track, s1, meas.Qt, meas.Qf, T)
        assert bound.F.shape == (3, 2)
        scale = np.max(np.abs(bound.unconstrained))
        np.testing.assert_allclose(bound.crlb @ bound.F, 0.0, atol=1e-9 * scale * np.linalg.norm(bound.F))
        assert 0.0 < bound.position_trace <= np.trace(bound.unconstrained) * (1 + 1e-9)

    def test_bound_scales_with_noise_variance(self, s2_case, aligned_orbit):
        track, meas, s1, T = s2_case(site="pos2", sigma_t=1e-8, sigma_f=5.0)
        base = ephemeris_crlb(aligned_orbit, track, s1, meas.Qt, meas.Qf, T)
        doubled = ephemeris_crlb(aligned_orbit, track, s1, 4.0 * meas.Qt, 4.0 * meas.Qf, T)
        np.testing.assert_allclose(doubled.crlb, 4.0 * base.crlb, rtol=1e-9,
                                   atol=1e-12 * np.max(np.abs(doubled.crlb)))


def _errors(s2_case, aligned_orbit, trials, solver=SolverKind.CWLS, require_converged=True, **case):
    errors = []
    for seed in range(trials):
        track, meas, s1, T = s2_case(seed=seed, **case)
        res = estimate_ephemeris(build_problem2(aligned_orbit, track, meas, T, WeightMode.ITER_UPDATE), solver)
        assert res.converged or not require_converged, f"seed {seed}"
        errors.append(np.linalg.norm(res.s1_hat_eci - s1))
    return np.array(errors)


@pytest.mark.unit
class TestEphemerisStatistics:
    """Monte Carlo behaviour of the orbit-constrained estimate"""

    def test_short_window_matches_bound(self, s2_case, aligned_orbit):
        case = {"site": "subsat", "window": 2.0, "T": 0.02, "sigma_t": 1e-8, "sigma_f": 5.0}
        errors = _errors(s2_case, aligned_orbit, 40, **case)
        track, meas, s1, T = s2_case(**case)
        bound = ephemeris_crlb(aligned_orbit, track, s1, meas.Qt, meas.Qf, T)
        assert 0.5 <= np.mean(errors ** 2) / bound.position_trace <= 2.0

    def test_solvers_agree_from_shared_start(self, s2_case, aligned_orbit):
        gaps, squared = [], []
        for seed in range(20):
            track, meas, s1, T = s2_case(site="subsat", window=2.0, T=0.02, sigma_t=1e-8, sigma_f=5.0,
                                         seed=100 + seed)
            prob = build_problem2(aligned_orbit, track, meas, T, WeightMode.ITER_UPDATE)
            start = starting_point2(prob)
            cwls = solve_ephemeris_cwls(prob, start=start)
            penalty = solve_ephemeris_penalty(prob, start=start)
            assert cwls.converged and penalty.converged, f"seed {100 + seed}"
            gaps.append(np.linalg.norm(cwls.s1_hat_eci - penalty.s1_hat_eci))
            squared.append(np.sum((cwls.s1_hat_eci - s1) ** 2))
        assert np.median(gaps) <= 0.05 * np.sqrt(np.mean(squared))

    def test_median_error_shrinks_with_window(self, s2_case, aligned_orbit):
        case = {"site": "subsat", "T": 0.1, "sigma_t": 1e-8, "sigma_f": 5.0}
        medians = [np.median(_errors(s2_case, aligned_orbit, 15, require_converged=False, window=window, **case))
                   for window in (0.5, 1.0, 2.0, 4.0)]
        assert all(later <= earlier for earlier, later in zip(medians, medians[1:])), medians
