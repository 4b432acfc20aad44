"""Scenario 2: satellite ephemeris from a UE with a known (GNSS) position.

The orbit shape (r, Omega, theta, phi) is pre-provisioned, so only the
position s1 of the satellite on its circle at SSB 1 is estimated. Later
positions follow as s_i = A_i s1 and velocities as s_dot_i = A_i Phi s1.
Unknowns are z1 = (s1, d1, d1_dot) in ECI, shifted to z2 = z1 - (p1, 0, 0).

Four constraints close the system: orbit radius, orbital plane, range and
range rate to the UE at SSB 1.
"""
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import optimize

from . import qcqp
from .errors import FrameMismatchError, GeometryError, MeasurementError
from .geom import Frame, UeTrack, as_vec3, eci_to_opc, transform_Ai, velocity_map_Phi
from .locest import CrlbResult, UnitScale, constrained_bound, fisher_information, weighting_matrix
from .measure import MeasurementSet
from .models import CwlsConfig, OrbitElements, PenaltyConfig, SolverKind, WeightMode

logger = logging.getLogger(__name__)

MIN_SSBS = 4
Z_LAYOUT = "LLLLV"

# anomaly grid used to find a starting point
SEARCH_POINTS = 1440
SEARCH_CANDIDATES = 3
SEARCH_MAX_NFEV = 100


@dataclass(frozen=True)
class Scenario2Problem:
    """ECI-frame linear system for the ephemeris unknowns z2"""
    b1: np.ndarray
    b2: np.ndarray
    G1: np.ndarray
    Psi: np.ndarray
    w: np.ndarray        # rows w_i = p_i'A_i - p_1', i = 2..M
    v: np.ndarray        # rows v_i = w_i Phi + p_dot_i'A_i - p_dot_1'
    C5: np.ndarray
    C6: np.ndarray
    C7: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    q4: np.ndarray
    rho2: float
    rho3: float
    r_tilde2: np.ndarray
    r_tilde3: np.ndarray
    g_row: np.ndarray    # orbit normal, third row of E^opc_eci
    plane: np.ndarray    # in-plane axes, first two rows of E^opc_eci
    A: np.ndarray        # (M, 3, 3)
    Phi: np.ndarray      # solver units
    P: np.ndarray        # UE ECI positions, (M, 3), solver units
    Pdot: np.ndarray
    Qt: np.ndarray
    Qf: np.ndarray
    radius: float        # solver units
    weight_mode: WeightMode
    scale: UnitScale

    def constraints(self):
        zero = np.zeros((5, 5))
        return (
            qcqp.QuadraticConstraint(self.C5, self.q2, self.rho2, "orbit_radius"),
            qcqp.QuadraticConstraint(zero, 0.5 * self.q3, self.rho3, "orbit_plane"),
            qcqp.QuadraticConstraint(self.C6, np.zeros(5), 0.0, "range"),
            qcqp.QuadraticConstraint(self.C7, 0.5 * self.q4, 0.0, "range_rate"),
        )

    def program(self) -> qcqp.QuadraticProgram:
        return qcqp.QuadraticProgram.from_weighted(self.G1, self.b2, self.Psi, self.constraints())

    def satellite_ranges(self, s1: np.ndarray):
        """Ranges and range rates from the UE track to A_i s1, solver units."""
        S = self.A @ s1
        Sdot = self.A @ (self.Phi @ s1)
        los = S - self.P
        d = np.linalg.norm(los, axis=1)
        return d, np.einsum("ij,ij->i", los, Sdot - self.Pdot) / d

    def states_on_orbit(self, angles) -> np.ndarray:
        """Feasible z2 rows for satellite positions at in-plane angles measured from the first plane axis."""
        angles = np.atleast_1d(np.asarray(angles, dtype=float))
        S = self.radius * (np.cos(angles)[:, None] * self.plane[0] + np.sin(angles)[:, None] * self.plane[1])
        X = S - self.P[0]
        d1 = np.linalg.norm(X, axis=1)
        rate = np.einsum("ij,ij->i", X, S @ self.Phi.T - self.Pdot[0]) / d1
        return np.column_stack([X, d1, rate])

    def anomaly_of(self, z2: np.ndarray) -> float:
        s1 = z2[:3] + self.P[0]
        return math.atan2(self.plane[1] @ s1, self.plane[0] @ s1)

    def z2_from_satellite(self, s1_si) -> np.ndarray:
        """Shifted unknowns implied by a satellite position given in SI units."""
        s1 = as_vec3(s1_si, "s1") * self.scale.length
        x = s1 - self.P[0]
        d1 = np.linalg.norm(x)
        rate = x @ (self.Phi @ s1 - self.Pdot[0]) / d1
        return np.concatenate([x, [d1, rate]])

    def with_weights_from(self, z2: np.ndarray) -> "Scenario2Problem":
        d, d_dot = self.satellite_ranges(z2[:3] + self.P[0])
        return dataclasses.replace(self, Psi=weighting_matrix(d[1:], d_dot[1:], self.Qt, self.Qf))

    def snap_to_orbit(self, z2: np.ndarray) -> np.ndarray:
        """Project s1 onto the orbital plane, rescale to the orbit radius and refresh d1, d1_dot."""
        s1 = z2[:3] + self.P[0]
        s1 = s1 - (self.g_row @ s1) * self.g_row
        norm = np.linalg.norm(s1)
        if norm == 0.0:
            raise GeometryError("satellite estimate collapsed onto the orbit axis")
        s1 = s1 * (self.radius / norm)
        x = s1 - self.P[0]
        d1 = np.linalg.norm(x)
        return np.concatenate([x, [d1, x @ (self.Phi @ s1 - self.Pdot[0]) / d1]])


@dataclass
class EphemerisResult:
    s1_hat_eci: np.ndarray            # m
    d1_hat: float                     # m
    d1_dot_hat: float                 # m/s
    iterations: int
    converged: bool
    constraint_residuals: np.ndarray  # radius, plane, range, range rate (solver units)
    z2_hat: np.ndarray
    objective: float
    wall_time: float
    method: SolverKind
    feasibility_trace: List[float] = field(default_factory=list)
    pinv_rank: Optional[int] = None
    ambiguous: bool = False
    start_time: float = 0.0           # orbit search and refresh, not part of wall_time


def build_problem2(elems: OrbitElements, ue_track: UeTrack, meas: MeasurementSet,
                   T: float, weight_mode: Union[WeightMode, str] = WeightMode.ITER_UPDATE,
                   s1_true=None, scale: UnitScale = UnitScale()) -> Scenario2Problem:
    """Assemble b1, G1, Psi and the four constraints.

    ``elems`` supplies the orbit shape; its anomaly is never read.
    ``s1_true`` (ECI, m) is needed by the Exact weighting mode.
    """
    weight_mode = WeightMode(weight_mode)
    if ue_track.frame != Frame.ECI:
        raise FrameMismatchError("Scenario 2 needs the UE track in ECI")
    M = len(ue_track)
    if meas.M != M:
        raise MeasurementError(f"{len(meas)} differences do not match a UE track of {M} epochs")
    if M < MIN_SSBS:
        raise GeometryError(f"Scenario 2 needs M >= {MIN_SSBS} SSBs, got {M}")

    A = np.array([transform_Ai(elems, i, T) for i in range(1, M + 1)])
    track_spread = np.max(np.linalg.norm(ue_track.pos - ue_track.pos[0], axis=1))
    rotation_spread = np.max(np.abs(A - np.eye(3)))
    if track_spread <= 1e-9 * np.linalg.norm(ue_track.pos[0]) and rotation_spread <= 1e-12:
        raise GeometryError("degenerate track: UE and satellite do not move between SSBs")

    L, V = scale.length, scale.velocity
    Phi = velocity_map_Phi(elems) * (V / L)
    P = ue_track.pos * L
    Pdot = ue_track.vel * V
    d = meas.d_tilde * L
    dd = meas.dd_tilde * V
    Qt = meas.Qt * L ** 2
    Qf = meas.Qf * V ** 2

    p1, p1_dot = P[0], Pdot[0]
    w = np.einsum("ij,ijk->ik", P[1:], A[1:]) - p1
    v = w @ Phi + np.einsum("ij,ijk->ik", Pdot[1:], A[1:]) - p1_dot
    n = M - 1
    zn = np.zeros((n, 1))
    b1 = np.concatenate([
        d ** 2 - (np.sum(P[1:] ** 2, axis=1) - p1 @ p1),
        2.0 * d * dd - 2.0 * (np.einsum("ij,ij->i", P[1:], Pdot[1:]) - p1 @ p1_dot),
    ])
    G1 = -2.0 * np.block([
        [w, d[:, None], zn],
        [v, dd[:, None], d[:, None]],
    ])
    r_tilde2 = np.concatenate([p1, [0.0, 0.0]])
    r_tilde3 = np.concatenate([p1_dot, [0.0, 0.0]])
    b2 = b1 - G1 @ r_tilde2

    radius = elems.radius_r * L
    E = eci_to_opc(elems)
    g_row = E[2]
    C5 = np.diag([1.0, 1.0, 1.0, 0.0, 0.0])
    C6 = np.diag([1.0, 1.0, 1.0, -1.0, 0.0])
    C7 = np.zeros((5, 5))
    C7[:3, :3] = Phi
    C7[3, 4] = -1.0
    q2 = C5 @ r_tilde2
    q3 = np.concatenate([g_row, [0.0, 0.0]])
    q4 = C7 @ r_tilde2 - r_tilde3

    problem = Scenario2Problem(
        b1=b1, b2=b2, G1=G1, Psi=weighting_matrix(np.full(n, 0.5), np.zeros(n), Qt, Qf),
        w=w, v=v, C5=C5, C6=C6, C7=C7, q2=q2, q3=q3, q4=q4,
        rho2=float(radius ** 2 - p1 @ p1), rho3=float(-g_row @ p1),
        r_tilde2=r_tilde2, r_tilde3=r_tilde3, g_row=g_row, plane=E[:2], A=A, Phi=Phi, P=P, Pdot=Pdot,
        Qt=Qt, Qf=Qf, radius=radius, weight_mode=weight_mode, scale=scale,
    )
    if weight_mode == WeightMode.EXACT:
        if s1_true is None:
            raise MeasurementError("Exact weighting needs the true satellite position")
        problem = problem.with_weights_from(problem.z2_from_satellite(s1_true))
    return problem


def _result(prob: Scenario2Problem, sol: qcqp.QpSolution, method: SolverKind, wall_time: float,
            start: Optional["Start2"] = None) -> EphemerisResult:
    z2 = prob.snap_to_orbit(sol.u)
    z1 = z2 + prob.r_tilde2
    z1_si = prob.scale.to_si(z1, Z_LAYOUT)
    return EphemerisResult(
        s1_hat_eci=z1_si[:3], d1_hat=float(z1_si[3]), d1_dot_hat=float(z1_si[4]),
        iterations=sol.iterations, converged=sol.converged,
        constraint_residuals=np.array([c.value(z2) for c in prob.constraints()]), z2_hat=z2,
        objective=sol.objective, wall_time=wall_time, method=method,
        feasibility_trace=sol.feasibility_trace, pinv_rank=sol.rank,
        start_time=start.wall_time if start else 0.0,
    )


@dataclass(frozen=True)
class Start2:
    """Point on the known orbit shared by both solvers, with the problem it was fitted under"""
    problem: Scenario2Problem
    z2: np.ndarray
    wall_time: float = 0.0


def refine_on_orbit(prob: Scenario2Problem, z2: np.ndarray,
                    program: Optional[qcqp.QuadraticProgram] = None) -> np.ndarray:
    """Least-squares fit of the anomaly, starting from the satellite position in ``z2``."""
    program = program or prob.program()

    def residual(angle):
        return program.hw - program.Gw @ prob.states_on_orbit(angle)[0]

    fit = optimize.least_squares(residual, [prob.anomaly_of(z2)], xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                 max_nfev=SEARCH_MAX_NFEV)
    return prob.states_on_orbit(fit.x)[0]


def search_on_orbit(prob: Scenario2Problem, points: int = SEARCH_POINTS,
                    candidates: int = SEARCH_CANDIDATES) -> np.ndarray:
    """Best z2 over a uniform grid of anomalies on the known circle, refined by least squares."""
    program = prob.program()
    angles = 2.0 * math.pi * np.arange(points) / points
    R = program.hw[None, :] - prob.states_on_orbit(angles) @ program.Gw.T
    cost = np.einsum("ij,ij->i", R, R)
    chosen: List[int] = []
    for k in np.argsort(cost):
        if all(min(abs(k - j), points - abs(k - j)) > 2 for j in chosen):
            chosen.append(int(k))
        if len(chosen) == candidates:
            break
    refined = [refine_on_orbit(prob, prob.states_on_orbit(angles[k:k + 1])[0], program) for k in chosen]
    scores = [program.objective(z) for z in refined]
    best = int(np.argmin(scores))
    logger.debug("orbit search: best of %d refined anomalies has objective %.6e", len(refined), scores[best])
    return refined[best]


def starting_point2(prob: Scenario2Problem, initial: Optional[np.ndarray] = None) -> Start2:
    """Search the orbit (or take ``initial``); IterUpdate then refits once under refreshed weights."""
    start = time.perf_counter()
    z2 = search_on_orbit(prob) if initial is None else np.asarray(initial, dtype=float)
    current = prob
    if prob.weight_mode == WeightMode.ITER_UPDATE:
        current = prob.with_weights_from(z2)
        if initial is None:
            z2 = refine_on_orbit(current, z2)
    return Start2(current, z2, time.perf_counter() - start)


def solve_ephemeris_cwls(prob: Scenario2Problem, cfg: CwlsConfig = CwlsConfig(),
                         initial: Optional[np.ndarray] = None, start: Optional[Start2] = None) -> EphemerisResult:
    """Linearize, project, refresh Psi and repeat, from a point on the known orbit.

    IterUpdate refreshes the weights after every iteration unless
    ``cfg.refresh_limit`` bounds the number of refreshes.
    """
    start = start or starting_point2(prob, initial)
    t0 = time.perf_counter()
    reweight = None
    if prob.weight_mode == WeightMode.ITER_UPDATE:
        def reweight(z2):
            return prob.with_weights_from(z2).program()
    sol = qcqp.solve_cwls(start.problem.program(), cfg, initial=start.z2, reweight=reweight,
                          refresh_limit=cfg.refresh_limit)
    return _result(prob, sol, SolverKind.CWLS, time.perf_counter() - t0, start)


def solve_ephemeris_penalty(prob: Scenario2Problem, cfg: PenaltyConfig = PenaltyConfig(),
                            initial: Optional[np.ndarray] = None, start: Optional[Start2] = None) -> EphemerisResult:
    """Quadratic penalty from the shared starting point; IterUpdate uses the refreshed weights."""
    start = start or starting_point2(prob, initial)
    t0 = time.perf_counter()
    sol = qcqp.solve_penalty(start.problem.program(), cfg, initial=start.z2)
    return _result(prob, sol, SolverKind.PENALTY, time.perf_counter() - t0, start)


def estimate_ephemeris(prob: Scenario2Problem, solver: Union[SolverKind, str] = SolverKind.CWLS,
                       penalty_cfg: PenaltyConfig = PenaltyConfig(),
                       cwls_cfg: CwlsConfig = CwlsConfig()) -> EphemerisResult:
    if SolverKind(solver) == SolverKind.PENALTY:
        return solve_ephemeris_penalty(prob, penalty_cfg)
    return solve_ephemeris_cwls(prob, cwls_cfg)


def ephemeris_measurements(elems: OrbitElements, ue_track: UeTrack, s1, T: float) -> np.ndarray:
    """Noise-free (d_i1, d_dot_i1) stacked, generated from s1 through A_i and Phi (SI)."""
    s1 = as_vec3(s1, "s1")
    M = len(ue_track)
    Phi = velocity_map_Phi(elems)
    S = np.array([transform_Ai(elems, i, T) @ s1 for i in range(1, M + 1)])
    Sdot = np.array([transform_Ai(elems, i, T) @ Phi @ s1 for i in range(1, M + 1)])
    los = S - ue_track.pos
    d = np.linalg.norm(los, axis=1)
    d_dot = np.einsum("ij,ij->i", los, Sdot - ue_track.vel) / d
    return np.concatenate([d[1:] - d[0], d_dot[1:] - d_dot[0]])


def ephemeris_jacobian(elems: OrbitElements, ue_track: UeTrack, s1, T: float) -> np.ndarray:
    """d(d_i1, d_dot_i1)/d s1 using s_i = A_i s1 and s_dot_i = A_i Phi s1, shape (2(M-1), 3)."""
    s1 = as_vec3(s1, "s1")
    M = len(ue_track)
    Phi = velocity_map_Phi(elems)
    dd_ds = np.empty((M, 3))
    ddot_ds = np.empty((M, 3))
    for k in range(M):
        A = transform_Ai(elems, k + 1, T)
        a = A @ s1 - ue_track.pos[k]
        b = A @ Phi @ s1 - ue_track.vel[k]
        d = np.linalg.norm(a)
        rate = a @ b / d
        dd_ds[k] = a @ A / d
        ddot_ds[k] = (b @ A + a @ A @ Phi) / d - rate * (a @ A) / d ** 2
    return np.vstack([dd_ds[1:] - dd_ds[0], ddot_ds[1:] - ddot_ds[0]])


def ephemeris_crlb(elems: OrbitElements, ue_track: UeTrack, s1_true, Qt: np.ndarray, Qf: np.ndarray,
                   T: float) -> CrlbResult:
    """CRLB for s1 under the orbit-radius and orbital-plane constraints (SI)."""
    s1 = as_vec3(s1_true, "s1_true")
    J = fisher_information(ephemeris_jacobian(elems, ue_track, s1, T), Qt, Qf)
    F = np.column_stack([s1, eci_to_opc(elems)[2]])
    return CrlbResult(crlb=constrained_bound(J, F), J=J, F=F)
