"""Scenario 1: UE geolocation from satellites with known ephemeris.

Unknowns are u1 = (p, p_dot, d1, d1_dot) in ECEF. The linearized system is
built for the shifted vector u2 = u1 - r1 with r1 = (s1, s1_dot, 0, 0) and
solved under three constraints: the UE lies on the ellipsoid, d1 is the
range to s1, and d1_dot is the range rate to s1.

Problem matrices are stored in scaled units (lengths in Mm, velocities in
km/s, see ``UnitScale``); results are returned in SI units.
"""
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, optimize

from . import qcqp
from .errors import (DegenerateLinearizationError, FrameMismatchError, GeometryError,
                     MeasurementError, SingularInformationError)
from .geom import Frame, SatelliteState, as_vec3
from .measure import MeasurementSet
from .models import CwlsConfig, EarthModel, PenaltyConfig, SolverKind, WeightMode

logger = logging.getLogger(__name__)

MIN_RECEPTIONS = 6
MIRROR_MIN_SEPARATION_M = 1e3

# polar grid over the visible cap used to find a starting point
SEARCH_RINGS = 30
SEARCH_CANDIDATES = 4
SEARCH_CHUNK = 512
SEARCH_MAX_NFEV = 100


@dataclass(frozen=True)
class UnitScale:
    """Multipliers taking SI lengths and velocities to solver units"""
    length: float = 1e-6
    velocity: float = 1e-3

    def factors(self, layout: str) -> np.ndarray:
        """Per-component factors for a layout string such as 'LLLVVVLV'."""
        return np.array([self.length if k == "L" else self.velocity for k in layout])

    def to_internal(self, x: np.ndarray, layout: str) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.factors(layout)

    def to_si(self, x: np.ndarray, layout: str) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.factors(layout)


U_LAYOUT = "LLLVVVLV"


def weighting_matrix(d: np.ndarray, d_dot: np.ndarray, Qt: np.ndarray, Qf: np.ndarray) -> np.ndarray:
    """Psi = [[B,0],[B_dot,B]] blockdiag(Qt,Qf) [[B,B_dot],[0,B]] with B = 2diag(d)."""
    n = len(d)
    B = np.diag(2.0 * np.asarray(d, dtype=float))
    Bd = np.diag(2.0 * np.asarray(d_dot, dtype=float))
    Z = np.zeros((n, n))
    L = np.block([[B, Z], [Bd, B]])
    Q = np.block([[Qt, Z], [Z, Qf]])
    Psi = L @ Q @ L.T
    return 0.5 * (Psi + Psi.T)


def ranges_and_rates(S: np.ndarray, Sdot: np.ndarray, p: np.ndarray, p_dot: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Slant ranges and range rates from each row of S to the UE."""
    los = S - p
    d = np.linalg.norm(los, axis=1)
    if np.any(d == 0.0):
        raise GeometryError("UE coincides with a satellite position")
    return d, np.einsum("ij,ij->i", los, Sdot - p_dot) / d


@dataclass(frozen=True)
class Scenario1Problem:
    """Linearized Scenario-1 system and its constraint data"""
    h1: np.ndarray
    h2: np.ndarray
    G: np.ndarray
    Psi: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    q1: np.ndarray
    rho1: float
    r_tilde1: np.ndarray
    S: np.ndarray             # satellite positions, one row per reception
    Sdot: np.ndarray
    Qt: np.ndarray
    Qf: np.ndarray
    weight_mode: WeightMode
    scale: UnitScale
    earth: EarthModel

    @property
    def num_receptions(self) -> int:
        return self.S.shape[0]

    def constraints(self) -> Tuple[qcqp.QuadraticConstraint, ...]:
        zero = np.zeros(8)
        return (
            qcqp.QuadraticConstraint(self.C1, self.q1, self.rho1, "ellipsoid"),
            qcqp.QuadraticConstraint(self.C2, zero, 0.0, "range"),
            qcqp.QuadraticConstraint(self.C3, zero, 0.0, "range_rate"),
        )

    def program(self) -> qcqp.QuadraticProgram:
        return qcqp.QuadraticProgram.from_weighted(self.G, self.h2, self.Psi, self.constraints())

    def residual_norm(self, u2: np.ndarray) -> float:
        return float(np.linalg.norm(self.h2 - self.G @ u2))

    def u2_from_state(self, p, p_dot) -> np.ndarray:
        """Shifted unknowns implied by a UE state given in SI units."""
        p = as_vec3(p, "p") * self.scale.length
        p_dot = as_vec3(p_dot, "p_dot") * self.scale.velocity
        x = p - self.S[0]
        x_dot = p_dot - self.Sdot[0]
        d1 = np.linalg.norm(x)
        return np.concatenate([x, x_dot, [d1, x @ x_dot / d1]])

    def with_weights_from(self, u2: np.ndarray) -> "Scenario1Problem":
        """Refresh Psi from an estimate (IterUpdate)."""
        u1 = u2 + self.r_tilde1
        d, d_dot = ranges_and_rates(self.S[1:], self.Sdot[1:], u1[:3], u1[3:6])
        return dataclasses.replace(self, Psi=weighting_matrix(d, d_dot, self.Qt, self.Qf))


@dataclass
class EstimationResult:
    """Estimate of u1 = (p, p_dot, d1, d1_dot) with solver diagnostics"""
    u_hat: np.ndarray                 # absolute, SI units
    u2_hat: np.ndarray                # shifted, solver units
    objective: float
    constraint_residuals: np.ndarray  # c_i(u2_hat), solver units
    iterations: int
    converged: bool
    wall_time: float
    method: SolverKind
    ambiguous: bool = False
    feasibility_trace: List[float] = field(default_factory=list)
    pinv_rank: Optional[int] = None
    start_time: float = 0.0           # search and refreshes, not part of wall_time
    refreshes: int = 0

    @property
    def p_hat(self) -> np.ndarray:
        return self.u_hat[:3]

    @property
    def p_dot_hat(self) -> np.ndarray:
        return self.u_hat[3:6]

    @property
    def d1_hat(self) -> float:
        return float(self.u_hat[6])

    @property
    def d1_dot_hat(self) -> float:
        return float(self.u_hat[7])


@dataclass
class CrlbResult:
    crlb: np.ndarray   # constrained bound
    J: np.ndarray      # Fisher information
    F: np.ndarray      # constraint gradients, one column per constraint

    @property
    def unconstrained(self) -> np.ndarray:
        return _inverse_information(self.J)

    @property
    def position_trace(self) -> float:
        return float(np.trace(self.crlb[:3, :3]))


def build_problem(sat_states: Sequence[SatelliteState], meas: MeasurementSet,
                  weight_mode: Union[WeightMode, str] = WeightMode.ITER_UPDATE,
                  truth: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                  earth: Optional[EarthModel] = None,
                  scale: UnitScale = UnitScale()) -> Scenario1Problem:
    """Assemble h1, G, Psi and the constraints from ECEF states and measurements.

    ``truth`` is the (p, p_dot) pair needed by the Exact weighting mode.
    """
    weight_mode = WeightMode(weight_mode)
    earth = earth or EarthModel()
    states = list(sat_states)
    if len(states) != meas.M:
        raise MeasurementError(f"{len(meas)} differences do not match {len(states)} satellite states")
    if len(states) < MIN_RECEPTIONS:
        raise GeometryError(f"Scenario 1 needs at least {MIN_RECEPTIONS} receptions, got {len(states)}")
    if any(s.frame != Frame.ECEF for s in states):
        raise FrameMismatchError("Scenario 1 is posed in ECEF")

    L, V = scale.length, scale.velocity
    S = np.array([s.pos for s in states]) * L
    Sdot = np.array([s.vel for s in states]) * V
    d = meas.d_tilde * L
    dd = meas.dd_tilde * V
    Qt = meas.Qt * L ** 2
    Qf = meas.Qf * V ** 2

    s1, s1_dot = S[0], Sdot[0]
    dS = S[1:] - s1
    dSdot = Sdot[1:] - s1_dot
    n = len(d)
    zc = np.zeros((n, 3))
    zn = np.zeros((n, 1))
    h1 = np.concatenate([
        d ** 2 - np.sum(S[1:] ** 2, axis=1) + s1 @ s1,
        2.0 * d * dd - 2.0 * np.einsum("ij,ij->i", S[1:], Sdot[1:]) + 2.0 * s1 @ s1_dot,
    ])
    G = -2.0 * np.block([
        [dS, zc, d[:, None], zn],
        [dSdot, dS, dd[:, None], d[:, None]],
    ])
    r_tilde1 = np.concatenate([s1, s1_dot, [0.0, 0.0]])
    h2 = h1 - G @ r_tilde1

    if weight_mode == WeightMode.EXACT:
        if truth is None:
            raise MeasurementError("Exact weighting needs the true UE state")
        p_true = as_vec3(truth[0], "p") * L
        p_dot_true = as_vec3(truth[1], "p_dot") * V
        Psi = weighting_matrix(*ranges_and_rates(S[1:], Sdot[1:], p_true, p_dot_true), Qt, Qf)
    else:
        Psi = weighting_matrix(np.full(n, 0.5), np.zeros(n), Qt, Qf)

    Ra, Rb = earth.R_a * L, earth.R_b * L
    C1 = np.diag([1 / Ra ** 2, 1 / Ra ** 2, 1 / Rb ** 2, 0, 0, 0, 0, 0])
    C2 = np.diag([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0])
    C3 = np.zeros((8, 8))
    C3[0:3, 3:6] = np.eye(3)
    C3[6, 7] = -1.0
    q1 = C1 @ r_tilde1
    rho1 = float(1.0 - r_tilde1 @ C1 @ r_tilde1)

    return Scenario1Problem(h1=h1, h2=h2, G=G, Psi=Psi, C1=C1, C2=C2, C3=C3, q1=q1, rho1=rho1,
                            r_tilde1=r_tilde1, S=S, Sdot=Sdot, Qt=Qt, Qf=Qf,
                            weight_mode=weight_mode, scale=scale, earth=earth)


def solve_wls_unconstrained(prob: Scenario1Problem, max_condition: float = 1e12) -> np.ndarray:
    """Unconstrained WLS estimate of u2 in solver units."""
    return qcqp.solve_wls(prob.program(), max_condition=max_condition)


def recover_absolute(result: Union[EstimationResult, np.ndarray], r_tilde1: np.ndarray,
                     scale: Optional[UnitScale] = None) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """u1 = u2 + r1 split into (p, p_dot, d1, d1_dot); converted to SI when ``scale`` is given."""
    u2 = result.u2_hat if isinstance(result, EstimationResult) else np.asarray(result, dtype=float)
    u1 = u2 + r_tilde1
    if scale is not None:
        u1 = scale.to_si(u1, U_LAYOUT)
    return u1[:3], u1[3:6], float(u1[6]), float(u1[7])


def _result(prob: Scenario1Problem, sol: qcqp.QpSolution, method: SolverKind, wall_time: float,
            start: Optional["Start"] = None) -> EstimationResult:
    p, p_dot, d1, d1_dot = recover_absolute(sol.u, prob.r_tilde1, prob.scale)
    return EstimationResult(
        u_hat=np.concatenate([p, p_dot, [d1, d1_dot]]),
        u2_hat=sol.u,
        objective=sol.objective,
        constraint_residuals=sol.residuals,
        iterations=sol.iterations,
        converged=sol.converged,
        wall_time=wall_time,
        method=method,
        feasibility_trace=sol.feasibility_trace,
        pinv_rank=sol.rank,
        start_time=start.wall_time if start else 0.0,
        refreshes=(start.refreshes if start else 0) + sol.refreshes,
    )


# Starting point

@dataclass(frozen=True)
class Start:
    """Feasible u2 shared by both solvers and the problem (weights) it was fitted under"""
    problem: Scenario1Problem
    u2: np.ndarray
    refreshes: int = 0
    wall_time: float = 0.0


def _surface(directions: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Radial projection of directions (K, 3) onto the ellipsoid with semi-axes ``radii``."""
    return directions / np.sqrt(np.sum((directions / radii) ** 2, axis=1))[:, None]


def _fit_velocity(program: qcqp.QuadraticProgram, X: np.ndarray) -> np.ndarray:
    """Feasible u2 rows for positions X = p - s1 (K, 3), with x_dot fitted by least squares.

    With x fixed, d1 = |x| and d1_dot = e'x_dot (e = x/|x|), so u2 is linear
    in x_dot and the best x_dot solves a 3x3 normal system per row.
    """
    Gw, hw = program.Gw, program.hw
    d = np.linalg.norm(X, axis=1)
    e = X / d[:, None]
    Gv, g_d, g_r = Gw[:, 3:6], Gw[:, 6], Gw[:, 7]
    R0 = hw[None, :] - X @ Gw[:, :3].T - d[:, None] * g_d[None, :]
    a = Gv.T @ g_r
    normal = ((Gv.T @ Gv)[None] + a[None, :, None] * e[:, None, :] + e[:, :, None] * a[None, None, :]
              + (g_r @ g_r) * e[:, :, None] * e[:, None, :])
    rhs = R0 @ Gv + e * (R0 @ g_r)[:, None]
    X_dot = np.einsum("kij,kj->ki", np.linalg.pinv(normal, hermitian=True), rhs)
    return np.column_stack([X, X_dot, d, np.einsum("ij,ij->i", e, X_dot)])


def _cap_directions(s1: np.ndarray, s1_dot: np.ndarray, horizon: float, rings: int) -> Tuple[np.ndarray, float]:
    """Polar grid of unit directions within ``horizon`` radians of s1; returns (directions, ring step)."""
    c = s1 / np.linalg.norm(s1)
    along = s1_dot - (s1_dot @ c) * c
    if np.linalg.norm(along) == 0.0:
        along = linalg.null_space(c[None, :])[:, 0]
    e1 = along / np.linalg.norm(along)
    e2 = np.cross(c, e1)
    step = horizon / rings
    dirs = [c[None, :]]
    for k in range(1, rings + 1):
        alpha = k * step
        count = max(6, math.ceil(2.0 * math.pi * math.sin(alpha) / step))
        beta = 2.0 * math.pi * np.arange(count) / count
        ring = np.cos(beta)[:, None] * e1 + np.sin(beta)[:, None] * e2
        dirs.append(math.cos(alpha) * c + math.sin(alpha) * ring)
    return np.vstack(dirs), step


def _costs(program: qcqp.QuadraticProgram, U: np.ndarray) -> np.ndarray:
    R = program.hw[None, :] - U @ program.Gw.T
    return np.einsum("ij,ij->i", R, R)


def refine_start(prob: Scenario1Problem, u2: np.ndarray,
                 program: Optional[qcqp.QuadraticProgram] = None) -> np.ndarray:
    """Gauss-Newton on the ellipsoid from the position in ``u2``; x_dot is re-fitted at every step."""
    program = program or prob.program()
    radii = np.array([prob.earth.R_a, prob.earth.R_a, prob.earth.R_b]) * prob.scale.length
    s1 = prob.S[0]
    n0 = u2[:3] + s1
    n0 = n0 / np.linalg.norm(n0)
    tangent = linalg.null_space(n0[None, :])

    def state(ab):
        p = _surface((n0 + tangent @ ab)[None, :], radii)[0]
        return _fit_velocity(program, (p - s1)[None, :])[0]

    def residual(ab):
        return program.hw - program.Gw @ state(ab)

    fit = optimize.least_squares(residual, np.zeros(2), xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                 max_nfev=SEARCH_MAX_NFEV)
    logger.debug("start refinement: %d evaluations, cost %.6e (%s)", fit.nfev, 2.0 * fit.cost, fit.message)
    return state(fit.x)


def search_start(prob: Scenario1Problem, rings: int = SEARCH_RINGS,
                 candidates: int = SEARCH_CANDIDATES) -> np.ndarray:
    """Best feasible u2 over the part of the ellipsoid visible from s1.

    Positions on a polar grid around the sub-satellite point are scored
    with x_dot fitted in closed form; the best few well-separated grid
    points are refined with ``refine_start`` and the lowest objective wins.
    """
    program = prob.program()
    radii = np.array([prob.earth.R_a, prob.earth.R_a, prob.earth.R_b]) * prob.scale.length
    s1, s1_dot = prob.S[0], prob.Sdot[0]
    horizon = math.acos(min(radii[0] / np.linalg.norm(s1), 1.0))
    dirs, step = _cap_directions(s1, s1_dot, horizon, rings)
    X = _surface(dirs, radii) - s1
    cost = np.concatenate([_costs(program, _fit_velocity(program, X[k:k + SEARCH_CHUNK]))
                           for k in range(0, len(X), SEARCH_CHUNK)])

    chosen: List[int] = []
    for k in np.argsort(cost):
        if all(dirs[k] @ dirs[j] < math.cos(2.0 * step) for j in chosen):
            chosen.append(int(k))
        if len(chosen) == candidates:
            break
    refined = [refine_start(prob, _fit_velocity(program, X[k][None, :])[0], program) for k in chosen]
    scores = [program.objective(u) for u in refined]
    best = int(np.argmin(scores))
    logger.debug("start search: %d grid points, best of %d refined candidates has objective %.6e",
                 len(X), len(refined), scores[best])
    return refined[best]


def starting_point(prob: Scenario1Problem, refreshes: int = 1,
                   initial: Optional[np.ndarray] = None) -> Start:
    """Search (or take ``initial``), then for IterUpdate refresh Psi ``refreshes`` times.

    After each refresh the searched point is refined again under the new
    weights; an explicit ``initial`` is used as given.
    """
    start = time.perf_counter()
    u2 = search_start(prob) if initial is None else np.asarray(initial, dtype=float)
    current, done = prob, 0
    if prob.weight_mode == WeightMode.ITER_UPDATE:
        for _ in range(max(refreshes, 0)):
            current = current.with_weights_from(u2)
            if initial is None:
                u2 = refine_start(current, u2)
            done += 1
    return Start(current, u2, done, time.perf_counter() - start)


def _refresh_count(cfg: CwlsConfig) -> int:
    return 1 if cfg.refresh_limit is None else cfg.refresh_limit


# Solvers

def solve_penalty(prob: Scenario1Problem, cfg: PenaltyConfig = PenaltyConfig(),
                  initial: Optional[np.ndarray] = None, start: Optional[Start] = None) -> EstimationResult:
    """Quadratic penalty from the shared starting point; IterUpdate refreshes Psi once."""
    start = start or starting_point(prob, 1, initial)
    t0 = time.perf_counter()
    sol = qcqp.solve_penalty(start.problem.program(), cfg, initial=start.u2)
    return _result(prob, sol, SolverKind.PENALTY, time.perf_counter() - t0, start)


def solve_cwls(prob: Scenario1Problem, cfg: CwlsConfig = CwlsConfig(),
               initial: Optional[np.ndarray] = None, start: Optional[Start] = None) -> EstimationResult:
    """Iterative CWLS; IterUpdate refreshes Psi once unless the config says otherwise."""
    start = start or starting_point(prob, _refresh_count(cfg), initial)
    t0 = time.perf_counter()
    sol = qcqp.solve_cwls(start.problem.program(), cfg, initial=start.u2)
    return _result(prob, sol, SolverKind.CWLS, time.perf_counter() - t0, start)


def mirror_state(prob: Scenario1Problem, u2: np.ndarray) -> np.ndarray:
    """u2 of the UE state reflected through the plane spanned by s1 and s1_dot."""
    s1, s1_dot = prob.S[0], prob.Sdot[0]
    normal = np.cross(s1, s1_dot)
    normal /= np.linalg.norm(normal)
    p = u2[:3] + s1
    p_dot = u2[3:6] + s1_dot
    x = p - 2.0 * (normal @ p) * normal - s1
    x_dot = p_dot - 2.0 * (normal @ p_dot) * normal - s1_dot
    d1 = np.linalg.norm(x)
    return np.concatenate([x, x_dot, [d1, x @ x_dot / d1]])


def estimate(prob: Scenario1Problem, solver: Union[SolverKind, str] = SolverKind.CWLS,
             penalty_cfg: PenaltyConfig = PenaltyConfig(), cwls_cfg: CwlsConfig = CwlsConfig(),
             resolve_mirror: bool = True, tie_rtol: float = 1e-6) -> EstimationResult:
    """Solve and, optionally, check the mirror image across the satellite's track plane.

    A single pass leaves a reflected UE position that fits the data almost
    as well. The mirrored candidate is refined and solved under the same
    weights as the first; both are scored with that one Psi, only a
    converged candidate can win, and equal scores set ``ambiguous``.
    """
    solver = SolverKind(solver)
    refreshes = 1 if solver == SolverKind.PENALTY else _refresh_count(cwls_cfg)
    start = starting_point(prob, refreshes)

    def run(s: Start) -> EstimationResult:
        if solver == SolverKind.PENALTY:
            return solve_penalty(prob, penalty_cfg, start=s)
        return solve_cwls(prob, cwls_cfg, start=s)

    first = run(start)
    if not resolve_mirror:
        return first

    common = start.problem.program()
    mirrored = mirror_state(prob, first.u2_hat)
    if np.linalg.norm(mirrored[:3] - first.u2_hat[:3]) / prob.scale.length < MIRROR_MIN_SEPARATION_M:
        return first
    t0 = time.perf_counter()
    try:
        u2_m = refine_start(start.problem, mirrored, common)
        second = run(dataclasses.replace(start, u2=u2_m, wall_time=time.perf_counter() - t0))
    except (DegenerateLinearizationError, np.linalg.LinAlgError) as e:
        logger.debug("mirror candidate failed: %s", e)
        return first

    scores = {id(r): common.objective(r.u2_hat) for r in (first, second)}
    pool = [r for r in (first, second) if r.converged] or [first]
    best = min(pool, key=lambda r: scores[id(r)])
    best = dataclasses.replace(best, objective=scores[id(best)],
                               wall_time=first.wall_time + second.wall_time,
                               start_time=first.start_time + second.start_time,
                               iterations=first.iterations + second.iterations)
    separation = np.linalg.norm(first.p_hat - second.p_hat)
    f1, f2 = scores[id(first)], scores[id(second)]
    if first.converged and second.converged and separation > MIRROR_MIN_SEPARATION_M and \
            abs(f1 - f2) <= tie_rtol * max(f1, f2, 1e-300):
        logger.warning("hemisphere ambiguity: candidates %.1f km apart with equal objective",
                       separation / 1e3)
        best.ambiguous = True
    return best


def range_difference_jacobian(sat_states: Sequence[SatelliteState], p, p_dot) -> np.ndarray:
    """d(d_i1, d_dot_i1)/d(p, p_dot), shape (2(M-1), 6)."""
    S = np.array([s.pos for s in sat_states])
    Sdot = np.array([s.vel for s in sat_states])
    p, p_dot = as_vec3(p, "p"), as_vec3(p_dot, "p_dot")
    los = S - p
    rel = Sdot - p_dot
    d, d_dot = ranges_and_rates(S, Sdot, p, p_dot)
    dd_dp = -los / d[:, None]
    ddot_dp = los * (d_dot / d ** 2)[:, None] - rel / d[:, None]
    n = len(S) - 1
    D = np.zeros((2 * n, 6))
    D[:n, :3] = dd_dp[1:] - dd_dp[0]
    D[n:, :3] = ddot_dp[1:] - ddot_dp[0]
    D[n:, 3:] = dd_dp[1:] - dd_dp[0]
    return D


def fisher_information(D: np.ndarray, Qt: np.ndarray, Qf: np.ndarray) -> np.ndarray:
    n = Qt.shape[0]
    Dt, Df = D[:n], D[n:]
    J = Dt.T @ linalg.cho_solve(linalg.cho_factor(Qt), Dt) + Df.T @ linalg.cho_solve(linalg.cho_factor(Qf), Df)
    return 0.5 * (J + J.T)


def _inverse_information(J: np.ndarray, max_condition: float = 1e14) -> np.ndarray:
    scale = np.sqrt(np.diag(J))
    if not np.all(scale > 0.0) or not np.all(np.isfinite(J)):
        raise SingularInformationError("Fisher information has an empty direction")
    Js = J / np.outer(scale, scale)
    cond = np.linalg.cond(Js)
    if not cond <= max_condition:
        raise SingularInformationError(f"Fisher information is singular (condition {cond:.3e})")
    inv = np.linalg.inv(Js) / np.outer(scale, scale)
    return 0.5 * (inv + inv.T)


def constrained_bound(J: np.ndarray, F: np.ndarray) -> np.ndarray:
    """J^-1 - J^-1 F (F' J^-1 F)^-1 F' J^-1"""
    Ji = _inverse_information(J)
    F = np.atleast_2d(np.asarray(F, dtype=float).T).T
    JiF = Ji @ F
    bound = Ji - JiF @ np.linalg.solve(F.T @ JiF, JiF.T)
    return 0.5 * (bound + bound.T)


def crlb(sat_states: Sequence[SatelliteState], p_true, p_dot_true, Qt: np.ndarray, Qf: np.ndarray,
         earth: Optional[EarthModel] = None) -> CrlbResult:
    """Ellipsoid-constrained CRLB for u = (p, p_dot), SI units."""
    earth = earth or EarthModel()
    p = as_vec3(p_true, "p_true")
    J = fisher_information(range_difference_jacobian(sat_states, p, p_dot_true), Qt, Qf)
    F = np.array([[p[0], p[1], (earth.R_a / earth.R_b) ** 2 * p[2], 0.0, 0.0, 0.0]]).T
    return CrlbResult(crlb=constrained_bound(J, F), J=J, F=F)
