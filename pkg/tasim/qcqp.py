"""Weighted least squares under quadratic equality constraints.

A program is::

    minimize   g(u) = || hw - Gw u ||^2
    subject to c_j(u) = u' C_j u + 2 q_j' u - rho_j = 0

where ``Gw`` and ``hw`` are already whitened by the Cholesky factor of the
weighting matrix Psi, so g(u) = (h - G u)' Psi^-1 (h - G u). Both
estimation scenarios reduce to this form.

Every solver works on a column-equilibrated copy of the program (u = D v
with D = diag(N)^-1/2) and maps the answer back. The argmin is unchanged
by the substitution; only the conditioning improves.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import DegenerateLinearizationError, IllConditionedError, MeasurementError
from .models import CwlsConfig, Linearization, PenaltyConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadraticConstraint:
    """c(u) = u'Cu + 2q'u - rho; C need not be symmetric"""
    C: np.ndarray
    q: np.ndarray
    rho: float
    name: str = ""

    def value(self, u: np.ndarray) -> float:
        return float(u @ self.C @ u + 2.0 * self.q @ u - self.rho)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return (self.C + self.C.T) @ u + 2.0 * self.q

    def hessian(self) -> np.ndarray:
        return self.C + self.C.T

    def linearized_row(self, u_lin: np.ndarray) -> np.ndarray:
        """Row a with a'u = rho, obtained by freezing one factor of u'Cu at u_lin."""
        return u_lin @ self.C + 2.0 * self.q

    def tangent_row(self, u_lin: np.ndarray) -> Tuple[np.ndarray, float]:
        """(a, beta) of the first-order expansion c(u_lin) + grad c(u_lin)'(u - u_lin) = 0, halved."""
        a = 0.5 * self.gradient(u_lin)
        return a, float(a @ u_lin - 0.5 * self.value(u_lin))

    def linearize(self, u_lin: np.ndarray, mode: Linearization) -> Tuple[np.ndarray, float]:
        if mode == Linearization.FROZEN:
            return self.linearized_row(u_lin), self.rho
        return self.tangent_row(u_lin)

    def rescaled(self, D: np.ndarray) -> "QuadraticConstraint":
        """Same constraint in v where u = D v."""
        return QuadraticConstraint(D[:, None] * self.C * D[None, :], D * self.q, self.rho, self.name)


@dataclass(frozen=True)
class QuadraticProgram:
    Gw: np.ndarray
    hw: np.ndarray
    constraints: Tuple[QuadraticConstraint, ...] = ()

    @classmethod
    def from_weighted(cls, G: np.ndarray, h: np.ndarray, Psi: np.ndarray,
                      constraints: Sequence[QuadraticConstraint] = ()) -> "QuadraticProgram":
        """Whiten G and h with the lower Cholesky factor of Psi."""
        try:
            L = linalg.cholesky(Psi, lower=True)
        except linalg.LinAlgError as e:
            raise MeasurementError("weighting matrix is not positive definite") from e
        Gw = linalg.solve_triangular(L, G, lower=True)
        hw = linalg.solve_triangular(L, h, lower=True)
        return cls(Gw, hw, tuple(constraints))

    @property
    def n(self) -> int:
        return self.Gw.shape[1]

    @property
    def N(self) -> np.ndarray:
        """G' Psi^-1 G"""
        return self.Gw.T @ self.Gw

    @property
    def y(self) -> np.ndarray:
        """G' Psi^-1 h"""
        return self.Gw.T @ self.hw

    def objective(self, u: np.ndarray) -> float:
        r = self.hw - self.Gw @ u
        return float(r @ r)

    def residuals(self, u: np.ndarray) -> np.ndarray:
        return np.array([c.value(u) for c in self.constraints])

    def max_violation(self, u: np.ndarray) -> float:
        return float(np.max(np.abs(self.residuals(u)))) if self.constraints else 0.0

    def equilibration(self) -> np.ndarray:
        norms = np.linalg.norm(self.Gw, axis=0)
        return np.where(norms > 0.0, 1.0 / np.where(norms > 0.0, norms, 1.0), 1.0)

    def rescaled(self, D: np.ndarray) -> "QuadraticProgram":
        return QuadraticProgram(self.Gw * D[None, :], self.hw,
                                tuple(c.rescaled(D) for c in self.constraints))


@dataclass
class QpSolution:
    """Solver output in the program's own variables"""
    u: np.ndarray
    objective: float
    residuals: np.ndarray
    iterations: int
    converged: bool
    feasibility_trace: List[float] = field(default_factory=list)
    rank: Optional[int] = None
    refreshes: int = 0


def normal_condition(program: QuadraticProgram) -> float:
    """2-norm condition number of the equilibrated normal matrix."""
    Ge = program.Gw * program.equilibration()[None, :]
    if Ge.shape[0] < Ge.shape[1]:
        return float("inf")
    s = linalg.svdvals(Ge)
    if s[-1] <= 0.0:
        return float("inf")
    return float((s[0] / s[-1]) ** 2)


def solve_wls(program: QuadraticProgram, max_condition: Optional[float] = 1e12) -> np.ndarray:
    """Unconstrained minimizer (G'Psi^-1G)^-1 G'Psi^-1 h.

    Raises IllConditionedError when the equilibrated normal matrix has a
    condition number above ``max_condition``; pass None to always solve.
    """
    cond = normal_condition(program)
    if max_condition is not None and not cond <= max_condition:
        raise IllConditionedError("normal matrix G'Psi^-1G is rank deficient", cond)
    D = program.equilibration()
    v, *_ = np.linalg.lstsq(program.Gw * D[None, :], program.hw, rcond=None)
    logger.debug("WLS solve: condition %.3e", cond)
    return D * v


def solve_penalty(program: QuadraticProgram, cfg: PenaltyConfig = PenaltyConfig(),
                  initial: Optional[np.ndarray] = None) -> QpSolution:
    """Quadratic-penalty method with a modified-Newton inner solver.

    Minimizes F(u; mu) = g(u) / s + mu * sum c_j(u)^2 for mu = mu0, mu0*gamma, ...
    until max |c_j| <= feas_tol, where s is the mean diagonal of G'Psi^-1 G.
    In the equilibrated variables this makes the penalty curvature at mu = 1
    comparable to the unit-diagonal data curvature. Starts from ``initial``
    or the unconstrained WLS point.

    ``converged`` needs both a feasible point and an inner Newton loop that
    stopped on a negligible step; a feasible point the inner loop never
    settled on is reported as unconverged.
    """
    D = program.equilibration()
    P = program.rescaled(D)
    s = float(np.mean(np.diag(program.N)))
    weight = s if s > 0.0 else 1.0
    if initial is None:
        initial = solve_wls(program, max_condition=None)
    v = np.asarray(initial, dtype=float) / D

    mu = cfg.mu0
    trace: List[float] = []
    iterations = 0
    converged = feasible = settled = False
    for outer in range(cfg.max_outer):
        v, inner, settled = _newton_minimize(P, v, mu * weight, cfg)
        iterations += inner
        violation = P.max_violation(v)
        trace.append(violation)
        logger.debug("penalty outer %d: mu=%.1e violation=%.3e inner=%d", outer, mu, violation, inner)
        feasible = violation <= cfg.feas_tol
        if feasible:
            converged = settled
            break
        mu *= cfg.gamma
    if not feasible:
        logger.warning("penalty method stopped at mu=%.1e with violation %.3e", mu, trace[-1])
    elif not converged:
        logger.warning("penalty method reached feasibility but its Newton loop did not settle")

    u = D * v
    return QpSolution(u=u, objective=program.objective(u), residuals=program.residuals(u),
                      iterations=iterations, converged=converged, feasibility_trace=trace)


def _penalty_terms(P: QuadraticProgram, v: np.ndarray, mu: float):
    r = P.hw - P.Gw @ v
    value = float(r @ r)
    grad = -2.0 * P.Gw.T @ r
    hess = 2.0 * P.N
    for c in P.constraints:
        cv = c.value(v)
        gc = c.gradient(v)
        value += mu * cv * cv
        grad += 2.0 * mu * cv * gc
        hess += 2.0 * mu * (np.outer(gc, gc) + cv * c.hessian())
    return value, grad, hess


def _penalty_value(P: QuadraticProgram, v: np.ndarray, mu: float) -> float:
    r = P.hw - P.Gw @ v
    return float(r @ r) + mu * float(np.sum(P.residuals(v) ** 2))


def _modified_cholesky(H: np.ndarray):
    """Cholesky factor of H + tau I for the smallest tau = 0, t0, 10 t0, ... that works."""
    H = 0.5 * (H + H.T)
    try:
        return linalg.cho_factor(H, lower=True)
    except linalg.LinAlgError:
        pass
    tau = 1e-8 * max(np.linalg.norm(H), 1e-300)
    eye = np.eye(H.shape[0])
    while True:
        try:
            return linalg.cho_factor(H + tau * eye, lower=True)
        except linalg.LinAlgError:
            tau *= 10.0


def _newton_minimize(P: QuadraticProgram, v: np.ndarray, mu: float, cfg: PenaltyConfig):
    """Returns (v, inner iterations, settled); settled means the last step was negligible."""
    for it in range(1, cfg.max_inner + 1):
        value, grad, hess = _penalty_terms(P, v, mu)
        step = -linalg.cho_solve(_modified_cholesky(hess), grad)
        if np.linalg.norm(step) <= cfg.step_tol * (1.0 + np.linalg.norm(v)):
            return v, it, True
        slope = float(grad @ step)
        t = 1.0
        while _penalty_value(P, v + t * step, mu) > value + cfg.armijo_c * t * slope:
            t *= cfg.step_shrink
            if t < 1e-16:
                # no descent left along the Newton direction
                return v, it, True
        v = v + t * step
    return v, cfg.max_inner, False


def solve_cwls(program: QuadraticProgram, cfg: CwlsConfig = CwlsConfig(),
               initial: Optional[np.ndarray] = None,
               reweight: Optional[Callable[[np.ndarray], QuadraticProgram]] = None,
               refresh_limit: Optional[int] = None) -> QpSolution:
    """Iterative constrained WLS with a closed-form projected step.

    Each iteration linearizes the constraints at the current estimate to
    A u = beta and returns

        u = (P1 N P1)^+ (y - N P2) + P2,
        P1 = I - A'(AA')^-1 A,  P2 = A'(AA')^-1 beta.

    ``cfg.linearization`` picks the rows: GRADIENT uses the first-order
    expansion of each c_j, whose fixed points are KKT points of the
    original program; FROZEN keeps u'C fixed at the estimate.

    ``reweight`` rebuilds the program (new Psi) from an estimate. With
    ``refresh_limit=None`` it runs after every iteration; otherwise the
    weights are refreshed whenever the iterates settle, at most
    ``refresh_limit`` times, and the loop restarts with the new weights.

    ``converged`` means the last relative change was below ``rel_tol``
    under the final weights and every |c_j| is within ``feas_tol``.
    """
    current = program
    if initial is None:
        initial = solve_wls(program, max_condition=None)
    u = np.asarray(initial, dtype=float)
    every_iteration = reweight is not None and refresh_limit is None
    remaining = 0 if reweight is None or every_iteration else max(refresh_limit, 0)

    iterations = refreshes = phase = 0
    rank: Optional[int] = None
    settled = False
    trace: List[float] = []
    while True:
        u_new, rank = _cwls_step(current, u, cfg.pinv_rtol, cfg.linearization)
        iterations += 1
        phase += 1
        change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        trace.append(current.max_violation(u))
        logger.debug("CWLS iteration %d: relative change %.3e, pinv rank %d", iterations, change, rank)
        if every_iteration:
            current = reweight(u)
            refreshes += 1
        settled = change < cfg.rel_tol
        if settled or phase >= cfg.max_iterations:
            if remaining > 0:
                current = reweight(u)
                refreshes += 1
                remaining -= 1
                phase = 0
                continue
            break
    violation = program.max_violation(u)
    converged = settled and violation <= cfg.feas_tol
    if not settled:
        logger.warning("CWLS stopped after %d iterations without settling", iterations)
    elif not converged:
        logger.warning("CWLS settled with constraint violation %.3e", violation)
    return QpSolution(u=u, objective=current.objective(u), residuals=program.residuals(u),
                      iterations=iterations, converged=converged, feasibility_trace=trace,
                      rank=rank, refreshes=refreshes)


def _cwls_step(program: QuadraticProgram, u_lin: np.ndarray, pinv_rtol: float,
               mode: Linearization = Linearization.GRADIENT) -> Tuple[np.ndarray, int]:
    """One closed-form step, evaluated on a null-space basis of A.

    With Z spanning null(A), P1 = ZZ' and (P1 N P1)^+ = Z (Z'NZ)^+ Z', so the
    step is the least-squares fit of Gw Z with rcond ``pinv_rtol`` around the
    point of the linearized set closest to ``u_lin``. Directions dropped by
    the pseudo-inverse keep the component they have at ``u_lin``.
    """
    D = program.equilibration()
    P = program.rescaled(D)
    v_lin = u_lin / D
    n = P.n
    if not P.constraints:
        v, *_ = np.linalg.lstsq(P.Gw, P.hw, rcond=None)
        return D * v, n

    rows = [c.linearize(v_lin, mode) for c in P.constraints]
    A = np.array([a for a, _ in rows])
    beta = np.array([b for _, b in rows])
    row_norms = np.linalg.norm(A, axis=1)
    if np.any(row_norms == 0.0):
        raise DegenerateLinearizationError(
            f"linearized constraint rows {np.flatnonzero(row_norms == 0.0).tolist()} vanish"
        )
    A = A / row_norms[:, None]
    beta = beta / row_norms
    U, s, Vt = linalg.svd(A)
    if s[-1] <= 1e-12 * s[0]:
        raise DegenerateLinearizationError(
            f"AA' is singular at the linearization point (singular values {s})"
        )
    k = len(s)
    Z = Vt[k:].T
    P2 = Vt[:k].T @ ((U.T @ beta) / s)
    anchor = Z @ (Z.T @ v_lin) + P2
    w, _, rank, _ = linalg.lstsq(P.Gw @ Z, P.hw - P.Gw @ anchor, cond=pinv_rtol)
    return D * (anchor + Z @ w), int(rank)
