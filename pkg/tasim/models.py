import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import config


class Scenario(str, Enum):
    S1 = "S1"            # UE geolocation from one satellite's known ephemeris
    S2 = "S2"            # Satellite ephemeris from a GNSS-located UE
    MULTI_S1 = "MultiS1"  # UE geolocation from several satellites


class SolverKind(str, Enum):
    PENALTY = "Penalty"
    CWLS = "CWLS"


class WeightMode(str, Enum):
    IDENTITY = "Identity"       # B = I, B_dot = 0, never refreshed
    EXACT = "Exact"             # true ranges and rates (benchmarking only)
    ITER_UPDATE = "IterUpdate"  # starts as Identity, refreshed from estimates


class SweepAxis(str, Enum):
    NOISE = "noise"
    WINDOW = "window"
    WEIGHT_MODE = "weight_mode"
    NUM_SATS = "num_sats"


class ExportFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


class Linearization(str, Enum):
    GRADIENT = "gradient"   # first-order Taylor rows; fixed points satisfy the KKT conditions
    FROZEN = "frozen"       # one factor of u'Cu frozen at the current estimate


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EarthModel(_Section):
    """Reference ellipsoid and rotation rate"""
    R_a: float = config.EARTH_RA        # semi-major axis, m
    R_b: float = config.EARTH_RB        # semi-minor axis, m
    omega_E: float = config.OMEGA_E     # rad/s

    @model_validator(mode="after")
    def _axes_ordered(self) -> "EarthModel":
        if not (self.R_a >= self.R_b > 0):
            raise ValueError(f"earth axes must satisfy R_a >= R_b > 0, got {self.R_a}, {self.R_b}")
        return self

    @property
    def eccentricity_sq(self) -> float:
        return 1.0 - (self.R_b / self.R_a) ** 2


class OrbitElements(_Section):
    """Circular-orbit parameters, angles in radians"""
    radius_r: float                   # centre of earth to satellite, m
    inclination_theta: float
    raan_Omega: float
    arg_perigee_phi: float = 0.0
    alpha0: float = 0.0               # in-plane anomaly at the first SSB
    gst0: float = 0.0                 # Greenwich sidereal angle at the first SSB
    mu_prime: float = config.MU_PRIME

    @model_validator(mode="after")
    def _check(self) -> "OrbitElements":
        values = (self.radius_r, self.inclination_theta, self.raan_Omega,
                  self.arg_perigee_phi, self.alpha0, self.gst0, self.mu_prime)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("orbit elements must be finite")
        if self.radius_r <= 0:
            raise ValueError(f"orbit radius must be positive, got {self.radius_r} m")
        if self.mu_prime <= 0:
            raise ValueError("mu_prime must be positive")
        return self

    @property
    def mean_motion(self) -> float:
        """n' = sqrt(mu'/r^3), rad/s"""
        return math.sqrt(self.mu_prime / self.radius_r ** 3)

    @property
    def speed(self) -> float:
        """v = sqrt(mu'/r), m/s"""
        return math.sqrt(self.mu_prime / self.radius_r)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


class SyncConfig(_Section):
    """Synchronization front-end and SSB schedule"""
    Ts: float = Field(default=config.SAMPLING_INTERVAL, gt=0)
    delta_f: float = Field(default=config.SUBCARRIER_SPACING, gt=0)
    fc: float = Field(default=config.CARRIER_FREQ, gt=0)
    M: int = Field(ge=3)
    ssb_interval_T: float = Field(default=config.SSB_INTERVAL, gt=0)

    @property
    def timing_window(self) -> float:
        return (self.M - 1) * self.ssb_interval_T

    @classmethod
    def from_window(cls, timing_window: float, ssb_interval_T: float, **kwargs) -> "SyncConfig":
        return cls(M=ssb_count(timing_window, ssb_interval_T), ssb_interval_T=ssb_interval_T, **kwargs)


def ssb_count(timing_window: float, ssb_interval_T: float) -> int:
    """M = window / T + 1; the window must be a whole number of intervals."""
    ratio = timing_window / ssb_interval_T
    steps = round(ratio)
    if abs(ratio - steps) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(
            f"timing window {timing_window} s is not a multiple of the SSB interval {ssb_interval_T} s"
        )
    return int(steps) + 1


class PenaltyConfig(_Section):
    """Quadratic-penalty schedule and Newton internals"""
    mu0: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=10.0, gt=1)
    feas_tol: float = Field(default=1e-6, gt=0)
    max_outer: int = Field(default=12, ge=1)
    max_inner: int = Field(default=50, ge=1)
    armijo_c: float = Field(default=1e-4, gt=0, lt=1)
    step_shrink: float = Field(default=0.5, gt=0, lt=1)
    step_tol: float = Field(default=1e-12, gt=0)   # relative Newton step below which inner loop stops


class CwlsConfig(_Section):
    """Iterative constrained WLS stopping rule and pseudo-inverse tolerance"""
    max_iterations: int = Field(default=10, ge=1)
    rel_tol: float = Field(default=1e-9, gt=0)
    feas_tol: float = Field(default=1e-6, gt=0)      # max |c_j| required of a converged result
    pinv_rtol: float = Field(default=1e-10, gt=0)
    linearization: Linearization = Linearization.GRADIENT
    refresh_limit: Optional[int] = None   # None: scenario default (S1 once, S2 every iteration)


class RunSection(_Section):
    scenario: Scenario = Scenario.S1
    trials: int = Field(default=config.TRIALS, ge=0)
    seed: int = Field(default=config.SEED, ge=0)
    workers: int = Field(default=config.WORKERS, ge=1)
    min_elevation_deg: float = config.MIN_ELEVATION_DEG
    cp_duration_s: float = Field(default=config.CP_DURATION, gt=0)


class OrbitSpec(_Section):
    """Orbit as written in a scenario file (degrees, altitude)"""
    altitude_m: float = Field(default=1070e3, gt=0)
    inclination_deg: float = 85.0
    raan_deg: float = 0.0
    arg_perigee_deg: float = 0.0
    alpha0_deg: float = 0.0
    gst0_deg: float = 0.0
    mu_prime: float = config.MU_PRIME
    subpoint_lat_deg: Optional[float] = None   # place satellite 1 over this site at SSB 1
    subpoint_lon_deg: Optional[float] = None
    alpha0_offset_deg: float = 0.0             # in-plane offset from orbit 1's anomaly

    @model_validator(mode="after")
    def _subpoint_pair(self) -> "OrbitSpec":
        if (self.subpoint_lat_deg is None) != (self.subpoint_lon_deg is None):
            raise ValueError("subpoint_lat_deg and subpoint_lon_deg must be given together")
        return self


class UeSite(_Section):
    """Geodetic UE location"""
    lat_deg: float = Field(ge=-90, le=90)
    lon_deg: float
    alt_m: float = 0.0


class SyncSection(_Section):
    ssb_interval_T: float = Field(default=config.SSB_INTERVAL, gt=0)
    timing_window: float = Field(default=12.0, gt=0)
    Ts: float = Field(default=config.SAMPLING_INTERVAL, gt=0)
    delta_f: float = Field(default=config.SUBCARRIER_SPACING, gt=0)
    fc: float = Field(default=config.CARRIER_FREQ, gt=0)

    @model_validator(mode="after")
    def _integral(self) -> "SyncSection":
        ssb_count(self.timing_window, self.ssb_interval_T)
        return self

    @property
    def M(self) -> int:
        return ssb_count(self.timing_window, self.ssb_interval_T)

    def to_sync_config(self) -> SyncConfig:
        return SyncConfig(Ts=self.Ts, delta_f=self.delta_f, fc=self.fc, M=self.M,
                          ssb_interval_T=self.ssb_interval_T)


class NoiseSection(_Section):
    sigma_t: float = Field(default=0.0, ge=0)   # s, per-SSB timing error
    sigma_f: float = Field(default=0.0, ge=0)   # Hz, per-SSB frequency error
    profile: Optional[str] = None               # calibration profile the sigmas came from


class SolverSection(_Section):
    solver: SolverKind = SolverKind.CWLS
    weight_mode: WeightMode = WeightMode.ITER_UPDATE
    resolve_mirror: bool = True
    max_condition: float = Field(default=1e12, gt=1)
    penalty: PenaltyConfig = PenaltyConfig()
    cwls: CwlsConfig = CwlsConfig()


class ConstellationSection(_Section):
    num_sats: int = Field(default=4, ge=1)
    planes: int = Field(default=2, ge=1)
    raan_spacing_deg: float = 20.0
    anomaly_step_deg: float = 2.0
    clock_bias_s: List[float] = []   # per-satellite bias, zero when absent


class ScenarioConfig(_Section):
    """Full experiment description"""
    run: RunSection = RunSection()
    orbits: List[OrbitSpec] = Field(default_factory=lambda: [OrbitSpec()], min_length=1)
    ue: UeSite
    sync: SyncSection = SyncSection()
    noise: NoiseSection = NoiseSection()
    solver: SolverSection = SolverSection()
    earth: EarthModel = EarthModel()
    constellation: ConstellationSection = ConstellationSection()

    @model_validator(mode="after")
    def _minimum_ssbs(self) -> "ScenarioConfig":
        M = self.sync.M
        if self.run.scenario == Scenario.S1 and M < 6:
            raise ValueError(f"Scenario 1 needs M >= 6 SSBs, window gives M = {M}")
        if self.run.scenario == Scenario.S2 and M < 4:
            raise ValueError(f"Scenario 2 needs M >= 4 SSBs, window gives M = {M}")
        if self.run.scenario == Scenario.MULTI_S1 and 2 * (self.num_sats * M - 1) < 8:
            raise ValueError(f"{self.num_sats} satellites x {M} SSBs is too few for 8 unknowns")
        return self

    @property
    def scenario(self) -> Scenario:
        return self.run.scenario

    @property
    def trials(self) -> int:
        return self.run.trials

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def M(self) -> int:
        return self.sync.M

    @property
    def num_sats(self) -> int:
        if len(self.orbits) > 1:
            return len(self.orbits)
        return self.constellation.num_sats

    @property
    def cp_range(self) -> float:
        """Range equivalent of one cyclic prefix, m"""
        return config.SPEED_OF_LIGHT * self.run.cp_duration_s


class TrialRecord(BaseModel):
    """Outcome of a single Monte Carlo trial"""
    trial: int
    pos_err_m: Optional[float] = None   # UE (S1) or satellite (S2) position error
    ta_err_m: Optional[float] = None    # |d1_hat - d1|
    iters: int = 0
    converged: bool = False
    runtime_s: float = 0.0
    ambiguous: bool = False
    error: Optional[str] = None         # solver failure message, trial excluded from stats


class TrialStats(BaseModel):
    """Aggregated campaign statistics"""
    rmse: Optional[float] = None                # m, over successful trials
    ta_errors: List[float] = []                 # m, successful trials in trial order
    cdf: List[Tuple[float, float]] = []         # (error, probability), ascending
    runtime_mean: Optional[float] = None        # s
    crlb_trace: Optional[float] = None          # m^2, position block
    failures: int = 0
    trials: List[TrialRecord] = []

    @property
    def successes(self) -> int:
        return len(self.ta_errors)

    def median_ta_error(self) -> Optional[float]:
        if not self.ta_errors:
            return None
        return float(np.median(self.ta_errors))

    def fraction_within(self, bound_m: float) -> float:
        """Empirical P(ta_err <= bound) over successful trials"""
        if not self.ta_errors:
            return 0.0
        return sum(1 for e in self.ta_errors if e <= bound_m) / len(self.ta_errors)


class SolverSummary(BaseModel):
    solver: SolverKind
    rmse: Optional[float]
    median_ta_err_m: Optional[float]
    runtime_mean: Optional[float]
    failures: int


class SolverComparison(BaseModel):
    """Paired penalty vs CWLS run on identical measurements"""
    penalty: SolverSummary
    cwls: SolverSummary
    runtime_ratio: Optional[float]     # penalty / CWLS
    accuracy_gap: Optional[float]      # |rmse_cwls - rmse_penalty| / rmse_penalty
    ordering_ok: bool                  # CWLS faster on average
