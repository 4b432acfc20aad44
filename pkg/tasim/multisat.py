"""Multi-satellite Scenario 1.

Receptions from G satellites over M SSBs are flattened satellite-major,
m = (g - 1) M + i, and differenced against satellite 1 at SSB 1. The
stacked set feeds the single-satellite Scenario-1 solvers unchanged.
Inter-satellite time and frequency references are assumed perfect apart
from an optional per-satellite clock bias.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import config
from .errors import ConfigError, GeometryError, SingularInformationError, VisibilityError
from .geom import Frame, SatelliteState, as_vec3, elevation_deg, ellipsoid_normal, satellite_track
from .locest import crlb
from .measure import MeasurementSet, add_noise, make_noise_free
from .models import EarthModel, OrbitElements, SyncConfig

logger = logging.getLogger(__name__)

MIN_ROWS = 8


@dataclass(frozen=True)
class Constellation:
    sats: Tuple[OrbitElements, ...]

    def __post_init__(self):
        sats = tuple(self.sats)
        if not sats:
            raise ConfigError("a constellation needs at least one satellite")
        if len({s.mu_prime for s in sats}) != 1:
            raise ConfigError("all orbits must share mu_prime")
        if len({s.gst0 for s in sats}) != 1:
            raise ConfigError("all orbits must share the epoch sidereal angle gst0")
        object.__setattr__(self, "sats", sats)

    @property
    def G(self) -> int:
        return len(self.sats)


class Dilution(NamedTuple):
    value: float        # +inf when the geometry is unobservable
    observable: bool


def make_constellation(base: OrbitElements, count: int, planes: int = 2,
                       raan_spacing: float = math.radians(20.0),
                       anomaly_step: float = math.radians(2.0)) -> Constellation:
    """Spread ``count`` satellites round-robin over ``planes`` orbital planes.

    Satellite j (0-based) sits in plane j % planes, whose RAAN is offset by
    raan_spacing per plane, and at slot j // planes along it, offset in
    anomaly by anomaly_step per slot. Satellite 1 is ``base`` itself.
    """
    if count < 1 or planes < 1:
        raise ConfigError(f"need count >= 1 and planes >= 1, got {count}, {planes}")
    sats = []
    for j in range(count):
        plane, slot = j % planes, j // planes
        sats.append(base.model_copy(update={
            "raan_Omega": base.raan_Omega + plane * raan_spacing,
            "alpha0": base.alpha0 + slot * anomaly_step,
        }))
    return Constellation(tuple(sats))


def stack_measurements(con: Constellation, p, p_dot, cfg: SyncConfig,
                       noise: Optional[Tuple[float, float]] = None, rng_seed=None,
                       earth: Optional[EarthModel] = None,
                       min_elevation_deg: float = config.MIN_ELEVATION_DEG,
                       clock_bias_s: Optional[Sequence[float]] = None,
                       ) -> Tuple[List[SatelliteState], MeasurementSet]:
    """ECEF states and TDOA/FDOA for every (satellite, SSB) pair against (1, 1).

    ``noise`` is (sigma_t, sigma_f); omitted or zero gives a noise-free set.
    """
    earth = earth or EarthModel()
    p = as_vec3(p, "p")
    if 2 * (con.G * cfg.M - 1) < MIN_ROWS:
        raise GeometryError(f"{con.G} satellites x {cfg.M} SSBs give too few equations")

    tracks = [satellite_track(elems, cfg.M, cfg.ssb_interval_T, earth, Frame.ECEF) for elems in con.sats]
    for g in range(con.G):
        for h in range(g + 1, con.G):
            gap = max(np.linalg.norm(a.pos - b.pos) for a, b in zip(tracks[g], tracks[h]))
            if gap < 1e-6:
                raise GeometryError(f"satellites {g + 1} and {h + 1} share a track; the stacked system is rank deficient")

    up = ellipsoid_normal(p, earth)
    hidden = [(g + 1, s.epoch_index) for g, track in enumerate(tracks) for s in track
              if elevation_deg(s.pos, p, up) < min_elevation_deg]
    if hidden:
        raise VisibilityError(f"satellites below {min_elevation_deg} deg elevation", hidden)

    states = [s for track in tracks for s in track]
    meas = make_noise_free(states, p, p_dot, Frame.ECEF)
    bias = np.zeros(con.G) if clock_bias_s is None else np.asarray(clock_bias_s, dtype=float)
    if bias.size not in (0, con.G):
        raise ConfigError(f"clock_bias_s has {bias.size} entries for {con.G} satellites")
    if bias.size and np.any(bias != 0.0):
        offsets = config.SPEED_OF_LIGHT * (np.repeat(bias, cfg.M) - bias[0])
        meas = MeasurementSet(meas.d_tilde + offsets[1:], meas.dd_tilde, meas.Qt, meas.Qf, noise_free=False)
    if noise is not None and any(s > 0 for s in noise):
        meas = add_noise(meas, noise[0], noise[1], rng_seed, fc=cfg.fc)
    return states, meas


def gdop_metric(states: Sequence[SatelliteState], p_true, Qt: np.ndarray, Qf: np.ndarray,
                p_dot_true=(0.0, 0.0, 0.0), earth: Optional[EarthModel] = None) -> Dilution:
    """sqrt(trace of the CRLB position block) per unit of range noise."""
    sigma_range = math.sqrt(Qt[0, 0] / 2.0)
    try:
        bound = crlb(states, p_true, p_dot_true, Qt, Qf, earth)
    except SingularInformationError as e:
        logger.warning("geometry is unobservable: %s", e)
        return Dilution(math.inf, False)
    return Dilution(math.sqrt(max(bound.position_trace, 0.0)) / sigma_range, True)
