"""Coordinate frames, rotations and circular-orbit propagation.

Three frames are used. ECEF is earth fixed, ECI is inertial with its X axis
on the vernal equinox, and OPC is the orbital plane of one satellite with
its X axis on the perigee direction. Rotation matrices follow the passive
convention: ``rot_z(a) @ v`` re-expresses ``v`` in axes turned by ``a``.

All functions are pure; arrays returned from ``SatelliteState`` are
read-only so states can be shared across threads.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from .errors import FrameMismatchError, GeometryError
from .models import EarthModel, OrbitElements

logger = logging.getLogger(__name__)

Z_AXIS = np.array([0.0, 0.0, 1.0])


class Frame(str, Enum):
    ECEF = "ECEF"
    ECI = "ECI"
    OPC = "OPC"


def as_vec3(value, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 3-vector."""
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} has non-finite components: {arr}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SatelliteState:
    """Position and velocity of one satellite at one SSB epoch"""
    epoch_index: int
    frame: Frame
    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        if self.epoch_index < 1:
            raise GeometryError(f"epoch index must be >= 1, got {self.epoch_index}")
        object.__setattr__(self, "frame", Frame(self.frame))
        object.__setattr__(self, "pos", _frozen(as_vec3(self.pos, "pos")))
        object.__setattr__(self, "vel", _frozen(as_vec3(self.vel, "vel")))


@dataclass(frozen=True)
class UeTrack:
    """UE positions and velocities at each SSB epoch, shape (M, 3)"""
    frame: Frame
    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.pos, dtype=float))
        vel = np.atleast_2d(np.asarray(self.vel, dtype=float))
        if pos.shape != vel.shape or pos.shape[1] != 3:
            raise GeometryError(f"UE track shapes disagree: {pos.shape} vs {vel.shape}")
        object.__setattr__(self, "frame", Frame(self.frame))
        object.__setattr__(self, "pos", _frozen(pos))
        object.__setattr__(self, "vel", _frozen(vel))

    def __len__(self) -> int:
        return self.pos.shape[0]


def rot_x(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, s],
                     [0.0, -s, c]])


def rot_z(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, s, 0.0],
                     [-s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def is_rotation(m: np.ndarray, tol: float = 1e-12) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return (np.allclose(m.T @ m, np.eye(3), rtol=0.0, atol=tol)
            and abs(np.linalg.det(m) - 1.0) <= tol)


def opc_to_eci(elems: OrbitElements) -> np.ndarray:
    """E^eci_opc = R_z(-Omega) R_x(-theta) R_z(-phi)"""
    return rot_z(-elems.raan_Omega) @ rot_x(-elems.inclination_theta) @ rot_z(-elems.arg_perigee_phi)


def eci_to_opc(elems: OrbitElements) -> np.ndarray:
    """E^opc_eci = R_z(phi) R_x(theta) R_z(Omega)"""
    return rot_z(elems.arg_perigee_phi) @ rot_x(elems.inclination_theta) @ rot_z(elems.raan_Omega)


def eci_to_ecef(gst: float) -> np.ndarray:
    """Position map ECI -> ECEF at Greenwich sidereal angle ``gst``."""
    return rot_z(gst)


def gst_at(gst0: float, i: int, T: float, earth: EarthModel) -> float:
    """theta_g_i = gst0 + (i-1) T omega_E"""
    return gst0 + (i - 1) * T * earth.omega_E


def anomaly_at(elems: OrbitElements, i: int, T: float) -> float:
    return elems.alpha0 + (i - 1) * elems.mean_motion * T


def propagate(elems: OrbitElements, i: int, T: float) -> SatelliteState:
    """Circular-orbit state at SSB ``i`` in the orbital-plane frame."""
    if i < 1:
        raise GeometryError(f"epoch index must be >= 1, got {i}")
    if T <= 0:
        raise GeometryError(f"SSB interval must be positive, got {T}")
    alpha = anomaly_at(elems, i, T)
    r, v = elems.radius_r, elems.speed
    pos = (r * math.cos(alpha), r * math.sin(alpha), 0.0)
    vel = (-v * math.sin(alpha), v * math.cos(alpha), 0.0)
    return SatelliteState(i, Frame.OPC, pos, vel)


def transform_Ai(elems: OrbitElements, i: int, T: float) -> np.ndarray:
    """A_i with (s_i)_eci = A_i (s_1)_eci and (s_dot_i)_eci = A_i (s_dot_1)_eci."""
    if i < 1:
        raise GeometryError(f"epoch index must be >= 1, got {i}")
    E = opc_to_eci(elems)
    return E @ rot_z(-(i - 1) * elems.mean_motion * T) @ eci_to_opc(elems)


def velocity_map_Phi(elems: OrbitElements) -> np.ndarray:
    """Phi with (s_dot)_eci = Phi (s)_eci for any on-orbit position."""
    w = elems.speed / elems.radius_r
    C4 = np.array([[0.0, -w, 0.0],
                   [w, 0.0, 0.0],
                   [0.0, 0.0, 0.0]])
    return opc_to_eci(elems) @ C4 @ eci_to_opc(elems)


def opc_state_to_eci(state: SatelliteState, elems: OrbitElements) -> SatelliteState:
    _expect_frame(state, Frame.OPC)
    E = opc_to_eci(elems)
    return SatelliteState(state.epoch_index, Frame.ECI, E @ state.pos, E @ state.vel)


def eci_state_to_ecef(state: SatelliteState, gst: float, earth: EarthModel) -> SatelliteState:
    """Rotate into ECEF and remove the frame-rotation velocity omega_E z x s."""
    _expect_frame(state, Frame.ECI)
    R = eci_to_ecef(gst)
    pos = R @ state.pos
    vel = R @ state.vel - earth.omega_E * np.cross(Z_AXIS, pos)
    return SatelliteState(state.epoch_index, Frame.ECEF, pos, vel)


def ecef_state_to_eci(state: SatelliteState, gst: float, earth: EarthModel) -> SatelliteState:
    _expect_frame(state, Frame.ECEF)
    Rt = eci_to_ecef(gst).T
    pos = Rt @ state.pos
    vel = Rt @ (state.vel + earth.omega_E * np.cross(Z_AXIS, state.pos))
    return SatelliteState(state.epoch_index, Frame.ECI, pos, vel)


def satellite_track(elems: OrbitElements, M: int, T: float, earth: EarthModel,
                    frame: Frame = Frame.ECEF) -> List[SatelliteState]:
    """States s_1..s_M of one satellite in the requested frame."""
    frame = Frame(frame)
    if elems.radius_r <= earth.R_a:
        raise GeometryError(f"orbit radius {elems.radius_r:.1f} m is inside the earth (R_a = {earth.R_a:.1f} m)")
    states = []
    for i in range(1, M + 1):
        state = propagate(elems, i, T)
        if frame != Frame.OPC:
            state = opc_state_to_eci(state, elems)
        if frame == Frame.ECEF:
            state = eci_state_to_ecef(state, gst_at(elems.gst0, i, T, earth), earth)
        states.append(state)
    return states


def ue_track_eci(p_ecef, gst0: float, M: int, T: float, earth: EarthModel) -> UeTrack:
    """ECI positions and velocities of an earth-fixed UE at each SSB."""
    p = as_vec3(p_ecef, "p_ecef")
    pos = np.empty((M, 3))
    vel = np.empty((M, 3))
    for k in range(M):
        pos[k] = eci_to_ecef(gst_at(gst0, k + 1, T, earth)).T @ p
        vel[k] = earth.omega_E * np.cross(Z_AXIS, pos[k])
    return UeTrack(Frame.ECI, pos, vel)


def geodetic_to_ecef(lat_deg: float, lon_deg: float, alt_m: float = 0.0,
                     earth: Optional[EarthModel] = None) -> np.ndarray:
    earth = earth or EarthModel()
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    e2 = earth.eccentricity_sq
    n = earth.R_a / math.sqrt(1.0 - e2 * math.sin(lat) ** 2)
    return np.array([
        (n + alt_m) * math.cos(lat) * math.cos(lon),
        (n + alt_m) * math.cos(lat) * math.sin(lon),
        (n * (1.0 - e2) + alt_m) * math.sin(lat),
    ])


def local_up(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Ellipsoid normal at a geodetic site."""
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    return np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])


def ellipsoid_normal(p_ecef, earth: Optional[EarthModel] = None) -> np.ndarray:
    """Outward unit normal of the ellipsoid through ``p_ecef``."""
    earth = earth or EarthModel()
    p = as_vec3(p_ecef, "p_ecef")
    n = p / np.array([earth.R_a ** 2, earth.R_a ** 2, earth.R_b ** 2])
    return n / np.linalg.norm(n)


def elevation_deg(sat_pos_ecef, ue_pos_ecef, up) -> float:
    los = as_vec3(sat_pos_ecef) - as_vec3(ue_pos_ecef)
    rng = np.linalg.norm(los)
    if rng == 0.0:
        raise GeometryError("satellite and UE coincide")
    return math.degrees(math.asin(np.clip(np.dot(los, up) / rng, -1.0, 1.0)))


def geocentric_latlon(pos) -> tuple:
    """Geocentric latitude and longitude of a position vector, radians."""
    p = as_vec3(pos)
    return math.asin(p[2] / np.linalg.norm(p)), math.atan2(p[1], p[0])


def align_overpass(elems: OrbitElements, target_ecef) -> OrbitElements:
    """Choose alpha0 and gst0 so that satellite 1 lies over ``target_ecef``.

    The satellite is placed on the radial through the target on the
    ascending half of the orbit.
    """
    lat, lon = geocentric_latlon(target_ecef)
    sin_i = math.sin(elems.inclination_theta)
    if abs(sin_i) < 1e-12 or abs(math.sin(lat)) > abs(sin_i) + 1e-15:
        raise GeometryError(
            f"orbit with inclination {math.degrees(elems.inclination_theta):.3f} deg "
            f"never reaches latitude {math.degrees(lat):.3f} deg"
        )
    u = math.asin(np.clip(math.sin(lat) / sin_i, -1.0, 1.0))
    right_ascension = elems.raan_Omega + math.atan2(math.cos(elems.inclination_theta) * math.sin(u),
                                                    math.cos(u))
    aligned = elems.model_copy(update={"alpha0": u - elems.arg_perigee_phi,
                                       "gst0": right_ascension - lon})
    logger.debug("aligned overpass: alpha0=%.6f rad gst0=%.6f rad", aligned.alpha0, aligned.gst0)
    return aligned


def _expect_frame(state: SatelliteState, frame: Frame) -> None:
    if state.frame != frame:
        raise FrameMismatchError(f"expected a {frame.value} state, got {state.frame.value}")
