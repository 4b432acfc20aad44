"""TDOA/FDOA measurement synthesis.

Measurements are kept in range units: ``d_tilde`` holds range differences
(m) and ``dd_tilde`` range-rate differences (m/s), both against SSB 1.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .config import config
from .errors import FrameMismatchError, GeometryError, MeasurementError
from .geom import Frame, SatelliteState, as_vec3
from .models import SyncConfig

logger = logging.getLogger(__name__)

SeedLike = Union[None, int, Sequence[int], np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class MeasurementSet:
    """Range and range-rate differences d_{i,1}, d_dot_{i,1} for i = 2..M"""
    d_tilde: np.ndarray
    dd_tilde: np.ndarray
    Qt: np.ndarray
    Qf: np.ndarray
    reference_index: int = 1
    noise_free: bool = False

    def __post_init__(self):
        d = np.asarray(self.d_tilde, dtype=float).reshape(-1)
        dd = np.asarray(self.dd_tilde, dtype=float).reshape(-1)
        n = d.size
        if dd.size != n:
            raise MeasurementError(f"TDOA and FDOA lengths differ: {n} vs {dd.size}")
        Qt = np.atleast_2d(np.asarray(self.Qt, dtype=float))
        Qf = np.atleast_2d(np.asarray(self.Qf, dtype=float))
        for name, Q in (("Qt", Qt), ("Qf", Qf)):
            if Q.shape != (n, n):
                raise MeasurementError(f"{name} must be {n}x{n}, got {Q.shape}")
            if not np.allclose(Q, Q.T, rtol=1e-12, atol=0.0):
                raise MeasurementError(f"{name} is not symmetric")
            try:
                np.linalg.cholesky(Q)
            except np.linalg.LinAlgError as e:
                raise MeasurementError(f"{name} is not positive definite") from e
        if self.reference_index != 1:
            raise MeasurementError("measurements are always referenced to SSB 1")
        for field_name, value in (("d_tilde", d), ("dd_tilde", dd), ("Qt", Qt), ("Qf", Qf)):
            value = np.array(value)
            value.setflags(write=False)
            object.__setattr__(self, field_name, value)

    @property
    def M(self) -> int:
        """Number of SSB receptions behind the differences"""
        return self.d_tilde.size + 1

    def __len__(self) -> int:
        return self.d_tilde.size


def slant_range(sat: SatelliteState, p, p_frame: Optional[Frame] = None) -> float:
    """d_i = ||s_i - p||"""
    _check_frame(sat, p_frame)
    return float(np.linalg.norm(sat.pos - as_vec3(p, "p")))


def slant_range_rate(sat: SatelliteState, p, p_dot, p_frame: Optional[Frame] = None) -> float:
    """d_dot_i = (s_i - p)'(s_dot_i - p_dot) / d_i"""
    _check_frame(sat, p_frame)
    los = sat.pos - as_vec3(p, "p")
    d = np.linalg.norm(los)
    if d <= 1e-9 * max(1.0, np.linalg.norm(sat.pos)):
        raise GeometryError(f"satellite and UE coincide at SSB {sat.epoch_index}")
    return float(los @ (sat.vel - as_vec3(p_dot, "p_dot")) / d)


def common_reference_covariance(n: int, sigma: float) -> np.ndarray:
    """sigma^2 (I + 11') for n differences sharing one reference reception"""
    return sigma ** 2 * (np.eye(n) + np.ones((n, n)))


def common_reference_noise(n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Differences e_i - e_1 of i.i.d. per-reception errors, covariance sigma^2 (I + 11')."""
    e = rng.normal(0.0, sigma, size=n + 1)
    return e[1:] - e[0]


def make_noise_free(sat_states: Sequence[SatelliteState], p, p_dot,
                    p_frame: Optional[Frame] = None,
                    nominal_sigma: Tuple[float, float] = (1.0, 1.0)) -> MeasurementSet:
    """Exact differences against the first state.

    ``p`` and ``p_dot`` are either one vector shared by all epochs or an
    (M, 3) array with one row per state. The returned covariances are the
    common-reference structure at ``nominal_sigma`` (m, m/s) and only serve
    as placeholders until noise is added.
    """
    states = list(sat_states)
    if len(states) < 2:
        raise GeometryError(f"need at least 2 satellite states, got {len(states)}")
    frames = {s.frame for s in states}
    if len(frames) != 1:
        raise FrameMismatchError(f"satellite states mix frames: {sorted(f.value for f in frames)}")
    P = _per_epoch(p, len(states), "p")
    Pdot = _per_epoch(p_dot, len(states), "p_dot")
    d = np.array([slant_range(s, P[k], p_frame) for k, s in enumerate(states)])
    dd = np.array([slant_range_rate(s, P[k], Pdot[k], p_frame) for k, s in enumerate(states)])
    n = len(states) - 1
    return MeasurementSet(
        d_tilde=d[1:] - d[0],
        dd_tilde=dd[1:] - dd[0],
        Qt=common_reference_covariance(n, nominal_sigma[0]),
        Qf=common_reference_covariance(n, nominal_sigma[1]),
        noise_free=True,
    )


def add_noise(clean: MeasurementSet, sigma_t: float, sigma_f: float, rng_seed: SeedLike = None,
              fc: float = config.CARRIER_FREQ, c: float = config.SPEED_OF_LIGHT) -> MeasurementSet:
    """Add common-reference Gaussian timing and frequency noise.

    Timing noise sigma_t (s) becomes range noise c*sigma_t and frequency
    noise sigma_f (Hz) becomes range-rate noise c*sigma_f/fc. A channel with
    zero sigma is left untouched together with its covariance.
    """
    if sigma_t < 0 or sigma_f < 0:
        raise MeasurementError(f"noise levels must be non-negative, got {sigma_t}, {sigma_f}")
    rng = np.random.default_rng(rng_seed)
    n = len(clean)
    sigma_range = c * sigma_t
    sigma_rate = c * sigma_f / fc
    # Both channels always draw.
    n_t = common_reference_noise(n, 1.0, rng)
    n_f = common_reference_noise(n, 1.0, rng)
    d, Qt = clean.d_tilde, clean.Qt
    dd, Qf = clean.dd_tilde, clean.Qf
    if sigma_range > 0:
        d = d + sigma_range * n_t
        Qt = common_reference_covariance(n, sigma_range)
    if sigma_rate > 0:
        dd = dd + sigma_rate * n_f
        Qf = common_reference_covariance(n, sigma_rate)
    return MeasurementSet(d, dd, Qt, Qf, noise_free=clean.noise_free and sigma_range == 0 and sigma_rate == 0)


def offsets_to_tdoa_fdoa(theta_tilde, eps_tilde, cfg: SyncConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Timing offsets (samples) and CFOs (subcarriers) to TDOA (s) and FDOA (Hz)."""
    theta = np.asarray(theta_tilde, dtype=float).reshape(-1)
    eps = np.asarray(eps_tilde, dtype=float).reshape(-1)
    if theta.size != eps.size or theta.size < 2:
        raise MeasurementError(
            f"offset sequences must share a length >= 2, got {theta.size} and {eps.size}"
        )
    return (theta[1:] - theta[0]) * cfg.Ts, (eps[1:] - eps[0]) * cfg.delta_f


def to_range_domain(t_tilde, f_tilde, fc: float = config.CARRIER_FREQ,
                    c: float = config.SPEED_OF_LIGHT) -> Tuple[np.ndarray, np.ndarray]:
    """TDOA/FDOA to range and range-rate differences: d = c t, d_dot = c f / fc."""
    return c * np.asarray(t_tilde, dtype=float), c * np.asarray(f_tilde, dtype=float) / fc


def write_csv(meas: MeasurementSet, path: Union[str, Path]) -> None:
    """Debug dump with columns i, d_tilde, dd_tilde."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "d_tilde", "dd_tilde"])
            for k, (d, dd) in enumerate(zip(meas.d_tilde, meas.dd_tilde), start=2):
                writer.writerow([k, repr(float(d)), repr(float(dd))])
    except OSError as e:
        raise OSError(f"cannot write measurements to {path}: {e}") from e


def _check_frame(sat: SatelliteState, p_frame: Optional[Frame]) -> None:
    if p_frame is not None and Frame(p_frame) != sat.frame:
        raise FrameMismatchError(
            f"satellite state is in {sat.frame.value} but UE is in {Frame(p_frame).value}"
        )


def _per_epoch(value, count: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        return np.tile(as_vec3(arr, name), (count, 1))
    if arr.shape != (count, 3):
        raise GeometryError(f"{name} must be a 3-vector or ({count}, 3), got {arr.shape}")
    return arr
