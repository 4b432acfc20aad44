"""Monte Carlo campaigns, solver comparison, parameter sweeps and export.

A campaign builds the noise-free truth once, then for each trial adds
seeded noise, solves and records the position error and the TA error
delta_d = |d1_hat - d1|. Trial t draws from SeedSequence([seed, t]), so
serial and threaded runs give identical statistics.
"""
import csv
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import config
from .ephest import build_problem2, ephemeris_crlb, estimate_ephemeris
from .errors import CampaignError, ConfigError, TaSimError, VisibilityError
from .geom import (Frame, SatelliteState, UeTrack, align_overpass, elevation_deg, ellipsoid_normal,
                   geodetic_to_ecef, satellite_track, ue_track_eci)
from .locest import CrlbResult, build_problem, crlb, estimate
from .measure import MeasurementSet, add_noise, common_reference_covariance, make_noise_free
from .models import (ExportFormat, OrbitElements, Scenario, ScenarioConfig, SolverComparison, SolverKind,
                     SolverSummary, SweepAxis, SyncConfig, TrialRecord, TrialStats, WeightMode)
from .multisat import Constellation, make_constellation, stack_measurements

logger = logging.getLogger(__name__)

STATS_COLUMNS = ["trial", "pos_err_m", "ta_err_m", "iters", "converged", "runtime_s"]
CDF_COLUMNS = ["err_m", "prob"]


# Configuration

def list_profiles(profile_dir: Optional[Union[str, Path]] = None) -> List[str]:
    directory = Path(profile_dir or config.PROFILE_DIR)
    return sorted(p.stem for p in directory.glob("*.toml"))


def load_profile(name: str, profile_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Noise calibration profile: a TOML file with a [noise] table."""
    path = Path(profile_dir or config.PROFILE_DIR) / f"{name}.toml"
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"unknown noise profile '{name}' (looked for {path})") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse profile {path}: {e}") from e
    noise = data.get("noise", {})
    if "sigma_t" not in noise or "sigma_f" not in noise:
        raise ConfigError(f"profile {path} must define noise.sigma_t and noise.sigma_f")
    return data


def config_from_mapping(data: Mapping[str, Any], profile_dir: Optional[Union[str, Path]] = None) -> ScenarioConfig:
    """Validate a scenario given as nested tables.

    ``[orbit]`` describes orbit 1 and ``[orbit.N]`` sub-tables describe
    further orbits that inherit every orbit-1 field they do not override.
    A ``noise.profile`` fills in sigmas that are not given explicitly.
    """
    data = dict(data)
    if "orbit" in data and "orbits" in data:
        raise ConfigError("give either [orbit] tables or an 'orbits' list, not both")
    if "orbit" in data:
        data["orbits"] = _expand_orbits(data.pop("orbit"))

    noise = dict(data.get("noise", {}))
    if noise.get("profile"):
        calibrated = load_profile(noise["profile"], profile_dir)["noise"]
        for key in ("sigma_t", "sigma_f"):
            noise.setdefault(key, calibrated[key])
        data["noise"] = noise

    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario configuration:\n{e}") from e


def _expand_orbits(table: Mapping[str, Any]) -> List[Dict[str, Any]]:
    base = {k: v for k, v in table.items() if not isinstance(v, Mapping)}
    extra = {k: v for k, v in table.items() if isinstance(v, Mapping)}
    try:
        numbered = sorted((int(k), v) for k, v in extra.items())
    except ValueError as e:
        raise ConfigError(f"orbit sub-tables must be numbered, got {sorted(extra)}") from e
    expected = list(range(2, len(numbered) + 2))
    if [k for k, _ in numbered] != expected:
        raise ConfigError(f"orbit sub-tables must be numbered {expected}, got {[k for k, _ in numbered]}")
    inherited = {k: v for k, v in base.items() if k != "alpha0_offset_deg"}
    return [base] + [{**inherited, **dict(v)} for _, v in numbered]


def load_config(path: Union[str, Path], profile_dir: Optional[Union[str, Path]] = None) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return config_from_mapping(data, profile_dir)


def with_updates(cfg: ScenarioConfig, **sections: Dict[str, Any]) -> ScenarioConfig:
    """Re-validated copy with section fields replaced, e.g. ``run={"seed": 3}``."""
    data = cfg.model_dump()
    for name, fields in sections.items():
        if isinstance(fields, Mapping):
            data[name] = {**data[name], **fields}
        else:
            data[name] = fields
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration update:\n{e}") from e


def apply_overrides(cfg: ScenarioConfig, seed: Optional[int] = None, trials: Optional[int] = None,
                    workers: Optional[int] = None) -> ScenarioConfig:
    run = {k: v for k, v in (("seed", seed), ("trials", trials), ("workers", workers)) if v is not None}
    return with_updates(cfg, run=run) if run else cfg


# Truth

@dataclass(frozen=True)
class Truth:
    """Noise-free ground truth shared by every trial of a campaign"""
    cfg: ScenarioConfig
    sync: SyncConfig
    orbits: Tuple[OrbitElements, ...]
    p_ecef: np.ndarray
    states: Tuple[SatelliteState, ...]     # ECEF for S1/MultiS1, ECI for S2
    ue_track: Optional[UeTrack]
    clean: MeasurementSet
    target: np.ndarray                     # p (S1) or s1 in ECI (S2)
    d1: float
    bound: Optional[CrlbResult]


def resolve_orbits(cfg: ScenarioConfig) -> List[OrbitElements]:
    """Orbit elements for every configured orbit, sharing orbit 1's epoch."""
    earth = cfg.earth
    first = cfg.orbits[0]
    lead = _elements(first, earth.R_a, alpha_deg=first.alpha0_deg, gst0=math.radians(first.gst0_deg))
    if first.subpoint_lat_deg is not None:
        site = geodetic_to_ecef(first.subpoint_lat_deg, first.subpoint_lon_deg, 0.0, earth)
        lead = align_overpass(lead, site)
    base_alpha, gst0 = lead.alpha0, lead.gst0

    resolved = []
    for k, orbit in enumerate(cfg.orbits):
        alpha = base_alpha if k == 0 or first.subpoint_lat_deg is not None else math.radians(orbit.alpha0_deg)
        resolved.append(_elements(orbit, earth.R_a, alpha_rad=alpha + math.radians(orbit.alpha0_offset_deg),
                                  gst0=gst0))
    return resolved


def _elements(orbit, R_a: float, gst0: float, alpha_deg: Optional[float] = None,
              alpha_rad: Optional[float] = None) -> OrbitElements:
    alpha = alpha_rad if alpha_rad is not None else math.radians(alpha_deg or 0.0)
    return OrbitElements(
        radius_r=R_a + orbit.altitude_m,
        inclination_theta=math.radians(orbit.inclination_deg),
        raan_Omega=math.radians(orbit.raan_deg),
        arg_perigee_phi=math.radians(orbit.arg_perigee_deg),
        alpha0=alpha,
        gst0=gst0,
        mu_prime=orbit.mu_prime,
    )


def constellation_for(cfg: ScenarioConfig, orbits: Sequence[OrbitElements]) -> Constellation:
    """Explicit orbits when several are configured, otherwise generated from orbit 1."""
    if len(orbits) > 1:
        return Constellation(tuple(orbits))
    c = cfg.constellation
    return make_constellation(orbits[0], c.num_sats, c.planes,
                              math.radians(c.raan_spacing_deg), math.radians(c.anomaly_step_deg))


def noise_covariances(cfg: ScenarioConfig, n: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    sigma_range = config.SPEED_OF_LIGHT * cfg.noise.sigma_t
    sigma_rate = config.SPEED_OF_LIGHT * cfg.noise.sigma_f / cfg.sync.fc
    if sigma_range <= 0 or sigma_rate <= 0:
        return None
    return common_reference_covariance(n, sigma_range), common_reference_covariance(n, sigma_rate)


def build_truth(cfg: ScenarioConfig) -> Truth:
    earth = cfg.earth
    sync = cfg.sync.to_sync_config()
    T = sync.ssb_interval_T
    orbits = resolve_orbits(cfg)
    p = geodetic_to_ecef(cfg.ue.lat_deg, cfg.ue.lon_deg, cfg.ue.alt_m, earth)
    zero = np.zeros(3)
    track = None

    if cfg.scenario == Scenario.MULTI_S1:
        con = constellation_for(cfg, orbits)
        orbits = list(con.sats)
        states, clean = stack_measurements(con, p, zero, sync, earth=earth,
                                           min_elevation_deg=cfg.run.min_elevation_deg,
                                           clock_bias_s=cfg.constellation.clock_bias_s or None)
    else:
        if len(orbits) > 1:
            logger.warning("%s uses orbit 1 only; ignoring %d extra orbits", cfg.scenario.value, len(orbits) - 1)
            orbits = orbits[:1]
        lead = orbits[0]
        first_ecef = satellite_track(lead, 1, T, earth, Frame.ECEF)[0]
        elevation = elevation_deg(first_ecef.pos, p, ellipsoid_normal(p, earth))
        if elevation < cfg.run.min_elevation_deg:
            raise VisibilityError(f"UE elevation {elevation:.2f} deg is below {cfg.run.min_elevation_deg} deg", [(1, 1)])
        if cfg.scenario == Scenario.S1:
            states = satellite_track(lead, sync.M, T, earth, Frame.ECEF)
            clean = make_noise_free(states, p, zero, Frame.ECEF)
        else:
            states = satellite_track(lead, sync.M, T, earth, Frame.ECI)
            track = ue_track_eci(p, lead.gst0, sync.M, T, earth)
            clean = make_noise_free(states, track.pos, track.vel, Frame.ECI)

    if cfg.scenario == Scenario.S2:
        target = np.array(states[0].pos)
        d1 = float(np.linalg.norm(states[0].pos - track.pos[0]))
    else:
        target = p
        d1 = float(np.linalg.norm(states[0].pos - p))

    bound = None
    covs = noise_covariances(cfg, len(clean))
    if covs is not None:
        try:
            if cfg.scenario == Scenario.S2:
                bound = ephemeris_crlb(orbits[0], track, target, covs[0], covs[1], T)
            else:
                bound = crlb(states, p, zero, covs[0], covs[1], earth)
        except TaSimError as e:
            logger.warning("CRLB unavailable: %s", e)

    return Truth(cfg=cfg, sync=sync, orbits=tuple(orbits), p_ecef=p, states=tuple(states),
                 ue_track=track, clean=clean, target=target, d1=d1, bound=bound)


# Trials

def trial_measurements(truth: Truth, trial: int) -> MeasurementSet:
    """Noisy measurements of one trial; a pure function of (seed, trial)."""
    seq = np.random.SeedSequence([truth.cfg.seed, trial])
    return add_noise(truth.clean, truth.cfg.noise.sigma_t, truth.cfg.noise.sigma_f, seq, fc=truth.sync.fc)


def solve_trial(truth: Truth, meas: MeasurementSet, trial: int,
                solver: Optional[SolverKind] = None) -> TrialRecord:
    cfg = truth.cfg
    solver = SolverKind(solver or cfg.solver.solver)
    try:
        if cfg.scenario == Scenario.S2:
            prob = build_problem2(truth.orbits[0], truth.ue_track, meas, truth.sync.ssb_interval_T,
                                  cfg.solver.weight_mode, s1_true=truth.target)
            res = estimate_ephemeris(prob, solver, cfg.solver.penalty, cfg.solver.cwls)
            pos_err = float(np.linalg.norm(res.s1_hat_eci - truth.target))
        else:
            prob = build_problem(truth.states, meas, cfg.solver.weight_mode,
                                 truth=(truth.p_ecef, np.zeros(3)), earth=cfg.earth)
            mirror = cfg.solver.resolve_mirror and cfg.scenario == Scenario.S1
            res = estimate(prob, solver, cfg.solver.penalty, cfg.solver.cwls, resolve_mirror=mirror)
            pos_err = float(np.linalg.norm(res.p_hat - truth.target))
    except (TaSimError, np.linalg.LinAlgError) as e:
        logger.warning("trial %d failed: %s", trial, e)
        return TrialRecord(trial=trial, error=f"{type(e).__name__}: {e}")
    if not math.isfinite(pos_err):
        logger.warning("trial %d produced a non-finite estimate", trial)
        return TrialRecord(trial=trial, iters=res.iterations, error="non-finite estimate")
    return TrialRecord(trial=trial, pos_err_m=pos_err, ta_err_m=abs(res.d1_hat - truth.d1),
                       iters=res.iterations, converged=res.converged, runtime_s=res.wall_time,
                       ambiguous=res.ambiguous)


def summarize(records: Sequence[TrialRecord], crlb_trace: Optional[float] = None) -> TrialStats:
    records = sorted(records, key=lambda r: r.trial)
    ok = [r for r in records if r.error is None]
    ta = [r.ta_err_m for r in ok]
    pos = np.array([r.pos_err_m for r in ok])
    ordered = sorted(ta)
    count = len(ordered)
    return TrialStats(
        rmse=float(np.sqrt(np.mean(pos ** 2))) if count else None,
        ta_errors=ta,
        cdf=[(e, k / count) for k, e in enumerate(ordered, start=1)],
        runtime_mean=float(np.mean([r.runtime_s for r in ok])) if count else None,
        crlb_trace=crlb_trace,
        failures=len(records) - count,
        trials=list(records),
    )


def _check_failures(records: Sequence[TrialRecord], label: str) -> None:
    failures = sum(1 for r in records if r.error is not None)
    if records and failures * 2 > len(records):
        raise CampaignError(f"{label}: {failures} of {len(records)} trials failed")


def _map_trials(fn, trials: int, workers: int) -> List:
    if workers <= 1 or trials <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def run_campaign(cfg: ScenarioConfig, workers: Optional[int] = None, truth: Optional[Truth] = None) -> TrialStats:
    truth = truth or build_truth(cfg)
    workers = workers or cfg.run.workers
    logger.info("campaign %s: %d trials, M=%d, solver=%s, weights=%s",
                cfg.scenario.value, cfg.trials, cfg.M, cfg.solver.solver.value, cfg.solver.weight_mode.value)

    records = _map_trials(lambda t: solve_trial(truth, trial_measurements(truth, t), t), cfg.trials, workers)
    _check_failures(records, "campaign")
    stats = summarize(records, truth.bound.position_trace if truth.bound else None)
    logger.info("campaign done: rmse=%s m, median TA error=%s m, %d failures",
                _fmt(stats.rmse), _fmt(stats.median_ta_error()), stats.failures)
    return stats


def compare_solvers(cfg: ScenarioConfig, workers: Optional[int] = None) -> SolverComparison:
    """Penalty and CWLS on the same seeded measurements of every trial."""
    truth = build_truth(cfg)
    workers = workers or cfg.run.workers

    def paired(t):
        meas = trial_measurements(truth, t)
        return (solve_trial(truth, meas, t, SolverKind.PENALTY),
                solve_trial(truth, meas, t, SolverKind.CWLS))

    pairs = _map_trials(paired, cfg.trials, workers)
    penalty_records = [a for a, _ in pairs]
    cwls_records = [b for _, b in pairs]
    _check_failures(penalty_records, "penalty campaign")
    _check_failures(cwls_records, "CWLS campaign")
    penalty = _summary(SolverKind.PENALTY, summarize(penalty_records))
    cwls = _summary(SolverKind.CWLS, summarize(cwls_records))

    ratio = gap = None
    if penalty.runtime_mean and cwls.runtime_mean:
        ratio = penalty.runtime_mean / cwls.runtime_mean
    if penalty.rmse and cwls.rmse is not None:
        gap = abs(cwls.rmse - penalty.rmse) / penalty.rmse
    ordering_ok = ratio is not None and ratio > 1.0
    if not ordering_ok:
        logger.warning("CWLS was not faster than the penalty method (ratio %s)", _fmt(ratio))
    return SolverComparison(penalty=penalty, cwls=cwls, runtime_ratio=ratio, accuracy_gap=gap,
                            ordering_ok=ordering_ok)


def _summary(kind: SolverKind, stats: TrialStats) -> SolverSummary:
    return SolverSummary(solver=kind, rmse=stats.rmse, median_ta_err_m=stats.median_ta_error(),
                         runtime_mean=stats.runtime_mean, failures=stats.failures)


def parse_sweep_values(axis: Union[SweepAxis, str], text: str) -> List[Any]:
    axis = SweepAxis(axis)
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("sweep needs at least one value")
    try:
        if axis == SweepAxis.WEIGHT_MODE:
            return [WeightMode(s) for s in items]
        if axis == SweepAxis.NUM_SATS:
            return [int(s) for s in items]
        return [float(s) for s in items]
    except ValueError as e:
        raise ConfigError(f"bad value for sweep axis {axis.value}: {e}") from e


def sweep_point(cfg: ScenarioConfig, axis: Union[SweepAxis, str], value: Any, index: int) -> ScenarioConfig:
    """Config of one sweep point; the seed is offset by the point index.

    The noise axis scales both configured sigmas by ``value``.
    """
    axis = SweepAxis(axis)
    run = {"seed": cfg.seed + index}
    if axis == SweepAxis.NOISE:
        return with_updates(cfg, run=run, noise={"sigma_t": cfg.noise.sigma_t * float(value),
                                                 "sigma_f": cfg.noise.sigma_f * float(value)})
    if axis == SweepAxis.WINDOW:
        return with_updates(cfg, run=run, sync={"timing_window": float(value)})
    if axis == SweepAxis.WEIGHT_MODE:
        return with_updates(cfg, run=run, solver={"weight_mode": WeightMode(value)})
    run["scenario"] = Scenario.MULTI_S1
    return with_updates(cfg, run=run, constellation={"num_sats": int(value)},
                        orbits=[cfg.orbits[0].model_dump()])


def sweep(cfg: ScenarioConfig, axis: Union[SweepAxis, str], values: Sequence[Any],
          workers: Optional[int] = None) -> List[Tuple[Any, TrialStats]]:
    results = []
    for index, value in enumerate(values):
        point = sweep_point(cfg, axis, value, index)
        logger.info("sweep %s = %s", SweepAxis(axis).value, value)
        results.append((value, run_campaign(point, workers)))
    return results


def crlb_report(cfg: ScenarioConfig) -> Dict[str, Any]:
    truth = build_truth(cfg)
    if truth.bound is None:
        raise ConfigError("the CRLB needs positive sigma_t and sigma_f")
    block = truth.bound.crlb[:3, :3]
    return {
        "scenario": cfg.scenario.value,
        "sigma_t": cfg.noise.sigma_t,
        "sigma_f": cfg.noise.sigma_f,
        "crlb_trace_m2": truth.bound.position_trace,
        "rms_bound_m": math.sqrt(max(truth.bound.position_trace, 0.0)),
        "position_block": block.tolist(),
    }


# Export

def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Enum):
        return value.value
    return str(value)


def _stats_rows(stats: TrialStats) -> List[List[str]]:
    return [[_cell(r.trial), _cell(r.pos_err_m), _cell(r.ta_err_m), _cell(r.iters), _cell(r.converged),
             _cell(r.runtime_s if r.error is None else None)] for r in stats.trials]


def _cdf_rows(stats: TrialStats) -> List[List[str]]:
    return [[_cell(e), _cell(p)] for e, p in stats.cdf]


def cdf_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_cdf{path.suffix or '.csv'}")


def _write_csv(path: Path, header: List[str], rows: List[List[str]]) -> None:
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2) + "\n")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def _envelope(cfg: Optional[ScenarioConfig]) -> Dict[str, Any]:
    return {
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "seed": cfg.seed if cfg else None,
        "config": cfg.model_dump(mode="json") if cfg else None,
    }


def export(stats: TrialStats, path: Union[str, Path], fmt: Union[ExportFormat, str] = ExportFormat.CSV,
           cfg: Optional[ScenarioConfig] = None) -> List[Path]:
    """Write campaign statistics; CSV also writes a sibling ``<stem>_cdf.csv``."""
    path = Path(path)
    if ExportFormat(fmt) == ExportFormat.JSON:
        _write_json(path, {**_envelope(cfg), "stats": stats.model_dump(mode="json")})
        return [path]
    _write_csv(path, STATS_COLUMNS, _stats_rows(stats))
    _write_csv(cdf_path(path), CDF_COLUMNS, _cdf_rows(stats))
    return [path, cdf_path(path)]


def export_sweep(results: Sequence[Tuple[Any, TrialStats]], path: Union[str, Path],
                 fmt: Union[ExportFormat, str] = ExportFormat.CSV, axis: Optional[str] = None,
                 cfg: Optional[ScenarioConfig] = None) -> List[Path]:
    path = Path(path)
    if ExportFormat(fmt) == ExportFormat.JSON:
        points = [{"axis_value": _cell(v), "stats": s.model_dump(mode="json")} for v, s in results]
        _write_json(path, {**_envelope(cfg), "axis": axis, "points": points})
        return [path]
    stats_rows = [[_cell(v)] + row for v, s in results for row in _stats_rows(s)]
    cdf_rows = [[_cell(v)] + row for v, s in results for row in _cdf_rows(s)]
    _write_csv(path, ["axis_value"] + STATS_COLUMNS, stats_rows)
    _write_csv(cdf_path(path), ["axis_value"] + CDF_COLUMNS, cdf_rows)
    return [path, cdf_path(path)]


def load_stats(path: Union[str, Path]) -> TrialStats:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
    return TrialStats.model_validate(payload["stats"])


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4g}"
