import math
import os
import sys
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

# Add the repository root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from tasim.geom import (Frame, align_overpass, geodetic_to_ecef, satellite_track,  # noqa: E402
                        ue_track_eci)
from tasim.measure import add_noise, make_noise_free  # noqa: E402
from tasim.models import EarthModel, OrbitElements  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parents[2]

# UE sites used in the single-satellite simulations, (lat_deg, lon_deg)
SITES = {
    "subsat": (6.0, 0.0),
    "pos1": (20.0, 0.0),
    "pos2": (6.0, 15.0),
}


@pytest.fixture
def earth():
    return EarthModel()


@pytest.fixture
def table1_orbit(earth):
    """1070 km circular orbit, 85 deg inclination, zero RAAN and perigee"""
    return OrbitElements(
        radius_r=earth.R_a + 1070e3,
        inclination_theta=math.radians(85.0),
        raan_Omega=0.0,
        arg_perigee_phi=0.0,
        alpha0=0.0,
        gst0=0.0,
    )


@pytest.fixture
def aligned_orbit(table1_orbit, earth):
    """Table-I orbit with satellite 1 over the sub-satellite site at SSB 1"""
    return align_overpass(table1_orbit, geodetic_to_ecef(*SITES["subsat"], 0.0, earth))


@pytest.fixture
def s1_case(aligned_orbit, earth):
    """Factory for Scenario-1 inputs: (states, measurements, p_true)"""
    def build(site="pos2", window=60.0, T=2.0, sigma_t=0.0, sigma_f=0.0, seed=7):
        M = int(round(window / T))
        p = geodetic_to_ecef(*SITES[site], 0.0, earth)
        states = satellite_track(aligned_orbit, M, T, earth, Frame.ECEF)
        meas = make_noise_free(states, p, np.zeros(3), Frame.ECEF)
        if sigma_t > 0 or sigma_f > 0:
            meas = add_noise(meas, sigma_t, sigma_f, seed)
        return states, meas, p
    return build


@pytest.fixture
def s2_case(aligned_orbit, earth):
    """Factory for Scenario-2 inputs: (ue_track, measurements, s1_true_eci, T)"""
    def build(site="subsat", window=60.0, T=2.0, sigma_t=0.0, sigma_f=0.0, seed=7):
        M = int(round(window / T))
        p = geodetic_to_ecef(*SITES[site], 0.0, earth)
        states = satellite_track(aligned_orbit, M, T, earth, Frame.ECI)
        track = ue_track_eci(p, aligned_orbit.gst0, M, T, earth)
        meas = make_noise_free(states, track.pos, track.vel, Frame.ECI)
        if sigma_t > 0 or sigma_f > 0:
            meas = add_noise(meas, sigma_t, sigma_f, seed)
        return track, meas, np.array(states[0].pos), T
    return build


@pytest.fixture
def scenario_mapping():
    """Small, fast Scenario-1 campaign as nested config tables"""
    return {
        "run": {"scenario": "S1", "trials": 4, "seed": 11},
        "orbit": {"subpoint_lat_deg": 6.0, "subpoint_lon_deg": 0.0},
        "ue": {"lat_deg": 6.0, "lon_deg": 15.0},
        "sync": {"ssb_interval_T": 2.0, "timing_window": 60.0},
        "noise": {"sigma_t": 1e-10, "sigma_f": 0.01},
        "solver": {"solver": "CWLS", "weight_mode": "IterUpdate"},
    }


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML scenario file and return its path"""
    def write(text: str, name: str = "scenario.toml") -> Path:
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


@pytest.fixture
def small_config_text():
    return """
[run]
scenario = "S1"
trials = 4
seed = 11

[orbit]
subpoint_lat_deg = 6.0
subpoint_lon_deg = 0.0

[ue]
lat_deg = 6.0
lon_deg = 15.0

[sync]
ssb_interval_T = 2.0
timing_window = 60.0

[noise]
sigma_t = 1e-10
sigma_f = 0.01
"""


@pytest.fixture
def test_client():
    """TestClient for the FastAPI service"""
    from tasim.app import app
    return TestClient(app)
