import os
from dataclasses import dataclass
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

PACKAGE_PROFILE_DIR = Path(__file__).parent / "profiles"


@dataclass
class Config:
    """Process-level defaults for the TA simulator"""
    # Runtime settings
    LOG_LEVEL: str = os.getenv("TA_SIM_LOG_LEVEL", "INFO")
    WORKERS: int = int(os.getenv("TA_SIM_WORKERS", "1"))      # Threads used for campaign trials
    SEED: int = int(os.getenv("TA_SIM_SEED", "20240601"))     # Base seed when a config has none
    TRIALS: int = int(os.getenv("TA_SIM_TRIALS", "2000"))     # Default Monte Carlo trial count L
    PROFILE_DIR: str = os.getenv("TA_SIM_PROFILE_DIR", str(PACKAGE_PROFILE_DIR))

    # HTTP service
    HOST: str = os.getenv("TA_SIM_HOST", "127.0.0.1")
    PORT: int = int(os.getenv("TA_SIM_PORT", "8000"))

    # Earth model (reference ellipsoid and gravity)
    EARTH_RA: float = 6378137.0          # Semi-major axis, m
    EARTH_RB: float = 6356752.3142       # Semi-minor axis, m
    OMEGA_E: float = 7.2921150e-5        # Earth rotation rate, rad/s
    MU_PRIME: float = 3.986004418e14     # Geocentric gravitational constant, m^3/s^2
    SPEED_OF_LIGHT: float = 299792458.0  # m/s

    # Synchronization front-end
    CARRIER_FREQ: float = 2.6e9              # Hz
    SAMPLING_INTERVAL: float = 1 / 30.72e6   # s
    SUBCARRIER_SPACING: float = 15e3         # Hz
    SSB_INTERVAL: float = 20e-3              # s

    # Pass/fail and visibility
    CP_DURATION: float = 0.67e-3     # s, bound used for "within one CP" checks
    MIN_ELEVATION_DEG: float = 20.0


config = Config()
