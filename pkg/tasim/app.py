import logging
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import __version__, harness
from .config import config
from .errors import TaSimError
from .models import SolverComparison, TrialStats

logging.basicConfig(level=config.LOG_LEVEL.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(title="LEO Timing Advance Simulator", version=__version__, root_path="")

# Enable CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
    expose_headers=["*"],
)


class CampaignRequest(BaseModel):
    """Scenario tables as they appear in a config file, plus optional overrides"""
    scenario: Dict[str, Any]
    seed: Optional[int] = None
    trials: Optional[int] = None


class CampaignResponse(BaseModel):
    stats: TrialStats
    within_cp: Optional[float] = None   # fraction of trials with TA error inside one CP


class CrlbResponse(BaseModel):
    scenario: str
    sigma_t: float
    sigma_f: float
    crlb_trace_m2: float
    rms_bound_m: float
    position_block: List[List[float]]


class ProfileList(BaseModel):
    profiles: List[str]


def _scenario(request: CampaignRequest):
    cfg = harness.config_from_mapping(request.scenario)
    return harness.apply_overrides(cfg, seed=request.seed, trials=request.trials)


def _fail(endpoint: str, e: Exception) -> HTTPException:
    if isinstance(e, TaSimError):
        logger.warning("%s rejected: %s", endpoint, e)
        return HTTPException(status_code=422, detail=str(e))
    logger.exception("%s failed", endpoint)
    return HTTPException(status_code=500, detail=str(e))


# API Endpoints

@app.post("/api/campaign", response_model=CampaignResponse)
def run_campaign(request: CampaignRequest):
    """Run a Monte Carlo campaign and return its statistics"""
    try:
        cfg = _scenario(request)
        stats = harness.run_campaign(cfg)
        within = stats.fraction_within(cfg.cp_range) if stats.ta_errors else None
        return CampaignResponse(stats=stats, within_cp=within)
    except Exception as e:
        raise _fail("/api/campaign", e)


@app.post("/api/compare", response_model=SolverComparison)
def compare(request: CampaignRequest):
    """Penalty vs CWLS on paired trials"""
    try:
        return harness.compare_solvers(_scenario(request))
    except Exception as e:
        raise _fail("/api/compare", e)


@app.post("/api/crlb", response_model=CrlbResponse)
def crlb(request: CampaignRequest):
    try:
        return CrlbResponse(**harness.crlb_report(_scenario(request)))
    except Exception as e:
        raise _fail("/api/crlb", e)


@app.get("/api/profiles", response_model=ProfileList)
def profiles():
    """Names of the available noise calibration profiles"""
    try:
        return ProfileList(profiles=harness.list_profiles())
    except Exception as e:
        raise _fail("/api/profiles", e)
