"""Exception hierarchy for the TA simulator.

Every error raised on purpose by the package derives from ``TaSimError``.
The subclasses also derive from ``ValueError`` so callers that only guard
against bad input keep working.
"""
from typing import Iterable, List, Optional, Tuple


class TaSimError(ValueError):
    """Base class for all simulator errors"""


class ConfigError(TaSimError):
    """Invalid or inconsistent scenario configuration"""


class FrameMismatchError(TaSimError):
    """Two quantities expressed in different coordinate frames were combined"""


class GeometryError(TaSimError):
    """Degenerate geometry: coincident points, too few epochs, duplicated tracks"""


class MeasurementError(TaSimError):
    """Malformed measurement vectors or covariances"""


class IllConditionedError(TaSimError):
    """Normal matrix too ill-conditioned for an unconstrained solve"""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class DegenerateLinearizationError(TaSimError):
    """Linearized constraint rows are rank deficient at the current iterate"""


class SingularInformationError(TaSimError):
    """Fisher information is singular, the geometry is unobservable"""


class VisibilityError(TaSimError):
    """A satellite is below the minimum elevation during the timing window"""

    def __init__(self, message: str, epochs: Optional[Iterable[Tuple[int, int]]] = None):
        self.epochs: List[Tuple[int, int]] = list(epochs or [])
        if self.epochs:
            shown = ", ".join(f"(sat {g}, ssb {i})" for g, i in self.epochs[:10])
            more = "" if len(self.epochs) <= 10 else f" and {len(self.epochs) - 10} more"
            message = f"{message}: {shown}{more}"
        super().__init__(message)


class CampaignError(TaSimError):
    """Too many Monte Carlo trials failed for the statistics to be meaningful"""
