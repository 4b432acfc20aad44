"""Location-based timing-advance estimation for LEO satellite links."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("ta-sim")
except PackageNotFoundError:
    __version__ = "0.1.0"
