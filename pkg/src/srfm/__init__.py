"""Multi-domain search & recommendation foundation model at desk scale."""

from .config import ModelConfig
from .model import Foundation

__all__ = ["ModelConfig", "Foundation"]
__version__ = "0.1.0"
