"""Image splicing localization: dual-branch multi-scale cross-fusion network
with edge supervision."""

__version__ = "0.1.0"

from .config import ModelConfig, TrainConfig  # noqa: F401
from .data import AttackSpec, RegionSpec, Sample  # noqa: F401
from .model import SpliceLocNet  # noqa: F401
