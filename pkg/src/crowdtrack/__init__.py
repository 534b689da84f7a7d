"""Deterministic multi-object tracking testbed.

A tracking-by-segmentation association engine (density-gated mask
regeneration, hybrid update arbitration, three-stage state-aware
matching) over an abstract mask-propagation backend, with a synthetic
crowded-scene simulator and a MOT metrics suite.
"""

__version__ = "0.1.0"

from .geometry import BBox, Mask  # noqa: F401
from .io import TrackerConfig, default_config  # noqa: F401
from .metrics import TrajectorySet  # noqa: F401
