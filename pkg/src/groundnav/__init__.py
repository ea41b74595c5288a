"""groundnav: depth-camera ground segmentation and real-time navigation.

Pipeline: raw depth image -> per-pixel ground/obstacle classes -> robot-
centric traversability map -> (a) log-odds occupancy fusion + A* global
route and (b) rule-based or learned local policy producing velocity
commands — all exercised end-to-end in a bundled 2.5D simulator.
"""

__version__ = "0.1.0"

from .core import CameraModel, GridGeometry, Pose2D, RobotParams, Twist  # noqa: F401
from .groundseg import DepthFrame, PixelClass, SegParams, TraversabilityMap  # noqa: F401
from .simenv import Scene, ScenarioSpec, load_scenario  # noqa: F401
