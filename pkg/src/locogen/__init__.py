"""locogen: demonstration generation for humanoid loco-manipulation.

Adapts annotated skill demonstrations to new scenes by interleaving
constraint-driven skill scheduling, whole-body inverse kinematics,
collision-aware motion planning, and object-frame skill replay over a
self-contained kinematic world model.
"""

from locogen.pose import Pose, PlanarPose, compose, invert, interpolate

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "PlanarPose",
    "compose",
    "invert",
    "interpolate",
    "__version__",
]
