"""Language-driven zero-shot object navigation at desk scale.

A 2.5-D simulator, an explore-then-plan agent with pluggable localizers,
a procedural benchmark generator and the evaluation/tuning harness.
"""
from .controller import CowConfig, Trajectory, run_episode
from .geometry import Action, CameraIntrinsics, DepthImage, Pose, action_delta, backproject, compose, inverse
from .scene import Scene, Suite, SuiteConfig, Task, generate_pasture_suite, generate_scenes
from .simulator import AgentConfig

__all__ = [
    "Action",
    "AgentConfig",
    "CameraIntrinsics",
    "CowConfig",
    "DepthImage",
    "Pose",
    "Scene",
    "Suite",
    "SuiteConfig",
    "Task",
    "Trajectory",
    "action_delta",
    "backproject",
    "compose",
    "generate_pasture_suite",
    "generate_scenes",
    "inverse",
    "run_episode",
]
__version__ = "0.1.0"
