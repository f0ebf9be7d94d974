"""Planar rigid transforms, pinhole camera model and depth back-projection.

Poses are SE(2) transforms ``(x, y, yaw)`` with the camera riding at a fixed
height above the floor.  The camera looks along the pose's +x axis, +y is to
the left and +z is up.  Depth images store the range along each pixel ray
(not the z-depth), so a flat wall at distance ``d`` reads ``d / cos(angle)``
off-axis.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


class Action(enum.Enum):
    MoveForward = "MoveForward"
    RotateLeft = "RotateLeft"
    RotateRight = "RotateRight"
    Stop = "Stop"


MOTION_ACTIONS = (Action.MoveForward, Action.RotateLeft, Action.RotateRight)


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite pose {self!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(0.0, 0.0, 0.0)

    def compose(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return inverse(self)

    def transform_point(self, px, py):
        """Map a point from this pose's local frame into the parent frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return self.x + c * px - s * py, self.y + s * px + c * py

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(float(d["x"]), float(d["y"]), float(d["yaw"]))


def compose(a: Pose, b: Pose) -> Pose:
    """Apply ``b`` expressed in ``a``'s frame: T_a @ T_b."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.yaw + b.yaw)


def inverse(p: Pose) -> Pose:
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return Pose(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.yaw)


def action_delta(action: Action, config) -> Pose:
    """Intended body-frame motion of a discrete action.

    ``config`` only needs ``step_size`` and ``turn_angle`` attributes.
    """
    if action is Action.MoveForward:
        return Pose(config.step_size, 0.0, 0.0)
    if action is Action.RotateLeft:
        return Pose(0.0, 0.0, config.turn_angle)
    if action is Action.RotateRight:
        return Pose(0.0, 0.0, -config.turn_angle)
    raise ValueError(f"no motion delta for {action}")


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 64
    height: int = 48
    horizontal_fov: float = math.radians(79.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal_fov must lie in (0, pi)")

    @property
    def fx(self) -> float:
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    @property
    def fy(self) -> float:
        return self.fx

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0

    @property
    def vertical_fov(self) -> float:
        return 2.0 * math.atan((self.height / 2.0) / self.fy)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def camera_rays(self) -> np.ndarray:
        """Unit ray directions in the camera body frame, shape (H, W, 3).

        Pixel (u, v) maps to forward=1, left=-(u-cx)/fx, up=-(v-cy)/fy.
        """
        u = np.arange(self.width, dtype=float)
        v = np.arange(self.height, dtype=float)
        uu, vv = np.meshgrid(u, v)
        rays = np.stack(
            [np.ones_like(uu), -(uu - self.cx) / self.fx, -(vv - self.cy) / self.fy], axis=-1
        )
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "horizontal_fov": self.horizontal_fov}


@dataclass
class DepthImage:
    """Per-pixel range in metres; values >= ``sentinel`` mean no return."""

    values: np.ndarray
    sentinel: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("depth values must be a 2-D grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("depth values must be finite")
        if np.any(self.values < 0):
            raise ValueError("depth values must be non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values < self.sentinel


def world_rays(k: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Unit pixel rays rotated into the world frame, shape (H, W, 3)."""
    rays = k.camera_rays()
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    out = np.empty_like(rays)
    out[..., 0] = c * rays[..., 0] - s * rays[..., 1]
    out[..., 1] = s * rays[..., 0] + c * rays[..., 1]
    out[..., 2] = rays[..., 2]
    return out


def backproject(
    depth: DepthImage,
    k: CameraIntrinsics,
    world_pose: Pose,
    camera_height: float,
    *,
    return_pixels: bool = False,
):
    """Lift valid depth pixels to world-frame 3-D points, shape (N, 3).

    Points are emitted in row-major pixel order.  With ``return_pixels`` the
    (row, col) index arrays of the kept pixels are returned as well.
    """
    if depth.values.shape != (k.height, k.width):
        raise ValueError(
            f"depth shape {depth.values.shape} does not match intrinsics {(k.height, k.width)}"
        )
    rays = world_rays(k, world_pose)
    rows, cols = np.nonzero(depth.valid)
    d = depth.values[rows, cols]
    r = rays[rows, cols]
    pts = np.empty((len(d), 3))
    pts[:, 0] = world_pose.x + d * r[:, 0]
    pts[:, 1] = world_pose.y + d * r[:, 1]
    pts[:, 2] = camera_height + d * r[:, 2]
    if return_pixels:
        return pts, rows, cols
    return pts
