"""Object localizers, mask thresholding, centre-pixel post-processing and
relevance back-projection into the top-down map."""
from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, DepthImage
from .mapping import OCCUPIED, UNKNOWN, PoseEstimate, TopDownMap, _EPS, _frame_points
from .scene import ParsedDescription, Scene, object_matches

log = logging.getLogger(__name__)

RELMAP_MAGIC = b"RELMAP01"


@dataclass
class RelevanceMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("relevance must be a 2-D grid")
        self.values = np.clip(v, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "RelevanceMap":
        return cls(np.zeros((height, width)))


class Localizer(Protocol):
    def localize(self, observation, goal_description: str) -> RelevanceMap: ...


@dataclass(frozen=True)
class OracleLocalizerConfig:
    p_false_negative: float = 0.0
    p_false_positive: float = 0.0
    attribute_blindness: float = 0.0
    seed: int = 0
    leak: int = 0  # pixels of dilation applied to every matched mask
    blob_radius: int = 1

    def __post_init__(self):
        for name in ("p_false_negative", "p_false_positive", "attribute_blindness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.leak < 0:
            raise ValueError("leak must be >= 0")

    def to_dict(self) -> dict:
        return {
            "p_false_negative": self.p_false_negative,
            "p_false_positive": self.p_false_positive,
            "attribute_blindness": self.attribute_blindness,
            "seed": self.seed,
            "leak": self.leak,
            "blob_radius": self.blob_radius,
        }


def _draw(seed: int, step: int, stream: int, key: int = 0) -> float:
    # counter-based: the same (seed, step, object) always yields the same draw
    return float(np.random.default_rng([seed, step, stream, key]).random())


def matched_instances(obs, goal: ParsedDescription, scene: Scene, *, category_only: bool = False) -> list[str]:
    """Instances visible in ``obs`` whose pixels answer ``goal``.

    For hidden-object descriptions this is the container of a matching
    hidden instance.
    """
    out = []
    for iid in obs.visible_ids():
        obj = scene.obj(iid)
        if goal.hidden_relation is not None and not category_only:
            if any(
                o.hidden_in_or_under == iid and object_matches(o, goal, scene) for o in scene.objects
            ):
                out.append(iid)
        elif object_matches(obj, goal, scene, category_only=category_only):
            out.append(iid)
    return out


def oracle_localize(obs, goal: ParsedDescription, cfg: OracleLocalizerConfig, scene: Scene, step: int = 0) -> RelevanceMap:
    """Relevance 1.0 on pixels of matching instances, with configurable noise.

    Every random decision is keyed on (seed, step, object), so raising
    ``p_false_negative`` only ever drops more detections for the same seed.
    """
    blind = cfg.attribute_blindness > 0 and _draw(cfg.seed, step, 2) < cfg.attribute_blindness
    rel = np.zeros(obs.labels.shape)
    for iid in matched_instances(obs, goal, scene, category_only=blind):
        if cfg.p_false_negative > 0 and _draw(cfg.seed, step, 0, zlib.crc32(iid.encode())) < cfg.p_false_negative:
            continue
        mask = obs.pixels_of([iid])
        if cfg.leak:
            mask = ndimage.binary_dilation(mask, iterations=cfg.leak)
        rel[mask] = 1.0
    if cfg.p_false_positive > 0 and _draw(cfg.seed, step, 1) < cfg.p_false_positive:
        rng = np.random.default_rng([cfg.seed, step, 3])
        h, w = rel.shape
        r, c = int(rng.integers(h)), int(rng.integers(w))
        b = cfg.blob_radius
        rel[max(r - b, 0):r + b + 1, max(c - b, 0):c + b + 1] = 1.0
    return RelevanceMap(rel)


class OracleLocalizer:
    """Stateful wrapper counting frames so noise draws are keyed per step."""

    def __init__(self, scene: Scene, cfg: OracleLocalizerConfig | None = None):
        self.scene = scene
        self.cfg = cfg or OracleLocalizerConfig()
        self.step = 0
        self._vocab = {o.category for o in scene.objects}

    def localize(self, observation, goal_description) -> RelevanceMap:
        from .scene import parse_description

        goal = goal_description
        if isinstance(goal, str):
            goal = parse_description(goal, self._vocab)
        out = oracle_localize(observation, goal, self.cfg, self.scene, self.step)
        self.step += 1
        return out


def threshold_mask(rel: RelevanceMap, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return rel.values >= tau


def center_pixel_postprocess(mask: np.ndarray) -> np.ndarray:
    """Keep, per 8-connected component, the pixel nearest the component centroid."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), bool))
    for k in range(1, n + 1):
        px = np.argwhere(labels == k)
        cen = px.mean(axis=0)
        i = int(np.argmin(((px - cen) ** 2).sum(axis=1)))
        out[px[i, 0], px[i, 1]] = True
    return out


def project_relevance(
    m: TopDownMap,
    mask,
    depth: DepthImage,
    est: PoseEstimate,
    k: CameraIntrinsics,
    camera_height: float = 0.9,
    values: np.ndarray | None = None,
) -> TopDownMap:
    """Lift masked pixels through depth and max-pool their relevance into map cells.

    ``mask`` may be a boolean grid or a :class:`RelevanceMap`; pixel weights
    come from ``values`` (default 1.0 for a boolean mask).  A surface cell that
    is still unknown, such as one only seen above agent height, becomes
    occupied so that relevance never sits on unknown space.
    """
    if isinstance(mask, RelevanceMap):
        weights = mask.values
        sel = weights > 0
    else:
        sel = np.asarray(mask, dtype=bool)
        weights = np.ones(sel.shape) if values is None else np.clip(np.asarray(values, float), 0, 1)
    if sel.shape != depth.values.shape:
        raise ValueError("mask and depth dims differ")
    rays, d, valid, cam = _frame_points(depth, k, est.pose, camera_height)
    pick = sel.reshape(-1) & valid
    if not pick.any():
        return m
    pts = cam + (d[pick] + _EPS)[:, None] * rays[pick]
    w = weights.reshape(-1)[pick]
    res = m.resolution
    rr = np.floor(pts[:, 1] / res).astype(np.int64)
    cc = np.floor(pts[:, 0] / res).astype(np.int64)
    m.ensure(int(rr.min()), int(rr.max()), int(cc.min()), int(cc.max()))
    rr -= m.row0
    cc -= m.col0
    unknown = m.state[rr, cc] == UNKNOWN
    m.state[rr[unknown], cc[unknown]] = OCCUPIED
    np.maximum.at(m.relevance, (rr, cc), w)
    return m


def projected_cells(m: TopDownMap, mask, depth: DepthImage, est: PoseEstimate, k: CameraIntrinsics,
                    camera_height: float = 0.9) -> set:
    """Global map cells that the masked pixels land in."""
    sel = np.asarray(mask, dtype=bool).reshape(-1)
    rays, d, valid, cam = _frame_points(depth, k, est.pose, camera_height)
    pick = sel & valid
    if not pick.any():
        return set()
    pts = cam + (d[pick] + _EPS)[:, None] * rays[pick]
    rr = np.floor(pts[:, 1] / m.resolution).astype(np.int64)
    cc = np.floor(pts[:, 0] / m.resolution).astype(np.int64)
    return set(zip(rr.tolist(), cc.tolist()))


# --------------------------------------------------------------------------
# precomputed relevance files


def relmap_path(directory, episode_id: str, step: int) -> Path:
    return Path(directory) / episode_id / f"{step}.relmap"


def save_relmap(path, values: np.ndarray) -> None:
    """Binary layout: 8-byte magic, little-endian uint32 width and height,
    then width*height float16 values in row-major order."""
    v = np.asarray(values, dtype="<f2")
    h, w = v.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(RELMAP_MAGIC + struct.pack("<II", w, h) + v.tobytes())


def read_relmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != RELMAP_MAGIC:
        raise ValueError(f"{path}: not a relevance map file")
    w, h = struct.unpack("<II", raw[8:16])
    body = raw[16:]
    if len(body) != 2 * w * h:
        raise ValueError(f"{path}: header says {w}x{h} but payload has {len(body) // 2} values")
    return np.frombuffer(body, dtype="<f2").astype(float).reshape(h, w)


def load_precomputed(directory, episode_id: str, step: int, shape: tuple[int, int] | None = None) -> RelevanceMap:
    path = relmap_path(directory, episode_id, step)
    if not path.exists():
        raise FileNotFoundError(f"no precomputed relevance for episode {episode_id!r} step {step} ({path})")
    v = read_relmap(path)
    if shape is not None and v.shape != tuple(shape):
        raise ValueError(f"relevance map for episode {episode_id!r} step {step} is {v.shape}, expected {tuple(shape)}")
    if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
        log.warning("relevance for episode %s step %d outside [0, 1]; clamping", episode_id, step)
        v = np.nan_to_num(v, nan=0.0, posinf=1.0, neginf=0.0)
    return RelevanceMap(v)


class PrecomputedLocalizer:
    """Reads ``<dir>/<episode_id>/<step>.relmap`` for successive frames."""

    def __init__(self, directory, episode_id: str):
        self.directory = directory
        self.episode_id = episode_id
        self.step = 0

    def localize(self, observation, goal_description) -> RelevanceMap:
        out = load_precomputed(self.directory, self.episode_id, self.step, observation.labels.shape)
        self.step += 1
        return out


def frame_seed(seed: int, task_id: str) -> int:
    """Stable per-episode seed derived from a run seed and a task id."""
    return (seed * 1_000_003 + zlib.crc32(task_id.encode())) % (2**32)
