"""Lenient per-frame detection scoring, macro F1 and threshold grid search."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_GRID = tuple(0.125 * k for k in range(1, 8)) + (0.95,)


@dataclass
class LabeledFrame:
    """Ground truth for one image: masks of present categories plus absent ones."""

    gt: dict[str, np.ndarray]
    absent: list[str] = field(default_factory=list)
    observation: object = None
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.gt = {k: np.asarray(v, dtype=bool) for k, v in self.gt.items()}
        shapes = {v.shape for v in self.gt.values()}
        if self.shape is None:
            if len(shapes) > 1:
                raise ValueError("ground-truth masks differ in shape")
            self.shape = shapes.pop() if shapes else None
        elif any(s != tuple(self.shape) for s in shapes):
            raise ValueError("ground-truth mask outside frame dims")
        overlap = set(self.gt) & set(self.absent)
        if overlap:
            raise ValueError(f"categories both present and absent: {sorted(overlap)}")

    @property
    def present(self) -> list[str]:
        return sorted(self.gt)

    @property
    def categories(self) -> list[str]:
        return sorted(set(self.gt) | set(self.absent))


@dataclass
class DetectionCounts:
    tp: dict[str, int] = field(default_factory=dict)
    fp: dict[str, int] = field(default_factory=dict)
    fn: dict[str, int] = field(default_factory=dict)

    def add(self, cat: str, kind: str, n: int = 1) -> None:
        d = getattr(self, kind)
        d[cat] = d.get(cat, 0) + n
        for other in ("tp", "fp", "fn"):
            getattr(self, other).setdefault(cat, 0)

    def merge(self, other: "DetectionCounts") -> "DetectionCounts":
        out = DetectionCounts(dict(self.tp), dict(self.fp), dict(self.fn))
        for cat in other.categories:
            for kind in ("tp", "fp", "fn"):
                out.add(cat, kind, getattr(other, kind).get(cat, 0))
        return out

    @property
    def categories(self) -> list[str]:
        return sorted(set(self.tp) | set(self.fp) | set(self.fn))


def score_frame(pred: dict[str, np.ndarray], frame: LabeledFrame) -> DetectionCounts:
    """TP when more than half the predicted pixels fall on the category's
    ground truth; FP for weaker overlap or any prediction of an absent
    category; FN for an empty prediction of a present category."""
    out = DetectionCounts()
    for cat, gt in frame.gt.items():
        p = np.asarray(pred.get(cat, np.zeros_like(gt)), dtype=bool)
        n_pred = int(p.sum())
        if n_pred == 0:
            out.add(cat, "fn")
            continue
        score = int((p & gt).sum()) / n_pred
        out.add(cat, "tp" if score > 0.5 else "fp")
    for cat in frame.absent:
        p = pred.get(cat)
        if p is not None and np.asarray(p, dtype=bool).any():
            out.add(cat, "fp")
    return out


def f1(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fp + fn)
    return tp / denom if denom > 0 else 0.0


def macro_f1(counts: DetectionCounts) -> float:
    cats = counts.categories
    if not cats:
        raise ValueError("no categories to average")
    return float(np.mean([f1(counts.tp.get(c, 0), counts.fp.get(c, 0), counts.fn.get(c, 0)) for c in cats]))


def evaluate_threshold(frames, localizer, tau: float) -> DetectionCounts:
    """``localizer(frame, category)`` returns a per-pixel score grid."""
    total = DetectionCounts()
    for fr in frames:
        pred = {cat: np.asarray(localizer(fr, cat)) >= tau for cat in fr.categories}
        total = total.merge(score_frame(pred, fr))
    return total


def grid_search_threshold(frames, localizer, grid=DEFAULT_GRID) -> tuple[float, float]:
    """Best macro F1 over ``grid``; the lowest tau wins ties."""
    grid = sorted(grid)
    if not grid:
        raise ValueError("empty threshold grid")
    best_tau, best_f1 = grid[0], -1.0
    for tau in grid:
        counts = evaluate_threshold(frames, localizer, tau)
        score = macro_f1(counts) if counts.categories else 0.0
        if score > best_f1:
            best_tau, best_f1 = tau, score
    return best_tau, best_f1


# --------------------------------------------------------------------------
# frame sets


def frames_from_scenes(scenes, n_frames: int, seed: int, agent=None) -> list[LabeledFrame]:
    """Render random views of (training) scenes and label them by category."""
    from .geometry import Pose
    from .scene import traversable_cells
    from .simulator import AgentConfig, render

    agent = agent or AgentConfig()
    rng = np.random.default_rng(seed)
    frames = []
    while len(frames) < n_frames:
        scene = scenes[int(rng.integers(len(scenes)))]
        cells = np.argwhere(traversable_cells(scene.heightmap, agent.traversable_height))
        r, c = cells[int(rng.integers(len(cells)))]
        pose = Pose(*scene.cell_center(int(r), int(c)), float(rng.uniform(-np.pi, np.pi)))
        obs = render(scene, pose, agent)
        visible = obs.visible_ids()
        present = {}
        for iid in visible:
            o = scene.obj(iid)
            if o.kind == "furniture":
                continue
            present.setdefault(o.category, np.zeros(obs.labels.shape, bool))
            present[o.category] |= obs.pixels_of([iid])
        if not present:
            continue
        absent = sorted({o.category for o in scene.objects if o.kind != "furniture"} - set(present))
        frames.append(LabeledFrame(present, absent, obs.for_agent(), obs.labels.shape))
    return frames


class NoisyScoreLocalizer:
    """Synthetic scorer with a planted gap.

    Ground-truth pixels score in [pos_low, 1); a sparse sprinkle of other
    pixels scores below ``neg_high``.
    """

    def __init__(self, seed: int = 0, pos_low: float = 0.65, neg_high: float = 0.6):
        self.seed = seed
        self.pos_low = pos_low
        self.neg_high = neg_high

    def __call__(self, frame: LabeledFrame, category: str) -> np.ndarray:
        sig = zlib.crc32(b"".join(np.packbits(frame.gt[c]).tobytes() for c in frame.present))
        key = [self.seed, sig, zlib.crc32(category.encode())]
        rng = np.random.default_rng(key)
        shape = frame.shape
        scores = rng.uniform(0.0, self.neg_high, size=shape) * (rng.random(shape) < 0.02)
        gt = frame.gt.get(category)
        if gt is not None:
            scores = np.where(gt, rng.uniform(self.pos_low, 1.0, size=shape), scores)
        return scores


def save_bundle(frames, directory) -> None:
    """Manifest plus one compressed mask archive per frame."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, fr in enumerate(frames):
        name = f"frame_{i:04d}.npz"
        np.savez_compressed(d / name, **{f"gt::{k}": v for k, v in fr.gt.items()})
        manifest.append({"file": name, "present": fr.present, "absent": list(fr.absent), "shape": list(fr.shape)})
    (d / "manifest.json").write_text(json.dumps({"format": "cowpasture.frames/1", "frames": manifest},
                                                sort_keys=True, indent=1) + "\n")


def load_bundle(directory) -> list[LabeledFrame]:
    d = Path(directory)
    doc = json.loads((d / "manifest.json").read_text())
    frames = []
    for item in doc["frames"]:
        with np.load(d / item["file"]) as z:
            gt = {k.split("::", 1)[1]: z[k] for k in z.files}
        frames.append(LabeledFrame(gt, item["absent"], None, tuple(item["shape"])))
    return frames
