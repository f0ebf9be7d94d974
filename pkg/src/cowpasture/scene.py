"""Scenes, object attributes and relations, description grammar, and
procedural generation of Pasture-style task suites.

A scene is a 2.5-D world: a grid of wall heights plus a list of box-shaped
objects standing on the floor or stacked on furniture.  Small target objects
always sit on top of furniture so each one carries an "on top of" relation;
hidden objects have no footprint and live inside or under a container.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Pose

SCENE_FORMAT = "cowpasture.scene/1"
SUITE_FORMAT = "cowpasture.suite/1"

SPLITS = (
    "uncommon",
    "appearance",
    "spatial",
    "appearance_distract",
    "spatial_distract",
    "hidden",
    "hidden_distract",
)
ALL_SPLITS = SPLITS + ("plain",)

# nominal bounding box (w, d, h) in metres; h doubles as rendered box height
COMMON_CATEGORIES = {
    "alarm clock": (0.15, 0.08, 0.12),
    "apple": (0.08, 0.08, 0.08),
    "baseball bat": (0.9, 0.07, 0.07),
    "basketball": (0.24, 0.24, 0.24),
    "bowl": (0.18, 0.18, 0.08),
    "garbage can": (0.3, 0.3, 0.45),
    "house plant": (0.3, 0.3, 0.5),
    "laptop": (0.35, 0.25, 0.03),
    "mug": (0.1, 0.08, 0.1),
    "spray bottle": (0.08, 0.08, 0.25),
    "television": (0.9, 0.1, 0.55),
    "vase": (0.15, 0.15, 0.3),
}

UNCOMMON_CATEGORIES = {
    "tie-dye surfboard": (0.5, 0.1, 1.6),
    "whiteboard saying CVPR": (0.9, 0.05, 0.6),
    "llama wicker basket": (0.3, 0.25, 0.3),
    "green plastic crate": (0.4, 0.3, 0.25),
    "rice cooker": (0.3, 0.3, 0.25),
    "mate gourd": (0.08, 0.08, 0.15),
    "red and blue tricycle": (0.6, 0.4, 0.5),
    "white electric guitar": (0.35, 0.1, 1.0),
    "espresso machine": (0.3, 0.25, 0.35),
    "wooden toy airplane": (0.3, 0.3, 0.1),
    "gingerbread house": (0.2, 0.2, 0.2),
    "graphics card": (0.3, 0.12, 0.05),
}

# name -> (height, footprint long side in cells, hidden relation)
FURNITURE = {
    "bed": (0.55, 4, "under"),
    "sofa": (0.6, 4, "under"),
    "dresser": (0.8, 3, "in"),
    "dining table": (0.75, 3, "under"),
    "desk": (0.75, 3, "under"),
    "shelving unit": (0.85, 3, "in"),
    "tv stand": (0.5, 3, "in"),
    "coffee table": (0.4, 2, "under"),
    "cabinet": (0.85, 2, "in"),
    "armchair": (0.6, 2, "under"),
    "side table": (0.55, 2, "under"),
    "bookcase": (0.85, 3, "in"),
}

COLORS = (
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black",
    "white", "gray", "silver", "gold", "beige", "teal", "navy", "maroon", "tan",
    "cream", "turquoise", "lavender", "olive",
)
MATERIALS = ("metallic", "plastic", "wooden", "glass", "ceramic")

KNOWN_CATEGORIES = tuple(COMMON_CATEGORIES) + tuple(UNCOMMON_CATEGORIES) + tuple(FURNITURE)


@dataclass
class ObjectSpec:
    instance_id: str
    category: str
    size_class: str = "large"
    colors: list[str] = field(default_factory=list)
    materials: list[str] = field(default_factory=list)
    position: tuple[float, float] = (0.0, 0.0)
    height: float = 0.0
    footprint: list[tuple[int, int]] = field(default_factory=list)
    base_height: float = 0.0
    relation_on_top_of: str | None = None
    relations_near: list[str] = field(default_factory=list)
    hidden_in_or_under: str | None = None
    hidden_relation: str | None = None
    is_distractor: bool = False
    kind: str = "target"  # target | uncommon | furniture

    @property
    def is_hidden(self) -> bool:
        return self.hidden_in_or_under is not None

    @property
    def top(self) -> float:
        return self.base_height + self.height

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "category": self.category,
            "size_class": self.size_class,
            "colors": list(self.colors),
            "materials": list(self.materials),
            "position": [float(self.position[0]), float(self.position[1])],
            "height": float(self.height),
            "footprint": [[int(r), int(c)] for r, c in self.footprint],
            "base_height": float(self.base_height),
            "relation_on_top_of": self.relation_on_top_of,
            "relations_near": list(self.relations_near),
            "hidden_in_or_under": self.hidden_in_or_under,
            "hidden_relation": self.hidden_relation,
            "is_distractor": bool(self.is_distractor),
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(
            instance_id=d["instance_id"],
            category=d["category"],
            size_class=d["size_class"],
            colors=list(d["colors"]),
            materials=list(d["materials"]),
            position=(float(d["position"][0]), float(d["position"][1])),
            height=float(d["height"]),
            footprint=[(int(r), int(c)) for r, c in d["footprint"]],
            base_height=float(d["base_height"]),
            relation_on_top_of=d["relation_on_top_of"],
            relations_near=list(d["relations_near"]),
            hidden_in_or_under=d["hidden_in_or_under"],
            hidden_relation=d["hidden_relation"],
            is_distractor=bool(d["is_distractor"]),
            kind=d["kind"],
        )


def size_class_of(dims, small_threshold: float = 0.4) -> str:
    return "small" if math.sqrt(sum(v * v for v in dims)) < small_threshold else "large"


class Scene:
    """Wall grid plus objects.  ``heightmap`` and render layers are derived."""

    def __init__(self, id: str, cell_size: float, walls, objects, floor_height: float = 0.0):
        self.id = id
        self.cell_size = float(cell_size)
        self.walls = np.asarray(walls, dtype=float)
        self.objects = list(objects)
        self.floor_height = float(floor_height)
        self._layers = None
        self._validate()

    def _validate(self):
        if np.any(self.walls < 0):
            raise ValueError("heights must be >= 0")
        rows, cols = self.walls.shape
        seen = set()
        for o in self.objects:
            if o.instance_id in seen:
                raise ValueError(f"duplicate instance id {o.instance_id}")
            seen.add(o.instance_id)
            if o.is_hidden and o.footprint:
                raise ValueError(f"hidden object {o.instance_id} must not have a footprint")
            for r, c in o.footprint:
                if not (0 <= r < rows and 0 <= c < cols):
                    raise ValueError(f"{o.instance_id} footprint outside bounds")
            if o.instance_id in o.relations_near:
                raise ValueError(f"{o.instance_id} is near itself")

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    @property
    def bounds(self) -> tuple[int, int]:
        return self.walls.shape

    def obj(self, instance_id: str) -> ObjectSpec:
        for o in self.objects:
            if o.instance_id == instance_id:
                return o
        raise KeyError(instance_id)

    def index_of(self, instance_id: str) -> int:
        for i, o in enumerate(self.objects):
            if o.instance_id == instance_id:
                return i
        raise KeyError(instance_id)

    def render_layers(self):
        """(total height, split height, lower id, upper id) per cell.

        A cell holds at most two stacked layers: a column (wall or furniture)
        and one object resting on it.  Ids index ``objects``; -1 means wall.
        """
        if self._layers is None:
            top = self.walls.copy()
            split = self.walls.copy()
            id_low = np.full(self.walls.shape, -1, dtype=np.int64)
            id_top = np.full(self.walls.shape, -1, dtype=np.int64)
            order = sorted(range(len(self.objects)), key=lambda i: self.objects[i].base_height)
            for i in order:
                o = self.objects[i]
                for r, c in o.footprint:
                    if o.base_height <= 0.0:
                        top[r, c] = max(top[r, c], o.top)
                        split[r, c] = top[r, c]
                        id_low[r, c] = i
                        id_top[r, c] = i
                    else:
                        split[r, c] = top[r, c]
                        top[r, c] = max(top[r, c], o.top)
                        id_top[r, c] = i
            self._layers = (top, split, id_low, id_top)
        return self._layers

    @property
    def heightmap(self) -> np.ndarray:
        return self.render_layers()[0]

    def obstacle_mask(self, traversable_height: float = 0.2) -> np.ndarray:
        return self.heightmap > traversable_height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size

    def to_dict(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "id": self.id,
            "cell_size": self.cell_size,
            "floor_height": self.floor_height,
            "walls": self.walls.tolist(),
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        if d.get("format") != SCENE_FORMAT:
            raise ValueError(f"unsupported scene format {d.get('format')!r}")
        return cls(
            d["id"],
            d["cell_size"],
            np.array(d["walls"], dtype=float),
            [ObjectSpec.from_dict(o) for o in d["objects"]],
            d["floor_height"],
        )

    def with_objects(self, objects, id: str | None = None) -> "Scene":
        return Scene(id or self.id, self.cell_size, self.walls, objects, self.floor_height)


@dataclass
class Task:
    task_id: str
    scene_id: str
    goal_description: str
    goal_instance_ids: list[str]
    start_pose: Pose
    split: str
    category: str = ""

    def __post_init__(self):
        if not self.goal_instance_ids:
            raise ValueError("goal_instance_ids must be non-empty")
        if self.split not in ALL_SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "scene_id": self.scene_id,
            "goal_description": self.goal_description,
            "goal_instance_ids": list(self.goal_instance_ids),
            "start_pose": self.start_pose.to_dict(),
            "split": self.split,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        return cls(
            d["task_id"],
            d["scene_id"],
            d["goal_description"],
            list(d["goal_instance_ids"]),
            Pose.from_dict(d["start_pose"]),
            d["split"],
            d.get("category", ""),
        )


# --------------------------------------------------------------------------
# descriptions


def _article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def render_description(obj: ObjectSpec, mode: str, scene: Scene | None = None) -> str:
    """Natural-language goal for ``obj`` under a split's grammar."""
    if mode in ("uncommon", "plain"):
        return obj.category
    if mode in ("appearance", "appearance_distract"):
        tokens = (["small"] if obj.size_class == "small" else []) + list(obj.colors) + list(obj.materials)
        if not tokens:
            return obj.category
        return ", ".join(tokens) + " " + obj.category
    if mode in ("spatial", "spatial_distract"):
        if obj.relation_on_top_of is None and not obj.relations_near:
            raise ValueError(f"{obj.instance_id} has no spatial relations")
        if scene is None:
            raise ValueError("spatial descriptions need the scene to name related objects")
        text = obj.category
        if obj.relation_on_top_of is not None:
            sup = scene.obj(obj.relation_on_top_of).category
            text += f" on {_article(sup)} {sup}"
        if obj.relations_near:
            names = sorted(scene.obj(i).category for i in obj.relations_near)
            text += " near " + ", ".join(f"{_article(n)} {n}" for n in names)
        return text
    if mode in ("hidden", "hidden_distract"):
        if obj.hidden_in_or_under is None:
            raise ValueError(f"{obj.instance_id} is not hidden")
        if scene is None:
            raise ValueError("hidden descriptions need the scene to name the container")
        container = scene.obj(obj.hidden_in_or_under).category
        return f"{obj.category} {obj.hidden_relation} the {container}"
    raise ValueError(f"unknown description mode {mode!r}")


@dataclass(frozen=True)
class ParsedDescription:
    category: str
    small: bool = False
    colors: tuple[str, ...] = ()
    materials: tuple[str, ...] = ()
    on_top_of: str | None = None
    near: tuple[str, ...] = ()
    hidden_relation: str | None = None
    container: str | None = None

    @property
    def has_appearance(self) -> bool:
        return self.small or bool(self.colors) or bool(self.materials)

    @property
    def is_spatial(self) -> bool:
        return self.on_top_of is not None or bool(self.near)


def _strip_article(s: str) -> str:
    for a in ("a ", "an ", "the "):
        if s.startswith(a):
            return s[len(a):]
    return s


_HIDDEN_RE = re.compile(r"^(?P<obj>.+?) (?P<rel>in|under) the (?P<cont>.+)$")
_SPATIAL_RE = re.compile(r"^(?P<obj>.+?)(?: on (?:a|an) (?P<sup>.+?))?(?: near (?P<near>.+))?$")


def parse_description(text: str, categories=None) -> ParsedDescription:
    """Invert :func:`render_description` given a category vocabulary."""
    vocab = set(categories) if categories is not None else set(KNOWN_CATEGORIES)
    text = text.strip()
    if text in vocab:
        return ParsedDescription(category=text)
    m = _HIDDEN_RE.match(text)
    if m and m["obj"] in vocab and m["cont"] in vocab:
        return ParsedDescription(category=m["obj"], hidden_relation=m["rel"], container=m["cont"])
    m = _SPATIAL_RE.match(text)
    if m and m["obj"] in vocab and (m["sup"] or m["near"]):
        sup = m["sup"]
        near = tuple(_strip_article(n) for n in m["near"].split(", ")) if m["near"] else ()
        if (sup is None or sup in vocab) and all(n in vocab for n in near):
            return ParsedDescription(category=m["obj"], on_top_of=sup, near=near)
    segments = text.split(", ")
    last = segments[-1]
    lead = segments[:-1]
    category = None
    extra = None
    for cat in sorted(vocab, key=len, reverse=True):
        if last == cat:
            category = cat
            break
        if last.endswith(" " + cat):
            prefix = last[: -len(cat) - 1]
            if " " not in prefix:
                category, extra = cat, prefix
                break
    if category is None:
        raise ValueError(f"cannot parse description {text!r}")
    attrs = lead + ([extra] if extra else [])
    small = False
    colors, materials = [], []
    for a in attrs:
        if a == "small":
            small = True
        elif a in COLORS:
            colors.append(a)
        elif a in MATERIALS:
            materials.append(a)
        else:
            raise ValueError(f"unknown attribute {a!r} in {text!r}")
    return ParsedDescription(category, small, tuple(colors), tuple(materials))


def object_matches(obj: ObjectSpec, goal: ParsedDescription, scene: Scene, *, category_only=False) -> bool:
    """Whether ``obj`` satisfies ``goal`` (exact attribute/relation grounding)."""
    if obj.category != goal.category or obj.kind == "furniture":
        return False
    if category_only:
        return not obj.is_hidden
    if goal.hidden_relation is not None:
        if not obj.is_hidden or obj.hidden_relation != goal.hidden_relation:
            return False
        return scene.obj(obj.hidden_in_or_under).category == goal.container
    if obj.is_hidden:
        return False
    if goal.has_appearance:
        if (obj.size_class == "small") != goal.small:
            return False
        if sorted(obj.colors) != sorted(goal.colors) or sorted(obj.materials) != sorted(goal.materials):
            return False
    if goal.is_spatial:
        sup = scene.obj(obj.relation_on_top_of).category if obj.relation_on_top_of else None
        if sup != goal.on_top_of:
            return False
        near = sorted(scene.obj(i).category for i in obj.relations_near)
        if near != sorted(goal.near):
            return False
    return True


def matching_instances(scene: Scene, goal: ParsedDescription, *, category_only=False) -> list[str]:
    return [o.instance_id for o in scene.objects if object_matches(o, goal, scene, category_only=category_only)]


def visible_proxies(scene: Scene, instance_ids) -> list[str]:
    """Instances whose pixels stand in for the given goals (containers for hidden goals)."""
    out = []
    for i in instance_ids:
        o = scene.obj(i)
        out.append(o.hidden_in_or_under if o.is_hidden else o.instance_id)
    return sorted(set(out))


def compute_relations(scene: Scene, near_threshold: float = 1.0) -> Scene:
    """Fill symmetric ``relations_near`` by centre distance (closed inequality).

    Only visible non-furniture objects take part; an object's support is
    excluded.  ``relation_on_top_of`` is placement metadata and kept as is.
    """
    objs = [replace(o, relations_near=[]) for o in scene.objects]
    cand = [o for o in objs if o.kind != "furniture" and not o.is_hidden]
    for i, a in enumerate(cand):
        for b in cand[i + 1:]:
            d = math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
            if d <= near_threshold:
                a.relations_near.append(b.instance_id)
                b.relations_near.append(a.instance_id)
    for o in cand:
        o.relations_near.sort()
    return scene.with_objects(objs)


# --------------------------------------------------------------------------
# scene generation


@dataclass
class SceneConfig:
    min_size: int = 24
    max_size: int = 32
    cell_size: float = 0.25
    wall_height: float = 2.5
    p_internal_wall: float = 0.5
    door_width: int = 4
    min_furniture: int = 6
    max_furniture: int = 8
    n_targets: int = 12
    small_threshold: float = 0.4
    near_threshold: float = 1.0
    traversable_height: float = 0.2


def traversable_cells(heights: np.ndarray, traversable_height: float = 0.2) -> np.ndarray:
    """Cells whose 3x3 neighbourhood is obstacle free (room for the agent body)."""
    blocked = heights > traversable_height
    return ~ndimage.binary_dilation(blocked, structure=np.ones((3, 3), bool), border_value=1)


def _connected(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask)
    return n == 1


def _sample_attributes(rng, dims, small_threshold):
    size = size_class_of(dims, small_threshold)
    n_col = int(rng.choice([0, 1, 2], p=[0.2, 0.5, 0.3]))
    colors = sorted(rng.choice(COLORS, size=n_col, replace=False).tolist()) if n_col else []
    materials = [str(rng.choice(MATERIALS))] if rng.random() < 0.6 else []
    return size, colors, materials


def _clearance_ok(walls, outer, furn, r0, r1, c0, c1) -> bool:
    rows, cols = walls.shape
    if r0 < 1 or c0 < 1 or r1 > rows - 2 or c1 > cols - 2:
        return False
    for r in range(max(0, r0 - 2), min(rows, r1 + 3)):
        for c in range(max(0, c0 - 2), min(cols, c1 + 3)):
            if r0 <= r <= r1 and c0 <= c <= c1:
                if walls[r, c] > 0 or furn[r, c]:
                    return False
                continue
            if furn[r, c]:
                return False
            if walls[r, c] > 0:
                if not outer[r, c]:
                    return False
                if r not in (r0 - 1, r1 + 1) and c not in (c0 - 1, c1 + 1):
                    return False
    return True


def generate_scene(scene_id: str, seed, config: SceneConfig | None = None) -> Scene:
    """Build one furnished room with ``config.n_targets`` common targets.

    Furniture is either flush with an outer wall or keeps three cells of
    clearance, so no narrow unobservable pockets arise, and the agent-sized
    traversable region is checked to stay in one piece after every placement.
    """
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    for _attempt in range(100):
        rows = int(rng.integers(cfg.min_size, cfg.max_size + 1))
        cols = int(rng.integers(cfg.min_size, cfg.max_size + 1))
        walls = np.zeros((rows, cols))
        walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = cfg.wall_height
        outer = walls > 0
        if rng.random() < cfg.p_internal_wall:
            if rng.random() < 0.5 and cols >= 20:
                c = int(rng.integers(9, cols - 9))
                walls[1:-1, c] = cfg.wall_height
                d0 = int(rng.integers(2, rows - 2 - cfg.door_width))
                walls[d0:d0 + cfg.door_width, c] = 0.0
            elif rows >= 20:
                r = int(rng.integers(9, rows - 9))
                walls[r, 1:-1] = cfg.wall_height
                d0 = int(rng.integers(2, cols - 2 - cfg.door_width))
                walls[r, d0:d0 + cfg.door_width] = 0.0
        furn = np.zeros((rows, cols), dtype=bool)
        heights = walls.copy()
        objects: list[ObjectSpec] = []
        n_furn = int(rng.integers(cfg.min_furniture, cfg.max_furniture + 1))
        cats = rng.choice(list(FURNITURE), size=n_furn, replace=False).tolist()
        for cat in cats:
            h, long_side, _rel = FURNITURE[cat]
            for _try in range(300):
                dr, dc = (2, long_side) if rng.random() < 0.5 else (long_side, 2)
                r0 = int(rng.integers(1, rows - dr))
                c0 = int(rng.integers(1, cols - dc))
                # bias toward walls: snap to the nearest outer wall half of the time
                if rng.random() < 0.6:
                    side = int(rng.integers(4))
                    if side == 0:
                        r0 = 1
                    elif side == 1:
                        r0 = rows - 1 - dr
                    elif side == 2:
                        c0 = 1
                    else:
                        c0 = cols - 1 - dc
                r1, c1 = r0 + dr - 1, c0 + dc - 1
                if not _clearance_ok(walls, outer, furn, r0, r1, c0, c1):
                    continue
                trial = heights.copy()
                trial[r0:r1 + 1, c0:c1 + 1] = h
                if not _connected(traversable_cells(trial, cfg.traversable_height)):
                    continue
                heights = trial
                furn[r0:r1 + 1, c0:c1 + 1] = True
                fp = [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]
                objects.append(
                    ObjectSpec(
                        instance_id=f"{cat.replace(' ', '_')}_0",
                        category=cat,
                        size_class="large",
                        colors=[str(rng.choice(COLORS))],
                        position=((c0 + c1 + 1) / 2 * cfg.cell_size, (r0 + r1 + 1) / 2 * cfg.cell_size),
                        height=h,
                        footprint=fp,
                        kind="furniture",
                    )
                )
                break
        if len(objects) < cfg.min_furniture:
            continue
        top_cells = [(o.instance_id, rc) for o in objects for rc in o.footprint]
        if len(top_cells) < 3 * cfg.n_targets:
            continue
        order = rng.permutation(len(top_cells))
        targets = list(COMMON_CATEGORIES)[: cfg.n_targets]
        for k, cat in enumerate(targets):
            fid, (r, c) = top_cells[int(order[k])]
            sup = next(o for o in objects if o.instance_id == fid)
            dims = COMMON_CATEGORIES[cat]
            size, colors, materials = _sample_attributes(rng, dims, cfg.small_threshold)
            if size != "small" and not colors and not materials:
                colors = [str(rng.choice(COLORS))]
            objects.append(
                ObjectSpec(
                    instance_id=f"{cat.replace(' ', '_')}_0",
                    category=cat,
                    size_class=size,
                    colors=colors,
                    materials=materials,
                    position=((c + 0.5) * cfg.cell_size, (r + 0.5) * cfg.cell_size),
                    height=max(dims[2], 0.06),
                    footprint=[(r, c)],
                    base_height=sup.height,
                    relation_on_top_of=sup.instance_id,
                    kind="target",
                )
            )
        scene = Scene(scene_id, cfg.cell_size, walls, objects)
        return compute_relations(scene, cfg.near_threshold)
    raise RuntimeError(f"could not generate scene {scene_id} after 100 attempts")


def generate_scenes(n: int, seed: int, config: SceneConfig | None = None, prefix: str = "scene") -> list[Scene]:
    return [generate_scene(f"{prefix}{i:02d}", [seed, i], config) for i in range(n)]


# --------------------------------------------------------------------------
# suite generation


@dataclass
class SuiteConfig:
    objects_per_scene: int = 12
    starts_per_scene: int = 2
    splits: tuple[str, ...] = SPLITS
    near_threshold: float = 1.0
    small_threshold: float = 0.4
    traversable_height: float = 0.2
    min_start_goal_distance: float = 0.0

    def to_dict(self) -> dict:
        return {
            "min_start_goal_distance": self.min_start_goal_distance,
            "objects_per_scene": self.objects_per_scene,
            "starts_per_scene": self.starts_per_scene,
            "splits": list(self.splits),
            "near_threshold": self.near_threshold,
            "small_threshold": self.small_threshold,
            "traversable_height": self.traversable_height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        return cls(
            d["objects_per_scene"],
            d["starts_per_scene"],
            tuple(d["splits"]),
            d["near_threshold"],
            d["small_threshold"],
            d["traversable_height"],
            d.get("min_start_goal_distance", 0.0),
        )


@dataclass
class Suite:
    scenes: dict[str, Scene]
    tasks: list[Task]
    config: SuiteConfig = field(default_factory=SuiteConfig)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.tasks)

    def scene_for(self, task: Task) -> Scene:
        return self.scenes[task.scene_id]

    def to_dict(self) -> dict:
        return {
            "format": SUITE_FORMAT,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "scenes": [self.scenes[k].to_dict() for k in sorted(self.scenes)],
            "tasks": [t.to_dict() for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Suite":
        if d.get("format") != SUITE_FORMAT:
            raise ValueError(f"unsupported suite format {d.get('format')!r}")
        scenes = {s["id"]: Scene.from_dict(s) for s in d["scenes"]}
        tasks = [Task.from_dict(t) for t in d["tasks"]]
        for t in tasks:
            if t.scene_id not in scenes:
                raise ValueError(f"task {t.task_id} references unknown scene {t.scene_id}")
        return cls(scenes, tasks, SuiteConfig.from_dict(d["config"]), d["seed"])

    def dumps(self) -> str:
        return dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Suite":
        return cls.from_dict(json.loads(Path(path).read_text()))


def dumps(doc: dict) -> str:
    """Canonical JSON text used for every persisted document."""
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _free_top_cells(scene: Scene):
    used = {rc for o in scene.objects if o.kind != "furniture" for rc in o.footprint}
    out = []
    for o in scene.objects:
        if o.kind == "furniture":
            out.extend((o, rc) for rc in o.footprint if rc not in used)
    return out


def _place_on(sup: ObjectSpec, rc, cell_size, **kw) -> ObjectSpec:
    r, c = rc
    return ObjectSpec(
        position=((c + 0.5) * cell_size, (r + 0.5) * cell_size),
        footprint=[rc],
        base_height=sup.height,
        relation_on_top_of=sup.instance_id,
        **kw,
    )


def _uncommon_variant(base: Scene, rng, n: int, cfg: SuiteConfig) -> tuple[Scene, list[ObjectSpec]]:
    free = _free_top_cells(base)
    if len(free) < n:
        raise ValueError(f"scene {base.id}: not enough free furniture tops for {n} uncommon objects")
    order = rng.permutation(len(free))
    names = list(UNCOMMON_CATEGORIES)
    picks = [names[int(i)] for i in rng.permutation(len(names))[:n]] if n <= len(names) else [
        names[i % len(names)] for i in range(n)
    ]
    added = []
    for k, name in enumerate(picks):
        sup, rc = free[int(order[k])]
        dims = UNCOMMON_CATEGORIES[name]
        added.append(
            _place_on(
                sup, rc, base.cell_size,
                instance_id=f"{name.replace(' ', '_')}_{k}",
                category=name,
                size_class=size_class_of(dims, cfg.small_threshold),
                height=max(min(dims[2], 0.6), 0.06),
                kind="uncommon",
            )
        )
    scene = compute_relations(base.with_objects(base.objects + added, f"{base.id}-uncommon"), cfg.near_threshold)
    return scene, [scene.obj(o.instance_id) for o in added]


def _distract_variant(base: Scene, rng, targets: list[ObjectSpec], cfg: SuiteConfig) -> Scene:
    objects = list(base.objects)
    for t in targets:
        sup_cat = base.obj(t.relation_on_top_of).category
        placed = None
        for _try in range(200):
            cur = base.with_objects(objects)
            free = [
                (sup, rc) for sup, rc in _free_top_cells(cur)
                if sup.category != sup_cat
                and math.hypot((rc[1] + 0.5) * base.cell_size - t.position[0],
                               (rc[0] + 0.5) * base.cell_size - t.position[1]) > cfg.near_threshold
            ]
            if not free:
                break
            sup, rc = free[int(rng.integers(len(free)))]
            _, colors, materials = _sample_attributes(rng, COMMON_CATEGORIES.get(t.category, (0.3, 0.3, 0.3)),
                                                      cfg.small_threshold)
            if not colors and not materials:
                colors = [str(rng.choice(COLORS))]
            if (sorted(colors), sorted(materials)) == (sorted(t.colors), sorted(t.materials)):
                continue
            placed = _place_on(
                sup, rc, base.cell_size,
                instance_id=f"{t.instance_id}-distractor",
                category=t.category,
                size_class=t.size_class,
                colors=colors,
                materials=materials,
                height=t.height,
                is_distractor=True,
                kind=t.kind,
            )
            break
        if placed is None:
            raise ValueError(f"infeasible distractor placement in scene {base.id} for category {t.category!r}")
        objects.append(placed)
    return compute_relations(base.with_objects(objects, f"{base.id}-distract"), cfg.near_threshold)


def _hidden_variants(base: Scene, rng, targets: list[ObjectSpec], cfg: SuiteConfig) -> tuple[Scene, Scene]:
    furniture = [o for o in base.objects if o.kind == "furniture"]
    target_ids = {t.instance_id for t in targets}
    kept = [o for o in base.objects if o.instance_id not in target_ids]
    hidden, visible = [], []
    for t in targets:
        cont = furniture[int(rng.integers(len(furniture)))]
        hidden.append(
            replace(
                t,
                position=cont.position,
                footprint=[],
                base_height=0.0,
                relation_on_top_of=None,
                relations_near=[],
                hidden_in_or_under=cont.instance_id,
                hidden_relation=FURNITURE[cont.category][2],
            )
        )
        visible.append(replace(t, instance_id=f"{t.instance_id}-visible", is_distractor=True))
    h = compute_relations(base.with_objects(kept + hidden, f"{base.id}-hidden"), cfg.near_threshold)
    hd = compute_relations(base.with_objects(kept + hidden + visible, f"{base.id}-hiddendistract"),
                           cfg.near_threshold)
    return h, hd


def _sample_starts(scenes: list[Scene], rng, n: int, traversable_height: float,
                   avoid=(), min_distance: float = 0.0) -> list[Pose]:
    ok = None
    for s in scenes:
        t = traversable_cells(s.heightmap, traversable_height)
        ok = t if ok is None else ok & t
    cs = scenes[0].cell_size
    if min_distance > 0 and len(avoid):
        rr, cc = np.mgrid[0:ok.shape[0], 0:ok.shape[1]]
        xs, ys = (cc + 0.5) * cs, (rr + 0.5) * cs
        for x, y in avoid:
            ok &= np.hypot(xs - x, ys - y) >= min_distance
    cells = np.argwhere(ok)
    if len(cells) < n:
        raise ValueError(f"scene {scenes[0].id}: not enough free floor for {n} start poses")
    picks = rng.choice(len(cells), size=n, replace=False)
    starts = []
    for i in picks:
        r, c = cells[int(i)]
        yaw = float(rng.integers(4)) * math.pi / 2
        starts.append(Pose((c + 0.5) * cs, (r + 0.5) * cs, yaw))
    return starts


def _check_unique(scene: Scene, task: Task):
    vocab = {o.category for o in scene.objects}
    goal = parse_description(task.goal_description, vocab)
    found = matching_instances(scene, goal)
    if found != sorted(task.goal_instance_ids):
        raise ValueError(
            f"scene {scene.id}: description {task.goal_description!r} matches {found}, "
            f"expected {task.goal_instance_ids}"
        )


def generate_pasture_suite(scenes: list[Scene], config: SuiteConfig | None = None, seed: int = 0) -> Suite:
    """Expand base scenes into splits x scenes x objects x starts tasks.

    Each base scene yields up to four variants: uncommon objects added,
    same-category distractors added, targets hidden, and targets hidden with
    their visible instances reintroduced as distractors.
    """
    cfg = config or SuiteConfig()
    for sp in cfg.splits:
        if sp not in ALL_SPLITS:
            raise ValueError(f"unknown split {sp!r}")
    out_scenes: dict[str, Scene] = {}
    tasks: list[Task] = []
    n = cfg.objects_per_scene
    for si, base in enumerate(scenes):
        rng = np.random.default_rng([seed, si])
        eligible = sorted((o for o in base.objects if o.kind == "target" and not o.is_hidden),
                          key=lambda o: o.instance_id)
        if len(eligible) < n:
            raise ValueError(f"scene {base.id} has {len(eligible)} eligible objects, needs {n}")
        targets = [eligible[int(i)] for i in sorted(rng.choice(len(eligible), size=n, replace=False))]
        variants: dict[str, tuple[Scene, list[ObjectSpec]]] = {}
        need = set(cfg.splits)
        if need & {"appearance", "spatial", "plain"}:
            variants["base"] = (base, targets)
        if "uncommon" in need:
            variants["uncommon"] = _uncommon_variant(base, rng, n, cfg)
        if need & {"appearance_distract", "spatial_distract"}:
            d = _distract_variant(base, rng, targets, cfg)
            variants["distract"] = (d, [d.obj(t.instance_id) for t in targets])
        if need & {"hidden", "hidden_distract"}:
            h, hd = _hidden_variants(base, rng, targets, cfg)
            variants["hidden"] = (h, [h.obj(t.instance_id) for t in targets])
            variants["hidden_distract"] = (hd, [hd.obj(t.instance_id) for t in targets])
        avoid = []
        for vs, vt in variants.values():
            for o in vt:
                for pid in visible_proxies(vs, [o.instance_id]):
                    avoid.extend(vs.cell_center(r, c) for r, c in vs.obj(pid).footprint)
        starts = _sample_starts([v[0] for v in variants.values()], rng, cfg.starts_per_scene,
                                cfg.traversable_height, avoid, cfg.min_start_goal_distance)
        for sv, _ in variants.values():
            out_scenes[sv.id] = sv
        for split in cfg.splits:
            key = {
                "uncommon": "uncommon",
                "appearance": "base",
                "spatial": "base",
                "plain": "base",
                "appearance_distract": "distract",
                "spatial_distract": "distract",
                "hidden": "hidden",
                "hidden_distract": "hidden_distract",
            }[split]
            vscene, vtargets = variants[key]
            for k, obj in enumerate(vtargets):
                desc = render_description(obj, split, vscene)
                for j, start in enumerate(starts):
                    task = Task(
                        task_id=f"{base.id}/{split}/{k:02d}/{j}",
                        scene_id=vscene.id,
                        goal_description=desc,
                        goal_instance_ids=[obj.instance_id],
                        start_pose=start,
                        split=split,
                        category=obj.category,
                    )
                    if j == 0 and split != "plain":
                        _check_unique(vscene, task)
                    tasks.append(task)
    return Suite(out_scenes, tasks, cfg, seed)
