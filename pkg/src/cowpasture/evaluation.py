"""Success rate, SPL, failure taxonomy and grouped result tables."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass

from .scene import Scene, Task
from .simulator import AgentConfig, shortest_path_length

log = logging.getLogger(__name__)

FAILURE_MODES = ("none", "exploration", "localization", "planning")


@dataclass
class EpisodeResult:
    task_id: str
    success: bool
    path_length: float
    shortest_path: float
    steps: int = 0
    failure_mode: str = "none"
    split: str = ""
    category: str = ""
    scene_id: str = ""

    def __post_init__(self):
        if self.failure_mode not in FAILURE_MODES:
            raise ValueError(f"unknown failure mode {self.failure_mode!r}")

    @property
    def reachable(self) -> bool:
        return math.isfinite(self.shortest_path)

    @property
    def spl_term(self) -> float:
        if not self.success or not self.reachable:
            return 0.0
        denom = max(self.path_length, self.shortest_path)
        return 1.0 if denom == 0 else self.shortest_path / denom

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shortest_path"] = self.shortest_path if self.reachable else None
        d["spl_term"] = self.spl_term
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        d = {k: v for k, v in d.items() if k != "spl_term"}
        if d["shortest_path"] is None:
            d["shortest_path"] = math.inf
        return cls(**d)


def _scored(results) -> list[EpisodeResult]:
    results = list(results)
    if not results:
        raise ValueError("no results to score")
    kept = [r for r in results if r.reachable]
    dropped = len(results) - len(kept)
    if dropped:
        log.warning("excluding %d episode(s) with unreachable goals", dropped)
    if not kept:
        raise ValueError("every episode has an unreachable goal")
    return kept


def success_rate(results) -> float:
    kept = _scored(results)
    return sum(1 for r in kept if r.success) / len(kept)


def spl(results) -> float:
    kept = _scored(results)
    return sum(r.spl_term for r in kept) / len(kept)


def classify_failure(traj, scene: Scene | None = None, task: Task | None = None) -> str:
    """Failure label: was the goal never seen, never localized, or missed anyway."""
    if traj.success:
        return "none"
    if not any(r.target_in_view for r in traj.records):
        return "exploration"
    if not any(r.goal_detected for r in traj.records):
        return "localization"
    return "planning"


_path_warnings = 0


def path_check_violations() -> int:
    """How many successful episodes walked less than the oracle shortest path so far."""
    return _path_warnings


def evaluate_episode(scene: Scene, task: Task, traj, agent: AgentConfig | None = None) -> EpisodeResult:
    global _path_warnings
    agent = agent or AgentConfig()
    shortest = shortest_path_length(scene, task.start_pose, task, agent)
    length = traj.path_length()
    if traj.success and math.isfinite(shortest) and length + 1e-9 < shortest:
        _path_warnings += 1
        log.warning("%s: executed path %.4f m shorter than grid shortest path %.4f m",
                    task.task_id, length, shortest)
    return EpisodeResult(
        task.task_id, traj.success, length, shortest, traj.steps, classify_failure(traj, scene, task),
        task.split, task.category, task.scene_id.split("-")[0],
    )


@dataclass(frozen=True)
class Row:
    group: str
    n: int
    sr: float
    spl: float


def aggregate(results, group_by: str = "split") -> list[Row]:
    if group_by not in ("split", "category", "scene", "all"):
        raise ValueError(f"cannot group by {group_by!r}")
    groups: dict[str, list[EpisodeResult]] = {}
    for r in results:
        key = "all" if group_by == "all" else getattr(r, "scene_id" if group_by == "scene" else group_by)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups):
        kept = [r for r in groups[key] if r.reachable]
        if not kept:
            continue
        rows.append(Row(key, len(kept), success_rate(kept), spl(kept)))
    return rows


def rows_to_csv(rows, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "n", "SR", "SPL"])
    for r in rows:
        w.writerow([r.group, r.n, f"{r.sr:.6f}", f"{r.spl:.6f}"])
    return buf.getvalue()


def summary_document(results, group_by: str = "split", config_hash: str = "") -> dict:
    rows = aggregate(results, group_by)
    return {
        "format": "cowpasture.summary/1",
        "config_hash": config_hash,
        "group_by": group_by,
        "overall": {"n": sum(1 for r in results if r.reachable), "SR": success_rate(results), "SPL": spl(results)},
        "excluded_unreachable": sum(1 for r in results if not r.reachable),
        "failure_modes": {m: sum(1 for r in results if r.failure_mode == m) for m in FAILURE_MODES},
        "rows": [{"group": r.group, "n": r.n, "SR": r.sr, "SPL": r.spl} for r in rows],
    }


def dumps_results(results) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results)


def loads_results(text: str) -> list[EpisodeResult]:
    return [EpisodeResult.from_dict(json.loads(s)) for s in text.splitlines() if s.strip() and not s.startswith("#")]
