"""Command line entry points: gen, run, eval, tune, replay."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .controller import CowConfig, Trajectory, config_hash, replay_frames, run_episode
from .evaluation import (
    EpisodeResult,
    dumps_results,
    evaluate_episode,
    loads_results,
    rows_to_csv,
    aggregate,
    summary_document,
)
from .localization import OracleLocalizerConfig
from .scene import ALL_SPLITS, SPLITS, SceneConfig, Suite, SuiteConfig, dumps, generate_pasture_suite, generate_scenes
from .simulator import NOISE_PROFILES, agent_config_for_profile
from .tuning import DEFAULT_GRID, NoisyScoreLocalizer, frames_from_scenes, grid_search_threshold

log = logging.getLogger("cowpasture")


class UsageError(Exception):
    pass


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get("COWPASTURE_OUT", "cowpasture_out"))


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def cmd_gen(args) -> int:
    splits = tuple(args.splits.split(",")) if args.splits else SPLITS
    for s in splits:
        if s not in ALL_SPLITS:
            raise UsageError(f"unknown split {s!r}")
    if args.scenes < 1 or args.objects < 1 or args.starts < 1:
        raise UsageError("scene, object and start counts must be >= 1")
    if args.min_distance < 0:
        raise UsageError("--min-distance must be >= 0")
    scene_cfg = SceneConfig(min_size=args.min_size, max_size=args.max_size, n_targets=max(args.objects, 12))
    suite_cfg = SuiteConfig(objects_per_scene=args.objects, starts_per_scene=args.starts, splits=splits,
                            min_start_goal_distance=args.min_distance)
    params = {"scenes": args.scenes, "seed": args.seed, "scene_config": vars(scene_cfg), "suite": suite_cfg.to_dict()}
    out = Path(args.out)
    _refuse_overwrite(out, args.force)
    scenes = generate_scenes(args.scenes, args.seed, scene_cfg)
    suite = generate_pasture_suite(scenes, suite_cfg, args.seed)
    doc = suite.to_dict()
    doc["config_hash"] = config_hash(params)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps(doc))
    print(f"wrote {len(suite.tasks)} tasks over {len(suite.scenes)} scene variants to {out}")
    return 0


def _load_suite(path) -> Suite:
    try:
        return Suite.load(path)
    except FileNotFoundError as e:
        raise UsageError(f"suite file not found: {path}") from e
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as e:
        raise UsageError(f"malformed suite {path}: {e}") from e


def _cow_config(args) -> CowConfig:
    try:
        agent = agent_config_for_profile(args.profile)
        oracle = OracleLocalizerConfig(args.p_fn, args.p_fp, args.blind, 0, args.leak)
        return CowConfig(
            localizer="precomputed" if args.relmaps else "oracle",
            oracle=oracle,
            precomputed_dir=args.relmaps,
            exploration=args.exploration,
            tau=args.tau,
            postprocess=args.postprocess,
            max_steps=args.max_steps,
            agent=agent,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e


def _episode_job(job):
    scene_doc, task_doc, cfg_doc, seed = job
    from .scene import Scene, Task

    scene, task, cfg = Scene.from_dict(scene_doc), Task.from_dict(task_doc), CowConfig.from_dict(cfg_doc)
    traj = run_episode(scene, task, cfg, seed)
    res = evaluate_episode(scene, task, traj, cfg.agent)
    return task.task_id, traj.dumps(), res.to_dict()


def run_suite(suite: Suite, cfg: CowConfig, seed: int, parallel: int = 1, tasks=None):
    """Run tasks, merging by task id so the worker count never changes output."""
    from .localization import frame_seed

    tasks = list(suite.tasks if tasks is None else tasks)
    cfg_doc = cfg.to_dict()
    jobs = [
        (suite.scenes[t.scene_id].to_dict(), t.to_dict(), cfg_doc, frame_seed(seed, t.task_id)) for t in tasks
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            out = list(ex.map(_episode_job, jobs, chunksize=1))
    else:
        out = [_episode_job(j) for j in jobs]
    out.sort(key=lambda x: x[0])
    trajs = {tid: Trajectory.loads(text) for tid, text, _ in out}
    results = [EpisodeResult.from_dict(r) for _, _, r in out]
    return trajs, results


def _traj_name(task_id: str) -> str:
    return task_id.replace("/", "__") + ".jsonl"


def cmd_run(args) -> int:
    suite = _load_suite(args.suite)
    cfg = _cow_config(args)
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    tasks = suite.tasks
    if args.splits:
        want = set(args.splits.split(","))
        tasks = [t for t in tasks if t.split in want]
    if args.limit:
        tasks = tasks[: args.limit]
    if not tasks:
        raise UsageError("no tasks selected")
    out = _out_dir(args.out)
    _refuse_overwrite(out / "results.jsonl", args.force)
    suite_digest = hashlib.sha256(Path(args.suite).read_bytes()).hexdigest()[:16]
    run_doc = {"suite": str(args.suite), "suite_sha256": suite_digest, "seed": args.seed, "cow": cfg.to_dict()}
    h = config_hash(run_doc)
    trajs, results = run_suite(suite, cfg, args.seed, args.parallel, tasks)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    for tid, traj in trajs.items():
        traj.save(out / "trajectories" / _traj_name(tid))
    (out / "run.json").write_text(dumps({**run_doc, "config_hash": h}))
    (out / "results.jsonl").write_text(f"# config_hash {h}\n" + dumps_results(results))
    rows = aggregate(results, "split")
    (out / "summary.csv").write_text(rows_to_csv(rows, f"config_hash {h}"))
    (out / "summary.json").write_text(dumps(summary_document(results, "split", h)))
    sys.stdout.write(rows_to_csv(rows + aggregate(results, "all"), f"config_hash {h}"))
    return 0


def cmd_eval(args) -> int:
    path = Path(args.run) / "results.jsonl"
    if not path.exists():
        raise UsageError(f"no results at {path}")
    text = path.read_text()
    h = text.splitlines()[0].split()[-1] if text.startswith("#") else ""
    results = loads_results(text)
    rows = aggregate(results, args.group_by)
    csv_text = rows_to_csv(rows, f"config_hash {h}")
    if args.out:
        Path(args.out).write_text(csv_text)
    sys.stdout.write(csv_text)
    return 0


def cmd_tune(args) -> int:
    grid = tuple(float(x) for x in args.grid.split(",")) if args.grid else DEFAULT_GRID
    if any(not 0 <= g <= 1 for g in grid):
        raise UsageError("grid values must lie in [0, 1]")
    scenes = generate_scenes(args.scenes, args.seed, SceneConfig(), prefix="train")
    frames = frames_from_scenes(scenes, args.frames, args.seed)
    tau, f1 = grid_search_threshold(frames, NoisyScoreLocalizer(args.seed, args.pos_low, args.neg_high), grid)
    h = config_hash({"scenes": args.scenes, "frames": args.frames, "seed": args.seed, "grid": list(grid)})
    print(f"# config_hash {h}")
    print(f"tau*={tau:.6f} macro_f1={f1:.6f}")
    return 0


def cmd_replay(args) -> int:
    suite = _load_suite(args.suite)
    try:
        traj = Trajectory.load(args.trajectory)
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read trajectory {args.trajectory}: {e}") from e
    task = next((t for t in suite.tasks if t.task_id == traj.task_id), None)
    if task is None:
        raise UsageError(f"task {traj.task_id!r} not in suite")
    if traj.scene_id not in suite.scenes or traj.scene_id != task.scene_id:
        raise UsageError(f"trajectory scene {traj.scene_id!r} does not match task scene {task.scene_id!r}")
    cfg = CowConfig.from_dict(json.loads(Path(args.run_config).read_text())["cow"]) if args.run_config else CowConfig()
    frames = replay_frames(suite.scenes[traj.scene_id], task, traj, cfg)
    print(f"# config_hash {traj.config_hash}")
    for i, f in enumerate(frames):
        if i % args.every == 0 or i == len(frames) - 1:
            print(f)
            print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cowpasture", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate scenes and a task suite")
    g.add_argument("--scenes", type=int, default=15)
    g.add_argument("--objects", type=int, default=12)
    g.add_argument("--starts", type=int, default=2)
    g.add_argument("--splits", help="comma separated split names (default: the seven splits)")
    g.add_argument("--min-size", type=int, default=24)
    g.add_argument("--max-size", type=int, default=32)
    g.add_argument("--min-distance", type=float, default=0.0, help="minimum start to goal distance in metres")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run the agent on a suite")
    r.add_argument("--suite", required=True)
    r.add_argument("--out", help="output dir (default $COWPASTURE_OUT or ./cowpasture_out)")
    r.add_argument("--profile", choices=sorted(NOISE_PROFILES), default="none")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--parallel", type=int, default=1)
    r.add_argument("--tau", type=float, default=0.5)
    r.add_argument("--postprocess", choices=["center_pixel", "full_mask"], default="center_pixel")
    r.add_argument("--exploration", choices=["fbe", "random"], default="fbe")
    r.add_argument("--p-fn", type=float, default=0.0)
    r.add_argument("--p-fp", type=float, default=0.0)
    r.add_argument("--blind", type=float, default=0.0, help="attribute blindness probability")
    r.add_argument("--leak", type=int, default=0, help="dilate oracle masks by this many pixels")
    r.add_argument("--relmaps", help="directory of precomputed relevance maps")
    r.add_argument("--max-steps", type=int, default=500)
    r.add_argument("--splits")
    r.add_argument("--limit", type=int, default=0)
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="aggregate results of a run")
    e.add_argument("--run", required=True)
    e.add_argument("--group-by", choices=["split", "category", "scene", "all"], default="split")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("tune", help="grid-search the localization threshold on training scenes")
    t.add_argument("--scenes", type=int, default=4)
    t.add_argument("--frames", type=int, default=100)
    t.add_argument("--seed", type=int, default=1000)
    t.add_argument("--grid")
    t.add_argument("--pos-low", type=float, default=0.65)
    t.add_argument("--neg-high", type=float, default=0.6)
    t.set_defaults(func=cmd_tune)

    rp = sub.add_parser("replay", help="print ASCII map frames of a logged episode")
    rp.add_argument("--trajectory", required=True)
    rp.add_argument("--suite", required=True)
    rp.add_argument("--run-config", help="run.json written by the run command")
    rp.add_argument("--every", type=int, default=1)
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
