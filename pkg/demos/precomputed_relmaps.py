"""Feed an episode from relevance maps on disk instead of the oracle.

This is the path an external detector would take: write one .relmap per
agent step, then run with ``localizer="precomputed"``.  Here the files are
produced by recording the oracle, so the replayed episode must match.
"""
import tempfile

from cowpasture.controller import CowConfig, EpisodeRunner, run_episode
from cowpasture.localization import relmap_path, save_relmap
from cowpasture.scene import SceneConfig, SuiteConfig, generate_pasture_suite, generate_scenes

scenes = generate_scenes(1, seed=3, config=SceneConfig(min_size=18, max_size=22))
suite = generate_pasture_suite(scenes, SuiteConfig(objects_per_scene=1, starts_per_scene=1,
                                                   splits=("uncommon",), min_start_goal_distance=1.5), seed=3)
task = suite.tasks[0]
scene = suite.scenes[task.scene_id]
cfg = CowConfig()

with tempfile.TemporaryDirectory() as out:
    runner = EpisodeRunner(scene, task, cfg, seed=0)
    oracle = runner.localizer
    frames = []

    class Recorder:
        def localize(self, obs, goal):
            rel = oracle.localize(obs, goal)
            save_relmap(relmap_path(out, task.task_id, len(frames)), rel.values)
            frames.append(rel)
            return rel

    runner.localizer = Recorder()
    while not runner.done:
        runner.advance()
    live = runner.trajectory()
    print(f"wrote {len(frames)} relevance maps under {out}")

    replayed = run_episode(scene, task, CowConfig(localizer="precomputed", precomputed_dir=out), seed=0)
    same = [r.action for r in live.records] == [r.action for r in replayed.records]
    print(f"live: {live.status}/{live.success} in {live.steps} steps; "
          f"from disk: {replayed.status}/{replayed.success} in {replayed.steps} steps; same actions: {same}")
