"""Generate a tiny benchmark, run the agent on one task and print what happened."""
from cowpasture.controller import CowConfig, EpisodeRunner, replay_frames
from cowpasture.evaluation import evaluate_episode
from cowpasture.scene import SceneConfig, SuiteConfig, generate_pasture_suite, generate_scenes

scenes = generate_scenes(2, seed=1, config=SceneConfig(min_size=18, max_size=22))
suite = generate_pasture_suite(scenes, SuiteConfig(objects_per_scene=2, starts_per_scene=1,
                                                   min_start_goal_distance=1.5), seed=1)
print(f"{len(suite.tasks)} tasks across {len(suite.scenes)} scene variants")

task = suite.tasks[0]
scene = suite.scenes[task.scene_id]
cfg = CowConfig()
print(f"goal: {task.goal_description!r} ({task.split})")

runner = EpisodeRunner(scene, task, cfg, seed=0)
while not runner.done:
    rec = runner.advance()
    if rec.goal_detected and rec.t % 5 == 0:
        print(f"  step {rec.t}: goal in the relevance map")
traj = runner.trajectory()
res = evaluate_episode(scene, task, traj, cfg.agent)
print(f"{traj.status} after {traj.steps} steps, success={res.success}, "
      f"path {res.path_length:.2f} m vs shortest {res.shortest_path:.2f} m, SPL term {res.spl_term:.3f}")

print(replay_frames(scene, task, traj, cfg)[-1])
