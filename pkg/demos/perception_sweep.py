"""How success degrades as the oracle localizer misses more detections."""
import sys

from cowpasture.cli import run_suite
from cowpasture.controller import CowConfig
from cowpasture.evaluation import spl, success_rate
from cowpasture.localization import OracleLocalizerConfig
from cowpasture.scene import SceneConfig, SuiteConfig, generate_pasture_suite, generate_scenes

n_scenes = int(sys.argv[1]) if len(sys.argv) > 1 else 3
scenes = generate_scenes(n_scenes, seed=7, config=SceneConfig(min_size=18, max_size=24))
suite = generate_pasture_suite(
    scenes,
    SuiteConfig(objects_per_scene=1, starts_per_scene=1, splits=("uncommon", "spatial_distract", "hidden"),
                min_start_goal_distance=1.3),
    seed=7,
)

print(f"{'p_fn':>5} {'SR':>6} {'SPL':>6}  failures")
for p in (0.0, 0.25, 0.5, 0.75, 1.0):
    cfg = CowConfig(oracle=OracleLocalizerConfig(p_false_negative=p))
    _, results = run_suite(suite, cfg, seed=0)
    modes = {}
    for r in results:
        if r.failure_mode != "none":
            modes[r.failure_mode] = modes.get(r.failure_mode, 0) + 1
    print(f"{p:5.2f} {success_rate(results):6.3f} {spl(results):6.3f}  {modes}")
