import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from cowpasture.scene import (
    COLORS,
    MATERIALS,
    ObjectSpec,
    Scene,
    SceneConfig,
    Suite,
    SuiteConfig,
    compute_relations,
    generate_pasture_suite,
    generate_scene,
    generate_scenes,
    matching_instances,
    parse_description,
    render_description,
    size_class_of,
    traversable_cells,
)


def _room(n=12):
    walls = np.zeros((n, n))
    walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = 2.5
    return walls


def _furn(iid, cat, cells, h=0.8):
    rs = [r for r, _ in cells]
    cs = [c for _, c in cells]
    pos = ((min(cs) + max(cs) + 1) / 2 * 0.25, (min(rs) + max(rs) + 1) / 2 * 0.25)
    return ObjectSpec(iid, cat, footprint=list(cells), height=h, position=pos, kind="furniture")


def test_appearance_grammar():
    apple = ObjectSpec("a", "apple", size_class="small", colors=["red"], materials=[])
    assert render_description(apple, "appearance") == "small, red apple"


def test_appearance_all_slots_and_none():
    mug = ObjectSpec("m", "mug", size_class="small", colors=["blue"], materials=["ceramic"])
    assert render_description(mug, "appearance") == "small, blue, ceramic mug"
    tv = ObjectSpec("t", "television")
    assert render_description(tv, "appearance") == "television"


def test_spatial_grammar():
    dresser = _furn("dresser_0", "dresser", [(3, 3), (3, 4)])
    bottle = ObjectSpec("sb", "spray bottle", position=(1.3, 1.0), footprint=[(3, 5)], height=0.25,
                        base_height=0.8, relation_on_top_of="sofa_0")
    sofa = _furn("sofa_0", "sofa", [(3, 5), (3, 6)], 0.6)
    plant = ObjectSpec("hp", "house plant", position=(1.0, 0.9), footprint=[(3, 4)], height=0.5,
                       base_height=0.8, relation_on_top_of="dresser_0")
    scene = compute_relations(Scene("s", 0.25, _room(), [dresser, sofa, bottle, plant]), 1.0)
    text = render_description(scene.obj("hp"), "spatial", scene)
    assert text == "house plant on a dresser near a spray bottle"


def test_spatial_without_relations_errors():
    lone = ObjectSpec("x", "vase")
    with pytest.raises(ValueError):
        render_description(lone, "spatial", Scene("s", 0.25, _room(), [lone]))


def test_hidden_grammar():
    dresser = _furn("dresser_0", "dresser", [(3, 3), (3, 4)])
    ball = ObjectSpec("b", "basketball", hidden_in_or_under="dresser_0", hidden_relation="in")
    scene = Scene("s", 0.25, _room(), [dresser, ball])
    assert render_description(ball, "hidden", scene).startswith("basketball in the dresser")


def test_size_class_threshold():
    assert size_class_of((0.08, 0.08, 0.08)) == "small"
    assert size_class_of((0.9, 0.1, 0.55)) == "large"


def _points(n, pos):
    return [ObjectSpec(f"o{i}", "apple", position=p) for i, p in enumerate(pos[:n])]


def test_near_threshold_and_boundary():
    objs = [ObjectSpec("a", "apple", position=(1.0, 1.0)), ObjectSpec("b", "mug", position=(1.4, 1.0)),
            ObjectSpec("c", "vase", position=(1.4, 1.5))]
    s = compute_relations(Scene("s", 0.25, _room(), objs), 0.5)
    assert s.obj("a").relations_near == ["b"]
    assert s.obj("b").relations_near == ["a", "c"]  # exactly 0.5 apart counts
    assert s.obj("c").relations_near == ["b"]


@given(st.lists(st.tuples(st.floats(0.3, 2.7), st.floats(0.3, 2.7)), min_size=2, max_size=7),
       st.floats(0.1, 2.0))
def test_relations_match_all_pairs(pos, thr):
    objs = [ObjectSpec(f"o{i}", "apple", position=p) for i, p in enumerate(pos)]
    s = compute_relations(Scene("s", 0.25, _room(), objs), thr)
    for a, b in itertools.permutations(range(len(pos)), 2):
        near = math.dist(pos[a], pos[b]) <= thr
        assert (f"o{b}" in s.obj(f"o{a}").relations_near) == near
    for o in s.objects:
        assert o.instance_id not in o.relations_near


def test_scene_validation():
    with pytest.raises(ValueError):
        Scene("s", 0.25, -_room(), [])
    with pytest.raises(ValueError):
        Scene("s", 0.25, _room(), [ObjectSpec("x", "vase", footprint=[(40, 40)])])
    with pytest.raises(ValueError):
        Scene("s", 0.25, _room(), [ObjectSpec("x", "vase", footprint=[(2, 2)], hidden_in_or_under="y")])


@pytest.fixture(scope="module")
def small_suite():
    scenes = generate_scenes(2, 5, SceneConfig(min_size=18, max_size=22))
    return generate_pasture_suite(scenes, SuiteConfig(objects_per_scene=3, starts_per_scene=2), seed=9)


def test_minimal_suite_size():
    scenes = generate_scenes(1, 3, SceneConfig(min_size=18, max_size=22))
    suite = generate_pasture_suite(scenes, SuiteConfig(objects_per_scene=1, starts_per_scene=1), seed=0)
    assert len(suite.tasks) == 7


def test_suite_size_formula(small_suite):
    assert len(small_suite.tasks) == 7 * 2 * 3 * 2
    for split in SuiteConfig().splits:
        assert sum(t.split == split for t in small_suite.tasks) == 12


def test_suite_determinism(small_suite):
    scenes = generate_scenes(2, 5, SceneConfig(min_size=18, max_size=22))
    again = generate_pasture_suite(scenes, SuiteConfig(objects_per_scene=3, starts_per_scene=2), seed=9)
    assert again.dumps() == small_suite.dumps()


def test_suite_round_trip(small_suite, tmp_path):
    p = tmp_path / "suite.json"
    small_suite.save(p)
    assert Suite.load(p).dumps() == small_suite.dumps()


def test_distractor_splits(small_suite):
    for t in small_suite.tasks:
        if not t.split.endswith("distract") or t.split == "hidden_distract":
            continue
        scene = small_suite.scenes[t.scene_id]
        same = [o for o in scene.objects if o.category == t.category and not o.is_hidden]
        assert len(same) >= 2
        looks = {(tuple(sorted(o.colors)), tuple(sorted(o.materials))) for o in same}
        assert len(looks) >= 2


def test_hidden_splits(small_suite):
    for t in small_suite.tasks:
        scene = small_suite.scenes[t.scene_id]
        goal = scene.obj(t.goal_instance_ids[0])
        if t.split in ("hidden", "hidden_distract"):
            assert goal.hidden_in_or_under is not None and goal.footprint == []
        if t.split == "hidden":
            assert not [o for o in scene.objects if o.category == t.category and not o.is_hidden]
        if t.split == "hidden_distract":
            assert [o for o in scene.objects if o.category == t.category and not o.is_hidden]


def test_descriptions_parse_and_match(small_suite):
    for t in small_suite.tasks:
        scene = small_suite.scenes[t.scene_id]
        goal = parse_description(t.goal_description, {o.category for o in scene.objects})
        assert goal.category == t.category
        assert matching_instances(scene, goal) == sorted(t.goal_instance_ids)


@given(st.booleans(), st.lists(st.sampled_from(COLORS), max_size=2, unique=True),
       st.lists(st.sampled_from(MATERIALS), max_size=1), st.sampled_from(["apple", "alarm clock", "house plant"]))
def test_appearance_round_trip(small, colors, materials, cat):
    obj = ObjectSpec("x", cat, size_class="small" if small else "large", colors=colors, materials=materials)
    p = parse_description(render_description(obj, "appearance"))
    assert p.category == cat
    if small or colors or materials:
        assert (p.small, p.colors, p.materials) == (small, tuple(colors), tuple(materials))


def test_start_poses_on_free_floor(small_suite):
    for t in small_suite.tasks:
        scene = small_suite.scenes[t.scene_id]
        r, c = scene.cell_of(t.start_pose.x, t.start_pose.y)
        assert traversable_cells(scene.heightmap)[r, c]


@given(st.integers(0, 10_000))
def test_generated_scene_invariants(seed):
    scene = generate_scene("g", seed, SceneConfig(min_size=18, max_size=24))
    assert np.all(scene.heightmap >= 0)
    _, n = ndimage.label(traversable_cells(scene.heightmap))
    assert n == 1
    for o in scene.objects:
        for r, c in o.footprint:
            assert 0 <= r < scene.shape[0] and 0 <= c < scene.shape[1]
            assert scene.heightmap[r, c] >= o.base_height + o.height - 1e-9
        for other in o.relations_near:
            assert o.instance_id in scene.obj(other).relations_near


def test_infeasible_suite_names_scene():
    scene = Scene("tiny", 0.25, _room(8), [])
    with pytest.raises(ValueError, match="tiny"):
        generate_pasture_suite([scene], SuiteConfig(objects_per_scene=1, starts_per_scene=1))


def test_infeasible_distractor_names_category():
    dresser = _furn("dresser_0", "dresser", [(4, 4), (4, 5)])
    apple = ObjectSpec("apple_0", "apple", size_class="small", colors=["red"], position=(1.125, 1.125),
                       footprint=[(4, 4)], height=0.08, base_height=0.8, relation_on_top_of="dresser_0")
    scene = Scene("lonely", 0.25, _room(), [dresser, apple])
    cfg = SuiteConfig(objects_per_scene=1, starts_per_scene=1, splits=("appearance_distract",))
    with pytest.raises(ValueError, match="lonely.*apple"):
        generate_pasture_suite([scene], cfg)
