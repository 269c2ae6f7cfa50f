"""Simulator tests: rendering oracles, dynamics, sampling, expert,
variations, and evaluation plumbing."""

import math

import numpy as np
import pytest

from pointbc import sim
from pointbc.geom import backproject, project
from pointbc.sim import (
    AMBIENT,
    COOL_COLORS,
    DIFFUSE,
    GOAL_COLOR,
    GRASP_RANGE,
    LIGHT_DIR,
    MAX_DELTA,
    TABLE_COLORS,
    TABLE_HALF_X,
    WARM_COLORS,
    WORKSPACE_Z,
    Action,
    GripperState,
    Primitive,
    Scene,
    TaskConfig,
    check_success,
    evaluate,
    expert_actor,
    instance_masks,
    make_variation,
    null_actor,
    proprio_vector,
    render,
    run_episode,
    sample_initial,
    scripted_expert,
    step,
)

GRIPPER_AWAY = np.array([0.0, -0.70, 0.50])  # behind the camera eye


def bare_scene(objects, gripper_pos=GRIPPER_AWAY, light_gain=1.0):
    return Scene(
        objects=objects,
        gripper=GripperState(np.array(gripper_pos, dtype=np.float64)),
        goal_center=np.array([0.18, 0.12]),
        goal_radius=0.06,
        table_color=np.array(sim.DEFAULT_TABLE_COLOR),
        light_gain=light_gain,
    )


def lambert_shade(normal) -> float:
    light = np.asarray(LIGHT_DIR) / np.linalg.norm(LIGHT_DIR)
    return AMBIENT + DIFFUSE * max(0.0, float(np.asarray(normal) @ light))


def pixel_of(point, intr, extr) -> tuple[int, int]:
    uv, _ = project(extr.invert().apply(np.asarray(point, dtype=np.float64)[None]), intr)
    return int(round(uv[0, 1])), int(round(uv[0, 0]))  # (v, u)


def box_sdf(p, center, size, yaw):
    c, s = math.cos(-yaw), math.sin(-yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    q = np.abs((p - center) @ rot.T) - np.asarray(size) / 2.0
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside


def cylinder_sdf(p, center, radius, height):
    rel = p - center
    d = np.stack(
        [np.hypot(rel[:, 0], rel[:, 1]) - radius, np.abs(rel[:, 2]) - height / 2.0],
        axis=1,
    )
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(d.max(axis=1), 0.0)
    return outside + inside


def sphere_sdf(p, center, radius):
    return np.linalg.norm(p - center, axis=1) - radius


# --------------------------------------------------------------------- camera


def test_camera_intrinsics_follow_the_fov():
    for res in (64, 128):
        task = TaskConfig(resolution=res, fov_deg=55.0)
        intr, _ = task.camera()
        f = res / (2.0 * math.tan(math.radians(55.0) / 2.0))
        assert intr.fx == pytest.approx(f)
        assert intr.fy == pytest.approx(f)
        assert intr.cx == pytest.approx((res - 1) / 2.0)
        assert intr.cy == pytest.approx((res - 1) / 2.0)
        assert intr.width == intr.height == res


def test_camera_looks_at_the_origin():
    for azimuth in (0.0, 40.0):
        _, extr = TaskConfig(camera_azimuth_deg=azimuth).camera()
        eye = extr.translation
        fwd = extr.rotation[:, 2]  # camera +z in base coordinates
        np.testing.assert_allclose(fwd, -eye / np.linalg.norm(eye), atol=1e-12)
        assert np.linalg.norm(eye) == pytest.approx(np.hypot(0.55, 0.45))


# ------------------------------------------------------------------ rendering


def test_render_center_pixel_depth_on_a_sphere():
    # odd resolution puts the center pixel exactly on the optical axis
    task = TaskConfig(resolution=65)
    intr, extr = task.camera()
    radius = 0.03
    scene = bare_scene(
        [Primitive("sphere", [radius, 0, 0], WARM_COLORS[0], [0.0, 0.0, 0.0], object_id=1)]
    )
    frame, ids = render(scene, intr, extr)
    expect = np.linalg.norm(extr.translation) - radius
    assert abs(float(frame.depth[32, 32]) - expect) < 1e-6
    assert ids[32, 32] == 1


def test_render_surfaces_satisfy_their_distance_functions():
    box = Primitive("box", [0.05, 0.04, 0.036], WARM_COLORS[0], [-0.12, 0.02, 0.018],
                    yaw=0.7, object_id=1)
    cyl = Primitive("cylinder", [0.02, 0.05, 0.0], COOL_COLORS[0], [0.08, -0.08, 0.025],
                    object_id=2)
    sph = Primitive("sphere", [0.03, 0.0, 0.0], COOL_COLORS[1], [0.13, 0.10, 0.03],
                    object_id=3)
    scene = bare_scene([box, cyl, sph])
    task = TaskConfig(resolution=128)
    intr, extr = task.camera()
    frame, ids = render(scene, intr, extr)

    for prim, sdf in [
        (box, lambda p: box_sdf(p, box.position, box.size, box.yaw)),
        (cyl, lambda p: cylinder_sdf(p, cyl.position, cyl.size[0], cyl.size[1])),
        (sph, lambda p: sphere_sdf(p, sph.position, sph.size[0])),
    ]:
        mask = ids == prim.object_id
        assert mask.sum() > 50, f"{prim.kind} barely visible"
        cloud = backproject(frame, intr, mask=mask)
        points = extr.apply(cloud.points)
        residual = np.abs(sdf(points))
        assert residual.max() < 1e-6, f"{prim.kind}: {residual.max():.2e}"


def test_render_rays_past_the_table_miss():
    task = TaskConfig(resolution=64)
    intr, extr = task.camera()
    frame, ids = render(bare_scene([]), intr, extr)
    assert (frame.depth[0] == 0.0).all()
    assert (ids[0] == 0).all()
    np.testing.assert_array_equal(frame.color[0], 0.0)


def test_render_goal_disk_and_table_colors():
    task = TaskConfig(resolution=128)
    intr, extr = task.camera()
    scene = bare_scene([])
    frame, ids = render(scene, intr, extr)
    shade = lambert_shade([0.0, 0.0, 1.0])

    v, u = pixel_of([0.18, 0.12, 0.0], intr, extr)  # goal center
    np.testing.assert_allclose(frame.color[v, u], np.asarray(GOAL_COLOR) * shade, atol=1e-5)
    assert ids[v, u] == 0

    v, u = pixel_of([-0.20, -0.15, 0.0], intr, extr)  # plain table
    np.testing.assert_allclose(
        frame.color[v, u], np.asarray(sim.DEFAULT_TABLE_COLOR) * shade, atol=1e-5
    )


def test_render_light_gain_scales_colors():
    task = TaskConfig(resolution=64)
    intr, extr = task.camera()
    bright, _ = render(bare_scene([], light_gain=1.0), intr, extr)
    dim, _ = render(bare_scene([], light_gain=0.55), intr, extr)
    v, u = pixel_of([-0.20, -0.15, 0.0], intr, extr)
    np.testing.assert_allclose(dim.color[v, u], bright.color[v, u] * 0.55, atol=1e-5)


def test_render_gripper_occludes_without_an_id():
    target = Primitive("box", [0.06, 0.06, 0.04], WARM_COLORS[0], [0.0, 0.0, 0.02], object_id=1)
    task = TaskConfig(resolution=96)
    intr, extr = task.camera()
    eye = extr.translation
    block_pos = eye + 0.5 * (target.position - eye)  # midway along the view ray
    scene = bare_scene([target], gripper_pos=block_pos)
    frame, ids = render(scene, intr, extr)
    v, u = pixel_of(target.position, intr, extr)
    assert ids[v, u] == -1
    assert frame.depth[v, u] < np.linalg.norm(target.position - eye)
    masks = instance_masks(ids, [1])
    assert not masks[0][v, u]
    assert masks[0].any()


def test_render_depth_noise_perturbs_hits_only():
    task = TaskConfig(resolution=64)
    intr, extr = task.camera()
    scene = bare_scene([])
    clean, _ = render(scene, intr, extr)
    noisy, _ = render(scene, intr, extr, depth_noise=0.005, rng=np.random.default_rng(0))
    hit = clean.depth > 0
    assert (noisy.depth[~hit] == 0.0).all()
    diff = noisy.depth[hit] - clean.depth[hit]
    assert 0.003 < diff.std() < 0.007
    assert (noisy.depth[hit] > 0).all()
    with pytest.raises(ValueError):
        render(scene, intr, extr, depth_noise=0.005)


# ------------------------------------------------------------------- dynamics


def test_action_clamps_inputs():
    act = Action([0.5, -0.5, 0.001], 7.0)
    np.testing.assert_allclose(act.delta, [MAX_DELTA, -MAX_DELTA, 0.001])
    assert act.grip == 1.0
    vec = act.as_vector()
    round_trip = Action.from_vector(vec)
    np.testing.assert_array_equal(round_trip.as_vector(), vec)


def test_step_moves_and_clamps_the_gripper():
    scene = bare_scene([], gripper_pos=[0.0, 0.0, 0.10])
    out = step(scene, Action([0.01, -0.02, 0.015], -1.0))
    np.testing.assert_allclose(out.gripper.position, [0.01, -0.02, 0.115])
    assert out.step_count == 1
    # a long push saturates at the workspace edge
    for _ in range(40):
        out = step(out, Action([MAX_DELTA, 0.0, MAX_DELTA], -1.0))
    assert out.gripper.position[0] == TABLE_HALF_X + 0.05
    assert out.gripper.position[2] == WORKSPACE_Z[1]
    # the input scene was never mutated
    np.testing.assert_allclose(scene.gripper.position, [0.0, 0.0, 0.10])
    assert scene.step_count == 0


def test_step_grasp_carry_release_cycle():
    box = Primitive("box", [0.05, 0.04, 0.036], WARM_COLORS[0], [0.10, 0.05, 0.018], object_id=1)
    scene = bare_scene([box], gripper_pos=[0.10, 0.05, 0.018])
    held = step(scene, Action([0.0, 0.0, 0.0], 1.0))
    assert held.gripper.held_id == 1
    assert held.gripper.open_frac == 0.0
    np.testing.assert_allclose(held.gripper.held_offset, [0.0, 0.0, 0.0], atol=1e-12)

    carried = step(held, Action([0.02, 0.01, 0.02], 1.0))
    np.testing.assert_allclose(
        carried.object_by_id(1).position, carried.gripper.position, atol=1e-12
    )
    assert carried.object_by_id(1).position[2] >= box.rest_height()

    dropped = step(carried, Action([0.0, 0.0, 0.0], -1.0))
    assert dropped.gripper.held_id == 0
    assert dropped.gripper.open_frac == 1.0
    assert dropped.object_by_id(1).position[2] == pytest.approx(box.rest_height())
    np.testing.assert_allclose(
        dropped.object_by_id(1).position[:2], carried.gripper.position[:2], atol=1e-12
    )


def test_step_grasp_needs_proximity():
    box = Primitive("box", [0.05, 0.04, 0.036], WARM_COLORS[0], [0.10, 0.05, 0.018], object_id=1)
    far = bare_scene([box], gripper_pos=[0.10, 0.05 + GRASP_RANGE + 0.005, 0.018])
    out = step(far, Action([0.0, 0.0, 0.0], 1.0))
    assert out.gripper.held_id == 0
    assert out.gripper.open_frac == 0.0  # closed on air


def test_step_grasp_picks_the_nearest_object():
    near = Primitive("box", [0.04, 0.04, 0.02], WARM_COLORS[0], [0.100, 0.05, 0.01], object_id=1)
    other = Primitive("box", [0.04, 0.04, 0.02], COOL_COLORS[0], [0.108, 0.05, 0.01], object_id=2)
    scene = bare_scene([near, other], gripper_pos=[0.099, 0.05, 0.01])
    out = step(scene, Action([0.0, 0.0, 0.0], 1.0))
    assert out.gripper.held_id == 1


def test_step_carried_object_stays_above_the_table():
    box = Primitive("box", [0.05, 0.04, 0.036], WARM_COLORS[0], [0.10, 0.05, 0.018], object_id=1)
    scene = bare_scene([box], gripper_pos=[0.10, 0.05, 0.018])
    held = step(scene, Action([0.0, 0.0, 0.0], 1.0))
    pushed_down = step(held, Action([0.0, 0.0, -0.02], 1.0))
    assert pushed_down.object_by_id(1).position[2] == pytest.approx(box.rest_height())


def test_proprio_vector_layout():
    scene = bare_scene([], gripper_pos=[0.1, -0.2, 0.3])
    np.testing.assert_allclose(proprio_vector(scene), [0.1, -0.2, 0.3, 1.0])


def test_check_success_cases():
    task = TaskConfig()
    goal = np.array(task.goal_center)

    def scene_with(target_pos, open_frac=1.0, held_id=0):
        box = Primitive(
            "box", [0.05, 0.04, 0.036], WARM_COLORS[0],
            [target_pos[0], target_pos[1], target_pos[2]], object_id=1,
        )
        sc = bare_scene([box])
        sc.gripper.open_frac = open_frac
        sc.gripper.held_id = held_id
        sc.goal_center = goal
        sc.goal_radius = task.goal_radius
        return sc

    resting = [goal[0], goal[1], 0.018]
    assert check_success(scene_with(resting), task)
    assert not check_success(scene_with(resting, held_id=1), task)
    assert not check_success(scene_with(resting, open_frac=0.0), task)
    off = [goal[0] + task.goal_radius + 0.001, goal[1], 0.018]
    assert not check_success(scene_with(off), task)
    floating = [goal[0], goal[1], 0.10]
    assert not check_success(scene_with(floating), task)
    edge = [goal[0] + task.goal_radius - 1e-6, goal[1], 0.018]
    assert check_success(scene_with(edge), task)


# ------------------------------------------------------------------- sampling


def test_sample_initial_is_deterministic():
    task = make_variation(TaskConfig(), "background_hard", seed=3)
    a = sample_initial(task, seed=11)
    b = sample_initial(task, seed=11)
    assert len(a.objects) == len(b.objects)
    for oa, ob in zip(a.objects, b.objects):
        np.testing.assert_array_equal(oa.position, ob.position)
        np.testing.assert_array_equal(oa.color, ob.color)
        assert oa.yaw == ob.yaw and oa.kind == ob.kind
    c = sample_initial(task, seed=12)
    assert not np.array_equal(a.objects[0].position, c.objects[0].position)


def test_sample_initial_layout_rules():
    task = make_variation(TaskConfig(), "background_hard", seed=1)
    goal = np.array(task.goal_center)
    canonical = np.array([0.050, 0.040, 0.036])
    for seed in range(60):
        scene = sample_initial(task, seed)
        assert len(scene.objects) == 1 + task.num_distractors
        ids = [o.object_id for o in scene.objects]
        assert ids == list(range(1, 7))

        target = scene.objects[0]
        assert not target.distractor
        np.testing.assert_array_equal(target.color, WARM_COLORS[0])
        np.testing.assert_array_equal(target.size, canonical)
        assert np.hypot(*(target.position[:2] - goal)) >= task.goal_radius + 0.07 - 1e-12
        x0, x1, y0, y1 = task.target_region
        assert x0 <= target.position[0] <= x1 and y0 <= target.position[1] <= y1
        assert target.position[2] == pytest.approx(target.rest_height())

        cool = {tuple(c) for c in COOL_COLORS}
        for i, d in enumerate(scene.objects[1:]):
            assert d.distractor
            assert tuple(d.color) in cool
            if i < task.near_target_distractors:
                assert d.kind == "box"
                ratio = d.size / canonical
                assert 0.9 <= ratio[0] <= 1.1
                np.testing.assert_allclose(ratio, ratio[0], atol=1e-12)
            else:
                assert d.kind in ("sphere", "cylinder")
            r = d.footprint_radius()
            assert np.hypot(*(d.position[:2] - goal)) >= task.goal_radius + r + 0.01 - 1e-12

        objs = scene.objects
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                gap = np.hypot(*(objs[i].position[:2] - objs[j].position[:2]))
                need = objs[i].footprint_radius() + objs[j].footprint_radius() + 0.01
                assert gap >= need - 1e-12


def test_sample_initial_target_pose_survives_variations():
    base = TaskConfig()
    crowded = make_variation(base, "background_hard", seed=2)
    swapped = make_variation(base, "new_object", seed=2)
    for seed in range(10):
        plain = sample_initial(base, seed).objects[0]
        busy = sample_initial(crowded, seed).objects[0]
        new = sample_initial(swapped, seed).objects[0]
        np.testing.assert_array_equal(plain.position, busy.position)
        assert plain.yaw == busy.yaw
        # appearance redraws must not shift the pose draw
        np.testing.assert_array_equal(plain.position[:2], new.position[:2])
        assert new.kind in sim.TARGET_SHAPES
        assert tuple(new.color) in {tuple(c) for c in WARM_COLORS}
        if new.kind == "box":
            scale = new.size[0] / 0.050
            np.testing.assert_allclose(new.size, np.array([0.050, 0.040, 0.036]) * scale)
        else:
            scale = new.size[0] / 0.024
            assert new.size[1] == pytest.approx(0.044 * scale)
        assert 0.7 <= scale <= 1.3


def test_sample_initial_covers_the_target_region():
    task = TaskConfig()
    x0, x1, y0, y1 = task.target_region
    goal = np.array(task.goal_center)
    cells = np.zeros((10, 10), dtype=bool)
    for seed in range(1000):
        pos = sample_initial(task, seed).objects[0].position
        i = min(9, int((pos[0] - x0) / (x1 - x0) * 10))
        j = min(9, int((pos[1] - y0) / (y1 - y0) * 10))
        cells[i, j] = True
    xs = x0 + (np.arange(10)[:, None] + np.array([0.0, 1.0])) * (x1 - x0) / 10
    ys = y0 + (np.arange(10)[:, None] + np.array([0.0, 1.0])) * (y1 - y0) / 10
    valid = np.zeros((10, 10), dtype=bool)
    for i in range(10):
        for j in range(10):
            corners = [(xs[i, a], ys[j, b]) for a in (0, 1) for b in (0, 1)]
            valid[i, j] = all(
                np.hypot(cx - goal[0], cy - goal[1]) >= task.goal_radius + 0.07
                for cx, cy in corners
            )
    assert valid.sum() >= 80
    hit_rate = cells[valid].mean()
    assert hit_rate >= 0.95, f"only {hit_rate:.0%} of reachable cells drawn"


# ----------------------------------------------------------------- variations


def test_make_variation_properties():
    base = TaskConfig()
    assert make_variation(base, "canonical") == base

    easy_bg = make_variation(base, "background_easy", seed=4)
    assert tuple(easy_bg.table_color) in {tuple(c) for c in TABLE_COLORS}
    assert easy_bg.num_distractors == 2

    hard_bg = make_variation(base, "background_hard", seed=4)
    assert tuple(hard_bg.table_color) in {tuple(c) for c in TABLE_COLORS}
    assert hard_bg.light_gain in (0.55, 1.45)
    assert hard_bg.num_distractors == 5
    assert hard_bg.near_target_distractors == 2

    easy_cam = make_variation(base, "camera_easy")
    assert easy_cam.camera_azimuth_deg == 10.0
    assert easy_cam.camera_shift != (0.0, 0.0, 0.0)

    hard_cam = make_variation(base, "camera_hard")
    assert hard_cam.camera_azimuth_deg == 40.0
    _, extr_base = base.camera()
    _, extr_hard = hard_cam.camera()
    rel = extr_base.rotation @ extr_hard.rotation.T
    angle = math.degrees(math.acos(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)))
    assert angle == pytest.approx(40.0, abs=1e-6)

    assert make_variation(base, "new_object").new_object
    assert make_variation(base, "background_hard", seed=4) == hard_bg
    with pytest.raises(ValueError):
        make_variation(base, "night_mode")


# ----------------------------------------------------- expert and evaluation


def test_expert_succeeds_across_conditions():
    base = TaskConfig(resolution=32)
    for kind, n in [("canonical", 20), ("camera_hard", 5), ("background_hard", 5)]:
        task = make_variation(base, kind, seed=0)
        res = evaluate(task, lambda: expert_actor(task), episodes=n, seed=123, variation=kind)
        assert res.successes == n, f"{kind}: {res.successes}/{n}"
        assert all(e.steps < task.horizon for e in res.episodes)


def test_expert_actions_respect_bounds():
    task = TaskConfig(resolution=32)
    scene = sample_initial(task, seed=8)
    for _ in range(200):
        action = scripted_expert(scene, task)
        assert np.abs(action.delta).max() <= MAX_DELTA + 1e-12
        assert -1.0 <= action.grip <= 1.0
        scene = step(scene, action)
        if check_success(scene, task):
            break
    assert check_success(scene, task)


def test_expert_ignores_the_camera():
    base = TaskConfig(resolution=32)
    rotated = make_variation(base, "camera_hard")
    for seed in (5, 6):
        a = run_episode(base, expert_actor(base), seed)
        b = run_episode(rotated, expert_actor(rotated), seed)
        assert (a.success, a.steps) == (b.success, b.steps)


def test_run_episode_is_deterministic():
    task = TaskConfig(resolution=32)
    a = run_episode(task, expert_actor(task), episode_seed=77)
    b = run_episode(task, expert_actor(task), episode_seed=77)
    assert (a.success, a.steps) == (b.success, b.steps)


def test_run_episode_respects_horizon():
    task = TaskConfig(resolution=32)
    res = run_episode(task, null_actor(), episode_seed=5, horizon=7)
    assert not res.success
    assert res.steps == 7


def test_evaluate_is_job_count_invariant():
    task = TaskConfig(resolution=32)
    serial = evaluate(task, lambda: expert_actor(task), episodes=4, seed=9, jobs=1)
    threaded = evaluate(task, lambda: expert_actor(task), episodes=4, seed=9, jobs=3)
    assert [(e.seed, e.success, e.steps) for e in serial.episodes] == [
        (e.seed, e.success, e.steps) for e in threaded.episodes
    ]


def test_null_actor_never_succeeds():
    task = TaskConfig(resolution=32)
    res = evaluate(task, null_actor, episodes=5, seed=3, horizon=30)
    assert res.successes == 0
    assert res.rate == 0.0
