"""Toy tabletop simulator with an exact ray-cast RGB-D renderer.

World model: a table surface at z = 0 centered on the base-frame
origin, a painted circular goal region, a handful of rigid primitives
(boxes, cylinders, spheres), and a floating spherical gripper moved by
bounded position deltas.  Grasping is kinematic: closing the gripper
within reach of a graspable object rigidly attaches it; opening drops
it straight down onto the table.  Nothing else collides, which keeps
stepping exact and fast.

Rendering casts one ray per pixel through the pinhole model and solves
the primitive intersections in closed form, so rendered depth is exact
to float32 rounding.  A per-pixel instance buffer provides ground-truth
segmentation; the gripper occludes but owns no instance id.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import CameraIntrinsics, RGBDFrame, RigidTransform

MAX_DELTA = 0.02  # per-step position change bound, meters
GRASP_RANGE = 0.015  # gripper-to-center attach distance, meters
GRIPPER_RADIUS = 0.012
TABLE_HALF_X = 0.30
TABLE_HALF_Y = 0.25
TABLE_THICKNESS = 0.02
WORKSPACE_Z = (0.005, 0.40)
GRIPPER_HOME = (0.0, -0.20, 0.15)
LIGHT_DIR = (-0.35, 0.25, 0.90)
AMBIENT = 0.35
DIFFUSE = 0.65

WARM_COLORS = [
    (0.85, 0.15, 0.12),
    (0.90, 0.45, 0.10),
    (0.92, 0.80, 0.15),
    (0.90, 0.35, 0.45),
    (0.70, 0.10, 0.20),
]
COOL_COLORS = [
    (0.15, 0.30, 0.85),
    (0.15, 0.70, 0.25),
    (0.10, 0.65, 0.70),
    (0.45, 0.20, 0.70),
    (0.10, 0.50, 0.45),
]
TABLE_COLORS = [
    (0.25, 0.28, 0.30),
    (0.75, 0.65, 0.45),
    (0.45, 0.50, 0.30),
    (0.20, 0.22, 0.40),
    (0.55, 0.30, 0.25),
]
DEFAULT_TABLE_COLOR = (0.55, 0.55, 0.58)
GOAL_COLOR = (0.05, 0.05, 0.06)
GRIPPER_COLOR = (0.75, 0.75, 0.78)

TARGET_SHAPES = ("box", "cylinder")


@dataclass
class Primitive:
    """One rigid object.  size meaning depends on kind:

    box: full edge lengths (sx, sy, sz); cylinder: (radius, height, 0);
    sphere: (radius, 0, 0).  yaw rotates boxes about z.
    """

    kind: str
    size: np.ndarray
    color: np.ndarray
    position: np.ndarray
    yaw: float = 0.0
    object_id: int = 0
    category: str = ""
    graspable: bool = True
    distractor: bool = False

    def __post_init__(self) -> None:
        self.size = np.asarray(self.size, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)

    def rest_height(self) -> float:
        if self.kind == "box":
            return float(self.size[2] / 2)
        if self.kind == "cylinder":
            return float(self.size[1] / 2)
        return float(self.size[0])  # sphere radius

    def footprint_radius(self) -> float:
        if self.kind == "box":
            return float(np.hypot(self.size[0], self.size[1]) / 2)
        return float(self.size[0])

    def copy(self) -> "Primitive":
        return Primitive(
            self.kind,
            self.size.copy(),
            self.color.copy(),
            self.position.copy(),
            self.yaw,
            self.object_id,
            self.category,
            self.graspable,
            self.distractor,
        )


@dataclass
class GripperState:
    position: np.ndarray
    open_frac: float = 1.0  # 1 open, 0 closed
    held_id: int = 0  # 0 = nothing held
    held_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        self.held_offset = np.asarray(self.held_offset, dtype=np.float64)

    def copy(self) -> "GripperState":
        return GripperState(
            self.position.copy(), self.open_frac, self.held_id, self.held_offset.copy()
        )


@dataclass
class Scene:
    """Complete world state.  step() never mutates; it returns a copy."""

    objects: list[Primitive]
    gripper: GripperState
    goal_center: np.ndarray
    goal_radius: float
    table_color: np.ndarray
    light_gain: float = 1.0
    step_count: int = 0

    def __post_init__(self) -> None:
        self.goal_center = np.asarray(self.goal_center, dtype=np.float64)
        self.table_color = np.asarray(self.table_color, dtype=np.float64)

    def copy(self) -> "Scene":
        return Scene(
            [o.copy() for o in self.objects],
            self.gripper.copy(),
            self.goal_center.copy(),
            self.goal_radius,
            self.table_color.copy(),
            self.light_gain,
            self.step_count,
        )

    def object_by_id(self, object_id: int) -> Primitive:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id}")

    def target(self) -> Primitive:
        for obj in self.objects:
            if not obj.distractor:
                return obj
        raise KeyError("scene has no target object")


@dataclass
class Action:
    """Bounded gripper command.  delta clamps to +-MAX_DELTA per axis,
    grip to [-1, 1]; grip > 0 means close, otherwise open."""

    delta: np.ndarray
    grip: float

    def __post_init__(self) -> None:
        self.delta = np.clip(np.asarray(self.delta, dtype=np.float64), -MAX_DELTA, MAX_DELTA)
        self.grip = float(np.clip(self.grip, -1.0, 1.0))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, [self.grip]])

    @staticmethod
    def from_vector(vec: np.ndarray) -> "Action":
        vec = np.asarray(vec, dtype=np.float64)
        return Action(vec[:3], float(vec[3]))


@dataclass
class TaskConfig:
    """Everything that defines an episode family: camera, layout, goal."""

    name: str = "push-block-to-goal"
    resolution: int = 128
    fov_deg: float = 55.0
    camera_azimuth_deg: float = 0.0
    camera_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    target_region: tuple[float, float, float, float] = (-0.22, 0.10, -0.15, 0.15)
    goal_center: tuple[float, float] = (0.18, 0.12)
    goal_radius: float = 0.06
    num_distractors: int = 0
    near_target_distractors: int = 0
    table_color: tuple[float, float, float] = DEFAULT_TABLE_COLOR
    light_gain: float = 1.0
    new_object: bool = False
    depth_noise: float = 0.0
    horizon: int = 600
    target_id: int = 1

    def camera(self) -> tuple[CameraIntrinsics, RigidTransform]:
        """Intrinsics and camera-to-base extrinsics for this task."""
        res = self.resolution
        f = res / (2.0 * math.tan(math.radians(self.fov_deg) / 2.0))
        intr = CameraIntrinsics(f, f, (res - 1) / 2.0, (res - 1) / 2.0, res, res)
        base_eye = np.array([0.0, -0.55, 0.45])
        look_at = np.array([0.0, 0.0, 0.0])
        az = math.radians(self.camera_azimuth_deg)
        rot = np.array(
            [
                [math.cos(az), -math.sin(az), 0.0],
                [math.sin(az), math.cos(az), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        eye = rot @ base_eye + np.asarray(self.camera_shift, dtype=np.float64)
        return intr, _look_at_extrinsic(eye, look_at)


def task_from_dict(d: dict) -> TaskConfig:
    """Rebuild a TaskConfig from a JSON-decoded dict.

    JSON has no tuples, so the tuple-valued fields arrive as lists."""
    values = dict(d)
    for key in ("camera_shift", "target_region", "goal_center", "table_color"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    return TaskConfig(**values)


def _look_at_extrinsic(eye: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Camera-to-base transform: camera +z forward, +x right, +y down."""
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValueError("camera cannot look straight up or down")
    right /= nr
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)
    return RigidTransform(rot, eye)


# ------------------------------------------------------------------ rendering


def _ray_box(origins, dirs, center, size, yaw):
    """Slab intersection in the box frame.  Returns (t, normal) with t=inf
    for misses."""
    c, s = math.cos(-yaw), math.sin(-yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o = (origins - center) @ rot.T
    d = dirs @ rot.T
    half = size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tentry = np.minimum(t1, t2)
    texit = np.maximum(t1, t2)
    # parallel rays: inside the slab -> (-inf, inf), outside -> no hit
    par = np.abs(d) < 1e-12
    inside = np.abs(o) <= half
    tentry = np.where(par, np.where(inside, -np.inf, np.inf), tentry)
    texit = np.where(par, np.where(inside, np.inf, -np.inf), texit)
    tmin = tentry.max(axis=1)
    tmax = texit.min(axis=1)
    hit = (tmax >= tmin) & (tmin > 1e-9)
    t = np.where(hit, tmin, np.inf)
    axis = np.argmax(tentry == tmin[:, None], axis=1)
    sign = -np.sign(np.take_along_axis(d, axis[:, None], axis=1)[:, 0])
    normal_box = np.zeros_like(o)
    np.put_along_axis(normal_box, axis[:, None], sign[:, None], axis=1)
    inv_rot = rot.T
    return t, normal_box @ inv_rot.T


def _ray_sphere(origins, dirs, center, radius):
    o = origins - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * np.einsum("ij,ij->i", o, dirs)
    cc = np.einsum("ij,ij->i", o, o) - radius * radius
    disc = b * b - 4.0 * a * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t = np.where(ok, (-b - sq) / (2.0 * a), np.inf)
    t = np.where(t > 1e-9, t, np.inf)
    with np.errstate(invalid="ignore"):
        p = origins + t[:, None] * dirs
    normal = np.where(np.isfinite(t)[:, None], (p - center) / radius, 0.0)
    return t, normal


def _ray_cylinder(origins, dirs, center, radius, height):
    o = origins - center
    hh = height / 2.0
    a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
    b = 2.0 * (o[:, 0] * dirs[:, 0] + o[:, 1] * dirs[:, 1])
    cc = o[:, 0] ** 2 + o[:, 1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * cc
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = np.where(ok, (-b - sq) / (2.0 * a), np.inf)
    z_side = o[:, 2] + t_side * dirs[:, 2]
    t_side = np.where((t_side > 1e-9) & (np.abs(z_side) <= hh), t_side, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_caps = (np.array([[hh], [-hh]]) - o[:, 2]) / dirs[:, 2]
    t_cap = np.full(origins.shape[0], np.inf)
    cap_sign = np.zeros(origins.shape[0])
    for row, sgn in ((0, 1.0), (1, -1.0)):
        tc = t_caps[row]
        px = o[:, 0] + tc * dirs[:, 0]
        py = o[:, 1] + tc * dirs[:, 1]
        good = (tc > 1e-9) & (px * px + py * py <= radius * radius) & (tc < t_cap)
        t_cap = np.where(good, tc, t_cap)
        cap_sign = np.where(good, sgn, cap_sign)

    use_side = t_side < t_cap
    t = np.where(use_side, t_side, t_cap)
    p = o + t[:, None] * dirs
    side_n = np.zeros_like(o)
    finite = np.isfinite(t)
    side_n[:, 0] = np.where(finite, p[:, 0] / radius, 0.0)
    side_n[:, 1] = np.where(finite, p[:, 1] / radius, 0.0)
    cap_n = np.zeros_like(o)
    cap_n[:, 2] = cap_sign
    return t, np.where(use_side[:, None], side_n, cap_n)


def render(
    scene: Scene,
    intrinsics: CameraIntrinsics,
    camera_to_base: RigidTransform,
    depth_noise: float = 0.0,
    rng: np.random.Generator | None = None,
    frame_id: int = 0,
) -> tuple[RGBDFrame, np.ndarray]:
    """Ray-cast the scene.  Returns the frame and an int32 instance
    buffer: 0 background/table, object ids for objects, -1 gripper."""
    h, w = intrinsics.height, intrinsics.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d_cam = np.stack(
        [
            (us.ravel() - intrinsics.cx) / intrinsics.fx,
            (vs.ravel() - intrinsics.cy) / intrinsics.fy,
            np.ones(h * w),
        ],
        axis=1,
    )
    dirs = d_cam @ camera_to_base.rotation.T  # depth along ray = camera z
    origins = np.broadcast_to(camera_to_base.translation, dirs.shape)

    n = h * w
    best_t = np.full(n, np.inf)
    best_normal = np.zeros((n, 3))
    best_color = np.zeros((n, 3))
    best_id = np.zeros(n, dtype=np.int32)

    def consider(t, normal, color_rows, ids):
        closer = t < best_t
        if not closer.any():
            return
        best_t[closer] = t[closer]
        best_normal[closer] = normal[closer]
        best_color[closer] = color_rows[closer]
        best_id[closer] = ids if np.isscalar(ids) else ids[closer]

    # table slab, with the goal disk painted on top
    t_tab, n_tab = _ray_box(
        origins,
        dirs,
        np.array([0.0, 0.0, -TABLE_THICKNESS / 2]),
        np.array([2 * TABLE_HALF_X, 2 * TABLE_HALF_Y, TABLE_THICKNESS]),
        0.0,
    )
    with np.errstate(invalid="ignore"):
        p_tab = origins + t_tab[:, None] * dirs
    on_goal = (
        np.isfinite(t_tab)
        & (n_tab[:, 2] > 0.5)
        & (
            (p_tab[:, 0] - scene.goal_center[0]) ** 2
            + (p_tab[:, 1] - scene.goal_center[1]) ** 2
            <= scene.goal_radius**2
        )
    )
    tab_colors = np.where(on_goal[:, None], np.asarray(GOAL_COLOR), scene.table_color)
    consider(t_tab, n_tab, tab_colors, 0)

    for obj in scene.objects:
        if obj.kind == "box":
            t, nm = _ray_box(origins, dirs, obj.position, obj.size, obj.yaw)
        elif obj.kind == "cylinder":
            t, nm = _ray_cylinder(origins, dirs, obj.position, obj.size[0], obj.size[1])
        elif obj.kind == "sphere":
            t, nm = _ray_sphere(origins, dirs, obj.position, obj.size[0])
        else:
            raise ValueError(f"unknown primitive kind {obj.kind!r}")
        consider(t, nm, np.broadcast_to(obj.color, (n, 3)), obj.object_id)

    t_g, n_g = _ray_sphere(origins, dirs, scene.gripper.position, GRIPPER_RADIUS)
    consider(t_g, n_g, np.broadcast_to(np.asarray(GRIPPER_COLOR), (n, 3)), -1)

    light = np.asarray(LIGHT_DIR) / np.linalg.norm(LIGHT_DIR)
    lambert = np.clip(best_normal @ light, 0.0, None)
    shade = scene.light_gain * (AMBIENT + DIFFUSE * lambert)
    rgb = np.clip(best_color * shade[:, None], 0.0, 1.0)

    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t, 0.0)
    if depth_noise > 0.0:
        if rng is None:
            raise ValueError("depth noise needs an rng")
        depth = np.where(hit, np.maximum(depth + depth_noise * rng.standard_normal(n), 1e-4), 0.0)
    rgb = np.where(hit[:, None], rgb, 0.0)
    ids = np.where(hit, best_id, 0).astype(np.int32)

    frame = RGBDFrame(
        rgb.reshape(h, w, 3).astype(np.float32),
        depth.reshape(h, w).astype(np.float32),
        frame_id=frame_id,
    )
    return frame, ids.reshape(h, w)


def instance_masks(id_buffer: np.ndarray, object_ids: list[int]) -> list[np.ndarray]:
    return [id_buffer == oid for oid in object_ids]


# ------------------------------------------------------------------- dynamics


def step(scene: Scene, action: Action) -> Scene:
    """Advance one tick.  Pure function of (scene, action)."""
    out = scene.copy()
    g = out.gripper
    g.position = g.position + action.delta
    g.position[0] = np.clip(g.position[0], -TABLE_HALF_X - 0.05, TABLE_HALF_X + 0.05)
    g.position[1] = np.clip(g.position[1], -TABLE_HALF_Y - 0.08, TABLE_HALF_Y + 0.05)
    g.position[2] = np.clip(g.position[2], WORKSPACE_Z[0], WORKSPACE_Z[1])

    closing = action.grip > 0.0
    if closing:
        if g.held_id == 0:
            best = None
            best_d = GRASP_RANGE
            for obj in out.objects:
                if not obj.graspable:
                    continue
                d = float(np.linalg.norm(obj.position - g.position))
                if d <= best_d:
                    best, best_d = obj, d
            if best is not None:
                g.held_id = best.object_id
                g.held_offset = best.position - g.position
        g.open_frac = 0.0
    else:
        if g.held_id != 0:
            obj = out.object_by_id(g.held_id)
            obj.position = obj.position.copy()
            obj.position[2] = obj.rest_height()
            g.held_id = 0
            g.held_offset = np.zeros(3)
        g.open_frac = 1.0

    if g.held_id != 0:
        obj = out.object_by_id(g.held_id)
        new_pos = g.position + g.held_offset
        # carried objects still cannot dip below the table surface
        new_pos[2] = max(new_pos[2], obj.rest_height())
        obj.position = new_pos

    out.step_count += 1
    return out


def proprio_vector(scene: Scene) -> np.ndarray:
    g = scene.gripper
    return np.concatenate([g.position, [g.open_frac]])


def check_success(scene: Scene, task: TaskConfig) -> bool:
    """Target resting inside the goal disk with the gripper open."""
    target = scene.object_by_id(task.target_id)
    if scene.gripper.held_id == task.target_id:
        return False
    if scene.gripper.open_frac < 1.0:
        return False
    dx = target.position[0] - task.goal_center[0]
    dy = target.position[1] - task.goal_center[1]
    if math.hypot(dx, dy) > task.goal_radius:
        return False
    return abs(target.position[2] - target.rest_height()) <= 1e-9


# ------------------------------------------------------------------- sampling


def _sample_target(task: TaskConfig, rng: np.random.Generator, appearance_rng) -> Primitive:
    """Pose from the target stream, appearance optionally from its own
    stream so pose draws stay identical across appearance variations."""
    kind = "box"
    size = np.array([0.050, 0.040, 0.036])
    color = np.asarray(WARM_COLORS[0])
    if task.new_object:
        kind = TARGET_SHAPES[int(appearance_rng.integers(len(TARGET_SHAPES)))]
        scale = float(appearance_rng.uniform(0.7, 1.3))
        color = np.asarray(WARM_COLORS[int(appearance_rng.integers(len(WARM_COLORS)))])
        if kind == "box":
            size = np.array([0.050, 0.040, 0.036]) * scale
        else:
            size = np.array([0.024 * scale, 0.044 * scale, 0.0])
    x0, x1, y0, y1 = task.target_region
    goal = np.asarray(task.goal_center)
    for _ in range(200):
        x = rng.uniform(x0, x1)
        y = rng.uniform(y0, y1)
        yaw = rng.uniform(0.0, 2.0 * np.pi)
        if np.hypot(x - goal[0], y - goal[1]) >= task.goal_radius + 0.07:
            prim = Primitive(
                kind,
                size,
                color,
                np.array([x, y, 0.0]),
                yaw=yaw if kind == "box" else 0.0,
                object_id=task.target_id,
                category="block",
            )
            prim.position[2] = prim.rest_height()
            return prim
    raise RuntimeError("could not place the target object")


def _sample_distractors(
    task: TaskConfig, rng: np.random.Generator, placed: list[Primitive]
) -> list[Primitive]:
    out: list[Primitive] = []
    goal = np.asarray(task.goal_center)
    next_id = task.target_id + 1
    for i in range(task.num_distractors):
        near_target = i < task.near_target_distractors
        for _ in range(300):
            color = np.asarray(COOL_COLORS[int(rng.integers(len(COOL_COLORS)))])
            if near_target:
                kind = "box"
                size = np.array([0.050, 0.040, 0.036]) * rng.uniform(0.9, 1.1)
            else:
                kind = ("sphere", "cylinder")[int(rng.integers(2))]
                if kind == "sphere":
                    size = np.array([rng.uniform(0.015, 0.025), 0.0, 0.0])
                else:
                    size = np.array([rng.uniform(0.012, 0.020), rng.uniform(0.03, 0.06), 0.0])
            x = rng.uniform(-TABLE_HALF_X + 0.05, TABLE_HALF_X - 0.05)
            y = rng.uniform(-TABLE_HALF_Y + 0.05, TABLE_HALF_Y - 0.05)
            yaw = rng.uniform(0.0, 2.0 * np.pi)
            prim = Primitive(
                kind,
                size,
                color,
                np.array([x, y, 0.0]),
                yaw=yaw if kind == "box" else 0.0,
                object_id=next_id,
                category="distractor",
                distractor=True,
            )
            prim.position[2] = prim.rest_height()
            r = prim.footprint_radius()
            if np.hypot(x - goal[0], y - goal[1]) < task.goal_radius + r + 0.01:
                continue
            if all(
                np.hypot(x - q.position[0], y - q.position[1])
                >= r + q.footprint_radius() + 0.01
                for q in placed + out
            ):
                out.append(prim)
                next_id += 1
                break
        else:
            raise RuntimeError("could not place a distractor")
    return out


def sample_initial(task: TaskConfig, seed: int) -> Scene:
    """Draw an initial scene.  The target pose, distractor layout, and
    target appearance use separate child streams of the seed, so
    variations that add distractors or swap the target's look leave the
    target pose draw bitwise untouched."""
    ss = np.random.SeedSequence(seed)
    target_ss, distractor_ss, appearance_ss = ss.spawn(3)
    target = _sample_target(
        task, np.random.default_rng(target_ss), np.random.default_rng(appearance_ss)
    )
    distractors = _sample_distractors(task, np.random.default_rng(distractor_ss), [target])
    return Scene(
        objects=[target] + distractors,
        gripper=GripperState(np.array(GRIPPER_HOME)),
        goal_center=np.asarray(task.goal_center, dtype=np.float64),
        goal_radius=task.goal_radius,
        table_color=np.asarray(task.table_color, dtype=np.float64),
        light_gain=task.light_gain,
    )


# -------------------------------------------------------------------- expert


def scripted_expert(scene: Scene, task: TaskConfig) -> Action:
    """Pure state-feedback pick-and-place controller.

    Phases are recomputed from the scene each call: approach above the
    target, descend, close, lift, carry over the goal, descend, open.
    No internal state, so camera and appearance changes cannot affect it.
    """
    g = scene.gripper
    target = scene.object_by_id(task.target_id)
    goal = np.array([task.goal_center[0], task.goal_center[1]])
    hover_z = 0.10

    def go(dest, grip):
        return Action(np.asarray(dest) - g.position, grip)

    if g.held_id == task.target_id:
        over_goal = np.hypot(g.position[0] + g.held_offset[0] - goal[0],
                             g.position[1] + g.held_offset[1] - goal[1]) < 0.008
        carry_z = target.rest_height() - g.held_offset[2]
        if not over_goal:
            dest_xy = goal - g.held_offset[:2]
            return go([dest_xy[0], dest_xy[1], max(hover_z, g.position[2])], 1.0)
        if g.position[2] > carry_z + 0.004:
            return go([g.position[0], g.position[1], carry_z], 1.0)
        return Action(np.zeros(3), -1.0)  # release over the goal

    if check_success(scene, task):
        dest = [g.position[0], g.position[1], max(g.position[2], 0.12)]
        return go(dest, -1.0)

    above = np.hypot(g.position[0] - target.position[0], g.position[1] - target.position[1]) < 0.004
    if not above:
        return go([target.position[0], target.position[1], max(hover_z, target.position[2] + 0.05)], -1.0)
    if g.position[2] > target.position[2] + 0.004:
        return go([target.position[0], target.position[1], target.position[2]], -1.0)
    return Action(np.zeros(3), 1.0)  # close on the target


# ---------------------------------------------------------------- variations

VARIATIONS = (
    "canonical",
    "background_easy",
    "background_hard",
    "camera_easy",
    "camera_hard",
    "new_object",
)


def make_variation(task: TaskConfig, kind: str, seed: int = 0) -> TaskConfig:
    """Derive an evaluation condition from a base task.

    background variants recolor the table (hard also rescales lighting
    and adds distractors, some shaped like the target); camera variants
    rotate the viewpoint (easy also shifts it); new_object resamples the
    target's shape, size, and color per episode."""
    if kind == "canonical":
        return replace(task)
    rng = np.random.default_rng(np.random.SeedSequence((seed, VARIATIONS.index(kind))))
    if kind == "background_easy":
        return replace(
            task,
            table_color=TABLE_COLORS[int(rng.integers(len(TABLE_COLORS)))],
            num_distractors=2,
        )
    if kind == "background_hard":
        return replace(
            task,
            table_color=TABLE_COLORS[int(rng.integers(len(TABLE_COLORS)))],
            light_gain=float(rng.choice([0.55, 1.45])),
            num_distractors=5,
            near_target_distractors=2,
        )
    if kind == "camera_easy":
        return replace(task, camera_azimuth_deg=task.camera_azimuth_deg + 10.0,
                       camera_shift=(0.05, 0.0, 0.0))
    if kind == "camera_hard":
        return replace(task, camera_azimuth_deg=task.camera_azimuth_deg + 40.0)
    if kind == "new_object":
        return replace(task, new_object=True)
    raise ValueError(f"unknown variation {kind!r}")


# ---------------------------------------------------------------- evaluation


@dataclass
class EpisodeResult:
    seed: int
    success: bool
    steps: int


@dataclass
class EvalResult:
    variation: str
    seed: int
    episodes: list[EpisodeResult]

    @property
    def successes(self) -> int:
        return sum(1 for e in self.episodes if e.success)

    @property
    def rate(self) -> float:
        return self.successes / max(1, len(self.episodes))


def run_episode(task: TaskConfig, actor, episode_seed: int, horizon: int | None = None) -> EpisodeResult:
    """Roll one episode.  actor(scene, frame, id_buffer, rng) -> Action."""
    horizon = task.horizon if horizon is None else horizon
    ss = np.random.SeedSequence(episode_seed)
    scene_ss, act_ss = ss.spawn(2)
    scene = sample_initial(task, int(scene_ss.generate_state(1)[0]))
    rng = np.random.default_rng(act_ss)
    intr, extr = task.camera()
    noise_rng = np.random.default_rng(ss.spawn(1)[0]) if task.depth_noise > 0 else None
    for t in range(horizon):
        frame, ids = render(scene, intr, extr, task.depth_noise, noise_rng, frame_id=t)
        action = actor(scene, frame, ids, rng)
        scene = step(scene, action)
        if check_success(scene, task):
            return EpisodeResult(episode_seed, True, t + 1)
    return EpisodeResult(episode_seed, False, horizon)


def evaluate(
    task: TaskConfig,
    actor_factory,
    episodes: int,
    seed: int,
    variation: str = "canonical",
    horizon: int | None = None,
    jobs: int = 1,
) -> EvalResult:
    """Run episodes with per-episode seeds spawned from one root seed.

    Results do not depend on jobs: every episode derives all of its
    randomness from its own seed."""
    children = np.random.SeedSequence(seed).spawn(episodes)
    ep_seeds = [int(c.generate_state(1)[0]) for c in children]

    def one(ep_seed: int) -> EpisodeResult:
        return run_episode(task, actor_factory(), ep_seed, horizon)

    if jobs <= 1:
        results = [one(s) for s in ep_seeds]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ep_seeds))
    return EvalResult(variation, seed, results)


def expert_actor(task: TaskConfig):
    """Adapter: the scripted expert under the evaluate() actor contract."""

    def act(scene, frame, ids, rng):
        return scripted_expert(scene, task)

    return act


def null_actor():
    def act(scene, frame, ids, rng):
        return Action(np.zeros(3), -1.0)

    return act
