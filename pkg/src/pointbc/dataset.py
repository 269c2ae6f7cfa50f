"""Demonstration collection and bit-exact trajectory storage.

Each trajectory is a directory: a JSON manifest plus one raw
little-endian binary stream per signal (color, depth, masks, proprio,
actions, instance ids) and the first-frame annotation.  Loading
reproduces every array bitwise, which the round-trip tests pin down.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import percept, sim
from .geom import CameraIntrinsics, RGBDFrame, RigidTransform
from .policy import Demonstration, PolicyConfig, observation_from_frame

SCHEMA_VERSION = 1

_STREAMS = {
    "color": "<f4",
    "depth": "<f4",
    "masks": "u1",
    "instances": "<i4",
    "proprio": "<f8",
    "actions": "<f8",
}


@dataclass
class RawTrajectory:
    """One recorded episode before tokenization.

    colors: (T, H, W, 3) float32; depths: (T, H, W) float32;
    masks: (T, n_objects, H, W) bool for the annotated ids;
    instances: (T, H, W) int32 raw instance buffers;
    proprios: (T, P) float64; actions: (T, A) float64.
    """

    task: dict
    seed: int
    object_ids: list[int]
    intrinsics: CameraIntrinsics
    camera_to_base: RigidTransform
    colors: np.ndarray
    depths: np.ndarray
    masks: np.ndarray
    instances: np.ndarray
    proprios: np.ndarray
    actions: np.ndarray
    annotation: percept.Annotation

    @property
    def steps(self) -> int:
        return self.colors.shape[0]


def collect_demo(
    task: sim.TaskConfig,
    seed: int,
    extra_steps: int = 5,
    horizon: int | None = None,
    action_noise: float = 0.0,
    noise_prob: float = 1.0,
) -> RawTrajectory:
    """Roll the scripted expert once and record everything.

    With action_noise > 0, a noise_prob fraction of steps executes the
    expert's position delta plus gaussian noise while the stored label
    stays the clean command.  The closed-loop expert then demonstrates
    the correction, so the set covers states around the nominal path
    instead of only on it.  Raises RuntimeError if the expert does not
    reach success; demo sets must be clean by construction.
    """
    horizon = task.horizon if horizon is None else horizon
    scene = sim.sample_initial(task, seed)
    # separate stream so noisy and clean collections share the scene draw
    noise_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    intr, extr = task.camera()
    object_ids = [task.target_id]

    colors, depths, masks, instances, proprios, actions = [], [], [], [], [], []
    annotation = None
    succeeded_at = -1
    for t in range(horizon):
        frame, ids = sim.render(scene, intr, extr, frame_id=t)
        if t == 0:
            annotation = percept.Annotation(
                0, {oid: ids == oid for oid in object_ids}
            )
        action = sim.scripted_expert(scene, task)
        colors.append(frame.color)
        depths.append(frame.depth)
        masks.append(np.stack([ids == oid for oid in object_ids]))
        instances.append(ids)
        proprios.append(sim.proprio_vector(scene))
        actions.append(action.as_vector())
        executed = action
        if action_noise > 0.0 and noise_rng.uniform() < noise_prob:
            executed = sim.Action(
                action.delta + noise_rng.normal(0.0, action_noise, 3), action.grip
            )
        scene = sim.step(scene, executed)
        if succeeded_at < 0 and sim.check_success(scene, task):
            succeeded_at = t
        if succeeded_at >= 0 and t - succeeded_at >= extra_steps:
            break
    if succeeded_at < 0:
        raise RuntimeError(f"scripted expert failed on seed {seed}")

    return RawTrajectory(
        task=dataclasses.asdict(task),
        seed=seed,
        object_ids=object_ids,
        intrinsics=intr,
        camera_to_base=extr,
        colors=np.stack(colors),
        depths=np.stack(depths),
        masks=np.stack(masks),
        instances=np.stack(instances),
        proprios=np.stack(proprios),
        actions=np.stack(actions),
        annotation=annotation,
    )


def _write_stream(path: str, arr: np.ndarray, code: str) -> None:
    data = np.ascontiguousarray(arr, dtype=np.dtype(code)).tobytes()
    out_dir = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp_stream_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_trajectory(dir_path: str, traj: RawTrajectory) -> None:
    """Write one trajectory directory; the manifest rename commits it."""
    os.makedirs(dir_path, exist_ok=True)
    t, h, w, _ = traj.colors.shape
    shapes = {
        "color": [t, h, w, 3],
        "depth": [t, h, w],
        "masks": [t, len(traj.object_ids), h, w],
        "instances": [t, h, w],
        "proprio": list(traj.proprios.shape),
        "actions": list(traj.actions.shape),
    }
    arrays = {
        "color": traj.colors,
        "depth": traj.depths,
        "masks": traj.masks,
        "instances": traj.instances,
        "proprio": traj.proprios,
        "actions": traj.actions,
    }
    for name, code in _STREAMS.items():
        _write_stream(os.path.join(dir_path, f"{name}.bin"), arrays[name], code)
    percept.save_annotation(os.path.join(dir_path, "annotation"), traj.annotation)

    manifest = {
        "schema": SCHEMA_VERSION,
        "steps": t,
        "height": h,
        "width": w,
        "seed": traj.seed,
        "object_ids": traj.object_ids,
        "task": traj.task,
        "intrinsics": dataclasses.asdict(traj.intrinsics),
        "extrinsic": {
            "rotation": traj.camera_to_base.rotation.ravel().tolist(),
            "translation": traj.camera_to_base.translation.tolist(),
        },
        "streams": {
            name: {"file": f"{name}.bin", "dtype": code, "shape": shapes[name]}
            for name, code in _STREAMS.items()
        },
    }
    fd, tmp = tempfile.mkstemp(dir=dir_path, prefix=".tmp_manifest_")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        os.replace(tmp, os.path.join(dir_path, "manifest.json"))
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_trajectory(dir_path: str) -> RawTrajectory:
    manifest_path = os.path.join(dir_path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"{dir_path} has no manifest.json")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported trajectory schema in {dir_path}")

    def stream(name: str) -> np.ndarray:
        meta = manifest["streams"][name]
        dt = np.dtype(meta["dtype"])
        path = os.path.join(dir_path, meta["file"])
        arr = np.fromfile(path, dtype=dt)
        expected = int(np.prod(meta["shape"]))
        if arr.size != expected:
            raise ValueError(f"stream {name} in {dir_path} is corrupted")
        return arr.reshape(meta["shape"]).astype(dt.newbyteorder("="), copy=False)

    ext = manifest["extrinsic"]
    return RawTrajectory(
        task=dataclasses.asdict(sim.task_from_dict(manifest["task"])),
        seed=int(manifest["seed"]),
        object_ids=[int(x) for x in manifest["object_ids"]],
        intrinsics=CameraIntrinsics(**manifest["intrinsics"]),
        camera_to_base=RigidTransform(
            np.array(ext["rotation"]).reshape(3, 3), np.array(ext["translation"])
        ),
        colors=stream("color"),
        depths=stream("depth"),
        masks=stream("masks").astype(bool),
        instances=stream("instances"),
        proprios=stream("proprio"),
        actions=stream("actions"),
        annotation=percept.load_annotation(os.path.join(dir_path, "annotation")),
    )


def save_demo_set(root: str, trajectories: list[RawTrajectory]) -> list[str]:
    os.makedirs(root, exist_ok=True)
    paths = []
    for i, traj in enumerate(trajectories):
        path = os.path.join(root, f"traj_{i:04d}")
        save_trajectory(path, traj)
        paths.append(path)
    return paths


def list_trajectories(root: str) -> list[str]:
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    dirs = sorted(
        os.path.join(root, d)
        for d in os.listdir(root)
        if os.path.isdir(os.path.join(root, d)) and d.startswith("traj_")
    )
    if not dirs:
        raise FileNotFoundError(f"no trajectories under {root}")
    return dirs


def prepare_demonstration(traj: RawTrajectory, cfg: PolicyConfig) -> Demonstration:
    """Tokenize a raw trajectory for training.

    Center-sampling seeds derive from (trajectory seed, step), so the
    same stored data always produces identical observations.
    """
    observations = []
    for t in range(traj.steps):
        frame = RGBDFrame(traj.colors[t], traj.depths[t], frame_id=t)
        masks = [traj.masks[t, i] for i in range(len(traj.object_ids))]
        obs = observation_from_frame(
            frame,
            masks,
            traj.proprios[t],
            traj.intrinsics,
            traj.camera_to_base,
            cfg,
            seed_key=(traj.seed, t),
        )
        observations.append(obs)
    return Demonstration(observations, traj.actions[:, : cfg.action_dim])


def load_demonstrations(root: str, cfg: PolicyConfig, limit: int | None = None) -> list[Demonstration]:
    paths = list_trajectories(root)
    if limit is not None:
        paths = paths[:limit]
    return [prepare_demonstration(load_trajectory(p), cfg) for p in paths]
