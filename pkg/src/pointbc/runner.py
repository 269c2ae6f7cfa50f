"""Glue between the trained policy, perception, and the simulator.

This is where a checkpoint becomes an actor inside evaluate(): frames
are segmented by the chosen tracker, tokenized into policy
observations, and the sampled action vector becomes a simulator Action.
Also hosts the ablation variant table and its experiment driver.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import dataset, percept, report, sim
from .geom import RGBDFrame
from .policy import (
    Policy,
    PolicyConfig,
    PolicyNetwork,
    TrainResult,
    observation_from_frame,
    train_bc,
)

# named observation-representation variants for the ablation: image
# patches, camera-frame clouds, base-frame clouds, and base-frame
# clouds with masked-cluster training
VARIANTS = ("rgbd", "cloud_camera", "cloud_base", "cloud_base_masked")


def variant_config(base: PolicyConfig, variant: str) -> PolicyConfig:
    if variant == "rgbd":
        return dataclasses.replace(base, representation="rgbd", mask_ratio=0.0)
    if variant == "cloud_camera":
        return dataclasses.replace(
            base, representation="clouds", cloud_frame="camera", mask_ratio=0.0
        )
    if variant == "cloud_base":
        return dataclasses.replace(
            base, representation="clouds", cloud_frame="base", mask_ratio=0.0
        )
    if variant == "cloud_base_masked":
        return dataclasses.replace(base, representation="clouds", cloud_frame="base")
    raise ValueError(f"unknown variant {variant!r}")


def _reground_annotation(
    task: sim.TaskConfig,
    frame,
    ids: np.ndarray,
    reference: tuple,
) -> percept.Annotation:
    """Locate the target on a new-object scene by appearance matching.

    reference: (frame, annotation) from the training data.  The target
    mask becomes the proposal whose embedding is most similar to the
    annotated training object's embedding.
    """
    ref_frame, ref_annotation = reference
    ref_emb = percept.embed_mask(ref_frame, ref_annotation.masks[task.target_id])
    proposals = percept.propose_masks(ids)
    embeddings = [percept.embed_mask(frame, m) for m in proposals]
    mapping, _ = percept.correspond([(task.target_id, ref_emb)], embeddings)
    return percept.Annotation(
        frame.frame_id, {task.target_id: proposals[mapping[task.target_id]]}
    )


def policy_actor_factory(
    network: PolicyNetwork,
    task: sim.TaskConfig,
    tracker: str = "ground_truth",
    reference: tuple | None = None,
):
    """Per-episode actor: tracker state + rolling observation window.

    The first frame's instance buffer provides the reference masks for
    the annotated object ids (the user would click these once).  On a
    new-object task with a (frame, annotation) reference from training,
    the target is instead re-grounded by appearance correspondence.
    """
    intr, extr = task.camera()
    cfg = network.cfg

    def factory():
        policy = Policy(network)
        state = {"tracker": None}

        def act(scene: sim.Scene, frame, ids, rng: np.random.Generator) -> sim.Action:
            if state["tracker"] is None:
                if task.new_object and reference is not None:
                    annotation = _reground_annotation(task, frame, ids, reference)
                else:
                    annotation = percept.Annotation(
                        frame.frame_id, {task.target_id: ids == task.target_id}
                    )
                if tracker == "ground_truth":
                    state["tracker"] = percept.GroundTruthTracker(annotation)
                elif tracker == "iou":
                    state["tracker"] = percept.GreedyIoUTracker(annotation)
                else:
                    raise ValueError(f"unknown tracker {tracker!r}")
            trk = state["tracker"]
            if isinstance(trk, percept.GroundTruthTracker):
                masks = trk.update(ids)
            else:
                masks = trk.update(percept.propose_masks(ids))
            mask_list = [masks.get(task.target_id)]
            fps_seed = int(rng.integers(2**31))
            obs = observation_from_frame(
                frame,
                mask_list,
                sim.proprio_vector(scene),
                intr,
                extr,
                cfg,
                seed_key=(fps_seed, frame.frame_id),
            )
            vec = policy.act(obs, rng)
            return sim.Action.from_vector(vec)

        return act

    return factory


def evaluate_network(
    network: PolicyNetwork,
    task: sim.TaskConfig,
    variation: str,
    episodes: int,
    seed: int,
    tracker: str = "ground_truth",
    horizon: int | None = None,
    jobs: int = 1,
    variation_seed: int = 0,
    reference: tuple | None = None,
) -> sim.EvalResult:
    varied = sim.make_variation(task, variation, variation_seed)
    factory = policy_actor_factory(network, varied, tracker, reference)
    return sim.evaluate(varied, factory, episodes, seed, variation, horizon, jobs)


def load_reference(data_root: str) -> tuple:
    """First trajectory's annotated frame, for eval-time re-grounding."""
    paths = dataset.list_trajectories(data_root)
    if not paths:
        raise ValueError(f"no trajectories under {data_root}")
    traj = dataset.load_trajectory(paths[0])
    ref = traj.annotation.reference_frame_id
    frame = RGBDFrame(traj.colors[ref], traj.depths[ref], ref)
    return frame, traj.annotation


def train_from_dataset(
    data_root: str,
    cfg: PolicyConfig,
    seed: int,
    demos_limit: int | None = None,
    log_fn=None,
) -> TrainResult:
    demos = dataset.load_demonstrations(data_root, cfg, demos_limit)
    return train_bc(demos, cfg, seed, log_fn)


def run_ablation(
    data_root: str,
    base_cfg: PolicyConfig,
    seeds: list[int],
    episodes: int,
    eval_seed: int,
    task: sim.TaskConfig,
    variations: list[str],
    variants: list[str] | None = None,
    tracker: str = "ground_truth",
    log_fn=None,
    trained: dict[tuple[str, int], PolicyNetwork] | None = None,
) -> list[report.EvalRecord]:
    """Train each representation variant per seed, evaluate everywhere.

    trained: optional pre-trained networks keyed by (variant, seed) to
    reuse instead of retraining (the full variant from a prior training
    run, typically).
    """
    variants = list(variants or VARIANTS)
    records: list[report.EvalRecord] = []
    for variant in variants:
        cfg = variant_config(base_cfg, variant)
        for seed in seeds:
            started = time.time()
            net = (trained or {}).get((variant, seed))
            if net is None:
                result = train_from_dataset(data_root, cfg, seed)
                net = result.network
            if log_fn:
                log_fn(f"{variant} seed {seed}: trained in {time.time() - started:.0f}s")
            for variation in variations:
                res = evaluate_network(
                    net, task, variation, episodes, eval_seed, tracker
                )
                records.append(
                    report.EvalRecord(
                        variation, seed, episodes, res.successes, variant
                    )
                )
                if log_fn:
                    log_fn(
                        f"{variant} seed {seed} {variation}: "
                        f"{res.successes}/{episodes}"
                    )
    return records
