"""Segmentation stand-ins: mask providers, tracking, and re-grounding.

The simulator's instance buffer plays the role of a learned segmenter.
From it this module builds per-object masks three ways: directly
(ground truth), by greedy IoU matching against the previous masks
(a stand-in for a video tracker), and by appearance correspondence
against an annotated reference image (re-grounding after the target
object is swapped).  Annotations round-trip through PGM files plus a
JSON manifest so a labeled first frame is an on-disk artifact.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geom import RGBDFrame

IOU_THRESHOLD = 0.3
MIN_PROPOSAL_PIXELS = 20
HIST_BINS = 8
SHAPE_FEATURE_GAIN = 0.1  # histogram dominates; shape stats break ties


@dataclass
class Annotation:
    """User-labeled reference masks on one frame.

    masks: object id -> (H, W) bool.  Masks must be non-empty, share
    one shape, and be pairwise disjoint.
    """

    reference_frame_id: int
    masks: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        shape = None
        total = None
        for oid, mask in self.masks.items():
            mask = np.asarray(mask, dtype=bool)
            self.masks[oid] = mask
            if shape is None:
                shape = mask.shape
                total = np.zeros(shape, dtype=np.int32)
            if mask.shape != shape:
                raise ValueError("annotation masks must share one shape")
            if not mask.any():
                raise ValueError(f"annotation mask for object {oid} is empty")
            total += mask
        if total is not None and (total > 1).any():
            raise ValueError("annotation masks overlap")

    def object_ids(self) -> list[int]:
        return sorted(self.masks)


def propose_masks(id_buffer: np.ndarray, min_pixels: int = MIN_PROPOSAL_PIXELS) -> list[np.ndarray]:
    """Anonymous region proposals from an instance buffer.

    Connected components are extracted per positive id (an occluder can
    split an object into several proposals) and components smaller than
    min_pixels are dropped.  Order: ascending id, then component label.
    """
    proposals: list[np.ndarray] = []
    for oid in np.unique(id_buffer):
        if oid <= 0:
            continue
        labels, count = ndimage.label(id_buffer == oid)
        for comp in range(1, count + 1):
            mask = labels == comp
            if mask.sum() >= min_pixels:
                proposals.append(mask)
    return proposals


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    if inter == 0:
        return 0.0
    union = np.logical_or(a, b).sum()
    return float(inter / union)


class GroundTruthTracker:
    """Masks straight from the instance buffer for the annotated ids."""

    def __init__(self, annotation: Annotation):
        self.ids = annotation.object_ids()

    def update(self, id_buffer: np.ndarray) -> dict[int, np.ndarray]:
        return {oid: id_buffer == oid for oid in self.ids}


class GreedyIoUTracker:
    """Greedy frame-to-frame association of proposals to tracks.

    Tracks claim proposals in ascending id order by best IoU against
    the track's last seen mask; matches below IOU_THRESHOLD and
    out-claimed tracks yield an empty mask for that frame while the
    reference mask stays put, so a track re-acquires after occlusion.
    """

    def __init__(self, annotation: Annotation):
        self.last: dict[int, np.ndarray] = {
            oid: mask.copy() for oid, mask in annotation.masks.items()
        }

    def update(self, proposals: list[np.ndarray]) -> dict[int, np.ndarray]:
        out: dict[int, np.ndarray] = {}
        claimed: set[int] = set()
        for oid in sorted(self.last):
            ref = self.last[oid]
            best_j = -1
            best_iou = 0.0
            for j, prop in enumerate(proposals):
                if j in claimed:
                    continue
                iou = mask_iou(ref, prop)
                if iou > best_iou:  # strict: the lowest index wins ties
                    best_j, best_iou = j, iou
            if best_j >= 0 and best_iou >= IOU_THRESHOLD:
                claimed.add(best_j)
                self.last[oid] = proposals[best_j].copy()
                out[oid] = proposals[best_j]
            else:
                out[oid] = np.zeros_like(ref)
        return out


def track_masks(
    annotation: Annotation, id_buffers: list[np.ndarray], mode: str = "iou"
) -> list[dict[int, np.ndarray]]:
    """Offline tracking over a recorded sequence of instance buffers."""
    if mode == "ground_truth":
        tracker = GroundTruthTracker(annotation)
        return [tracker.update(buf) for buf in id_buffers]
    if mode == "iou":
        tracker = GreedyIoUTracker(annotation)
        return [tracker.update(propose_masks(buf)) for buf in id_buffers]
    raise ValueError(f"unknown tracking mode {mode!r}")


# ----------------------------------------------------------------- embedding


def embed_mask(frame: RGBDFrame, mask: np.ndarray) -> np.ndarray:
    """Appearance descriptor of a masked region.

    An 8x8x8 color histogram (L1-normalized) concatenated with four
    down-weighted shape statistics: area fraction, min/max bounding-box
    aspect, and the two second-order normalized central moments.  The
    result is L2-normalized.  Histogram and moments are invariant to
    uniform rescaling of the region, so the descriptor is nearly
    scale-free.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("cannot embed an empty mask")
    colors = frame.color[mask].astype(np.float64)
    hist, _ = np.histogramdd(
        colors, bins=(HIST_BINS,) * 3, range=((0, 1), (0, 1), (0, 1))
    )
    hist = hist.ravel() / n

    vs, us = np.nonzero(mask)
    h, w = mask.shape
    area_frac = n / (h * w)
    du = us.max() - us.min() + 1
    dv = vs.max() - vs.min() + 1
    aspect = min(du, dv) / max(du, dv)
    uc = us.mean()
    vc = vs.mean()
    mu20 = np.mean((us - uc) ** 2)
    mu02 = np.mean((vs - vc) ** 2)
    # normalized central moments: mu_pq / mu00^2 with mu00 = n, and the
    # means above already divide by n, so divide by n once more
    eta20 = mu20 / n
    eta02 = mu02 / n
    shape_stats = SHAPE_FEATURE_GAIN * np.array([area_frac, aspect, eta20, eta02])

    vec = np.concatenate([hist, shape_stats])
    return vec / np.linalg.norm(vec)


def correspond(
    annotated: list[tuple[int, np.ndarray]],
    proposal_embeddings: list[np.ndarray],
) -> tuple[dict[int, int], dict[int, dict]]:
    """Match each annotated object to its most similar proposal.

    Each object independently takes the argmax cosine similarity;
    several objects may claim the same proposal, which the caller can
    see in the returned stats.  Returns (object id -> proposal index,
    object id -> stats with score and margin to the runner-up).
    """
    if not proposal_embeddings:
        raise ValueError("no proposals to correspond against")
    props = np.stack(proposal_embeddings).astype(np.float64)
    norms = np.linalg.norm(props, axis=1)
    if (norms == 0).any():
        raise ValueError("proposal embeddings must have nonzero norm")
    props = props / norms[:, None]
    mapping: dict[int, int] = {}
    stats: dict[int, dict] = {}
    for oid, emb in annotated:
        e = np.asarray(emb, dtype=np.float64)
        e_norm = np.linalg.norm(e)
        if e_norm == 0:
            raise ValueError("annotated embeddings must have nonzero norm")
        scores = props @ (e / e_norm)
        best = int(np.argmax(scores))
        margin = float(scores[best] - np.partition(scores, -2)[-2]) if len(scores) > 1 else float("inf")
        mapping[oid] = best
        stats[oid] = {"score": float(scores[best]), "margin": margin}
    return mapping, stats


# ---------------------------------------------------------------- annotation


def write_pgm(path: str, mask: np.ndarray) -> None:
    """Binary (P5) PGM with 255 = inside the mask."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    data = (mask.astype(np.uint8) * 255).tobytes()
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp_pgm_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode())
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError(f"{path} is not a binary PGM")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(x) for x in line.split())
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError("expected 8-bit PGM")
        data = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return data >= 128


def save_annotation(dir_path: str, annotation: Annotation) -> None:
    """Write one PGM per mask plus a JSON manifest, atomically enough:
    masks land first, the manifest rename commits the annotation."""
    os.makedirs(dir_path, exist_ok=True)
    entries = []
    for oid in annotation.object_ids():
        name = f"mask_{oid}.pgm"
        write_pgm(os.path.join(dir_path, name), annotation.masks[oid])
        entries.append({"object_id": oid, "file": name})
    manifest = {
        "reference_frame_id": annotation.reference_frame_id,
        "objects": entries,
    }
    fd, tmp = tempfile.mkstemp(dir=dir_path, prefix=".tmp_ann_")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        os.replace(tmp, os.path.join(dir_path, "annotation.json"))
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_annotation(dir_path: str) -> Annotation:
    with open(os.path.join(dir_path, "annotation.json")) as f:
        manifest = json.load(f)
    masks = {
        int(entry["object_id"]): read_pgm(os.path.join(dir_path, entry["file"]))
        for entry in manifest["objects"]
    }
    return Annotation(int(manifest["reference_frame_id"]), masks)
