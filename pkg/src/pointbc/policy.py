"""Object-centric behavior-cloning policy.

Observations are tokenized per timestep: each segmented object's point
cloud becomes a handful of local-group tokens (set encoder on
center-relative points plus an embedding of the center), proprioception
becomes one extra token, and a sinusoidal temporal encoding is added to
every token of that timestep.  A learned action-readout token is
appended to the sequence, a bidirectional transformer encoder mixes
everything, and the readout latent feeds a Gaussian-mixture action
head.  Training minimizes mixture NLL over sliding history windows with
random masking of cluster tokens; inference keeps all clusters.

An alternative image representation (flattened RGB-D patches instead of
object clouds) is included for ablations, selected via PolicyConfig.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .cloud import ClusterSet, build_clusters, kept_count
from .geom import CameraIntrinsics, RGBDFrame, RigidTransform, backproject, to_base_frame
from .nn import tensor as T

REPRESENTATIONS = ("clouds", "rgbd")
CLOUD_FRAMES = ("camera", "base")
DECODES = ("mode", "mean", "sample")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class PolicyConfig:
    """Hyperparameters for tokenization, network, and training."""

    history: int = 10  # observation window length H
    clusters: int = 10  # cluster tokens per object per frame
    cluster_points: int = 32  # points per cluster
    mask_ratio: float = 0.6  # fraction of cluster tokens dropped in training
    width: int = 64  # transformer width
    layers: int = 4
    heads: int = 4  # width 64 is not divisible by 6, so desk-scale default is 4
    ff_hidden: int = 256
    head_hidden: int = 256  # hidden units in the two-layer action head
    modes: int = 5  # mixture components
    action_dim: int = 4
    proprio_dim: int = 4
    num_objects: int = 1  # segmented object slots per frame
    pe_base: float = 10.0
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    grad_clip: float = 100.0
    representation: str = "clouds"
    cloud_frame: str = "base"
    decode: str = "mode"  # rollout action readout: mode, mean, or sample
    rgbd_size: int = 32  # image edge after downsampling (rgbd representation)
    rgbd_patch: int = 8  # patch edge in downsampled pixels
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in [0, 1)")
        if min(self.history, self.clusters, self.cluster_points, self.modes) < 1:
            raise ValueError("history, clusters, cluster_points, modes must be >= 1")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.cloud_frame not in CLOUD_FRAMES:
            raise ValueError(f"unknown cloud_frame {self.cloud_frame!r}")
        if self.decode not in DECODES:
            raise ValueError(f"unknown decode {self.decode!r}")
        if self.rgbd_size % self.rgbd_patch != 0:
            raise ValueError("rgbd_size must be a multiple of rgbd_patch")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "PolicyConfig":
        return PolicyConfig(**d)

    @property
    def kept_clusters(self) -> int:
        return kept_count(self.clusters, self.mask_ratio)

    @property
    def rgbd_patches(self) -> int:
        return (self.rgbd_size // self.rgbd_patch) ** 2

    @property
    def rgbd_patch_dim(self) -> int:
        return self.rgbd_patch * self.rgbd_patch * 4  # rgb + depth channels


def positional_encoding(position: float, width: int, base: float = 10.0) -> np.ndarray:
    """Sinusoidal encoding of one scalar position.

    Entry i is sin(position / base**(i / width)) for even i and
    cos(position / base**(i / width)) for odd i, so every value lies in
    [-1, 1] and nearby positions get nearby codes.
    """
    idx = np.arange(width, dtype=np.float64)
    angles = position / np.power(base, idx / width)
    return np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))


def positional_encoding_table(length: int, width: int, base: float = 10.0) -> np.ndarray:
    """(length, width) table of encodings for positions 0..length-1."""
    return np.stack([positional_encoding(p, width, base) for p in range(length)])


@dataclass
class PolicyObservation:
    """One timestep as the policy sees it.

    clusters: per object slot, the tokenized cloud or None when the
        object is not visible (clouds representation).
    image_tokens: (patches, patch_dim) float32 (rgbd representation).
    proprio: (P,) float64 gripper state.
    """

    proprio: np.ndarray
    clusters: list[ClusterSet | None] | None = None
    image_tokens: np.ndarray | None = None
    cluster_arrays: list[tuple[np.ndarray, np.ndarray] | None] | None = None

    def __post_init__(self) -> None:
        if self.clusters is not None and self.cluster_arrays is None:
            # float32 copies used by batch assembly; built once
            self.cluster_arrays = [
                None
                if cs is None
                else (cs.groups.astype(np.float32), cs.centers.astype(np.float32))
                for cs in self.clusters
            ]


@dataclass
class Demonstration:
    """A processed trajectory: one observation and action per step."""

    observations: list[PolicyObservation]
    actions: np.ndarray  # (T, A)


def downsample_image(color: np.ndarray, depth: np.ndarray, size: int) -> np.ndarray:
    """Mean-pool color and depth to (size, size, 4) float32."""
    h, w = depth.shape
    if h % size or w % size:
        raise ValueError(f"image {h}x{w} does not divide into {size}x{size}")
    fh, fw = h // size, w // size
    stacked = np.concatenate([color, depth[..., None]], axis=2).astype(np.float32)
    pooled = stacked.reshape(size, fh, size, fw, 4).mean(axis=(1, 3))
    return pooled


def image_to_patches(pooled: np.ndarray, patch: int) -> np.ndarray:
    """Cut a (S, S, 4) image into flattened (n_patches, patch*patch*4) rows."""
    s = pooled.shape[0]
    g = s // patch
    tiles = pooled.reshape(g, patch, g, patch, 4).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(g * g, patch * patch * 4)


def observation_from_frame(
    frame: RGBDFrame,
    masks: list[np.ndarray | None],
    proprio: np.ndarray,
    intrinsics: CameraIntrinsics,
    camera_to_base: RigidTransform,
    cfg: PolicyConfig,
    seed_key: tuple[int, ...],
) -> PolicyObservation:
    """Build the policy's view of one frame.

    masks: one boolean mask (or None) per object slot.  seed_key makes
    the center sampling deterministic per (trajectory, step) so the
    same data always tokenizes identically.
    """
    if cfg.representation == "rgbd":
        pooled = downsample_image(frame.color, frame.depth, cfg.rgbd_size)
        return PolicyObservation(
            proprio=np.asarray(proprio, dtype=np.float64),
            image_tokens=image_to_patches(pooled, cfg.rgbd_patch),
        )

    clusters: list[ClusterSet | None] = []
    for slot, mask in enumerate(masks):
        if mask is None or not mask.any():
            clusters.append(None)
            continue
        cloud = backproject(frame, intrinsics, mask=mask, object_id=slot)
        if not (cloud.points[:, 2] > 0).any() or len(cloud) == 0:
            clusters.append(None)
            continue
        if cfg.cloud_frame == "base":
            cloud = to_base_frame(cloud, camera_to_base)
        seed = int(np.random.SeedSequence(seed_key + (slot,)).generate_state(1)[0])
        clusters.append(build_clusters(cloud, cfg.clusters, cfg.cluster_points, seed))
    return PolicyObservation(
        proprio=np.asarray(proprio, dtype=np.float64), clusters=clusters
    )


class PolicyNetwork:
    """Parameters plus the token-to-action computation."""

    def __init__(self, cfg: PolicyConfig, seed: int):
        self.cfg = cfg
        self.store = nn.ParameterStore(dtype=np.dtype(cfg.dtype))
        rng = np.random.default_rng(seed)
        w = cfg.width
        if cfg.representation == "clouds":
            self.point_enc = nn.PointSetEncoder(self.store, "point_enc", w, rng)
            self.center_embed = nn.Linear(self.store, "center_embed", 3, w, rng)
            self.absent_token = self.store.create(
                "absent_token", rng.uniform(-0.1, 0.1, size=w)
            )
        else:
            self.patch_embed = nn.Linear(
                self.store, "patch_embed", cfg.rgbd_patch_dim, w, rng
            )
        self.proprio_embed = nn.Linear(self.store, "proprio_embed", cfg.proprio_dim, w, rng)
        self.action_token = self.store.create(
            "action_token", rng.uniform(-0.1, 0.1, size=w)
        )
        self.encoder = nn.TransformerEncoder(
            self.store, "encoder", w, cfg.heads, cfg.ff_hidden, cfg.layers, rng
        )
        self.head = nn.GMMHead(
            self.store, "head", w, cfg.head_hidden, cfg.modes, cfg.action_dim, rng
        )
        self._pe = positional_encoding_table(cfg.history, w, cfg.pe_base)

    # ------------------------------------------------------------ tokenizing

    def _sequence_pe(self, per_frame_tokens: int) -> np.ndarray:
        """PE for the full token sequence before the action token.

        Every token of timestep t (cluster or image tokens plus the
        proprio token) receives the same encoding of t.
        """
        reps = np.repeat(self._pe, per_frame_tokens, axis=0)
        return reps.astype(self.store.dtype)[None, :, :]

    def assemble_cloud_batch(
        self, windows: list[list[PolicyObservation]], keep: list[np.ndarray] | None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Gather window observations into dense arrays.

        keep: per-sample (H, num_objects, k) int cluster selections for
        training-time masking, or None to keep all clusters.  Returns
        (groups, centers, present, proprio) with groups shaped
        (B, H*num_objects*k, p, 3).
        """
        cfg = self.cfg
        k = cfg.clusters if keep is None else keep[0].shape[-1]
        b = len(windows)
        h, n_obj, p = cfg.history, cfg.num_objects, cfg.cluster_points
        slots = h * n_obj * k
        dt = self.store.dtype
        groups = np.zeros((b, slots, p, 3), dtype=dt)
        centers = np.zeros((b, slots, 3), dtype=dt)
        present = np.zeros((b, slots), dtype=bool)
        proprio = np.zeros((b, h, cfg.proprio_dim), dtype=dt)
        for i, window in enumerate(windows):
            for t, obs in enumerate(window):
                proprio[i, t] = obs.proprio
                for o in range(n_obj):
                    arrs = obs.cluster_arrays[o]
                    if arrs is None:
                        continue
                    g32, c32 = arrs
                    sel = slice(None) if keep is None else keep[i][t, o]
                    lo = (t * n_obj + o) * k
                    groups[i, lo : lo + k] = g32[sel]
                    centers[i, lo : lo + k] = c32[sel]
                    present[i, lo : lo + k] = True
        return groups, centers, present, proprio

    def _cloud_tokens(
        self,
        groups: np.ndarray,
        centers: np.ndarray,
        present: np.ndarray,
        proprio: np.ndarray,
    ) -> T.Tensor:
        cfg = self.cfg
        b, slots = present.shape
        k = slots // (cfg.history * cfg.num_objects)
        feats = self.point_enc(T.Tensor(groups))
        cents = self.center_embed(T.Tensor(centers))
        tok = feats + cents
        if not present.all():
            gate = present[:, :, None].astype(groups.dtype)
            tok = tok * gate + T.broadcast_to(self.absent_token, tok.shape) * (1.0 - gate)
        prop = self.proprio_embed(T.Tensor(proprio))
        per_frame = cfg.num_objects * k
        parts = []
        for t in range(cfg.history):
            parts.append(tok[:, t * per_frame : (t + 1) * per_frame, :])
            parts.append(prop[:, t : t + 1, :])
        seq = T.concat(parts, axis=1)
        return seq + self._sequence_pe(per_frame + 1)

    def _image_tokens(self, images: np.ndarray, proprio: np.ndarray) -> T.Tensor:
        cfg = self.cfg
        b, h, n_patch, _ = images.shape
        emb = self.patch_embed(T.Tensor(images))  # (B, H, patches, w)
        emb = T.reshape(emb, (b, h * n_patch, cfg.width))
        prop = self.proprio_embed(T.Tensor(proprio))
        parts = []
        for t in range(h):
            parts.append(emb[:, t * n_patch : (t + 1) * n_patch, :])
            parts.append(prop[:, t : t + 1, :])
        seq = T.concat(parts, axis=1)
        return seq + self._sequence_pe(n_patch + 1)

    def forward_tokens(self, seq: T.Tensor) -> nn.GMMParams:
        """Append the action-readout token, encode, decode the mixture."""
        b = seq.shape[0]
        act_tok = T.broadcast_to(
            T.reshape(self.action_token, (1, 1, self.cfg.width)),
            (b, 1, self.cfg.width),
        )
        seq = T.concat([seq, act_tok], axis=1)
        encoded = self.encoder(seq)
        latent = encoded[:, -1, :]
        return self.head(latent)

    def forward_cloud_batch(
        self, windows: list[list[PolicyObservation]], keep: list[np.ndarray] | None
    ) -> nn.GMMParams:
        groups, centers, present, proprio = self.assemble_cloud_batch(windows, keep)
        return self.forward_tokens(self._cloud_tokens(groups, centers, present, proprio))

    def forward_image_batch(self, windows: list[list[PolicyObservation]]) -> nn.GMMParams:
        b, h = len(windows), self.cfg.history
        images = np.zeros((b, h, self.cfg.rgbd_patches, self.cfg.rgbd_patch_dim), dtype=self.store.dtype)
        proprio = np.zeros((b, h, self.cfg.proprio_dim), dtype=self.store.dtype)
        for i, window in enumerate(windows):
            for t, obs in enumerate(window):
                images[i, t] = obs.image_tokens
                proprio[i, t] = obs.proprio
        return self.forward_tokens(self._image_tokens(images, proprio))

    def forward_windows(
        self, windows: list[list[PolicyObservation]], keep: list[np.ndarray] | None = None
    ) -> nn.GMMParams:
        if self.cfg.representation == "clouds":
            return self.forward_cloud_batch(windows, keep)
        return self.forward_image_batch(windows)

    # --------------------------------------------------------------- serving

    def save(self, path: str, optimizer: nn.Adam | None = None, extra: dict | None = None) -> None:
        meta = {"config": self.cfg.to_dict()}
        if extra:
            meta["extra"] = extra
        nn.save_store(path, self.store, optimizer, meta)

    @staticmethod
    def load(path: str) -> "PolicyNetwork":
        _, meta = nn.read_arrays(path)
        net = PolicyNetwork(PolicyConfig.from_dict(meta["config"]), seed=0)
        nn.load_store(path, net.store)
        return net


def pad_window(observations: list[PolicyObservation], history: int) -> list[PolicyObservation]:
    """Take the trailing window, front-padded by repeating the first entry."""
    if not observations:
        raise ValueError("cannot build a window from zero observations")
    tail = observations[-history:]
    return [tail[0]] * (history - len(tail)) + list(tail)


class Policy:
    """A trained network plus the rolling observation buffer."""

    def __init__(self, network: PolicyNetwork):
        self.network = network
        self._buffer: list[PolicyObservation] = []

    def reset(self) -> None:
        self._buffer.clear()

    def act(self, obs: PolicyObservation, rng: np.random.Generator) -> np.ndarray:
        """Append the observation and decode one action vector.

        The mixture spreads weight across opposing step directions, so
        the default readout takes the dominant mode; sampling injects
        per-step noise on the order of the alignment tolerances and is
        kept only as an explicit option.
        """
        self._buffer.append(obs)
        if len(self._buffer) > self.network.cfg.history:
            del self._buffer[: -self.network.cfg.history]
        window = pad_window(self._buffer, self.network.cfg.history)
        with nn.no_grad():
            params = self.network.forward_windows([window]).detach()
        single = nn.GMMParams(params.logits[0], params.means[0], params.log_stds[0])
        decode = self.network.cfg.decode
        if decode == "mode":
            return nn.gmm_mode(single)
        if decode == "mean":
            return nn.gmm_mean(single)
        return nn.gmm_sample(single, rng)


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    network: PolicyNetwork
    trace: list[dict]
    best_epoch: int
    best_loss: float


def _window_refs(demos: list[Demonstration], history: int) -> list[tuple[int, int]]:
    return [(d, t) for d, demo in enumerate(demos) for t in range(len(demo.observations))]


def _materialize(demos: list[Demonstration], ref: tuple[int, int], history: int):
    d, t = ref
    demo = demos[d]
    window = pad_window(demo.observations[: t + 1], history)
    return window, demo.actions[t]


def _save_train_state(
    path: str,
    net: PolicyNetwork,
    opt: nn.Adam,
    seed: int,
    next_epoch: int,
    best_epoch: int,
    best_loss: float,
    best_params: dict[str, np.ndarray] | None,
    trace: list[dict],
) -> None:
    arrays = {f"p:{name}": t.data for name, t in net.store.items()}
    arrays.update(opt.state_arrays())
    if best_params is not None:
        arrays.update({f"best:{name}": arr for name, arr in best_params.items()})
    meta = {
        "config": net.cfg.to_dict(),
        "dtype": net.store.dtype.name,
        "param_names": net.store.names(),
        "seed": seed,
        "next_epoch": next_epoch,
        "best_epoch": best_epoch,
        "best_loss": best_loss,
        "trace": trace,
        "optimizer": {"step_count": opt.step_count},
    }
    nn.write_arrays(path, arrays, meta)


def load_train_state(path: str, net: PolicyNetwork, opt: nn.Adam):
    """Restore a mid-training checkpoint into net and opt.

    Returns (next_epoch, best_epoch, best_loss, best_params, trace).
    Raises if the stored config or seed disagree with the caller's.
    """
    arrays, meta = nn.read_arrays(path)
    if meta["param_names"] != net.store.names():
        raise ValueError("training state does not match this model")
    net.store.load_snapshot({n: arrays[f"p:{n}"] for n in net.store.names()})
    opt.load_state_arrays(
        {k: v for k, v in arrays.items() if k[:2] in ("m:", "v:")},
        meta["optimizer"]["step_count"],
    )
    best_params = None
    if any(k.startswith("best:") for k in arrays):
        best_params = {
            n: arrays[f"best:{n}"].astype(net.store.dtype, copy=True)
            for n in net.store.names()
        }
    return (
        int(meta["next_epoch"]),
        int(meta["best_epoch"]),
        float(meta["best_loss"]),
        best_params,
        list(meta["trace"]),
    )


def train_bc(
    demos: list[Demonstration],
    cfg: PolicyConfig,
    seed: int,
    log_fn=None,
    state_path: str | None = None,
    resume: bool = False,
) -> TrainResult:
    """Behavior cloning over sliding windows with mixture NLL.

    Every epoch shuffles the windows, applies fresh random cluster
    masking per sample, takes one optimizer step per batch, then scores
    the full dataset without masking; the parameters with the lowest
    full-dataset loss are restored at the end.  A non-finite loss
    aborts with TrainingDiverged.

    All per-epoch randomness is derived statelessly from (seed, epoch),
    so interrupting after any epoch and resuming from state_path
    continues bit-identically to an uninterrupted run.
    """
    if not demos:
        raise ValueError("no demonstrations given")
    init_seed = int(np.random.SeedSequence((seed, 3)).generate_state(1)[0])
    net = PolicyNetwork(cfg, seed=init_seed)
    opt = nn.Adam(net.store, lr=cfg.lr, clip_norm=cfg.grad_clip)

    refs = _window_refs(demos, cfg.history)
    n = len(refs)
    kshape = (cfg.history, cfg.num_objects, cfg.kept_clusters)
    masked = cfg.representation == "clouds" and cfg.mask_ratio > 0.0

    trace: list[dict] = []
    start_epoch = 0
    best_loss = np.inf
    best_epoch = -1
    best_params: dict[str, np.ndarray] | None = None
    if resume:
        if state_path is None:
            raise ValueError("resume needs a state path")
        start_epoch, best_epoch, best_loss, best_params, trace = load_train_state(
            state_path, net, opt
        )

    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng(np.random.SeedSequence((seed, 11, epoch))).permutation(n)
        mask_rng = np.random.default_rng(np.random.SeedSequence((seed, 7, epoch)))
        batch_losses = []
        for lo in range(0, n, cfg.batch_size):
            batch_refs = [refs[j] for j in order[lo : lo + cfg.batch_size]]
            windows = []
            actions = np.empty((len(batch_refs), cfg.action_dim), dtype=net.store.dtype)
            for i, ref in enumerate(batch_refs):
                window, action = _materialize(demos, ref, cfg.history)
                windows.append(window)
                actions[i] = action
            keep = None
            if masked:
                keep = [
                    np.sort(
                        mask_rng.permuted(
                            np.tile(np.arange(cfg.clusters), kshape[:2] + (1,)), axis=-1
                        )[..., : cfg.kept_clusters],
                        axis=-1,
                    )
                    for _ in batch_refs
                ]
            net.store.zero_grad()
            params = net.forward_windows(windows, keep)
            loss = nn.gmm_nll(params, actions)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}"
                )
            loss.backward()
            opt.step()
            batch_losses.append(loss_val)

        full_loss = dataset_loss(net, demos)
        trace.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "full_loss": full_loss,
            }
        )
        if log_fn is not None:
            log_fn(trace[-1])
        if full_loss < best_loss:
            best_loss = full_loss
            best_epoch = epoch
            best_params = net.store.snapshot()
        if state_path is not None:
            _save_train_state(
                state_path, net, opt, seed, epoch + 1, best_epoch, best_loss,
                best_params, trace,
            )

    if best_params is not None:
        net.store.load_snapshot(best_params)
    return TrainResult(net, trace, best_epoch, float(best_loss))


def dataset_loss(net: PolicyNetwork, demos: list[Demonstration], batch_size: int = 16) -> float:
    """Mean NLL over every window, no masking, no graph recording."""
    cfg = net.cfg
    refs = _window_refs(demos, cfg.history)
    total = 0.0
    count = 0
    with nn.no_grad():
        for lo in range(0, len(refs), batch_size):
            chunk = refs[lo : lo + batch_size]
            windows = []
            actions = np.empty((len(chunk), cfg.action_dim), dtype=net.store.dtype)
            for i, ref in enumerate(chunk):
                window, action = _materialize(demos, ref, cfg.history)
                windows.append(window)
                actions[i] = action
            loss = nn.gmm_nll(net.forward_windows(windows, None), actions)
            total += float(loss.data) * len(chunk)
            count += len(chunk)
    if not np.isfinite(total):
        raise TrainingDiverged("non-finite loss while scoring the dataset")
    return total / count
