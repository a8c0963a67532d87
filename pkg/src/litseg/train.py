"""Epoch loop, augmentation, validation, checkpoints and best-epoch selection."""
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import losses
from .errors import CheckpointMismatch, EmptyDataset, EmptyLog, InvalidConfig, NonFiniteLoss
from .networks import TiramisuConfig, UNetConfig, build_network
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .volume_io import read_array, write_array

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    enabled: bool = False
    max_rotation_deg: float = 10.0
    max_translate_frac: float = 0.1
    zoom_range: tuple = (0.9, 1.1)

    def __post_init__(self):
        lo, hi = self.zoom_range
        if not (0 < lo <= hi):
            raise InvalidConfig(f"zoom_range must satisfy 0 < low <= high, got {self.zoom_range}")
        self.zoom_range = (float(lo), float(hi))


@dataclass
class TrainConfig:
    network: object  # UNetConfig | TiramisuConfig
    loss: str = "bce"
    loss_params: dict = field(default_factory=dict)
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(1e-5, 15))
    epochs: int = 50
    batch_size: int = 5
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_dir: str = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be >= 1")

    @property
    def arch(self):
        return "tiramisu" if isinstance(self.network, TiramisuConfig) else "unet"

    def network_spec(self):
        return {"arch": self.arch, **asdict(self.network)}


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_score: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_score", "lr", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.val_score), repr(r.lr), f"{r.seconds:.3f}"])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            return cls([EpochRecord(int(r["epoch"]), float(r["loss"]), float(r["val_score"]),
                                    float(r["lr"]), float(r["seconds"])) for r in csv.DictReader(fh)])


# --- augmentation ----------------------------------------------------------------


def transform_pair(image, target, angle_deg=0.0, shift=(0.0, 0.0), zoom=1.0, fill=0.0):
    """Rotate about the centre, zoom and shift both arrays with one affine map.

    The image is resampled bilinearly, the target by nearest neighbour.
    """
    image = np.asarray(image)
    target = np.asarray(target)
    if image.shape != target.shape:
        raise ValueError(f"image {image.shape} and target {target.shape} differ")
    t = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    # output coordinate o maps to input coordinate inv @ (o - c - shift) + c
    inv = rot.T / zoom
    c = (np.array(image.shape, dtype=np.float64) - 1) / 2
    offset = c - inv @ (c + np.asarray(shift, dtype=np.float64))
    img = ndimage.affine_transform(image.astype(np.float64), inv, offset, order=1,
                                   mode="constant", cval=float(fill))
    tgt = ndimage.affine_transform(target.astype(np.float64), inv, offset, order=0,
                                   mode="constant", cval=0.0)
    return img.astype(image.dtype), (tgt > 0.5).astype(target.dtype)


def augment(image, target, cfg, rng_seed=None, fill=0.0):
    """Random rotation / translation / zoom applied identically to image and target."""
    if not cfg.enabled:
        return image, target
    rng = np.random.default_rng(rng_seed)
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    shift = rng.uniform(-cfg.max_translate_frac, cfg.max_translate_frac, 2) * np.array(image.shape)
    zoom = rng.uniform(*cfg.zoom_range)
    return transform_pair(image, target, angle, shift, zoom, fill)


# --- checkpoints --------------------------------------------------------------------


def save_checkpoint(path, graph, adam=None, extra=None):
    """Directory with ``manifest.json`` and one container blob per tensor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = []
    for name, p in graph.parameters():
        fname = f"param__{name}.bin"
        write_array(path / fname, p.value)
        tensors.append({"name": name, "file": fname, "shape": list(p.value.shape),
                        "trainable": p.trainable})
    manifest = {"network": graph.spec()["config"] | {"arch": graph.arch}, "tensors": tensors}
    if adam is not None:
        adam_entries = []
        for name in sorted(adam.m):
            for slot, store in (("m", adam.m), ("v", adam.v)):
                fname = f"adam_{slot}__{name}.bin"
                write_array(path / fname, store[name])
                adam_entries.append({"name": name, "slot": slot, "file": fname})
        manifest["adam"] = {"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2,
                            "eps": adam.eps, "tensors": adam_entries}
    if extra:
        manifest["extra"] = extra
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_checkpoint(path, expect_arch=None):
    """Rebuild the graph (and Adam state when stored) from a checkpoint directory.

    Returns ``(graph, adam_state_or_None, manifest)``.
    """
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointMismatch(f"{path} has no manifest.json") from None
    spec = manifest["network"]
    if expect_arch is not None and spec.get("arch") != expect_arch:
        raise CheckpointMismatch(f"{path} holds a {spec.get('arch')!r} network, expected {expect_arch!r}")
    graph = build_network(spec)
    params = dict(graph.parameters())
    stored = {t["name"] for t in manifest["tensors"]}
    if stored != set(params):
        raise CheckpointMismatch(f"{path}: tensor names do not match the {spec.get('arch')} graph")
    for entry in manifest["tensors"]:
        arr, _ = read_array(path / entry["file"])
        p = params[entry["name"]]
        if arr.shape != p.value.shape:
            raise CheckpointMismatch(f"{entry['name']}: stored shape {arr.shape}, graph wants {p.value.shape}")
        p.value[...] = arr
    adam = None
    if "adam" in manifest:
        a = manifest["adam"]
        adam = AdamState(a["beta1"], a["beta2"], a["eps"], a["t"])
        for entry in a["tensors"]:
            arr, _ = read_array(path / entry["file"])
            (adam.m if entry["slot"] == "m" else adam.v)[entry["name"]] = arr
    return graph, adam, manifest


def select_best(log, checkpoints=None):
    """Epoch number (1-based) with the highest validation score; ties go to the earliest.

    With ``checkpoints`` (a mapping epoch -> path) the matching path is returned.
    """
    records = log.records if isinstance(log, TrainLog) else list(log)
    if not records:
        raise EmptyLog("no completed epochs")
    best = max(records, key=lambda r: (r.val_score, -r.epoch))
    if checkpoints is not None:
        return checkpoints[best.epoch]
    return best.epoch


# --- loop -------------------------------------------------------------------------------


def predict_batches(graph, images, batch_size=8):
    """Eval-mode probabilities for an (N, 1, H, W) stack."""
    out = []
    for i in range(0, len(images), batch_size):
        out.append(graph.forward(images[i:i + batch_size], mode="eval"))
    return np.concatenate(out) if out else np.zeros_like(images)


def validation_score(graph, val_set, batch_size=8):
    """Pooled soft Dice over all validation samples."""
    pred = predict_batches(graph, val_set.images, batch_size)
    return losses.soft_dice(pred, val_set.targets)


def train(cfg, train_set, val_set, out_dir=None, graph=None, fill=0.0, meta=None):
    """Train from scratch (or from ``graph``) and return ``(TrainLog, graph, checkpoints)``.

    ``checkpoints`` maps epoch -> checkpoint directory when ``out_dir`` (or
    ``cfg.checkpoint_dir``) is set; epochs in the log are 1-based and epoch e
    uses ``lr_at(schedule, e - 1)``. ``meta`` is stored in every checkpoint's
    extra block (dataset statistics, slicing settings).
    """
    if train_set is None or len(train_set) == 0 or val_set is None or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    out_dir = out_dir or cfg.checkpoint_dir
    if graph is None:
        graph = build_network(cfg.network_spec(), seed=cfg.seed)
    loss_fn = losses.make_loss(cfg.loss, **cfg.loss_params)
    adam = AdamState(cfg.beta1, cfg.beta2, cfg.eps)
    params = list(graph.parameters(trainable_only=True))
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_seed, dropout_seed, aug_seed = ss.spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    aug_rng = np.random.default_rng(aug_seed)
    n = len(train_set)
    trainlog = TrainLog()
    checkpoints = {}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        lr = lr_at(cfg.schedule, epoch - 1)
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for b, first in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[first:first + cfg.batch_size])
            x = train_set.images[idx].copy()
            y = train_set.targets[idx].copy()
            if cfg.augmentation.enabled:
                for k in range(len(idx)):
                    x[k, 0], y[k, 0] = augment(x[k, 0], y[k, 0], cfg.augmentation,
                                               int(aug_rng.integers(2 ** 63)), fill)
            pred = graph.forward(x, mode="train", rng=dropout_rng)
            value, grad = loss_fn(pred, y)
            value += graph.l2_penalty()
            if not np.isfinite(value):
                raise NonFiniteLoss(epoch, b + 1, value)
            graph.backward(grad)
            adam_step(params, adam, lr)
            total += value * len(idx)
            seen += len(idx)
        score = validation_score(graph, val_set)
        rec = EpochRecord(epoch, total / seen, float(score), lr, time.perf_counter() - start)
        trainlog.records.append(rec)
        log.info("epoch %d loss %.5f val %.4f lr %.3g (%.1fs)", epoch, rec.loss, rec.val_score,
                 lr, rec.seconds)
        if out_dir is not None:
            ck = save_checkpoint(Path(out_dir) / f"epoch_{epoch:03d}", graph, adam,
                                 extra={**(meta or {}), "epoch": epoch,
                                        "val_score": rec.val_score})
            checkpoints[epoch] = ck
            trainlog.to_csv(Path(out_dir) / "trainlog.csv")
    if out_dir is not None:
        best = select_best(trainlog)
        with open(Path(out_dir) / "best.json", "w") as fh:
            json.dump({"epoch": best, "checkpoint": checkpoints[best].name}, fh)
    return trainlog, graph, checkpoints


def resolve_checkpoint(path):
    """A run directory resolves to its best epoch; a checkpoint directory to itself."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return path
    best = path / "best.json"
    if best.exists():
        with open(best) as fh:
            return path / json.load(fh)["checkpoint"]
    raise CheckpointMismatch(f"{path} is neither a checkpoint nor a training run directory")


def network_config_from_dict(d):
    d = dict(d)
    arch = d.pop("arch", d.pop("kind", "unet"))
    try:
        if arch == "unet":
            return UNetConfig(**d)
        if arch == "tiramisu":
            return TiramisuConfig(**d)
    except TypeError as exc:
        raise InvalidConfig(f"network: {exc}") from None
    raise InvalidConfig(f"network.arch must be 'unet' or 'tiramisu', got {arch!r}")
