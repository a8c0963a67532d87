"""HU clipping, dataset standardisation and 2D slice / crop extraction."""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyDataset, EmptyLiver, InvalidRange, ShapeMismatch, ZeroVariance

HU_LO = -100.0
HU_HI = 400.0
AXES = {"sagittal": 0, "coronal": 1, "axial": 2}


@dataclass
class DatasetStats:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)) or self.std <= 0:
            raise ZeroVariance(f"invalid dataset statistics mean={self.mean}, std={self.std}")

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"mean": self.mean, "std": self.std}, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(float(d["mean"]), float(d["std"]))


@dataclass
class SliceBatch:
    """Stack of 2D training samples.

    ``provenance`` holds ``(volume_id, axis, slice_index, (row0, col0))`` per
    sample; the origin is where the sample's top-left pixel sits in the slice
    (negative or overhanging origins mean the sample was padded).
    """

    images: np.ndarray
    targets: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if self.images.shape != self.targets.shape:
            raise ShapeMismatch(f"images {self.images.shape} vs targets {self.targets.shape}")

    def __len__(self):
        return len(self.images)

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        if not batches:
            raise EmptyDataset("no slice batches to concatenate")
        return cls(np.concatenate([b.images for b in batches]),
                   np.concatenate([b.targets for b in batches]),
                   [p for b in batches for p in b.provenance])


def clip_hu(v, lo=HU_LO, hi=HU_HI):
    if not lo < hi:
        raise InvalidRange(f"clip range needs lo < hi, got [{lo}, {hi}]")
    return v.with_data(np.clip(v.data, lo, hi).astype(v.data.dtype, copy=False))


def compute_stats(volumes):
    """Pooled mean and population std over every voxel of (clipped) volumes."""
    volumes = list(volumes)
    if not volumes:
        raise EmptyDataset("need at least one training volume")
    n = 0
    total = 0.0
    for v in volumes:
        n += v.data.size
        total += float(np.sum(v.data, dtype=np.float64))
    mean = total / n
    sq = sum(float(np.sum((v.data.astype(np.float64) - mean) ** 2)) for v in volumes)
    std = float(np.sqrt(sq / n))
    if std == 0:
        raise ZeroVariance("all training voxels are equal")
    return DatasetStats(mean, std)


def standardize(v, stats):
    return v.with_data(((v.data.astype(np.float64) - stats.mean) / stats.std).astype(np.float32))


def prepare(v, stats, lo=HU_LO, hi=HU_HI):
    """Clip then standardise; the network input for one raw CT volume."""
    return standardize(clip_hu(v, lo, hi), stats)


def background_value(stats, lo=HU_LO):
    """Standardised value of the clip floor, used for padding."""
    return np.float32((lo - stats.mean) / stats.std)


def get_slice(arr, axis, index):
    return np.take(arr, index, axis=AXES[axis] if isinstance(axis, str) else axis)


def take_window(img, origin, size, fill):
    """``size`` window of a 2D array at ``origin`` (may overhang), padded with ``fill``."""
    out = np.full(size, fill, dtype=img.dtype)
    r0, c0 = origin
    rs, cs = max(r0, 0), max(c0, 0)
    re, ce = min(r0 + size[0], img.shape[0]), min(c0 + size[1], img.shape[1])
    if rs < re and cs < ce:
        out[rs - r0:re - r0, cs - c0:ce - c0] = img[rs:re, cs:ce]
    return out


def liver_bbox(liver, margin=0):
    """Inclusive per-axis (lo, hi) bounds of the mask, grown by ``margin`` and clamped."""
    idx = np.nonzero(liver)
    if len(idx[0]) == 0:
        raise EmptyLiver("liver mask is empty")
    return [(max(int(i.min()) - margin, 0), min(int(i.max()) + margin, n - 1))
            for i, n in zip(idx, liver.shape)]


def extract_training_crops(v, liver, target, stats, axis="coronal", crop=(224, 224), margin=16,
                           rng_seed=0, volume_id=0, clip=(HU_LO, HU_HI), slice_step=1):
    """One crop per slice crossing the liver box grown by ``margin`` voxels.

    ``v`` is the raw HU volume; it is clipped and standardised here. The crop
    origin is drawn uniformly among origins whose window intersects the grown
    box in-plane.
    """
    if not (v.shape == liver.shape == target.shape):
        raise ShapeMismatch(f"volume {v.shape}, liver {liver.shape}, target {target.shape} differ")
    ax = AXES[axis]
    box = liver_bbox(np.asarray(liver.data if hasattr(liver, "data") else liver), margin)
    image = prepare(v, stats, *clip).data
    tdata = np.asarray(target.data if hasattr(target, "data") else target, dtype=np.uint8)
    fill = background_value(stats, clip[0])
    plane = [a for a in range(3) if a != ax]
    (r_lo, r_hi), (c_lo, c_hi) = box[plane[0]], box[plane[1]]
    rng = np.random.default_rng(rng_seed)
    images, targets, prov = [], [], []
    for s in range(box[ax][0], box[ax][1] + 1, slice_step):
        r0 = int(rng.integers(r_lo - crop[0] + 1, r_hi + 1))
        c0 = int(rng.integers(c_lo - crop[1] + 1, c_hi + 1))
        images.append(take_window(get_slice(image, ax, s), (r0, c0), crop, fill))
        targets.append(take_window(get_slice(tdata, ax, s), (r0, c0), crop, 0))
        prov.append((volume_id, axis, s, (r0, c0)))
    return SliceBatch(np.stack(images)[:, None].astype(np.float32),
                      np.stack(targets)[:, None].astype(np.float32), prov)


def extract_full_slices(v, target, stats, axis="axial", size=None, slice_step=1, volume_id=0,
                        clip=(HU_LO, HU_HI), slice_offset=0):
    """Whole slices along ``axis``, optionally resampled to ``size`` (bilinear / nearest)."""
    if v.shape != target.shape:
        raise ShapeMismatch(f"volume {v.shape} and target {target.shape} differ")
    ax = AXES[axis]
    image = prepare(v, stats, *clip).data
    tdata = np.asarray(target.data, dtype=np.float32)
    images, targets, prov = [], [], []
    for s in range(slice_offset % slice_step, v.shape[ax], slice_step):
        img = get_slice(image, ax, s)
        tgt = get_slice(tdata, ax, s)
        if size is not None and tuple(size) != img.shape:
            img = resize2d(img, size, order=1)
            tgt = resize2d(tgt, size, order=0)
        images.append(img)
        targets.append(tgt)
        prov.append((volume_id, axis, s, (0, 0)))
    return SliceBatch(np.stack(images)[:, None].astype(np.float32),
                      np.stack(targets)[:, None].astype(np.float32), prov)


def resize2d(img, size, order=1):
    factors = (size[0] / img.shape[0], size[1] / img.shape[1])
    out = ndimage.zoom(img, factors, order=order, mode="nearest", grid_mode=True)
    return out[:size[0], :size[1]]
