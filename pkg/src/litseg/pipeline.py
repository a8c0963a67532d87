"""Full cascade inference and the TP/FP/FN overlay renderer."""
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import postprocess
from .errors import LitsegError, ShapeMismatch
from .preprocess import (AXES, HU_HI, HU_LO, DatasetStats, background_value, get_slice, liver_bbox,
                         prepare, resize2d, take_window)
from .train import load_checkpoint, predict_batches, resolve_checkpoint
from .volume_io import Volume

log = logging.getLogger(__name__)

TP_RGB = (255, 255, 255)
FP_RGB = (255, 0, 0)
FN_RGB = (255, 165, 0)


@dataclass
class CascadeSettings:
    liver_axis: str = "axial"
    liver_size: tuple = None  # resample liver slices to this size (None = native)
    lesion_axis: str = "coronal"
    crop: tuple = (224, 224)
    margin: int = 16
    threshold: float = 0.5
    connectivity: int = 26
    dilate: int = 0
    close: int = 0
    batch_size: int = 8


def _staged(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except LitsegError as exc:
        exc.stage = stage
        raise


def _pad_to_multiple(stack, multiple, fill):
    """Pad an (N, 1, H, W) stack bottom/right so H, W divide ``multiple``."""
    h, w = stack.shape[2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        stack = np.pad(stack, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=fill)
    return stack


def segment_liver(graph, image, settings, fill):
    """Liver probability volume from whole slices of a standardised volume."""
    ax = AXES[settings.liver_axis]
    slices = [get_slice(image, ax, s) for s in range(image.shape[ax])]
    native = slices[0].shape
    if settings.liver_size:
        slices = [resize2d(s, settings.liver_size, order=1) for s in slices]
    stack = np.stack(slices)[:, None].astype(np.float32)
    h, w = stack.shape[2:]
    probs = predict_batches(graph, _pad_to_multiple(stack, graph.downsample_factor, fill),
                            settings.batch_size)[:, 0, :h, :w]
    if settings.liver_size:
        probs = [resize2d(p, native, order=1) for p in probs]
    return postprocess.stitch_slices(list(probs), [(s, (0, 0)) for s in range(len(probs))],
                                     ax, image.shape)


def lesion_tiles(box, ax, crop):
    """Crop origins tiling the in-plane part of ``box`` with half-crop overlap."""
    plane = [a for a in range(3) if a != ax]
    starts = []
    for a, size in zip(plane, crop):
        lo, hi = box[a]
        stride = max(size // 2, 1)
        pos = list(range(lo, max(hi - size + 1, lo) + 1, stride))
        if pos[-1] + size - 1 < hi:
            pos.append(hi - size + 1)
        starts.append(pos)
    return [(r, c) for r in starts[0] for c in starts[1]]


def segment_lesions(graph, image, liver, settings, fill):
    """Lesion probability volume from crops inside the grown liver box (0 elsewhere)."""
    ax = AXES[settings.lesion_axis]
    box = liver_bbox(liver, settings.margin)
    origins = lesion_tiles(box, ax, settings.crop)
    crops, prov = [], []
    for s in range(box[ax][0], box[ax][1] + 1):
        plane = get_slice(image, ax, s)
        for o in origins:
            crops.append(take_window(plane, o, settings.crop, fill))
            prov.append((s, o))
    stack = np.stack(crops)[:, None].astype(np.float32)
    h, w = stack.shape[2:]
    probs = predict_batches(graph, _pad_to_multiple(stack, graph.downsample_factor, fill),
                            settings.batch_size)[:, 0, :h, :w]
    return postprocess.stitch_slices(list(probs), prov, ax, image.shape)


def predict_volume(liver_graph, lesion_graph, volume, stats, settings=None, clip=(HU_LO, HU_HI)):
    """Run the cascade on one raw HU volume; returns ``(liver_mask, lesion_mask)`` volumes."""
    settings = settings or CascadeSettings()
    start = time.perf_counter()
    image = _staged("preprocess", prepare, volume, stats, *clip).data
    fill = background_value(stats, clip[0])
    liver_prob = _staged("liver", segment_liver, liver_graph, image, settings, fill)
    liver = (liver_prob >= settings.threshold).astype(np.uint8)
    liver = postprocess.largest_connected_component(liver, settings.connectivity)
    if settings.dilate:
        liver = postprocess.dilate(liver, settings.dilate)
    if settings.close:
        liver = postprocess.close(liver, settings.close)
    if liver.any():
        lesion_prob = _staged("lesion", segment_lesions, lesion_graph, image, liver, settings, fill)
    else:
        lesion_prob = np.zeros(image.shape, np.float32)
    lesion = postprocess.cascade_mask(lesion_prob, liver, settings.threshold)
    log.info("cascade inference took %.2fs", time.perf_counter() - start)
    return volume.with_data(liver), volume.with_data(lesion)


def load_cascade(liver_ckpt, lesion_ckpt):
    """Load both networks plus the dataset statistics stored with the liver run."""
    liver_graph, _, liver_manifest = _staged("load", load_checkpoint, resolve_checkpoint(liver_ckpt))
    lesion_graph, _, _ = _staged("load", load_checkpoint, resolve_checkpoint(lesion_ckpt))
    extra = liver_manifest.get("extra", {})
    stats = DatasetStats(**extra["stats"]) if "stats" in extra else None
    return liver_graph, lesion_graph, stats, extra


def render_overlay(gt, pred, image, window=(HU_LO, HU_HI)):
    """Binary PPM (P6) bytes: windowed grey CT with TP white, FP red, FN orange."""
    gt = np.asarray(gt).astype(bool)
    pred = np.asarray(pred).astype(bool)
    image = np.asarray(image, dtype=np.float64)
    if not (gt.shape == pred.shape == image.shape) or image.ndim != 2:
        raise ShapeMismatch(f"overlay inputs must be equal 2D shapes: {gt.shape}, {pred.shape}, {image.shape}")
    lo, hi = window
    grey = np.rint((np.clip(image, lo, hi) - lo) / (hi - lo) * 255).astype(np.uint8)
    rgb = np.repeat(grey[..., None], 3, axis=2)
    rgb[gt & pred] = TP_RGB
    rgb[~gt & pred] = FP_RGB
    rgb[gt & ~pred] = FN_RGB
    h, w = gt.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


__all__ = ["CascadeSettings", "predict_volume", "load_cascade", "render_overlay", "Volume"]
