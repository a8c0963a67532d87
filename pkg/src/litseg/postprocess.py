"""3D mask cleanup and cascade composition."""
import numpy as np

from . import kernels
from .errors import ExtentMismatch, ShapeMismatch
from .preprocess import AXES


def _data(m):
    return np.asarray(m.data if hasattr(m, "data") else m)


def _wrap(template, data):
    return template.with_data(data) if hasattr(template, "with_data") else data


def _check_size(size):
    if size < 1 or size % 2 == 0:
        raise ValueError(f"structuring element size must be odd and >= 1, got {size}")


def largest_connected_component(m, connectivity=26):
    """Keep the biggest component; ties go to the one with the smallest linear index."""
    if connectivity not in (6, 26):
        raise ValueError("connectivity must be 6 or 26")
    data = _data(m).astype(bool)
    labels, count = kernels.label(data, connectivity)
    if count == 0:
        return _wrap(m, np.zeros(data.shape, np.uint8))
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    best = int(np.argmax(sizes)) + 1  # first max = lowest label = smallest first voxel
    return _wrap(m, (labels == best).astype(np.uint8))


def dilate(m, size=7):
    """Binary dilation by a ``size``^3 cube, clipped to the volume."""
    _check_size(size)
    return _wrap(m, kernels.dilate_cube(_data(m).astype(np.uint8), size).astype(np.uint8))


def erode(m, size=7):
    """Binary erosion by a ``size``^3 cube; voxels outside the volume count as background."""
    _check_size(size)
    return _wrap(m, kernels.erode_cube(_data(m).astype(np.uint8), size).astype(np.uint8))


def close(m, size=7):
    return erode(dilate(m, size), size)


def cascade_mask(lesion_prob, liver, threshold=0.5):
    """Lesion voxels = probability >= threshold inside the liver mask."""
    p, lv = _data(lesion_prob), _data(liver)
    if p.shape != lv.shape:
        raise ShapeMismatch(f"lesion probability {p.shape} and liver {lv.shape} differ")
    out = ((p >= threshold) & (lv == 1)).astype(np.uint8)
    return _wrap(liver, out)


def stitch_slices(slices, provenance, axis, shape):
    """Average 2D maps back into a volume of ``shape``.

    ``provenance`` gives ``(slice_index, (row0, col0))`` per map (4-tuples as in
    :class:`~litseg.preprocess.SliceBatch` are accepted too). Overlaps are
    averaged; voxels no map covers stay 0.
    """
    ax = AXES[axis] if isinstance(axis, str) else axis
    if len(slices) != len(provenance):
        raise ExtentMismatch(f"{len(slices)} maps but {len(provenance)} provenance entries")
    plane = [shape[a] for a in range(3) if a != ax]
    acc = np.zeros(shape, np.float64)
    cnt = np.zeros(shape, np.int32)
    for prob, prov in zip(slices, provenance):
        if len(prov) == 4:
            prov = prov[2:]
        s, (r0, c0) = prov
        prob = np.asarray(prob, dtype=np.float64)
        if prob.ndim != 2 or not 0 <= s < shape[ax]:
            raise ExtentMismatch(f"map for slice {s} does not fit volume {shape} on axis {ax}")
        rs, cs = max(r0, 0), max(c0, 0)
        re, ce = min(r0 + prob.shape[0], plane[0]), min(c0 + prob.shape[1], plane[1])
        if rs >= re or cs >= ce:
            continue
        sl = [slice(None)] * 3
        sl[ax] = s
        a_plane = acc[tuple(sl)]
        c_plane = cnt[tuple(sl)]
        a_plane[rs:re, cs:ce] += prob[rs - r0:re - r0, cs - c0:ce - c0]
        c_plane[rs:re, cs:ce] += 1
    out = np.zeros(shape, np.float32)
    covered = cnt > 0
    out[covered] = (acc[covered] / cnt[covered]).astype(np.float32)
    return out
