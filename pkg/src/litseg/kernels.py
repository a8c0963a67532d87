"""Hot inner loops, each with a numba kernel and a numpy fallback.

The public names at the bottom are bound to one implementation at import
time according to ``litseg._accel.USE_NUMBA``. Both variants are always
importable under their ``*_numba`` / ``*_numpy`` names so they can be
checked against each other.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit

# ----------------------------------------------------------------------------
# im2col / col2im for stride-1 square kernels on pre-padded input
# cols layout: (C*k*k, N*H*W), row c*k*k + i*k + j, column n*H*W + h*W + w


@njit
def _im2col_nb(xp, k):
    n_, c_, hp, wp = xp.shape
    h = hp - k + 1
    w = wp - k + 1
    cols = np.empty((c_ * k * k, n_ * h * w), dtype=xp.dtype)
    for c in range(c_):
        for i in range(k):
            for j in range(k):
                row = c * k * k + i * k + j
                for n in range(n_):
                    base = n * h * w
                    for y in range(h):
                        for x in range(w):
                            cols[row, base + y * w + x] = xp[n, c, y + i, x + j]
    return cols


@njit
def _col2im_nb(cols, n_, c_, hp, wp, k):
    h = hp - k + 1
    w = wp - k + 1
    out = np.zeros((n_, c_, hp, wp), dtype=cols.dtype)
    for n in range(n_):
        base = n * h * w
        for c in range(c_):
            for i in range(k):
                for j in range(k):
                    row = c * k * k + i * k + j
                    for y in range(h):
                        for x in range(w):
                            out[n, c, y + i, x + j] += cols[row, base + y * w + x]
    return out


def im2col_numba(xp, k):
    return _im2col_nb(np.ascontiguousarray(xp), k)


def col2im_numba(cols, padded_shape, k):
    n, c, hp, wp = padded_shape
    return _col2im_nb(np.ascontiguousarray(cols), n, c, hp, wp, k)


def im2col_numpy(xp, k):
    n, c, hp, wp = xp.shape
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, k, k)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, -1)


def col2im_numpy(cols, padded_shape, k):
    n, c, hp, wp = padded_shape
    h, w = hp - k + 1, wp - k + 1
    blocks = cols.reshape(c, k, k, n, h, w)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + h, j:j + w] += blocks[:, i, j].transpose(1, 0, 2, 3)
    return out


# ----------------------------------------------------------------------------
# 2x2 / stride-2 max pooling; argmax in 0..3 = scan order (0,0),(0,1),(1,0),(1,1)


@njit
def _maxpool_fwd_nb(x):
    n_, c_, h, w = x.shape
    ho = h // 2
    wo = w // 2
    out = np.empty((n_, c_, ho, wo), dtype=x.dtype)
    arg = np.empty((n_, c_, ho, wo), dtype=np.int8)
    for n in range(n_):
        for c in range(c_):
            for y in range(ho):
                for xx in range(wo):
                    best = x[n, c, 2 * y, 2 * xx]
                    bi = 0
                    for q in range(1, 4):
                        v = x[n, c, 2 * y + q // 2, 2 * xx + q % 2]
                        if v > best:
                            best = v
                            bi = q
                    out[n, c, y, xx] = best
                    arg[n, c, y, xx] = bi
    return out, arg


@njit
def _maxpool_bwd_nb(dout, arg):
    n_, c_, ho, wo = dout.shape
    dx = np.zeros((n_, c_, 2 * ho, 2 * wo), dtype=dout.dtype)
    for n in range(n_):
        for c in range(c_):
            for y in range(ho):
                for xx in range(wo):
                    q = arg[n, c, y, xx]
                    dx[n, c, 2 * y + q // 2, 2 * xx + q % 2] = dout[n, c, y, xx]
    return dx


def maxpool_fwd_numba(x):
    return _maxpool_fwd_nb(np.ascontiguousarray(x))


def maxpool_bwd_numba(dout, arg):
    return _maxpool_bwd_nb(np.ascontiguousarray(dout), arg)


def maxpool_fwd_numpy(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool_bwd_numpy(dout, arg):
    n, c, ho, wo = dout.shape
    win = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(win, arg[..., None].astype(np.intp), dout[..., None], axis=-1)
    return win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)


# ----------------------------------------------------------------------------
# 3D connected component labelling; labels are numbered 1.. in order of each
# component's smallest C-order voxel index.


@njit
def _label_nb(mask, full):
    nx, ny, nz = mask.shape
    labels = np.zeros((nx, ny, nz), dtype=np.int32)
    stack = np.empty((nx * ny * nz, 3), dtype=np.int64)
    count = 0
    for x0 in range(nx):
        for y0 in range(ny):
            for z0 in range(nz):
                if not mask[x0, y0, z0] or labels[x0, y0, z0] != 0:
                    continue
                count += 1
                labels[x0, y0, z0] = count
                top = 0
                stack[0, 0] = x0
                stack[0, 1] = y0
                stack[0, 2] = z0
                top = 1
                while top > 0:
                    top -= 1
                    x = stack[top, 0]
                    y = stack[top, 1]
                    z = stack[top, 2]
                    for dx in range(-1, 2):
                        for dy in range(-1, 2):
                            for dz in range(-1, 2):
                                d = abs(dx) + abs(dy) + abs(dz)
                                if d == 0 or (not full and d > 1):
                                    continue
                                xx = x + dx
                                yy = y + dy
                                zz = z + dz
                                if xx < 0 or yy < 0 or zz < 0 or xx >= nx or yy >= ny or zz >= nz:
                                    continue
                                if mask[xx, yy, zz] and labels[xx, yy, zz] == 0:
                                    labels[xx, yy, zz] = count
                                    stack[top, 0] = xx
                                    stack[top, 1] = yy
                                    stack[top, 2] = zz
                                    top += 1
    return labels, count


def label_numba(mask, connectivity=26):
    return _label_nb(np.ascontiguousarray(mask, dtype=np.bool_), connectivity == 26)


def label_numpy(mask, connectivity=26):
    from scipy import ndimage

    structure = ndimage.generate_binary_structure(3, 3 if connectivity == 26 else 1)
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    return labels.astype(np.int32), int(count)


# ----------------------------------------------------------------------------
# separable cube morphology: running max/min of radius r along one axis,
# out-of-bounds treated as 0


@njit
def _filter_axis0_nb(m, r, take_max):
    n0, n1, n2 = m.shape
    out = np.empty_like(m)
    for j in range(n1):
        for k in range(n2):
            for i in range(n0):
                lo = i - r
                hi = i + r
                if take_max:
                    v = 0
                    for t in range(max(lo, 0), min(hi, n0 - 1) + 1):
                        if m[t, j, k]:
                            v = 1
                            break
                else:
                    v = 1
                    if lo < 0 or hi > n0 - 1:
                        v = 0
                    else:
                        for t in range(lo, hi + 1):
                            if not m[t, j, k]:
                                v = 0
                                break
                out[i, j, k] = v
    return out


def _separable_nb(m, size, take_max):
    r = size // 2
    out = np.ascontiguousarray(m, dtype=np.uint8)
    for axis in range(3):
        moved = np.ascontiguousarray(np.moveaxis(out, axis, 0))
        out = np.moveaxis(_filter_axis0_nb(moved, r, take_max), 0, axis)
    return np.ascontiguousarray(out)


def _separable_np(m, size, take_max):
    r = size // 2
    out = np.asarray(m, dtype=np.uint8)
    for axis in range(3):
        n = out.shape[axis]
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(out, pad, constant_values=0)
        acc = out.copy()
        for s in range(2 * r + 1):
            sl = [slice(None)] * 3
            sl[axis] = slice(s, s + n)
            acc = np.maximum(acc, padded[tuple(sl)]) if take_max else np.minimum(acc, padded[tuple(sl)])
        out = acc
    return out


def dilate_cube_numba(m, size):
    return _separable_nb(m, size, True)


def erode_cube_numba(m, size):
    return _separable_nb(m, size, False)


def dilate_cube_numpy(m, size):
    return _separable_np(m, size, True)


def erode_cube_numpy(m, size):
    return _separable_np(m, size, False)


# ----------------------------------------------------------------------------
# directed nearest-surface distances; coordinates are integer voxel indices,
# distance = sqrt(sum(((a - b) * spacing) ** 2))


@njit
def _nearest_nb(a, b_sorted, spacing):
    na = a.shape[0]
    nb = b_sorted.shape[0]
    out = np.empty(na, dtype=np.float64)
    sx = spacing[0]
    sy = spacing[1]
    sz = spacing[2]
    bx = b_sorted[:, 0]
    for i in range(na):
        ax = a[i, 0]
        # insertion point of ax in the sorted first coordinate
        lo = 0
        hi = nb
        while lo < hi:
            mid = (lo + hi) // 2
            if bx[mid] < ax:
                lo = mid + 1
            else:
                hi = mid
        best = np.inf
        up = lo
        down = lo - 1
        while up < nb or down >= 0:
            if up < nb:
                dx = (b_sorted[up, 0] - ax) * sx
                if dx * dx >= best:
                    up = nb
                else:
                    dy = (b_sorted[up, 1] - a[i, 1]) * sy
                    dz = (b_sorted[up, 2] - a[i, 2]) * sz
                    d = dx * dx + dy * dy + dz * dz
                    if d < best:
                        best = d
                    up += 1
            if down >= 0:
                dx = (b_sorted[down, 0] - ax) * sx
                if dx * dx >= best:
                    down = -1
                else:
                    dy = (b_sorted[down, 1] - a[i, 1]) * sy
                    dz = (b_sorted[down, 2] - a[i, 2]) * sz
                    d = dx * dx + dy * dy + dz * dz
                    if d < best:
                        best = d
                    down -= 1
        out[i] = np.sqrt(best)
    return out


def nearest_distances_numba(a, b, spacing):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    b = np.ascontiguousarray(b[np.argsort(b[:, 0], kind="stable")])
    return _nearest_nb(a, b, np.asarray(spacing, dtype=np.float64))


def nearest_distances_numpy(a, b, spacing, chunk=2048):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = np.asarray(spacing, dtype=np.float64)
    out = np.empty(len(a))
    for start in range(0, len(a), chunk):
        diff = (a[start:start + chunk, None, :] - b[None, :, :]) * s
        sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        out[start:start + chunk] = np.sqrt(sq.min(axis=1))
    return out


if USE_NUMBA:
    im2col, col2im = im2col_numba, col2im_numba
    maxpool_fwd, maxpool_bwd = maxpool_fwd_numba, maxpool_bwd_numba
    label = label_numba
    dilate_cube, erode_cube = dilate_cube_numba, erode_cube_numba
    nearest_distances = nearest_distances_numba
else:
    im2col, col2im = im2col_numpy, col2im_numpy
    maxpool_fwd, maxpool_bwd = maxpool_fwd_numpy, maxpool_bwd_numpy
    label = label_numpy
    dilate_cube, erode_cube = dilate_cube_numpy, erode_cube_numpy
    nearest_distances = nearest_distances_numpy
