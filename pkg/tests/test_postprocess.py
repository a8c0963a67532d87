import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from litseg import postprocess as post
from litseg.errors import ExtentMismatch, ShapeMismatch
from litseg.volume_io import Volume

import oracles

small_masks = arrays(np.bool_, st.tuples(*[st.integers(1, 8)] * 3))


@given(small_masks, st.sampled_from([6, 26]))
@settings(max_examples=80, deadline=None)
def test_lcc_matches_flood_fill(m, conn):
    assert np.array_equal(post.largest_connected_component(m, conn), oracles.largest_component(m, conn))


@given(small_masks, st.sampled_from([1, 3, 5]))
@settings(max_examples=60, deadline=None)
def test_morphology_matches_set_definitions(m, size):
    assert np.array_equal(post.dilate(m, size), oracles.dilate(m, size))
    assert np.array_equal(post.erode(m, size), oracles.erode(m, size))
    assert np.array_equal(post.close(m, size), oracles.close(m, size))


@given(small_masks)
@settings(max_examples=40, deadline=None)
def test_lcc_idempotent_and_subset(m):
    once = post.largest_connected_component(m)
    assert np.array_equal(post.largest_connected_component(once), once)
    assert not np.any(once.astype(bool) & ~m)


def test_lcc_examples():
    m = np.zeros((10, 10, 10), np.uint8)
    m[0:2, 0:2, 0:2] = 1  # 8 voxels
    m[5:8, 5:8, 5:8] = 1  # 27 voxels
    assert post.largest_connected_component(m).sum() == 27
    assert post.largest_connected_component(np.zeros((3, 3, 3))).sum() == 0
    # diagonal neighbours join only under 26-connectivity
    d = np.zeros((3, 3, 3), np.uint8)
    d[0, 0, 0] = d[1, 1, 1] = 1
    assert post.largest_connected_component(d, 26).sum() == 2
    assert post.largest_connected_component(d, 6).sum() == 1
    # equal sizes: the component met first in scan order wins
    t = np.zeros((5, 1, 1), np.uint8)
    t[0] = t[4] = 1
    assert post.largest_connected_component(t, 6)[:, 0, 0].tolist() == [1, 0, 0, 0, 0]


def test_dilate_point_and_border():
    m = np.zeros((9, 9, 9), np.uint8)
    m[4, 4, 4] = 1
    assert post.dilate(m, 7).sum() == 343
    m[:] = 0
    m[0, 0, 0] = 1
    assert post.dilate(m, 7).sum() == 64  # clipped to the volume
    with pytest.raises(ValueError):
        post.dilate(m, 4)


def test_closing_fills_small_gap():
    m = np.zeros((12, 12, 12), np.uint8)
    m[3:9, 3:9, 3:9] = 1
    m[5, 5, 5] = 0
    assert post.close(m, 3)[5, 5, 5] == 1


def test_wraps_volumes():
    v = Volume(np.ones((3, 3, 3), np.uint8), spacing=(2, 2, 2))
    out = post.dilate(v, 3)
    assert isinstance(out, Volume) and out.spacing == (2.0, 2.0, 2.0)


def test_cascade_mask_is_subset_of_liver():
    rng = np.random.default_rng(0)
    prob = rng.uniform(size=(6, 6, 6))
    liver = (rng.uniform(size=(6, 6, 6)) < 0.5).astype(np.uint8)
    out = post.cascade_mask(prob, liver, 0.5)
    assert np.array_equal(out, ((prob >= 0.5) & (liver == 1)).astype(np.uint8))
    assert np.array_equal(post.cascade_mask(np.ones((2, 2, 2)), np.zeros((2, 2, 2))), np.zeros((2, 2, 2)))
    with pytest.raises(ShapeMismatch):
        post.cascade_mask(prob, liver[:5])


def test_stitch_averages_overlaps():
    a = np.full((4, 4), 1.0)
    b = np.full((4, 4), 0.0)
    vol = post.stitch_slices([a, b], [(1, (0, 0)), (1, (2, 2))], "axial", (6, 6, 3))
    plane = vol[:, :, 1]
    assert plane[0, 0] == 1.0 and plane[3, 3] == 0.5 and plane[5, 5] == 0.0
    assert vol[:, :, 0].sum() == 0 and vol[:, :, 2].sum() == 0


def test_stitch_overhang_and_errors():
    vol = post.stitch_slices([np.ones((4, 4))], [(0, (-2, -2))], 0, (3, 3, 3))
    assert vol[0].sum() == 4
    with pytest.raises(ExtentMismatch):
        post.stitch_slices([np.ones((2, 2))], [(5, (0, 0))], 0, (3, 3, 3))
    with pytest.raises(ExtentMismatch):
        post.stitch_slices([np.ones((2, 2))], [], 0, (3, 3, 3))
