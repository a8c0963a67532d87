import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from litseg import preprocess as pp
from litseg.errors import EmptyDataset, EmptyLiver, InvalidRange, ShapeMismatch, ZeroVariance
from litseg.volume_io import Volume

hu_volumes = arrays(np.float32, st.tuples(*[st.integers(1, 6)] * 3),
                    elements=st.floats(-3000, 3000, width=32)).map(Volume)


def test_clip_examples():
    v = Volume(np.array([-200, 500, 50, -1000], np.float32).reshape(4, 1, 1))
    assert pp.clip_hu(v).data.ravel().tolist() == [-100, 400, 50, -100]
    with pytest.raises(InvalidRange):
        pp.clip_hu(v, 10, 10)


@given(hu_volumes)
@settings(max_examples=50, deadline=None)
def test_clip_is_idempotent_and_bounded(v):
    once = pp.clip_hu(v)
    assert np.array_equal(pp.clip_hu(once).data, once.data)
    assert once.data.min() >= -100 and once.data.max() <= 400


def test_stats_hand_example_and_degenerate():
    s = pp.compute_stats([Volume(np.array([0, 0, 4, 4], np.float32).reshape(2, 2, 1))])
    assert (s.mean, s.std) == (2.0, 2.0)
    with pytest.raises(ZeroVariance):
        pp.compute_stats([Volume(np.full((2, 2, 2), 7.0))])
    with pytest.raises(EmptyDataset):
        pp.compute_stats([])


def test_stats_match_flat_oracle():
    rng = np.random.default_rng(0)
    vols = [Volume(rng.normal(50, 80, size=(8, 8, 8)).astype(np.float32)) for _ in range(2)]
    flat = np.concatenate([v.data.ravel().astype(np.float64) for v in vols])
    s = pp.compute_stats(vols)
    assert abs(s.mean - flat.mean()) < 1e-6
    assert abs(s.std - flat.std()) < 1e-6


def test_stats_save_load(tmp_path):
    s = pp.DatasetStats(12.5, 3.25)
    s.save(tmp_path / "s.json")
    assert pp.DatasetStats.load(tmp_path / "s.json") == s


def test_standardize_examples_and_inverse():
    s = pp.DatasetStats(10.0, 4.0)
    v = Volume(np.array([10, 14, -3.3], np.float32).reshape(3, 1, 1))
    z = pp.standardize(v, s).data.ravel()
    assert z[0] == 0 and z[1] == 1
    np.testing.assert_allclose(z * 4 + 10, v.data.ravel(), atol=1e-5)


@given(hu_volumes)
@settings(max_examples=30, deadline=None)
def test_prepared_values_within_clip_image(v):
    s = pp.DatasetStats(30.0, 120.0)
    z = pp.prepare(v, s).data
    assert z.min() >= np.float32((-100 - 30) / 120) - 1e-6
    assert z.max() <= np.float32((400 - 30) / 120) + 1e-6


def _liver_case(shape=(40, 30, 24), box=((8, 20), (10, 20), (5, 15))):
    liver = np.zeros(shape, np.uint8)
    liver[box[0][0]:box[0][1] + 1, box[1][0]:box[1][1] + 1, box[2][0]:box[2][1] + 1] = 1
    rng = np.random.default_rng(1)
    vol = Volume(rng.normal(0, 200, size=shape).astype(np.float32))
    target = (rng.uniform(size=shape) < 0.1).astype(np.uint8) * liver
    return vol, Volume(liver), Volume(target)


def test_crop_slice_count_matches_box_scan():
    vol, liver, target = _liver_case(box=((8, 20), (10, 20), (5, 15)))
    stats = pp.DatasetStats(0.0, 100.0)
    b = pp.extract_training_crops(vol, liver, target, stats, "coronal", (16, 16), margin=16, rng_seed=0)
    # coronal is axis 1 with size 30: liver rows 10..20, grown by 16 and clamped to 0..29
    lo, hi = max(10 - 16, 0), min(20 + 16, 29)
    assert [p[2] for p in b.provenance] == list(range(lo, hi + 1))
    b = pp.extract_training_crops(vol, liver, target, stats, "axial", (16, 16), margin=2, rng_seed=0)
    assert [p[2] for p in b.provenance] == list(range(3, 18))


def test_crops_are_windows_of_the_prepared_slice():
    vol, liver, target = _liver_case()
    stats = pp.DatasetStats(5.0, 150.0)
    crop = (64, 50)  # larger than the coronal plane (40 x 24)
    b = pp.extract_training_crops(vol, liver, target, stats, "coronal", crop, margin=4, rng_seed=3)
    image = pp.prepare(vol, stats).data
    fill = pp.background_value(stats)
    for k, (_, axis, s, (r0, c0)) in enumerate(b.provenance):
        plane = image[:, s, :]
        win = b.images[k, 0]
        rows = np.arange(r0, r0 + crop[0])
        cols = np.arange(c0, c0 + crop[1])
        inside = ((rows >= 0) & (rows < 40))[:, None] & ((cols >= 0) & (cols < 24))[None, :]
        assert np.all(win[~inside] == fill)
        assert np.array_equal(win[inside], plane[np.ix_(rows[(rows >= 0) & (rows < 40)],
                                                        cols[(cols >= 0) & (cols < 24)])].ravel())
        # window must touch the grown liver box
        assert r0 <= 20 + 4 and r0 + crop[0] - 1 >= 8 - 4


def test_crop_targets_never_invent_labels():
    vol, liver, target = _liver_case()
    b = pp.extract_training_crops(vol, liver, target, pp.DatasetStats(0, 1), "coronal", (24, 24), 16, 7)
    assert set(np.unique(b.targets)) <= {0.0, 1.0}
    assert b.targets.sum() <= target.data.sum()


def test_crop_determinism_and_errors():
    vol, liver, target = _liver_case()
    s = pp.DatasetStats(0, 1)
    a = pp.extract_training_crops(vol, liver, target, s, rng_seed=5, crop=(32, 32))
    b = pp.extract_training_crops(vol, liver, target, s, rng_seed=5, crop=(32, 32))
    assert np.array_equal(a.images, b.images) and a.provenance == b.provenance
    with pytest.raises(EmptyLiver):
        pp.extract_training_crops(vol, Volume(np.zeros(vol.shape, np.uint8)), target, s)
    with pytest.raises(ShapeMismatch):
        pp.extract_training_crops(vol, Volume(np.zeros((2, 2, 2), np.uint8)), target, s)


def test_full_slices_and_resize():
    vol, liver, _ = _liver_case()
    s = pp.DatasetStats(0, 100)
    b = pp.extract_full_slices(vol, liver, s, "axial")
    assert b.images.shape == (24, 1, 40, 30)
    assert np.array_equal(b.targets[:, 0], np.moveaxis(liver.data, 2, 0).astype(np.float32))
    b = pp.extract_full_slices(vol, liver, s, "axial", size=(20, 15), slice_step=4, slice_offset=1)
    assert b.images.shape == (6, 1, 20, 15)
    assert [p[2] for p in b.provenance] == [1, 5, 9, 13, 17, 21]
    assert set(np.unique(b.targets)) <= {0.0, 1.0}
