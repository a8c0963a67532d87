import json

import numpy as np
import pytest

from litseg.errors import CheckpointMismatch, EmptyDataset, EmptyLog, NonFiniteLoss
from litseg.networks import UNetConfig, TiramisuConfig, build_tiramisu, build_unet
from litseg.optim import AdamState, LrSchedule
from litseg.phantom import generate_dataset
from litseg.preprocess import SliceBatch, clip_hu, compute_stats, extract_full_slices
from litseg.train import (AugmentConfig, EpochRecord, TrainConfig, TrainLog, augment, load_checkpoint,
                          resolve_checkpoint, save_checkpoint, select_best, train, transform_pair)


@pytest.fixture(scope="module")
def tiny_sets():
    cases = generate_dataset(4, 16, seed=2)
    stats = compute_stats([clip_hu(c[0]) for c in cases])
    sets = [SliceBatch.concat(extract_full_slices(v, liver, stats, "axial", slice_step=3, volume_id=i)
                              for i, (v, liver, _) in enumerate(part))
            for part in (cases[:3], cases[3:])]
    return sets


def _cfg(**kw):
    base = dict(network=UNetConfig(start_filters=2, depth=2), loss="dice", schedule=LrSchedule(1e-3, 2),
                epochs=2, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_augment_disabled_is_identity():
    img = np.random.default_rng(0).normal(size=(8, 8)).astype(np.float32)
    tgt = (img > 0).astype(np.float32)
    a, b = augment(img, tgt, AugmentConfig(enabled=False), 0)
    assert a is img and b is tgt


def test_identity_transform():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(9, 7))
    tgt = (rng.uniform(size=(9, 7)) < 0.5).astype(np.float32)
    a, b = transform_pair(img, tgt, 0.0, (0, 0), 1.0)
    np.testing.assert_allclose(a, img, atol=1e-6)
    assert np.array_equal(b, tgt)


def test_quarter_turn_matches_index_rotation():
    pattern = np.arange(25, dtype=np.float64).reshape(5, 5)
    mask = np.zeros((5, 5), np.float32)
    mask[0, 1:4] = 1
    mask[1, 3] = 1
    a, b = transform_pair(pattern, mask, 90.0)
    np.testing.assert_allclose(a, np.rot90(pattern), atol=1e-9)
    assert np.array_equal(b, np.rot90(mask))


def test_augment_properties():
    rng = np.random.default_rng(1)
    img = rng.normal(size=(16, 16)).astype(np.float32)
    tgt = (rng.uniform(size=(16, 16)) < 0.3).astype(np.float32)
    cfg = AugmentConfig(enabled=True)
    a1, b1 = augment(img, tgt, cfg, 42, fill=-2.0)
    a2, b2 = augment(img, tgt, cfg, 42, fill=-2.0)
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
    assert a1.shape == img.shape and a1.dtype == img.dtype
    assert set(np.unique(b1)) <= {0.0, 1.0}
    # pure shift pushes fill into the vacated border
    a, b = transform_pair(img, tgt, 0.0, (3, 0), 1.0, fill=-2.0)
    assert np.all(a[:3] == -2.0) and np.all(b[:3] == 0)


def test_select_best_rules():
    log = TrainLog([EpochRecord(i + 1, 0, s, 1e-3, 0) for i, s in enumerate([0.1, 0.5, 0.3])])
    assert select_best(log) == 2
    assert select_best(TrainLog([EpochRecord(i + 1, 0, 0.4, 1e-3, 0) for i in range(3)])) == 1
    assert select_best(TrainLog([EpochRecord(1, 0, 0.2, 1e-3, 0)])) == 1
    assert select_best(log, {1: "a", 2: "b", 3: "c"}) == "b"
    with pytest.raises(EmptyLog):
        select_best(TrainLog())


def test_checkpoint_roundtrip(tmp_path):
    g = build_tiramisu(TiramisuConfig(down_block_layers=[2], bottleneck_layers=2, growth_rate=3,
                                      start_filters=4), seed=5)
    adam = AdamState(t=3)
    for name, p in g.parameters(trainable_only=True):
        adam.m[name] = np.full_like(p.value, 0.5)
        adam.v[name] = np.full_like(p.value, 0.25)
    save_checkpoint(tmp_path / "ck", g, adam, extra={"stats": {"mean": 1.0, "std": 2.0}})
    h, adam2, manifest = load_checkpoint(tmp_path / "ck", expect_arch="tiramisu")
    for (n1, p1), (n2, p2) in zip(g.parameters(), h.parameters()):
        assert n1 == n2 and p1.value.tobytes() == p2.value.tobytes()
    assert adam2.t == 3 and set(adam2.m) == set(adam.m)
    assert manifest["extra"]["stats"] == {"mean": 1.0, "std": 2.0}
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "ck", expect_arch="unet")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "nothing")


def test_checkpoint_tensor_mismatch(tmp_path):
    g = build_unet(UNetConfig(start_filters=2, depth=1))
    save_checkpoint(tmp_path / "ck", g)
    m = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    m["network"]["start_filters"] = 4
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "ck")


def test_one_epoch_bookkeeping(tiny_sets, tmp_path):
    tr, va = tiny_sets
    log, _, cks = train(_cfg(epochs=1), tr, va, tmp_path / "run", meta={"stats": {"mean": 0.0, "std": 1.0}})
    assert len(log.records) == 1
    assert (cks[1] / "manifest.json").exists()
    assert json.loads((tmp_path / "run" / "best.json").read_text())["epoch"] == 1
    assert TrainLog.read_csv(tmp_path / "run" / "trainlog.csv").records[0].val_score == log.records[0].val_score
    assert resolve_checkpoint(tmp_path / "run") == cks[1]
    extra = json.loads((cks[1] / "manifest.json").read_text())["extra"]
    assert extra["stats"] == {"mean": 0.0, "std": 1.0} and extra["epoch"] == 1


def test_epoch_lr_follows_schedule(tiny_sets):
    tr, va = tiny_sets
    log, _, _ = train(_cfg(epochs=5), tr, va)
    assert [r.lr for r in log.records] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4]


def test_training_is_deterministic(tiny_sets, tmp_path):
    tr, va = tiny_sets
    cfg = _cfg(augmentation=AugmentConfig(enabled=True))
    train(cfg, tr, va, tmp_path / "a")
    train(cfg, tr, va, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a" / "epoch_002").iterdir())
    for f in files:
        assert (tmp_path / "a" / "epoch_002" / f).read_bytes() == (tmp_path / "b" / "epoch_002" / f).read_bytes()


def test_loss_decreases(tiny_sets):
    tr, va = tiny_sets
    log, _, _ = train(_cfg(epochs=8, loss="bce", schedule=LrSchedule(3e-3, 100)), tr, va)
    assert log.records[-1].loss < log.records[0].loss


def test_nan_weight_raises(tiny_sets):
    tr, va = tiny_sets
    g = build_unet(UNetConfig(start_filters=2, depth=2))
    dict(g.parameters())["head.weight"].value[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        train(_cfg(), tr, va, graph=g)
    assert info.value.epoch == 1


def test_empty_sets_rejected(tiny_sets):
    with pytest.raises(EmptyDataset):
        train(_cfg(), tiny_sets[0], None)
