import numpy as np
import pytest

from litseg.errors import BackwardBeforeForward, InvalidConfig, ShapeMismatch
from litseg.networks import (TiramisuConfig, UNetConfig, build_network, build_tiramisu, build_unet)


def test_default_parameter_counts():
    assert build_unet().count_params() == 7_759_521
    assert build_tiramisu().count_params() == 1_525_509


def _unet_count_oracle(f0, depth, c_in=1, c_out=1):
    # independent closed form: two 3x3 convs per level, convT 2x2 per decoder level, 1x1 head
    def conv(ci, co, k=3):
        return ci * co * k * k + co
    total, c, f = 0, c_in, f0
    for _ in range(depth):
        total += conv(c, f) + conv(f, f)
        c, f = f, 2 * f
    total += conv(c, f) + conv(f, f)  # bottleneck
    for _ in range(depth):
        total += conv(f, f // 2, 2)  # transposed conv weights have the same count formula
        total += conv(f, f // 2) + conv(f // 2, f // 2)
        f //= 2
    return total + conv(f, c_out, 1)


@pytest.mark.parametrize("f0,depth", [(32, 4), (8, 3), (4, 1), (16, 2)])
def test_unet_count_matches_closed_form(f0, depth):
    assert build_unet(UNetConfig(start_filters=f0, depth=depth)).count_params() == _unet_count_oracle(f0, depth)


@pytest.mark.parametrize("builder,cfg,size", [
    (build_unet, UNetConfig(start_filters=4, depth=2), 16),
    (build_tiramisu, TiramisuConfig(down_block_layers=[2, 3], bottleneck_layers=3, growth_rate=4,
                                    start_filters=8), 16),
])
def test_output_shape_and_range(builder, cfg, size):
    g = builder(cfg)
    x = np.random.default_rng(0).normal(size=(3, 1, size, size)).astype(np.float32)
    y = g.forward(x, mode="eval")
    assert y.shape == (3, 1, size, size)
    assert y.dtype == np.float32
    assert np.all((y >= 0) & (y <= 1))


def test_build_is_deterministic_per_seed():
    a = dict(build_unet(UNetConfig(start_filters=4, depth=2), seed=3).parameters())
    b = dict(build_unet(UNetConfig(start_filters=4, depth=2), seed=3).parameters())
    c = dict(build_unet(UNetConfig(start_filters=4, depth=2), seed=4).parameters())
    assert all(np.array_equal(a[k].value, b[k].value) for k in a)
    assert any(not np.array_equal(a[k].value, c[k].value) for k in a)


def test_backward_before_forward():
    with pytest.raises(BackwardBeforeForward):
        build_unet(UNetConfig(start_filters=2, depth=1)).backward(np.zeros((1, 1, 4, 4)))


def test_input_shape_checks():
    g = build_unet(UNetConfig(start_filters=2, depth=2))
    with pytest.raises(ShapeMismatch):
        g.forward(np.zeros((1, 2, 8, 8)))
    with pytest.raises(ShapeMismatch):
        g.forward(np.zeros((1, 1, 6, 6)))


@pytest.mark.parametrize("cfg", [UNetConfig(depth=0), UNetConfig(dropout=1.0),
                                 TiramisuConfig(down_block_layers=[]), TiramisuConfig(growth_rate=0)])
def test_config_validation(cfg):
    with pytest.raises(InvalidConfig):
        build_network({"arch": "unet" if isinstance(cfg, UNetConfig) else "tiramisu",
                       "config": vars(cfg)})


def test_build_network_from_spec_roundtrip():
    g = build_tiramisu(TiramisuConfig(down_block_layers=[2], bottleneck_layers=2, growth_rate=3,
                                      start_filters=4))
    h = build_network(g.spec())
    assert h.arch == "tiramisu"
    assert [n for n, _ in g.parameters()] == [n for n, _ in h.parameters()]


def _whole_net_gradcheck(g, x, seed, n_probe=12, h=1e-7):
    """Probe random coordinates of the input and of every trainable tensor.

    A deep ReLU/maxpool stack has kinks close to almost any point, so the step
    is much smaller than in the per-layer checks.
    """
    rng = np.random.default_rng(seed)
    r = rng.normal(size=x.shape)
    # zero-initialised biases leave padded all-zero regions exactly on the ReLU kink
    for name, p in g.parameters(trainable_only=True):
        if name.endswith(".bias"):
            p.value[...] = rng.uniform(0.05, 0.2, p.value.shape) * rng.choice([-1, 1], p.value.shape)

    def f():
        return float(np.sum(g.forward(x, mode="train", rng=7) * r)) + g.l2_penalty()

    g.forward(x, mode="train", rng=7)
    dx = g.backward(r)
    targets = [("input", x, dx)] + [(n, p.value, p.grad.copy()) for n, p in g.parameters(trainable_only=True)]
    for name, arr, analytic in targets:
        idx = [tuple(rng.integers(0, s) for s in arr.shape) for _ in range(n_probe)]
        num, ana = [], []
        for i in idx:
            old = arr[i]
            arr[i] = old + h
            fp = f()
            arr[i] = old - h
            fm = f()
            arr[i] = old
            num.append((fp - fm) / (2 * h))
            ana.append(analytic[i])
        ana, num = np.array(ana), np.array(num)
        # a bias feeding a train-mode batchnorm has an exactly-zero gradient; compare absolutely then
        err = np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-3)
        assert err < 1e-4, name


@pytest.mark.parametrize("seed", range(3))
def test_unet_end_to_end_gradients(seed):
    g = build_unet(UNetConfig(start_filters=2, depth=2, dropout=0.2), seed=seed, dtype=np.float64)
    x = np.random.default_rng(seed).normal(size=(2, 1, 8, 8))
    _whole_net_gradcheck(g, x, seed)


@pytest.mark.parametrize("seed", range(3))
def test_tiramisu_end_to_end_gradients(seed):
    cfg = TiramisuConfig(down_block_layers=[2, 2], bottleneck_layers=2, growth_rate=3, start_filters=4,
                         l2_lambda=1e-2)
    g = build_tiramisu(cfg, seed=seed, dtype=np.float64)
    x = np.random.default_rng(seed).normal(size=(2, 1, 8, 8))
    _whole_net_gradcheck(g, x, seed)


def test_describe_lists_total():
    text = build_unet().describe()
    assert "total trainable parameters: 7,759,521" in text
    assert "enc1_conv1" in text
