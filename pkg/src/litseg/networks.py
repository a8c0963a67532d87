"""U-Net and Tiramisu (FC-DenseNet) graphs with explicit forward/backward.

A :class:`NetworkGraph` is an ordered list of layer nodes, each naming its
inputs; nodes only consume earlier nodes, so executing the list in order is
a valid schedule and the reverse order is a valid backward schedule.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .errors import BackwardBeforeForward, InvalidConfig, ShapeMismatch
from .optim import he_uniform


@dataclass
class UNetConfig:
    start_filters: int = 32
    depth: int = 4
    dropout: float = 0.2
    in_channels: int = 1
    out_channels: int = 1

    def validate(self):
        if self.start_filters < 1 or self.depth < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise InvalidConfig(f"invalid U-Net config: {self}")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class TiramisuConfig:
    down_block_layers: list = field(default_factory=lambda: [4, 5, 6, 7])
    bottleneck_layers: int = 8
    growth_rate: int = 12
    start_filters: int = 32
    dropout: float = 0.2
    l2_lambda: float = 1e-5
    in_channels: int = 1
    out_channels: int = 1

    def validate(self):
        counts = list(self.down_block_layers) + [self.bottleneck_layers, self.growth_rate, self.start_filters]
        if not self.down_block_layers or any(int(c) < 1 for c in counts):
            raise InvalidConfig(f"invalid Tiramisu config: {self}")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.l2_lambda < 0:
            raise InvalidConfig("l2_lambda must be >= 0")

    @property
    def depth(self):
        return len(self.down_block_layers)


@dataclass
class Node:
    name: str
    kind: str
    inputs: tuple = ()
    config: dict = field(default_factory=dict)


class NetworkGraph:
    """Ordered DAG of layer nodes plus their parameters."""

    def __init__(self, arch, config, dtype=np.float32):
        self.arch = arch
        self.config = config
        self.dtype = np.dtype(dtype)
        self.nodes = []
        self.params = {}
        self.channels = {}
        self.output = None
        self._index = {}
        self._caches = None
        self._counter = 0

    # -- construction --------------------------------------------------------

    def add(self, kind, inputs=(), name=None, channels=None, **config):
        if name is None:
            self._counter += 1
            name = f"{kind}{self._counter}"
        if name in self._index:
            raise InvalidConfig(f"duplicate node name {name!r}")
        for src in inputs:
            if src not in self._index:
                raise InvalidConfig(f"node {name!r} consumes unknown node {src!r}")
        self._index[name] = len(self.nodes)
        self.nodes.append(Node(name, kind, tuple(inputs), config))
        if channels is None:
            channels = self.channels[inputs[0]]
        self.channels[name] = channels
        self.output = name
        return name

    def conv(self, src, c_out, k=3, name=None, l2=0.0, rng=None):
        c_in = self.channels[src]
        fan_in = c_in * k * k
        w = he_uniform((c_out, c_in, k, k), fan_in, rng).astype(self.dtype)
        name = self.add("conv", (src,), name, channels=c_out, l2=l2)
        self.params[name] = {"weight": L.Param(w), "bias": L.Param(np.zeros(c_out, self.dtype))}
        return name

    def conv_transpose(self, src, c_out, name=None, l2=0.0, rng=None):
        c_in = self.channels[src]
        w = he_uniform((c_in, c_out, 2, 2), c_in, rng).astype(self.dtype)
        name = self.add("conv_transpose", (src,), name, channels=c_out, l2=l2)
        self.params[name] = {"weight": L.Param(w), "bias": L.Param(np.zeros(c_out, self.dtype))}
        return name

    def batchnorm(self, src, name=None, momentum=0.99, eps=1e-5):
        c = self.channels[src]
        name = self.add("batchnorm", (src,), name, momentum=momentum, eps=eps)
        self.params[name] = {
            "gamma": L.Param(np.ones(c, self.dtype)),
            "beta": L.Param(np.zeros(c, self.dtype)),
            "running_mean": L.Param(np.zeros(c, self.dtype), trainable=False),
            "running_var": L.Param(np.ones(c, self.dtype), trainable=False),
        }
        return name

    def concat(self, a, b, name=None):
        return self.add("concat", (a, b), name, channels=self.channels[a] + self.channels[b])

    # -- execution -----------------------------------------------------------

    def forward(self, x, mode="eval", rng=None):
        """Run all nodes; ``rng`` (seed or Generator) drives dropout in train mode."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.channels[self.nodes[0].name]:
            raise ShapeMismatch(
                f"expected input (N, {self.channels[self.nodes[0].name]}, H, W), got {x.shape}")
        rng = np.random.default_rng(rng)
        acts = {}
        caches = {}
        for node in self.nodes:
            ins = [acts[s] for s in node.inputs]
            p = self.params.get(node.name)
            k = node.kind
            if k == "input":
                out, cache = x, None
            elif k == "conv":
                out, cache = L.conv2d_forward(ins[0], p["weight"].value, p["bias"].value)
            elif k == "conv_transpose":
                out, cache = L.conv2d_transpose_forward(ins[0], p["weight"].value, p["bias"].value)
            elif k == "maxpool":
                if ins[0].shape[2] % 2 or ins[0].shape[3] % 2:
                    raise ShapeMismatch(
                        f"spatial size {ins[0].shape[2:]} at {node.name!r} is not divisible by 2")
                out, cache = L.maxpool2d_forward(ins[0])
            elif k == "batchnorm":
                out, cache = L.batchnorm2d_forward(
                    ins[0], p["gamma"].value, p["beta"].value, p["running_mean"].value,
                    p["running_var"].value, mode=mode, momentum=node.config["momentum"],
                    eps=node.config["eps"])
            elif k == "relu":
                out, cache = L.relu_forward(ins[0])
            elif k == "sigmoid":
                out, cache = L.sigmoid_forward(ins[0])
            elif k == "dropout":
                out, cache = L.dropout_forward(ins[0], node.config["rate"], mode, rng)
            elif k == "concat":
                out, cache = L.concat_channels(ins[0], ins[1])
            else:  # pragma: no cover
                raise InvalidConfig(f"unknown layer kind {k!r}")
            acts[node.name] = out
            caches[node.name] = cache
        self._caches = caches
        return acts[self.output]

    def backward(self, grad):
        """Backpropagate ``grad`` (dLoss/dOutput) into every parameter's ``.grad``.

        Gradients are overwritten, not accumulated across calls. L2 terms add
        ``2 * l2 * weight`` to regularised weights.
        """
        if self._caches is None:
            raise BackwardBeforeForward("forward must run before backward")
        caches = self._caches
        self.input_grad = None
        grads = {self.output: np.asarray(grad, dtype=self.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(node.name, None)
            if g is None or node.kind == "input":
                if node.kind == "input":
                    self.input_grad = g
                continue
            cache = caches[node.name]
            k = node.kind
            pgrads = {}
            if k == "conv":
                dx, pgrads = L.conv2d_backward(g, cache)
            elif k == "conv_transpose":
                dx, pgrads = L.conv2d_transpose_backward(g, cache)
            elif k == "maxpool":
                dx, _ = L.maxpool2d_backward(g, cache)
            elif k == "batchnorm":
                dx, pgrads = L.batchnorm2d_backward(g, cache)
            elif k == "relu":
                dx, _ = L.relu_backward(g, cache)
            elif k == "sigmoid":
                dx, _ = L.sigmoid_backward(g, cache)
            elif k == "dropout":
                dx, _ = L.dropout_backward(g, cache)
            elif k == "concat":
                dx = L.concat_backward(g, cache)
            if k == "concat":
                pieces = dx
            else:
                pieces = (dx,)
            for src, piece in zip(node.inputs, pieces):
                if src in grads:
                    grads[src] = grads[src] + piece
                else:
                    grads[src] = piece
            if pgrads:
                slots = self.params[node.name]
                for slot, value in pgrads.items():
                    slots[slot].grad[...] = value
                lam = node.config.get("l2", 0.0)
                if lam:
                    w = slots["weight"]
                    w.grad += 2 * lam * w.value
        return self.input_grad

    # -- bookkeeping ---------------------------------------------------------

    def parameters(self, trainable_only=False):
        """Yield ``("node.slot", Param)`` in graph order."""
        for node in self.nodes:
            for slot, p in self.params.get(node.name, {}).items():
                if trainable_only and not p.trainable:
                    continue
                yield f"{node.name}.{slot}", p

    def zero_grad(self):
        for _, p in self.parameters(trainable_only=True):
            p.zero_grad()

    def l2_penalty(self):
        total = 0.0
        for node in self.nodes:
            lam = node.config.get("l2", 0.0)
            if lam:
                w = self.params[node.name]["weight"].value
                total += lam * float(np.sum(w.astype(np.float64) ** 2))
        return total

    def param_table(self):
        """One row per parameterised node: (name, kind, in_ch, out_ch, trainable count)."""
        rows = []
        for node in self.nodes:
            slots = self.params.get(node.name)
            if not slots:
                continue
            count = sum(p.value.size for p in slots.values() if p.trainable)
            c_in = self.channels[node.inputs[0]]
            rows.append((node.name, node.kind, c_in, self.channels[node.name], count))
        return rows

    def count_params(self):
        return sum(p.value.size for _, p in self.parameters(trainable_only=True))

    def describe(self):
        lines = [f"{'node':<28}{'kind':<16}{'in':>6}{'out':>6}{'params':>12}"]
        for name, kind, c_in, c_out, count in self.param_table():
            lines.append(f"{name:<28}{kind:<16}{c_in:>6}{c_out:>6}{count:>12,}")
        lines.append(f"total trainable parameters: {self.count_params():,}")
        if self.arch == "unet":
            lines.append(f"note: bottleneck uses {self.config.start_filters * 2 ** self.config.depth} filters "
                         "(doubling continues into the bottleneck)")
        return "\n".join(lines)

    @property
    def downsample_factor(self):
        return 2 ** self.config.depth

    def spec(self):
        return {"arch": self.arch, "config": asdict(self.config)}


def forward(g, x, mode="eval", rng=None):
    return g.forward(x, mode=mode, rng=rng)


def backward(g, grad):
    return g.backward(grad)


def build_unet(cfg=None, seed=0, dtype=np.float32):
    """Encoder/decoder U-Net; He-uniform weights drawn from ``seed``."""
    cfg = cfg or UNetConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    g = NetworkGraph("unet", cfg, dtype)
    x = g.add("input", name="input", channels=cfg.in_channels)
    skips = []
    f = cfg.start_filters
    for level in range(cfg.depth):
        f = cfg.start_filters * 2 ** level
        x = _unet_block(g, x, f, f"enc{level + 1}", cfg.dropout, rng)
        skips.append(x)
        x = g.add("maxpool", (x,), f"enc{level + 1}_pool")
    x = _unet_block(g, x, cfg.start_filters * 2 ** cfg.depth, "bottleneck", cfg.dropout, rng)
    for level in reversed(range(cfg.depth)):
        f = cfg.start_filters * 2 ** level
        up = g.conv_transpose(x, f, f"dec{level + 1}_up", rng=rng)
        x = g.concat(up, skips[level], f"dec{level + 1}_cat")
        x = _unet_block(g, x, f, f"dec{level + 1}", cfg.dropout, rng)
    x = g.conv(x, cfg.out_channels, k=1, name="head", rng=rng)
    g.add("sigmoid", (x,), "output")
    return g


def _unet_block(g, x, f, prefix, dropout, rng):
    x = g.conv(x, f, name=f"{prefix}_conv1", rng=rng)
    x = g.add("relu", (x,), f"{prefix}_relu1")
    x = g.conv(x, f, name=f"{prefix}_conv2", rng=rng)
    x = g.add("relu", (x,), f"{prefix}_relu2")
    if dropout:
        x = g.add("dropout", (x,), f"{prefix}_drop", rate=dropout)
    return x


def _dense_block(g, x, n_layers, growth, prefix, l2, rng):
    """Returns (full concatenation of input and new maps, concatenation of new maps only)."""
    state = x
    new = None
    for i in range(n_layers):
        h = g.batchnorm(state, f"{prefix}_l{i + 1}_bn")
        h = g.add("relu", (h,), f"{prefix}_l{i + 1}_relu")
        h = g.conv(h, growth, name=f"{prefix}_l{i + 1}_conv", l2=l2, rng=rng)
        state = g.concat(state, h, f"{prefix}_l{i + 1}_cat")
        new = h if new is None else g.concat(new, h, f"{prefix}_l{i + 1}_new")
    return state, new


def build_tiramisu(cfg=None, seed=0, dtype=np.float32):
    """FC-DenseNet without 1x1 transition convolutions (max-pool only going down)."""
    cfg = cfg or TiramisuConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    g = NetworkGraph("tiramisu", cfg, dtype)
    lam = cfg.l2_lambda
    x = g.add("input", name="input", channels=cfg.in_channels)
    x = g.conv(x, cfg.start_filters, name="stem", l2=lam, rng=rng)
    skips = []
    for b, n in enumerate(cfg.down_block_layers):
        x, _ = _dense_block(g, x, n, cfg.growth_rate, f"down{b + 1}", lam, rng)
        if cfg.dropout:
            x = g.add("dropout", (x,), f"down{b + 1}_drop", rate=cfg.dropout)
        skips.append(x)
        x = g.add("maxpool", (x,), f"down{b + 1}_pool")
    _, x = _dense_block(g, x, cfg.bottleneck_layers, cfg.growth_rate, "bottleneck", lam, rng)
    if cfg.dropout:
        x = g.add("dropout", (x,), "bottleneck_drop", rate=cfg.dropout)
    for b in reversed(range(cfg.depth)):
        n = cfg.down_block_layers[b]
        up = g.conv_transpose(x, g.channels[x], f"up{b + 1}_tu", l2=lam, rng=rng)
        x = g.concat(up, skips[b], f"up{b + 1}_cat")
        full, new = _dense_block(g, x, n, cfg.growth_rate, f"up{b + 1}", lam, rng)
        x = full if b == 0 else new
        if cfg.dropout:
            x = g.add("dropout", (x,), f"up{b + 1}_drop", rate=cfg.dropout)
    x = g.conv(x, cfg.out_channels, k=1, name="head", l2=lam, rng=rng)
    g.add("sigmoid", (x,), "output")
    return g


def build_network(spec, seed=0, dtype=np.float32):
    """Build from ``{"arch": "unet"|"tiramisu", ...config keys}``."""
    spec = dict(spec)
    arch = spec.pop("arch", spec.pop("kind", None))
    spec.update(spec.pop("config", {}))
    try:
        if arch == "unet":
            return build_unet(UNetConfig(**spec), seed, dtype)
        if arch == "tiramisu":
            return build_tiramisu(TiramisuConfig(**spec), seed, dtype)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None
    raise InvalidConfig(f"unknown network arch {arch!r}")
