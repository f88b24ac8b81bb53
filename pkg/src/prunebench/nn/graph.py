"""Residual bottleneck blocks, the ENet-style model graph and its builder."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .layers import ConvFilter, ShapeError, conv_forward, he_conv, relu, upsample_nearest

STAGES = ("shallow", "deep", "decoder")


class ConfigError(ValueError):
    pass


@dataclass(eq=False)
class ConvLayer:
    name: str
    conv: ConvFilter
    relu: bool = True

    @property
    def in_channels(self) -> int:
        return self.conv.c_in

    @property
    def out_channels(self) -> int:
        return self.conv.n_out


@dataclass(eq=False)
class Upsample:
    name: str
    factor: int = 2


@dataclass(eq=False)
class ArgMaxHead:
    name: str = "argmax"


@dataclass(eq=False)
class ResidualBlock:
    """1x1 reduce -> middle conv(s) -> 1x1 expand, plus a skip path.

    ``mid`` holds one filter (3x3, possibly dilated) or an n x 1 / 1 x n pair
    applied back to back with no activation in between. ``skip`` is None for an
    identity shortcut. With ``upsample`` set, the main path is upsampled right
    after ``conv1`` and the projected shortcut is upsampled after its conv.
    """

    name: str
    conv1: ConvFilter
    mid: list[ConvFilter]
    conv3: ConvFilter
    skip: ConvFilter | None = None
    stage: str = "deep"
    upsample: bool = False
    prunable: bool = True

    def __post_init__(self):
        self.check()

    @property
    def in_channels(self) -> int:
        return self.conv1.c_in

    @property
    def out_channels(self) -> int:
        return self.conv3.n_out

    def named_convs(self) -> list[tuple[str, ConvFilter]]:
        """Main-path convs in order, then the shortcut projection if any."""
        if len(self.mid) == 1:
            mids = [("conv2", self.mid[0])]
        else:
            mids = [(f"conv2{chr(ord('a') + i)}", f) for i, f in enumerate(self.mid)]
        out = [("conv1", self.conv1), *mids, ("conv3", self.conv3)]
        if self.skip is not None:
            out.append(("skip", self.skip))
        return out

    def main_path(self) -> list[tuple[str, ConvFilter]]:
        return [nc for nc in self.named_convs() if nc[0] != "skip"]

    def check(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"{self.name}: unknown stage tag {self.stage!r}")
        if not self.mid:
            raise ShapeError(f"{self.name}: block needs at least one middle conv")
        path = self.main_path()
        for (a, fa), (b, fb) in zip(path, path[1:]):
            if fa.n_out != fb.c_in:
                raise ShapeError(f"{self.name}: {a} emits {fa.n_out} channels but {b} expects {fb.c_in}")
        skip_out = self.in_channels if self.skip is None else self.skip.n_out
        if self.skip is not None and self.skip.c_in != self.in_channels:
            raise ShapeError(f"{self.name}: skip expects {self.skip.c_in} channels, block input has {self.in_channels}")
        if skip_out != self.out_channels:
            raise ShapeError(f"{self.name}: skip emits {skip_out} channels, conv3 emits {self.out_channels}")
        if self.upsample and self.skip is None:
            raise ShapeError(f"{self.name}: upsampling block needs a projection shortcut")

    def copy(self) -> "ResidualBlock":
        return ResidualBlock(self.name, self.conv1.copy(), [f.copy() for f in self.mid], self.conv3.copy(),
                             None if self.skip is None else self.skip.copy(),
                             self.stage, self.upsample, self.prunable)


def block_forward(x: np.ndarray, b: ResidualBlock, capture: dict | None = None) -> np.ndarray:
    """Run one block. ``capture`` (if given) receives each conv's input keyed by conv name."""
    if x.shape[1] != b.in_channels:
        raise ShapeError(f"{b.name}: input has {x.shape[1]} channels, block expects {b.in_channels}")

    def run(name, f, h):
        if capture is not None:
            capture[name] = h
        return conv_forward(h, f)

    h = relu(run("conv1", b.conv1, x))
    if b.upsample:
        h = upsample_nearest(h)
    names = [n for n, _ in b.main_path()][1:-1]
    for name, f in zip(names, b.mid):
        h = run(name, f, h)
    h = run("conv3", b.conv3, relu(h))
    s = x if b.skip is None else run("skip", b.skip, x)
    if b.upsample:
        s = upsample_nearest(s)
    if s.shape != h.shape:
        raise ShapeError(f"{b.name}: shortcut shape {s.shape} != residual shape {h.shape}")
    return relu(s + h)


Layer = ConvLayer | ResidualBlock | Upsample | ArgMaxHead


@dataclass(eq=False)
class ModelGraph:
    class_count: int
    layers: list = field(default_factory=list)
    in_channels: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.class_count < 2:
            raise ConfigError(f"class count must be >= 2, got {self.class_count}")
        heads = [i for i, l in enumerate(self.layers) if isinstance(l, ArgMaxHead)]
        if heads != [len(self.layers) - 1]:
            raise ConfigError("graph needs exactly one argmax head, placed last")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError("layer names must be unique")
        c = self.in_channels
        for layer in self.layers:
            if isinstance(layer, (ConvLayer, ResidualBlock)):
                if isinstance(layer, ResidualBlock):
                    layer.check()
                if layer.in_channels != c:
                    raise ShapeError(f"{layer.name} expects {layer.in_channels} channels, receives {c}")
                c = layer.out_channels
        if c != self.class_count:
            raise ShapeError(f"graph emits {c} score channels for {self.class_count} classes")

    def blocks(self) -> list[ResidualBlock]:
        return [l for l in self.layers if isinstance(l, ResidualBlock)]

    def layer(self, name: str):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def conv(self, qualified: str) -> ConvFilter:
        """Look up a conv by ``layer`` or ``block.conv`` name."""
        owner, sub = self.split_name(qualified)
        layer = self.layer(owner)
        if isinstance(layer, ConvLayer) and not sub:
            return layer.conv
        if isinstance(layer, ResidualBlock):
            for n, f in layer.named_convs():
                if n == sub:
                    return f
        raise KeyError(qualified)

    def split_name(self, qualified: str) -> tuple[str, str]:
        """``"bottleneck2.3.conv2a"`` -> ``("bottleneck2.3", "conv2a")``; plain layer names pass through."""
        if any(l.name == qualified for l in self.layers):
            return qualified, ""
        owner, _, sub = qualified.rpartition(".")
        return owner, sub

    def copy(self) -> "ModelGraph":
        layers = []
        for l in self.layers:
            if isinstance(l, ConvLayer):
                layers.append(ConvLayer(l.name, l.conv.copy(), l.relu))
            elif isinstance(l, ResidualBlock):
                layers.append(l.copy())
            elif isinstance(l, Upsample):
                layers.append(Upsample(l.name, l.factor))
            else:
                layers.append(ArgMaxHead(l.name))
        return ModelGraph(self.class_count, layers, self.in_channels)

    def param_count(self) -> int:
        total = 0
        for l in self.layers:
            if isinstance(l, ConvLayer):
                total += l.conv.param_count
            elif isinstance(l, ResidualBlock):
                total += sum(f.param_count for _, f in l.named_convs())
        return total

    def same_as(self, other: "ModelGraph") -> bool:
        """Structural and bitwise weight equality."""
        if (self.class_count, self.in_channels, len(self.layers)) != (
                other.class_count, other.in_channels, len(other.layers)):
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b) or a.name != b.name:
                return False
            if isinstance(a, ConvLayer) and (a.relu != b.relu or not a.conv.same_as(b.conv)):
                return False
            if isinstance(a, Upsample) and a.factor != b.factor:
                return False
            if isinstance(a, ResidualBlock):
                if (a.stage, a.upsample, a.prunable) != (b.stage, b.upsample, b.prunable):
                    return False
                ca, cb = a.named_convs(), b.named_convs()
                if [n for n, _ in ca] != [n for n, _ in cb]:
                    return False
                if not all(fa.same_as(fb) for (_, fa), (_, fb) in zip(ca, cb)):
                    return False
        return True


def run_layers(layers, x: np.ndarray, capture: dict | None = None, until: str | None = None) -> np.ndarray:
    """Apply ``layers`` in order; see :func:`forward`."""
    h = x
    for layer in layers:
        if isinstance(layer, ConvLayer):
            if capture is not None:
                capture[layer.name] = h
            h = conv_forward(h, layer.conv)
            if layer.relu:
                h = relu(h)
        elif isinstance(layer, ResidualBlock):
            sub = {} if capture is not None else None
            h = block_forward(h, layer, sub)
            if capture is not None:
                capture.update({f"{layer.name}.{k}": v for k, v in sub.items()})
        elif isinstance(layer, Upsample):
            h = upsample_nearest(h, layer.factor)
        if until is not None and layer.name == until:
            break
    return h


def forward(g: ModelGraph, x: np.ndarray, capture: dict | None = None, until: str | None = None) -> np.ndarray:
    """Class scores (pre-argmax) for input ``x``.

    ``capture`` collects each conv's input under its qualified name. ``until``
    stops after the named layer and returns its output.
    """
    if x.ndim != 4 or x.shape[1] != g.in_channels:
        raise ShapeError(f"model expects {g.in_channels} input channels, got shape {x.shape}")
    return run_layers(g.layers, x, capture, until)


def predict(g: ModelGraph, x: np.ndarray) -> np.ndarray:
    """Per-pixel class labels, shape (n, h, w)."""
    from ..argmax import argmax_serial

    return argmax_serial(forward(g, x))


def _scaled(channels: int, m: Fraction) -> int:
    return max(1, int(round(channels * m)))


def _bottleneck(rng, name, c_in, c_out, inner, stage, kind="regular", dilation=1, asym=5,
                downsample=False, upsample=False) -> ResidualBlock:
    if downsample:
        conv1 = he_conv(rng, inner, c_in, 2, 2, stride=2)
    else:
        conv1 = he_conv(rng, inner, c_in, 1, 1)
    if kind == "asymmetric":
        p = asym // 2
        mid = [he_conv(rng, inner, inner, asym, 1, padding=(p, 0), gain=1.0),
               he_conv(rng, inner, inner, 1, asym, padding=(0, p), gain=1.0)]
    else:
        mid = [he_conv(rng, inner, inner, 3, 3, dilation=dilation, padding=dilation)]
    # small expansion weights keep a fresh block near its shortcut
    conv3 = he_conv(rng, c_out, inner, 1, 1, gain=0.5)
    skip = None
    if downsample:
        skip = he_conv(rng, c_out, c_in, 1, 1, stride=2, gain=1.0)
    elif upsample or c_in != c_out:
        skip = he_conv(rng, c_out, c_in, 1, 1, gain=1.0)
    return ResidualBlock(name, conv1, mid, conv3, skip, stage=stage, upsample=upsample)


_STAGE2_PATTERN = [("regular", 1), ("dilated", 2), ("asymmetric", 1), ("dilated", 4),
                   ("regular", 1), ("dilated", 8), ("asymmetric", 1), ("dilated", 16)]


def build_enet_mini(class_count: int, width_multiplier=1, seed: int = 0, in_channels: int = 3) -> ModelGraph:
    """ENet-shaped encoder/decoder with randomly initialised, BN-free weights.

    Layout: initial stride-2 conv (16m), stage 1 (downsample + 4 blocks at 64m,
    tagged shallow), stages 2 and 3 (downsample + 8 blocks, then 8 blocks, at
    128m, tagged deep, mixing dilated and 5x1/1x5 factorized middles), two
    upsampling decoder blocks (64m then 16m), a 1x1 classifier to
    ``class_count`` channels, x2 nearest upsample and the argmax head. Bottleneck
    width is a quarter of the block width, so the final 16-channel block runs
    on 4 inner channels; it is marked non-prunable.
    """
    if class_count < 2:
        raise ConfigError(f"class count must be >= 2, got {class_count}")
    m = Fraction(width_multiplier).limit_denominator(10_000)
    if m <= 0:
        raise ConfigError(f"width multiplier must be positive, got {width_multiplier}")
    rng = np.random.default_rng(seed)
    c16, c64, c128 = _scaled(16, m), _scaled(64, m), _scaled(128, m)
    i4, i16, i32 = _scaled(4, m), _scaled(16, m), _scaled(32, m)

    layers: list = [ConvLayer("initial", he_conv(rng, c16, in_channels, 3, 3, stride=2, padding=1))]
    layers.append(_bottleneck(rng, "bottleneck1.0", c16, c64, i16, "shallow", downsample=True))
    for i in range(1, 5):
        layers.append(_bottleneck(rng, f"bottleneck1.{i}", c64, c64, i16, "shallow"))
    layers.append(_bottleneck(rng, "bottleneck2.0", c64, c128, i32, "deep", downsample=True))
    for stage in (2, 3):
        for i, (kind, dil) in enumerate(_STAGE2_PATTERN, start=1):
            layers.append(_bottleneck(rng, f"bottleneck{stage}.{i}", c128, c128, i32, "deep",
                                      kind=kind, dilation=dil))
    layers.append(_bottleneck(rng, "bottleneck4.0", c128, c64, i16, "decoder", upsample=True))
    last = _bottleneck(rng, "bottleneck5.0", c64, c16, i4, "decoder", upsample=True)
    last.prunable = False
    layers.append(last)
    layers.append(ConvLayer("classifier", he_conv(rng, class_count, c16, 1, 1, gain=1.0), relu=False))
    layers.append(Upsample("upsample", 2))
    layers.append(ArgMaxHead("argmax"))
    return ModelGraph(class_count, layers, in_channels)
