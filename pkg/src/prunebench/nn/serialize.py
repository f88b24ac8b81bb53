"""Versioned little-endian binary model format.

Layout::

    b"PBM1"  u32 layer_count  u32 class_count  u32 in_channels
    per layer: u8 tag, u16 name length, utf-8 name, tag body

Conv record: u32 n_out, c_in, k_h, k_w, stride, dilation, pad_h, pad_w, then
n_out*c_in*k_h*k_w weight floats and n_out bias floats (f32). Only conv records
carry floats, so the float payload is exactly 4 bytes per parameter.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .graph import STAGES, ArgMaxHead, ConvLayer, ModelGraph, ResidualBlock, Upsample
from .layers import ConvFilter

MAGIC = b"PBM1"
TAG_CONV, TAG_BLOCK, TAG_UPSAMPLE, TAG_ARGMAX = 1, 2, 3, 4
_CONV_HDR = struct.Struct("<8I")
_FLAG_UPSAMPLE, _FLAG_PRUNABLE, _FLAG_SKIP = 1, 2, 4


class ModelFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte {offset})")
        self.offset = offset


class ModelVersionError(ModelFormatError):
    pass


def _conv_bytes(f: ConvFilter) -> bytes:
    n, c, kh, kw = f.weight.shape
    hdr = _CONV_HDR.pack(n, c, kh, kw, f.stride, f.dilation, *f.padding)
    return hdr + f.weight.astype("<f4").tobytes() + f.bias.astype("<f4").tobytes()


def _name_bytes(name: str) -> bytes:
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw


def dumps_model(g: ModelGraph) -> bytes:
    g.validate()
    out = [MAGIC, struct.pack("<3I", len(g.layers), g.class_count, g.in_channels)]
    for layer in g.layers:
        if isinstance(layer, ConvLayer):
            out += [bytes([TAG_CONV]), _name_bytes(layer.name), bytes([int(layer.relu)]), _conv_bytes(layer.conv)]
        elif isinstance(layer, ResidualBlock):
            flags = ((_FLAG_UPSAMPLE if layer.upsample else 0) | (_FLAG_PRUNABLE if layer.prunable else 0)
                     | (_FLAG_SKIP if layer.skip is not None else 0))
            out += [bytes([TAG_BLOCK]), _name_bytes(layer.name),
                    bytes([STAGES.index(layer.stage), flags, len(layer.mid)])]
            out += [_conv_bytes(f) for _, f in layer.named_convs()]
        elif isinstance(layer, Upsample):
            out += [bytes([TAG_UPSAMPLE]), _name_bytes(layer.name), struct.pack("<I", layer.factor)]
        elif isinstance(layer, ArgMaxHead):
            out += [bytes([TAG_ARGMAX]), _name_bytes(layer.name)]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0
        self.payload = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.buf):
            raise ModelFormatError(f"truncated while reading {what}: need {n} bytes, "
                                   f"{len(self.buf) - self.pos} left", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        self.payload += 4 * count
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def name(self) -> str:
        (n,) = self.unpack("<H", "name length")
        start = self.pos
        try:
            return bytes(self.take(n, "name")).decode()
        except UnicodeDecodeError as exc:
            raise ModelFormatError("layer name is not utf-8", start) from exc

    def conv(self) -> ConvFilter:
        start = self.pos
        n, c, kh, kw, stride, dil, ph, pw = self.unpack(_CONV_HDR.format, "conv header")
        if min(n, c, kh, kw, stride, dil) < 1:
            raise ModelFormatError("conv header has a zero dimension", start)
        w = self.floats(n * c * kh * kw, "conv weights").reshape(n, c, kh, kw)
        b = self.floats(n, "conv bias")
        return ConvFilter(w, b, stride, dil, (ph, pw))


def parse_model(buf: bytes) -> tuple[ModelGraph, int]:
    """Decode ``buf``; returns the graph and the size in bytes of its float payload."""
    r = _Reader(buf)
    magic = bytes(r.take(4, "magic"))
    if magic[:3] != MAGIC[:3]:
        raise ModelFormatError(f"bad magic {magic!r}", 0)
    if magic != MAGIC:
        raise ModelVersionError(f"unsupported model format version {magic[3:]!r}, expected {MAGIC[3:]!r}", 3)
    count, classes, in_channels = r.unpack("<3I", "file header")
    layers = []
    for _ in range(count):
        at = r.pos
        (tag,) = r.unpack("<B", "layer tag")
        name = r.name()
        if tag == TAG_CONV:
            (relu_flag,) = r.unpack("<B", "relu flag")
            layers.append(ConvLayer(name, r.conv(), bool(relu_flag)))
        elif tag == TAG_BLOCK:
            stage, flags, n_mid = r.unpack("<3B", "block header")
            if stage >= len(STAGES) or n_mid < 1:
                raise ModelFormatError(f"block {name!r} has invalid header", at)
            conv1 = r.conv()
            mid = [r.conv() for _ in range(n_mid)]
            conv3 = r.conv()
            skip = r.conv() if flags & _FLAG_SKIP else None
            try:
                layers.append(ResidualBlock(name, conv1, mid, conv3, skip, STAGES[stage],
                                            bool(flags & _FLAG_UPSAMPLE), bool(flags & _FLAG_PRUNABLE)))
            except ValueError as exc:
                raise ModelFormatError(f"inconsistent block {name!r}: {exc}", at) from exc
        elif tag == TAG_UPSAMPLE:
            (factor,) = r.unpack("<I", "upsample factor")
            layers.append(Upsample(name, factor))
        elif tag == TAG_ARGMAX:
            layers.append(ArgMaxHead(name))
        else:
            raise ModelVersionError(f"unknown layer tag {tag} (not defined in format {MAGIC.decode()})", at)
    if r.pos != len(r.buf):
        raise ModelFormatError(f"{len(r.buf) - r.pos} trailing bytes after last layer", r.pos)
    try:
        g = ModelGraph(classes, layers, in_channels)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent graph: {exc}", r.pos) from exc
    return g, r.payload


def loads_model(buf: bytes) -> ModelGraph:
    return parse_model(buf)[0]


def save_model(g: ModelGraph, path) -> None:
    Path(path).write_bytes(dumps_model(g))


def load_model(path) -> ModelGraph:
    return loads_model(Path(path).read_bytes())
