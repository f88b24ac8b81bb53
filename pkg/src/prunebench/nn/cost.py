"""FLOP / parameter / FP32 model-size accounting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .graph import ArgMaxHead, ConvLayer, ModelGraph, ResidualBlock, Upsample
from .layers import ConvFilter, ShapeError


@dataclass
class LayerCost:
    layer: str
    flops: int
    params: int

    @property
    def bytes(self) -> int:
        return 4 * self.params


@dataclass
class CostReport:
    flops: int
    params: int
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def model_size_bytes(self) -> int:
        return 4 * self.params

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "flops", "params", "bytes"])
        for lc in self.layers:
            w.writerow([lc.layer, lc.flops, lc.params, lc.bytes])
        w.writerow(["total", self.flops, self.params, self.model_size_bytes])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max([len("total")] + [len(lc.layer) for lc in self.layers])
        lines = [f"{'layer':<{width}}  {'flops':>14}  {'params':>10}  {'bytes':>10}"]
        for lc in self.layers:
            lines.append(f"{lc.layer:<{width}}  {lc.flops:>14,}  {lc.params:>10,}  {lc.bytes:>10,}")
        lines.append(f"{'total':<{width}}  {self.flops:>14,}  {self.params:>10,}  {self.model_size_bytes:>10,}")
        lines.append(f"GFLOPs {self.flops / 1e9:.3f}   params {self.params / 1e3:.1f} k   "
                     f"size {self.model_size_bytes / 1e6:.2f} MB (FP32)")
        return "\n".join(lines)


def conv_cost(f: ConvFilter, h: int, w: int, mac_convention: int = 1) -> tuple[int, int, int]:
    """(flops, out_h, out_w) for one conv, bias add counted once per output element."""
    ho, wo = f.output_hw(h, w)
    kh, kw = f.kernel
    outputs = f.n_out * ho * wo
    return mac_convention * kh * kw * f.c_in * outputs + outputs, ho, wo


def count_cost(g: ModelGraph, input_h: int, input_w: int, mac_convention: int = 1,
               include_head: bool = True, elementwise: bool = True) -> CostReport:
    """Count FLOPs and parameters of ``g`` for one ``input_h`` x ``input_w`` image.

    Conv FLOPs are ``mac_convention * k_h*k_w*c_in`` per output element plus one
    for the bias. With ``elementwise`` set, every ReLU output element and every
    residual addition counts one FLOP. With ``include_head`` set, the argmax
    head counts ``K - 1`` comparisons per pixel.
    """
    if mac_convention not in (1, 2):
        raise ValueError("mac_convention must be 1 or 2")
    if input_h < 1 or input_w < 1:
        raise ShapeError(f"invalid input size {input_h}x{input_w}")
    ew = 1 if elementwise else 0
    c, h, w = g.in_channels, input_h, input_w
    rows: list[LayerCost] = []
    for layer in g.layers:
        if isinstance(layer, ConvLayer):
            flops, h, w = conv_cost(layer.conv, h, w, mac_convention)
            c = layer.conv.n_out
            if layer.relu:
                flops += ew * c * h * w
            rows.append(LayerCost(layer.name, flops, layer.conv.param_count))
        elif isinstance(layer, ResidualBlock):
            flops = 0
            fl, bh, bw = conv_cost(layer.conv1, h, w, mac_convention)
            flops += fl + ew * layer.conv1.n_out * bh * bw
            if layer.upsample:
                bh, bw = 2 * bh, 2 * bw
            for f in layer.mid:
                fl, bh, bw = conv_cost(f, bh, bw, mac_convention)
                flops += fl
            flops += ew * layer.mid[-1].n_out * bh * bw
            fl, bh, bw = conv_cost(layer.conv3, bh, bw, mac_convention)
            flops += fl
            if layer.skip is not None:
                fl, sh, sw = conv_cost(layer.skip, h, w, mac_convention)
                flops += fl
                if layer.upsample:
                    sh, sw = 2 * sh, 2 * sw
            else:
                sh, sw = h, w
            if (sh, sw) != (bh, bw):
                raise ShapeError(f"{layer.name}: shortcut {sh}x{sw} vs residual {bh}x{bw} for this input size")
            c, h, w = layer.out_channels, bh, bw
            flops += 2 * ew * c * h * w  # residual add + output ReLU
            params = sum(f.param_count for _, f in layer.named_convs())
            rows.append(LayerCost(layer.name, flops, params))
        elif isinstance(layer, Upsample):
            h, w = h * layer.factor, w * layer.factor
            rows.append(LayerCost(layer.name, 0, 0))
        elif isinstance(layer, ArgMaxHead):
            rows.append(LayerCost(layer.name, (c - 1) * h * w if include_head else 0, 0))
    return CostReport(sum(r.flops for r in rows), sum(r.params for r in rows), rows)
