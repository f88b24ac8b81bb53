"""Block-by-block channel pruning of residual bottlenecks.

Inside each prunable block every conv after the first loses input channels:
the consumer conv is re-fitted on the kept channels and the producer conv
drops the matching output filters. The block's input and output widths never
change, so the residual addition and the rest of the graph are untouched.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..nn.cost import count_cost
from ..nn.graph import ModelGraph, ResidualBlock, block_forward, forward, run_layers
from .problem import PruningProblem, sample_patches
from .solver import solve_selection

KEEP_RULE = "kept = max(1, floor(channels / factor))"


def as_factor(value) -> Fraction:
    """Exact rational channel factor ("1.1" -> 11/10, so floor(110 / 1.1) is 100)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        value = repr(value)
    return Fraction(value)


def kept_channels(channels: int, factor) -> int:
    return max(1, math.floor(channels / as_factor(factor)))


@dataclass
class PruningSpec:
    """Channel factors per stage tag and the blocks left alone.

    ``decoder_factor`` defaults to ``deep_factor``; ``excluded_blocks`` defaults
    to the blocks the graph marks non-prunable (the final residual block).
    """

    shallow_factor: float | str | Fraction = "1.1"
    deep_factor: float | str | Fraction = "1.25"
    decoder_factor: float | str | Fraction | None = None
    excluded_blocks: list[str] | None = None
    samples_per_image: int | None = None
    seed: int = 0

    def factor_for(self, stage: str) -> Fraction:
        if stage == "shallow":
            return as_factor(self.shallow_factor)
        if stage == "decoder" and self.decoder_factor is not None:
            return as_factor(self.decoder_factor)
        return as_factor(self.deep_factor)

    def excluded(self, g: ModelGraph) -> set[str]:
        names = {b.name for b in g.blocks()}
        if self.excluded_blocks is None:
            return {b.name for b in g.blocks() if not b.prunable}
        missing = set(self.excluded_blocks) - names
        if missing:
            raise ValueError(f"excluded blocks not in graph: {sorted(missing)}")
        return set(self.excluded_blocks)

    def validate(self, g: ModelGraph) -> None:
        for stage in ("shallow", "deep", "decoder"):
            if self.factor_for(stage) < 1:
                raise ValueError(f"{stage} factor must be >= 1")
        self.excluded(g)


@dataclass
class LayerReport:
    block: str
    layer: str
    channels: int
    kept: int
    out_channels: int
    residual: float
    relative_residual: float
    kept_indices: list[int]
    method: str


@dataclass
class BlockReport:
    block: str
    factor: Fraction
    layers: list[LayerReport] = field(default_factory=list)
    flops_before: int = 0
    flops_after: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def residual_scale(self) -> float:
        """RMS per-element reconstruction error, accumulated over the block's re-fitted convs."""
        return math.sqrt(sum(2 * lr.residual / lr.out_channels for lr in self.layers)) if self.layers else 0.0


@dataclass
class PruneReport:
    blocks: list[BlockReport] = field(default_factory=list)
    notes: list[str] = field(default_factory=lambda: [f"channel budget rule: {KEEP_RULE}"])

    def rows(self):
        for br in self.blocks:
            for lr in br.layers:
                yield br, lr

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "layer", "c", "c_kept", "residual", "flops_before", "flops_after"])
        for br, lr in self.rows():
            w.writerow([br.block, lr.layer, lr.channels, lr.kept, f"{lr.residual:.9e}",
                        br.flops_before, br.flops_after])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'block':<16}{'layer':<8}{'c':>5}{'kept':>6}{'rel. residual':>15}{'method':>8}"]
        for br, lr in self.rows():
            lines.append(f"{br.block:<16}{lr.layer:<8}{lr.channels:>5}{lr.kept:>6}"
                         f"{lr.relative_residual:>15.3e}{lr.method:>8}")
        lines.extend(f"note: {n}" for n in self.notes)
        for br in self.blocks:
            lines.extend(f"warning: {br.block}: {w}" for w in br.warnings)
        return "\n".join(lines)


def _block_flops(g: ModelGraph, name: str, hw) -> int:
    return next(lc.flops for lc in count_cost(g, *hw).layers if lc.layer == name)


MIN_POSITIONS_PER_IMAGE = 64


def _auto_samples(channels: int, kh: int, kw: int, images: int, positions: int) -> int:
    """Samples per image: enough rows for a well-posed refit, and broad spatial coverage.

    Sparse (mostly-dead) channels can be silent at every sampled position
    when only a handful are drawn; the refit then zeroes them and errs
    wherever they do fire, so small maps are sampled exhaustively.
    """
    need = max(10 * channels, 3 * channels * kh * kw)
    return max(-(-need // images), min(positions, MIN_POSITIONS_PER_IMAGE))


def _prune_block_inplace(g: ModelGraph, block: ResidualBlock, factor, block_input: np.ndarray,
                         samples_per_image: int | None, seed_seq: np.random.SeedSequence,
                         report_hw=(400, 640)) -> BlockReport:
    factor = as_factor(factor)
    if factor < 1:
        raise ValueError(f"channel factor must be >= 1, got {factor}")
    report = BlockReport(block.name, factor)
    report.flops_before = _block_flops(g, block.name, report_hw)
    seeds = seed_seq.spawn(len(block.mid) + 1)
    path = block.main_path()
    for j in range(1, len(path)):
        # re-read the path each step: convs are replaced as we go
        path = block.main_path()
        (prod_name, producer), (cons_name, consumer) = path[j - 1], path[j]
        c = consumer.c_in
        raw = math.floor(c / factor)
        kept_n = max(1, raw)
        if raw < 1:
            report.warnings.append(f"{cons_name}: factor {factor} leaves no channels of {c}; clamped to 1")
        if kept_n >= c:
            continue
        capture: dict = {}
        block_forward(block_input, block, capture)
        kh, kw = consumer.kernel
        ho, wo = consumer.output_hw(*capture[cons_name].shape[2:])
        spi = samples_per_image or _auto_samples(c, kh, kw, block_input.shape[0], ho * wo)
        patches = sample_patches(capture[cons_name], consumer, spi, np.random.default_rng(seeds[j - 1]))
        problem = PruningProblem.from_filter(patches, consumer.weight, kept_n)
        sel = solve_selection(problem)
        kept = sel.kept
        consumer.weight = np.ascontiguousarray(sel.weights, dtype=np.float32)
        producer.weight = np.ascontiguousarray(producer.weight[kept])
        producer.bias = np.ascontiguousarray(producer.bias[kept])
        report.layers.append(LayerReport(block.name, cons_name, c, len(kept), consumer.n_out, sel.residual,
                                         sel.relative_residual, kept, sel.method))
    block.check()
    report.flops_after = _block_flops(g, block.name, report_hw)
    return report


def _as_batch(calib) -> np.ndarray:
    if isinstance(calib, (list, tuple)):
        return np.concatenate([np.asarray(x, dtype=np.float32) for x in calib], axis=0)
    return np.asarray(calib, dtype=np.float32)


def prune_block(g: ModelGraph, block: str, factor, calib, samples_per_image: int | None = None,
                seed: int = 0, excluded=(), report_hw=(400, 640)) -> tuple[ModelGraph, BlockReport]:
    """Return a copy of ``g`` with one block's inner channels cut by ``factor``."""
    if block in excluded:
        raise ValueError(f"block {block} is excluded from pruning")
    out = g.copy()
    target = out.layer(block)
    if not isinstance(target, ResidualBlock):
        raise ValueError(f"{block} is not a residual block")
    idx = out.layers.index(target)
    prev = out.layers[idx - 1].name
    block_input = forward(out, _as_batch(calib), until=prev)
    ss = np.random.SeedSequence(seed, spawn_key=(idx,))
    report = _prune_block_inplace(out, target, factor, block_input, samples_per_image, ss, report_hw)
    return out, report


def prune_model(g: ModelGraph, spec: PruningSpec, calib, report_hw=(400, 640)) -> tuple[ModelGraph, PruneReport]:
    """Prune every non-excluded block bottom-up.

    Each block is calibrated on activations of the already-pruned prefix of
    the network, so later blocks see the errors of earlier ones.
    """
    spec.validate(g)
    excluded = spec.excluded(g)
    out = g.copy()
    report = PruneReport()
    h = _as_batch(calib)
    for idx, layer in enumerate(out.layers):
        if isinstance(layer, ResidualBlock) and layer.name not in excluded:
            factor = spec.factor_for(layer.stage)
            if factor > 1:
                ss = np.random.SeedSequence(spec.seed, spawn_key=(idx,))
                report.blocks.append(_prune_block_inplace(out, layer, factor, h, spec.samples_per_image,
                                                          ss, report_hw))
        h = run_layers([layer], h)
    return out, report
