"""Per-layer pruning problems built from sampled calibration patches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.graph import ModelGraph, forward
from ..nn.layers import ConvFilter, windows


class CalibrationError(ValueError):
    pass


@dataclass
class PruningProblem:
    """Sampled input patches ``X`` (N, c, k_h, k_w), bias-free responses ``Y`` (N, n)
    of filter ``W`` (n, c, k_h, k_w), and the kept-channel budget."""

    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    budget: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        N, c = self.X.shape[:2]
        if self.W.shape[1:] != self.X.shape[1:]:
            raise CalibrationError(f"patch shape {self.X.shape[1:]} does not match filter {self.W.shape}")
        if self.Y.shape != (N, self.W.shape[0]):
            raise CalibrationError(f"responses must have shape {(N, self.W.shape[0])}, got {self.Y.shape}")
        if not 1 <= self.budget <= c:
            raise CalibrationError(f"budget {self.budget} outside [1, {c}]")
        if N < 10 * c:
            raise CalibrationError(f"{N} samples for {c} channels; need N >= {10 * c}")

    @property
    def channels(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> int:
        return self.X.shape[0]

    @property
    def y_norm_sq(self) -> float:
        return float(np.sum(self.Y * self.Y))

    def objective(self, residual_norm_sq: float) -> float:
        """The 1/(2N)-scaled squared Frobenius residual."""
        return residual_norm_sq / (2 * self.samples)

    def channel_responses(self) -> np.ndarray:
        """Z[i] = X_i W_i^T, shape (c, N, n): each input channel's additive share of Y."""
        return np.einsum("Nikl,nikl->iNn", self.X, self.W, optimize=True)

    @classmethod
    def from_filter(cls, X, W, budget: int) -> "PruningProblem":
        X = np.asarray(X, dtype=np.float64)
        W = np.asarray(W, dtype=np.float64)
        Y = np.einsum("Nikl,nikl->Nn", X, W, optimize=True)
        return cls(X, Y, W, budget)


def sample_patches(feature_map: np.ndarray, f: ConvFilter, samples_per_image: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Receptive-field patches of ``f`` at random output positions, (N, c, k_h, k_w)."""
    win = windows(np.asarray(feature_map, dtype=np.float64), f)
    n, c, ho, wo, kh, kw = win.shape
    positions = ho * wo
    patches = []
    for img in range(n):
        idx = rng.choice(positions, size=samples_per_image, replace=samples_per_image > positions)
        rows, cols = np.divmod(np.sort(idx), wo)
        patches.append(win[img, :, rows, cols])  # advanced indexing moves samples first
    return np.concatenate(patches, axis=0)


def collect_calibration(g: ModelGraph, layer: str, inputs, samples_per_image: int, seed, budget: int | None = None,
                        feature_maps: dict | None = None) -> PruningProblem:
    """Sample the true input feature map of conv ``layer`` (``"block.conv2"`` style name).

    ``seed`` is an int or a ``numpy.random.SeedSequence``. ``feature_maps`` may
    pass a capture dict from an earlier :func:`forward` to skip recomputation.
    """
    f = g.conv(layer)
    if samples_per_image < 1:
        raise CalibrationError("samples_per_image must be >= 1")
    images = np.concatenate([np.asarray(x, dtype=np.float32) for x in inputs], axis=0) \
        if isinstance(inputs, (list, tuple)) else np.asarray(inputs, dtype=np.float32)
    needed = 10 * f.c_in
    have = images.shape[0] * samples_per_image
    if have < needed:
        raise CalibrationError(f"calibration for {layer} needs N >= {needed} samples, "
                               f"got {images.shape[0]} images x {samples_per_image} = {have}")
    if feature_maps is None:
        feature_maps = {}
        forward(g, images, capture=feature_maps, until=g.split_name(layer)[0])
    X = sample_patches(feature_maps[layer], f, samples_per_image, np.random.default_rng(seed))
    return PruningProblem.from_filter(X, f.weight, f.c_in if budget is None else budget)
