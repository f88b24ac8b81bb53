"""SGD fine-tuning with hand-written backward passes.

Loss is mean per-pixel softmax cross-entropy over non-ignored pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.graph import ArgMaxHead, ConvLayer, ModelGraph, ResidualBlock, Upsample
from ..nn.layers import ConvFilter, ShapeError, conv_forward, upsample_nearest, windows

IGNORE_LABEL = 255


def conv_backward(x: np.ndarray, f: ConvFilter, dy: np.ndarray):
    """Gradients (dx, dW, db) of a conv given upstream ``dy``; float64 throughout."""
    x = np.asarray(x, dtype=np.float64)
    win = windows(x, f)
    dW = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    db = dy.sum(axis=(0, 2, 3))
    cols = np.tensordot(dy, f.weight.astype(np.float64), axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
    n, c, h, w = x.shape
    ph, pw = f.padding
    s, d = f.stride, f.dilation
    ho, wo = dy.shape[2:]
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    kh, kw = f.kernel
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i * d: i * d + (ho - 1) * s + 1: s, j * d: j * d + (wo - 1) * s + 1: s] += \
                cols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, ph: ph + h, pw: pw + w], dW, db


def _down(dy: np.ndarray, factor: int = 2) -> np.ndarray:
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def _conv(x, f):
    return conv_forward(x, f).astype(np.float64)


def _block_fwd(x, b: ResidualBlock):
    t = {"x": x}
    t["h1"] = np.maximum(_conv(x, b.conv1), 0)
    h = upsample_nearest(t["h1"]) if b.upsample else t["h1"]
    t["mid_in"] = []
    for f in b.mid:
        t["mid_in"].append(h)
        h = _conv(h, f)
    t["h2"] = np.maximum(h, 0)
    a3 = _conv(t["h2"], b.conv3)
    s = x if b.skip is None else _conv(x, b.skip)
    if b.upsample:
        s = upsample_nearest(s)
    t["out"] = np.maximum(s + a3, 0)
    return t["out"], t


def _block_bwd(b: ResidualBlock, t, dout, grads, prefix):
    dsum = dout * (t["out"] > 0)
    dh2, *g3 = conv_backward(t["h2"], b.conv3, dsum)
    grads[f"{prefix}.conv3"] = g3
    dh = dh2 * (t["h2"] > 0)
    names = [n for n, _ in b.main_path()][1:-1]
    for name, f, xin in reversed(list(zip(names, b.mid, t["mid_in"]))):
        dh, *gm = conv_backward(xin, f, dh)
        grads[f"{prefix}.{name}"] = gm
    if b.upsample:
        dh = _down(dh)
    dh = dh * (t["h1"] > 0)
    dx, *g1 = conv_backward(t["x"], b.conv1, dh)
    grads[f"{prefix}.conv1"] = g1
    ds = _down(dsum) if b.upsample else dsum
    if b.skip is None:
        dx = dx + ds
    else:
        dxs, *gs = conv_backward(t["x"], b.skip, ds)
        grads[f"{prefix}.skip"] = gs
        dx = dx + dxs
    return dx


def forward_with_tape(g: ModelGraph, x: np.ndarray):
    tape = []
    h = np.asarray(x, dtype=np.float64)
    for layer in g.layers:
        if isinstance(layer, ConvLayer):
            out = _conv(h, layer.conv)
            if layer.relu:
                out = np.maximum(out, 0)
            tape.append((layer, {"x": h, "out": out}))
            h = out
        elif isinstance(layer, ResidualBlock):
            h, t = _block_fwd(h, layer)
            tape.append((layer, t))
        elif isinstance(layer, Upsample):
            tape.append((layer, None))
            h = upsample_nearest(h, layer.factor)
        elif isinstance(layer, ArgMaxHead):
            pass
    return h, tape


def backward(tape, dscores: np.ndarray, stop_at: set | None = None) -> dict:
    """Parameter gradients keyed by qualified conv name.

    Backpropagation stops once every layer in ``stop_at`` has been reached.
    """
    grads: dict = {}
    dh = dscores
    remaining = None if stop_at is None else set(stop_at)
    for layer, t in reversed(tape):
        if remaining is not None and not remaining:
            break
        if isinstance(layer, Upsample):
            dh = _down(dh, layer.factor)
        elif isinstance(layer, ConvLayer):
            if layer.relu:
                dh = dh * (t["out"] > 0)
            dh, *gc = conv_backward(t["x"], layer.conv, dh)
            grads[layer.name] = gc
        elif isinstance(layer, ResidualBlock):
            dh = _block_bwd(layer, t, dh, grads, layer.name)
        if remaining is not None:
            remaining.discard(layer.name)
    return grads


def cross_entropy(scores: np.ndarray, labels: np.ndarray, ignore_label: int = IGNORE_LABEL):
    """Mean per-pixel cross-entropy and its gradient w.r.t. ``scores``."""
    if scores.shape[0] != labels.shape[0] or scores.shape[2:] != labels.shape[1:]:
        raise ShapeError(f"scores {scores.shape} do not match labels {labels.shape}")
    k = scores.shape[1]
    z = scores - scores.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    lab = labels.astype(np.int64)
    valid = lab != ignore_label
    count = max(int(valid.sum()), 1)
    safe = np.where(valid, lab, 0)
    if safe.max(initial=0) >= k:
        raise ShapeError(f"label {safe.max()} out of range for {k} classes")
    picked = np.take_along_axis(p, safe[:, None], axis=1)[:, 0]
    loss = -np.sum(np.log(np.maximum(picked, 1e-300))[valid]) / count
    grad = p.copy()
    np.put_along_axis(grad, safe[:, None], np.take_along_axis(grad, safe[:, None], axis=1) - 1, axis=1)
    grad *= valid[:, None] / count
    return loss, grad


def dataset_loss(g: ModelGraph, images: np.ndarray, labels: np.ndarray, batch: int = 32) -> float:
    total, pixels = 0.0, 0
    for i in range(0, len(images), batch):
        scores, _ = forward_with_tape(g, images[i:i + batch])
        lab = labels[i:i + batch]
        n = int((lab != IGNORE_LABEL).sum())
        loss, _ = cross_entropy(scores, lab)
        total += loss * n
        pixels += n
    return total / max(pixels, 1)


@dataclass
class FineTuneResult:
    model: ModelGraph
    start_loss: float
    end_loss: float
    improved: bool
    steps: int


def _param_slots(g: ModelGraph, trainable) -> dict[str, ConvFilter]:
    slots = {}
    for layer in g.layers:
        if isinstance(layer, ConvLayer) and layer.name in trainable:
            slots[layer.name] = layer.conv
        elif isinstance(layer, ResidualBlock) and layer.name in trainable:
            for n, f in layer.named_convs():
                slots[f"{layer.name}.{n}"] = f
    return slots


def default_trainable(g: ModelGraph) -> set[str]:
    """The classifier plus every prunable residual block."""
    names = {b.name for b in g.blocks() if b.prunable}
    names.update(l.name for l in g.layers if isinstance(l, ConvLayer) and l.name == "classifier")
    return names


def _sgd_step(state, j, grad, momentum, step):
    state[j] *= momentum
    state[j] += grad
    return state[j]


def _adam_step(state, j, grad, beta1, step, beta2=0.999, eps=1e-8):
    m, v = state[j], state[j + 2]
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    return (m / (1 - beta1 ** step)) / (np.sqrt(v / (1 - beta2 ** step)) + eps)


def fine_tune(g: ModelGraph, images, labels, epochs: int, lr: float, batch: int, trainable=None,
              momentum: float = 0.9, seed: int = 0, weight_decay: float = 0.0,
              optimizer: str = "sgd") -> FineTuneResult:
    """Minibatch SGD with momentum on the ``trainable`` layers (default: classifier and prunable blocks).

    ``optimizer="adam"`` swaps in Adam (``momentum`` becomes its first-moment
    decay, second moment 0.999), which copes far better with training a
    batch-norm-free network from scratch.

    If the final training loss is not below the starting loss, the input model
    is returned unchanged with ``improved=False``.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("dataset is empty")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if images.shape[1] != g.in_channels or labels.shape != (images.shape[0], *images.shape[2:]):
        raise ShapeError(f"images {images.shape} and labels {labels.shape} do not fit the model")
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    start = dataset_loss(g, images, labels)
    if epochs <= 0 or lr == 0:
        return FineTuneResult(g, start, start, False, 0)
    trainable = default_trainable(g) if trainable is None else set(trainable)
    model = g.copy()
    slots = _param_slots(model, trainable)
    moments = {k: [np.zeros(f.weight.shape), np.zeros(f.bias.shape), np.zeros(f.weight.shape),
                   np.zeros(f.bias.shape)] for k, f in slots.items()}
    upd = _sgd_step if optimizer == "sgd" else _adam_step
    rng = np.random.default_rng(seed)
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(len(images))
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            scores, tape = forward_with_tape(model, images[idx])
            _, dscores = cross_entropy(scores, labels[idx])
            grads = backward(tape, dscores, stop_at=trainable)
            steps += 1
            for name, f in slots.items():
                dW, db = grads[name]
                dW = dW + weight_decay * f.weight
                f.weight = (f.weight - lr * upd(moments[name], 0, dW, momentum, steps)).astype(np.float32)
                f.bias = (f.bias - lr * upd(moments[name], 1, db, momentum, steps)).astype(np.float32)
    end = dataset_loss(model, images, labels)
    if not end <= start:
        return FineTuneResult(g, start, start, False, steps)
    return FineTuneResult(model, start, end, True, steps)
