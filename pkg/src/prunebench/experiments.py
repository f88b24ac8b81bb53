"""Toy-scale end-to-end runs: train, prune with a factor schedule, fine-tune, score."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import ConfusionMatrix, global_accuracy, mean_iou
from .nn.graph import ModelGraph, build_enet_mini, predict
from .prune.finetune import fine_tune
from .prune.surgery import PruneReport, PruningSpec, prune_model
from .synthetic import toy_segmentation

TOY_CLASSES = 4


def evaluate(g: ModelGraph, images, labels) -> tuple[float, float]:
    """(mean IoU, global accuracy) of ``g`` on a labelled set."""
    cm = ConfusionMatrix(g.class_count)
    for i in range(0, len(images), 32):
        cm.accumulate(labels[i:i + 32], predict(g, images[i:i + 32]))
    return mean_iou(cm), global_accuracy(cm)


def train_from_scratch(g: ModelGraph, images, labels, epochs: int, lr: float, batch: int = 16,
                       seed: int = 0) -> ModelGraph:
    """Adam on every layer; SGD stalls or collapses on this batch-norm-free net from a random start."""
    everything = {layer.name for layer in g.layers}
    return fine_tune(g, images, labels, epochs, lr, batch, trainable=everything, seed=seed,
                     optimizer="adam").model


@dataclass
class ToyTask:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    model: ModelGraph
    miou: float
    accuracy: float


def train_toy_model(seed: int = 0, width: float = 0.25, size: int = 32, n_train: int = 256,
                    n_test: int = 64, epochs: int = 30, lr: float = 0.003) -> ToyTask:
    ss = np.random.SeedSequence(seed)
    s_model, s_train, s_test, s_sgd = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    xtr, ytr = toy_segmentation(n_train, size, s_train)
    xte, yte = toy_segmentation(n_test, size, s_test)
    g = build_enet_mini(TOY_CLASSES, width, seed=s_model)
    g = train_from_scratch(g, xtr, ytr, epochs, lr, seed=s_sgd)
    miou, acc = evaluate(g, xte, yte)
    return ToyTask(xtr, ytr, xte, yte, g, miou, acc)


@dataclass
class VariantResult:
    shallow_factor: str
    deep_factor: str
    miou_pruned: float
    miou_finetuned: float
    accuracy_finetuned: float
    params: int
    report: PruneReport = field(repr=False, default=None)
    pruned: ModelGraph = field(repr=False, default=None)  # before fine-tuning
    model: ModelGraph = field(repr=False, default=None)


def prune_and_finetune(task: ToyTask, shallow, deep, calib_images: int = 16, epochs: int = 5,
                       lr: float = 0.01, batch: int = 16, seed: int = 0) -> VariantResult:
    spec = PruningSpec(shallow, deep, seed=seed)
    pruned, report = prune_model(task.model, spec, task.train_images[:calib_images])
    miou_pruned, _ = evaluate(pruned, task.test_images, task.test_labels)
    tuned = fine_tune(pruned, task.train_images, task.train_labels, epochs, lr, batch, seed=seed).model
    miou, acc = evaluate(tuned, task.test_images, task.test_labels)
    return VariantResult(str(shallow), str(deep), miou_pruned, miou, acc, tuned.param_count(), report, pruned,
                         tuned)
