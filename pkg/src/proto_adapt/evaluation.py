"""Checkpoint evaluation against ground-truth labels.

This is the only module that reads target-domain labels.
"""

import logging
from pathlib import Path

import numpy as np

from . import segmenter
from .errors import CheckpointError
from .metrics import ConfusionMatrix, IouReport, accumulate, iou_report
from .numerics import argmax_lastaxis
from .synth_data import LabeledDataset, load_dataset

logger = logging.getLogger(__name__)

DOMAINS = ("source", "target")


def predict(spec: segmenter.ModelSpec, params: np.ndarray, pixels) -> np.ndarray:
    _, logits = segmenter.forward(spec, params, pixels)
    return argmax_lastaxis(logits)


def confusion(
    spec: segmenter.ModelSpec, params: np.ndarray, dataset: LabeledDataset
) -> ConfusionMatrix:
    if dataset.num_classes != spec.num_classes or dataset.pixels.shape[-1] != spec.input_dim:
        raise CheckpointError(
            f"model has {spec.num_classes} classes / input_dim {spec.input_dim}, dataset has "
            f"{dataset.num_classes} classes / input_dim {dataset.pixels.shape[-1]}"
        )
    cm = ConfusionMatrix(spec.num_classes)
    for pixels, labels in zip(dataset.pixels, dataset.labels):
        cm = accumulate(cm, predict(spec, params, pixels), labels)
    return cm


def evaluate_params(
    spec: segmenter.ModelSpec,
    params: np.ndarray,
    dataset: LabeledDataset,
    class_names: list[str] | None = None,
) -> IouReport:
    return iou_report(confusion(spec, params, dataset), class_names)


def evaluate(checkpoint, dataset, domain: str = "target") -> IouReport:
    """IoU report of a saved model over a whole dataset file."""
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
    spec, params = segmenter.load_checkpoint(checkpoint)
    data = load_dataset(dataset)
    report = evaluate_params(spec, params, data)
    logger.info(
        "%s on %s (%s): overall IoU %.2f", Path(checkpoint).name, Path(dataset).name,
        domain, report.overall,
    )
    return report
