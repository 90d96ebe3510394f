"""Class prototype bank.

Holds one feature-space prototype per class. Prototypes start as the masked
mean of source-model features over the whole target set, then follow an
exponential moving average of per-batch class means. Cosine similarity to
the prototypes gives per-pixel confidence weights and a prototype label.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import segmenter
from .errors import CheckpointError, ShapeError
from .numerics import FLOAT, argmax_lastaxis

logger = logging.getLogger(__name__)

BANK_FORMAT = "proto-adapt-bank/1"


@dataclass
class PrototypeBank:
    protos: np.ndarray  # (C, D)
    valid: np.ndarray  # (C,) bool
    alpha: float

    @property
    def num_classes(self) -> int:
        return self.protos.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.protos.shape[1]


def _class_sums(features: np.ndarray, labels: np.ndarray, num_classes: int):
    """Per-class feature sums and pixel counts."""
    flat_f = features.reshape(-1, features.shape[-1])
    flat_l = np.asarray(labels).reshape(-1)
    if flat_f.shape[0] != flat_l.shape[0]:
        raise ShapeError(
            f"{flat_f.shape[0]} feature vectors but {flat_l.shape[0]} labels"
        )
    sums = np.zeros((num_classes, flat_f.shape[1]), dtype=FLOAT)
    np.add.at(sums, flat_l, flat_f)
    counts = np.bincount(flat_l, minlength=num_classes)
    return sums, counts


def _masked_mean(sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
    means = np.zeros_like(sums)
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    return means


def init_prototypes(
    spec: segmenter.ModelSpec, source_params: np.ndarray, target_images, alpha: float
) -> PrototypeBank:
    """Masked mean of source features under source pseudo-labels, over all images."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    images = list(target_images)
    if not images:
        raise ValueError("init_prototypes needs at least one target image")

    sums = np.zeros((spec.num_classes, spec.feature_dim), dtype=FLOAT)
    counts = np.zeros(spec.num_classes, dtype=np.int64)
    for image in images:
        features, logits = segmenter.forward(spec, source_params, image)
        image_sums, image_counts = _class_sums(
            features, argmax_lastaxis(logits), spec.num_classes
        )
        sums += image_sums
        counts += image_counts

    valid = counts > 0
    if not valid.all():
        logger.info("classes without source pseudo-labels: %s", np.flatnonzero(~valid).tolist())
    return PrototypeBank(_masked_mean(sums, counts), valid, alpha)


def batch_prototypes(
    features: np.ndarray, pseudo: np.ndarray, num_classes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class mean feature of a mini-batch and the pixel count behind it."""
    sums, counts = _class_sums(np.asarray(features, dtype=FLOAT), pseudo, num_classes)
    return _masked_mean(sums, counts), counts


def ema_refresh(
    bank: PrototypeBank, batch_protos: np.ndarray, counts: np.ndarray
) -> PrototypeBank:
    """Move present classes toward their batch mean; absent classes stay put.

    A class that was never seen before takes the batch mean directly.
    """
    if batch_protos.shape != bank.protos.shape or counts.shape != bank.valid.shape:
        raise ShapeError("batch prototypes do not match the bank")
    protos = bank.protos.copy()
    valid = bank.valid.copy()
    present = counts > 0
    blend = present & valid
    fresh = present & ~valid
    protos[blend] = bank.alpha * protos[blend] + (1.0 - bank.alpha) * batch_protos[blend]
    protos[fresh] = batch_protos[fresh]
    valid |= fresh
    return PrototypeBank(protos, valid, bank.alpha)


def cosine_weights(features: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Cosine similarity of each pixel feature to every class prototype.

    Pairs involving a zero vector get 0; invalid classes get -1.
    """
    features = np.asarray(features, dtype=FLOAT)
    if features.shape[-1] != bank.feature_dim:
        raise ShapeError(
            f"features have dim {features.shape[-1]}, bank has {bank.feature_dim}"
        )
    f_norm = np.linalg.norm(features, axis=-1, keepdims=True)
    z_norm = np.linalg.norm(bank.protos, axis=-1)
    denom = f_norm * z_norm
    dots = features @ bank.protos.T
    safe = denom > 0
    weights = np.divide(dots, denom, out=np.zeros_like(dots), where=safe)
    weights[..., ~bank.valid] = -1.0
    return weights


def prototype_labels(weights: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel class with the highest prototype similarity.

    With ``valid`` given, invalid classes are never returned, even when a valid
    class sits at the -1 sentinel.
    """
    if valid is None:
        return argmax_lastaxis(weights)
    valid = np.asarray(valid, dtype=bool)
    if not np.any(valid):
        raise ValueError("prototype bank has no valid class")
    return argmax_lastaxis(np.where(valid, weights, -np.inf))


def save_bank(path, bank: PrototypeBank) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(BANK_FORMAT),
            protos=bank.protos.astype("<f8"),
            valid=bank.valid.astype(bool),
            alpha=np.array(bank.alpha, dtype="<f8"),
        )
    return path


def load_bank(path) -> PrototypeBank:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"prototype bank not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            if str(data["format"]) != BANK_FORMAT:
                raise CheckpointError(f"{path} is not a prototype bank")
            return PrototypeBank(
                data["protos"].astype(FLOAT), data["valid"].astype(bool), float(data["alpha"])
            )
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"cannot read prototype bank {path}: {e}") from e
