"""Adaptation losses and their gradients.

Every loss returns a :class:`LossOutput` with the mean-over-pixels value and
the gradients w.r.t. the segmenter outputs, ready for ``segmenter.backward``.
Labels and weights are constants: gradients of the self-training loss flow
through the logits only, gradients of the prototype-contrast loss through the
features only.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ShapeError
from .numerics import FLOAT, log_softmax, one_hot, softmax, top2_lastaxis
from .prototype_bank import PrototypeBank


@dataclass
class LossOutput:
    value: float
    grad_logits: np.ndarray | None  # None when the loss does not touch logits
    grad_features: np.ndarray | None  # None when the loss does not touch features


@dataclass
class ConfidenceMaps:
    c_teacher: np.ndarray
    c_proto: np.ndarray


class Case(IntEnum):
    """Which label supervises a pixel in the prototype-contrast loss."""

    AGREE = 0  # teacher and prototype labels coincide
    TEACHER = 1  # disagree, teacher more confident
    PROTO = 2  # disagree, prototypes more confident
    TIE = 3  # disagree, equal confidence; prototype label wins


def _nll(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]


def _check_labels(logits: np.ndarray, labels: np.ndarray, name: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"{name} has shape {labels.shape}, expected {logits.shape[:-1]}")
    return labels


def supervised_ce(logits, labels) -> LossOutput:
    """Mean pixel cross-entropy against hard labels."""
    logits = np.asarray(logits, dtype=FLOAT)
    labels = _check_labels(logits, labels, "labels")
    n = labels.size
    value = float(_nll(logits, labels).mean())
    grad = (softmax(logits) - one_hot(labels, logits.shape[-1])) / n
    return LossOutput(value, grad, None)


def weighted_st_ce(student_logits, pseudo, weights, clamp: bool = True) -> LossOutput:
    """Self-training cross-entropy scaled per pixel by the pseudo-label's cosine weight.

    With ``clamp`` the weight is floored at 0, so a pixel dissimilar to its
    class prototype contributes nothing instead of a negative term.
    """
    logits = np.asarray(student_logits, dtype=FLOAT)
    pseudo = _check_labels(logits, pseudo, "pseudo")
    weights = np.asarray(weights, dtype=FLOAT)
    if weights.shape != logits.shape:
        raise ShapeError(f"weights have shape {weights.shape}, expected {logits.shape}")

    selected = np.take_along_axis(weights, pseudo[..., None], axis=-1)[..., 0]
    if clamp:
        selected = np.maximum(selected, 0.0)
    n = pseudo.size
    value = float((selected * _nll(logits, pseudo)).mean())
    grad = (softmax(logits) - one_hot(pseudo, logits.shape[-1])) * selected[..., None] / n
    return LossOutput(value, grad, None)


def selected_weights(pseudo, weights, clamp: bool = True) -> np.ndarray:
    """The weight each pixel's pseudo-label receives in :func:`weighted_st_ce`."""
    selected = np.take_along_axis(np.asarray(weights), np.asarray(pseudo)[..., None], axis=-1)
    selected = selected[..., 0]
    return np.maximum(selected, 0.0) if clamp else selected


def confidence_maps(teacher_probs, weights, tau_c: float = 0.1) -> ConfidenceMaps:
    """Top-1 / top-2 ratios of the teacher and prototype distributions.

    Similarities are turned into a distribution with ``softmax(weights / tau_c)``
    before ranking.
    """
    teacher_probs = np.asarray(teacher_probs, dtype=FLOAT)
    if teacher_probs.shape[-1] < 2:
        raise ShapeError("confidence ratios need at least two classes")
    tiny = np.finfo(FLOAT).tiny
    t1, t2 = top2_lastaxis(teacher_probs)
    p1, p2 = top2_lastaxis(softmax(weights, tau_c))
    # floor guards against underflow of a saturated softmax
    return ConfidenceMaps(t1 / np.maximum(t2, tiny), p1 / np.maximum(p2, tiny))


def select_targets(pseudo, proto_labels, conf: ConfidenceMaps) -> tuple[np.ndarray, np.ndarray]:
    """Pick the supervising label per pixel and report which case applied.

    Returns (targets, cases) where ``cases`` holds :class:`Case` values.
    """
    pseudo = np.asarray(pseudo)
    proto_labels = np.asarray(proto_labels)
    if pseudo.shape != proto_labels.shape:
        raise ShapeError("pseudo and prototype label maps differ in shape")
    agree = pseudo == proto_labels
    teacher_wins = conf.c_teacher > conf.c_proto
    proto_wins = conf.c_teacher < conf.c_proto

    cases = np.full(pseudo.shape, Case.TIE, dtype=np.int8)
    cases[~agree & proto_wins] = Case.PROTO
    cases[~agree & teacher_wins] = Case.TEACHER
    cases[agree] = Case.AGREE
    targets = np.where(cases == Case.TEACHER, pseudo, proto_labels)
    return targets, cases


def case_fractions(cases: np.ndarray) -> dict[str, float]:
    counts = np.bincount(np.asarray(cases).reshape(-1), minlength=len(Case))
    total = counts.sum()
    return {case.name.lower(): float(counts[case] / total) for case in Case}


def prototype_contrast_loss(
    features,
    weights,
    pseudo,
    proto_labels,
    conf: ConfidenceMaps,
    bank: PrototypeBank,
    tau: float = 0.1,
) -> LossOutput:
    """Confidence-guided prototype cross-entropy over ``softmax(weights / tau)``.

    The gradient reaches the features through the cosine similarities;
    prototypes and both label maps are held constant.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not np.any(bank.valid):
        raise ValueError("prototype bank has no valid class")
    features = np.asarray(features, dtype=FLOAT)
    weights = np.asarray(weights, dtype=FLOAT)
    if weights.shape[:-1] != features.shape[:-1] or weights.shape[-1] != bank.num_classes:
        raise ShapeError(
            f"weights shape {weights.shape} does not fit features {features.shape}"
        )
    targets, _ = select_targets(pseudo, proto_labels, conf)
    if targets.shape != weights.shape[:-1]:
        raise ShapeError(f"label maps have shape {targets.shape}, expected {weights.shape[:-1]}")

    n = targets.size
    logp = log_softmax(weights, tau)
    value = float(-np.take_along_axis(logp, targets[..., None], axis=-1).mean())
    d_weights = (np.exp(logp) - one_hot(targets, bank.num_classes)) / (tau * n)

    # d cos(f, z) / d f = (z_hat - cos * f_hat) / |f| for valid, nonzero pairs
    z_norm = np.linalg.norm(bank.protos, axis=-1)
    live = bank.valid & (z_norm > 0)
    z_hat = np.zeros_like(bank.protos)
    z_hat[live] = bank.protos[live] / z_norm[live, None]
    d_weights = d_weights * live
    f_norm = np.linalg.norm(features, axis=-1, keepdims=True)
    f_hat = np.divide(features, f_norm, out=np.zeros_like(features), where=f_norm > 0)
    radial = (d_weights * weights).sum(axis=-1, keepdims=True)
    grad_f = np.divide(
        d_weights @ z_hat - radial * f_hat,
        f_norm,
        out=np.zeros_like(features),
        where=f_norm > 0,
    )
    return LossOutput(value, np.zeros_like(weights), grad_f)


def total_adaptation_loss(ce: LossOutput, pce: LossOutput, lambda_pce: float = 1.0) -> LossOutput:
    """ce + lambda_pce * pce, values and gradients alike."""
    if lambda_pce < 0:
        raise ValueError(f"lambda_pce must be non-negative, got {lambda_pce}")

    def _combine(a, b):
        if a is None and b is None:
            return None
        if b is None:
            return a
        if a is None:
            return lambda_pce * b
        if a.shape != b.shape:
            raise ShapeError(f"gradient shapes differ: {a.shape} vs {b.shape}")
        return a + lambda_pce * b

    return LossOutput(
        ce.value + lambda_pce * pce.value,
        _combine(ce.grad_logits, pce.grad_logits),
        _combine(ce.grad_features, pce.grad_features),
    )
