"""EMA teacher that produces online pseudo-labels."""

from dataclasses import dataclass

import numpy as np

from . import segmenter
from .errors import ShapeError
from .numerics import argmax_lastaxis, softmax


@dataclass
class TeacherState:
    """Slow-moving copy of the student parameters."""

    params: np.ndarray
    alpha: float


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def init_teacher(student_params: np.ndarray, alpha: float) -> TeacherState:
    """Start the teacher as an exact, independent copy of the student."""
    _check_alpha(alpha)
    return TeacherState(params=np.array(student_params, dtype=np.float64, copy=True), alpha=alpha)


def pseudo_labels(
    spec: segmenter.ModelSpec, teacher: TeacherState, image
) -> tuple[np.ndarray, np.ndarray]:
    """Teacher argmax labels and class probabilities for ``image``.

    Returns (labels, probs); labels break ties toward the lowest class index.
    """
    _, logits = segmenter.forward(spec, teacher.params, image)
    return argmax_lastaxis(logits), softmax(logits)


def ema_update(teacher: TeacherState, student_params: np.ndarray) -> TeacherState:
    """params <- alpha * params + (1 - alpha) * student_params."""
    if student_params.shape != teacher.params.shape:
        raise ShapeError(
            f"student has {student_params.shape} parameters, teacher {teacher.params.shape}"
        )
    alpha = teacher.alpha
    params = alpha * teacher.params + (1.0 - alpha) * student_params
    return TeacherState(params=params, alpha=alpha)
