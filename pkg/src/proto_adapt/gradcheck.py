"""Finite-difference verification of the analytic gradients.

Each check builds a small random instance, computes the analytic gradient and
compares it with central differences. The error reported is
``max|analytic - numeric| / max(max|numeric|, 1e-8)``.
"""

import logging
from typing import Callable

import numpy as np

from . import segmenter
from .losses import ConfidenceMaps, prototype_contrast_loss, supervised_ce, weighted_st_ce
from .numerics import Rng
from .prototype_bank import PrototypeBank, cosine_weights

logger = logging.getLogger(__name__)

GRADCHECK_STREAM = 30
STEP = 1e-6
TOLERANCE = 1e-5

SPEC = segmenter.ModelSpec(input_dim=3, hidden_dims=(5, 4), num_classes=3)
HEIGHT = WIDTH = 3


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP):
    """Numeric gradient of scalar ``f`` at ``x`` (any shape)."""
    grad = np.zeros_like(x)
    shifted = x.copy()
    for index in np.ndindex(x.shape):
        original = shifted[index]
        shifted[index] = original + step
        upper = f(shifted)
        shifted[index] = original - step
        lower = f(shifted)
        shifted[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _instance(rng: Rng):
    params = segmenter.init_params(SPEC, rng, scale=1.5)
    params += rng.normal(params.shape, 0.1)  # nonzero biases
    image = rng.normal((HEIGHT, WIDTH, SPEC.input_dim))
    return params, image


def _labels(rng: Rng) -> np.ndarray:
    return rng.integers(0, SPEC.num_classes, (HEIGHT, WIDTH))


def random_bank(rng: Rng, num_classes: int = SPEC.num_classes, dim: int = SPEC.feature_dim):
    return PrototypeBank(rng.normal((num_classes, dim)), np.ones(num_classes, dtype=bool), 0.99)


def check_backward(rng: Rng) -> float:
    """Segmenter backward against a random linear functional of both outputs."""
    params, image = _instance(rng)
    g_feat = rng.normal((HEIGHT, WIDTH, SPEC.feature_dim))
    g_logit = rng.normal((HEIGHT, WIDTH, SPEC.num_classes))

    def f(theta):
        feats, logits = segmenter.forward(SPEC, theta, image)
        return float((feats * g_feat).sum() + (logits * g_logit).sum())

    analytic = segmenter.backward(SPEC, params, image, g_feat, g_logit)
    return relative_error(analytic, central_difference(f, params))


def check_supervised_ce(rng: Rng) -> float:
    params, image = _instance(rng)
    labels = _labels(rng)

    def f(theta):
        return supervised_ce(segmenter.forward(SPEC, theta, image)[1], labels).value

    loss = supervised_ce(segmenter.forward(SPEC, params, image)[1], labels)
    analytic = segmenter.backward(SPEC, params, image, None, loss.grad_logits)
    return relative_error(analytic, central_difference(f, params))


def check_weighted_st_ce(rng: Rng, clamp: bool = True) -> float:
    params, image = _instance(rng)
    pseudo = _labels(rng)
    weights = rng.uniform(-1.0, 1.0, (HEIGHT, WIDTH, SPEC.num_classes))

    def f(theta):
        logits = segmenter.forward(SPEC, theta, image)[1]
        return weighted_st_ce(logits, pseudo, weights, clamp).value

    loss = weighted_st_ce(segmenter.forward(SPEC, params, image)[1], pseudo, weights, clamp)
    analytic = segmenter.backward(SPEC, params, image, None, loss.grad_logits)
    return relative_error(analytic, central_difference(f, params))


def _contrast_value(features, targets, bank, tau):
    # agreeing label maps pin the selected target, so confidences do not matter
    conf = ConfidenceMaps(np.ones(targets.shape), np.ones(targets.shape))
    weights = cosine_weights(features, bank)
    return prototype_contrast_loss(features, weights, targets, targets, conf, bank, tau)


def check_prototype_contrast_features(rng: Rng, tau: float = 0.1) -> float:
    """Gradient w.r.t. the feature map itself."""
    features = rng.normal((HEIGHT, WIDTH, SPEC.feature_dim))
    targets = _labels(rng)
    bank = random_bank(rng)
    analytic = _contrast_value(features, targets, bank, tau).grad_features
    numeric = central_difference(lambda x: _contrast_value(x, targets, bank, tau).value, features)
    return relative_error(analytic, numeric)


def check_prototype_contrast(rng: Rng, tau: float = 0.1) -> float:
    """Gradient w.r.t. the segmenter parameters through the features."""
    params, image = _instance(rng)
    targets = _labels(rng)
    bank = random_bank(rng)

    def f(theta):
        return _contrast_value(segmenter.forward(SPEC, theta, image)[0], targets, bank, tau).value

    loss = _contrast_value(segmenter.forward(SPEC, params, image)[0], targets, bank, tau)
    analytic = segmenter.backward(SPEC, params, image, loss.grad_features, loss.grad_logits)
    return relative_error(analytic, central_difference(f, params))


CHECKS: dict[str, Callable[[Rng], float]] = {
    "backward": check_backward,
    "supervised_ce": check_supervised_ce,
    "weighted_st_ce": check_weighted_st_ce,
    "weighted_st_ce_raw": lambda rng: check_weighted_st_ce(rng, clamp=False),
    "prototype_contrast_features": check_prototype_contrast_features,
    "prototype_contrast": check_prototype_contrast,
}


def run_suite(seed: int = 0, instances: int = 20) -> dict[str, float]:
    """Worst relative error of every check over ``instances`` random instances."""
    rng = Rng(seed, GRADCHECK_STREAM)
    worst = {}
    for name, check in CHECKS.items():
        worst[name] = max(check(rng) for _ in range(instances))
        logger.info("gradcheck %s: max relative error %.3e", name, worst[name])
    return worst
