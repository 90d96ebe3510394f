"""Pixel-wise MLP segmenter with hand-derived reverse-mode gradients.

Every pixel is classified independently: the input vector runs through
``tanh`` hidden layers, the last hidden activation is the feature vector fed
to the prototype machinery, and a single linear head maps features to class
logits.

Parameter layout of the flat vector, in order, for each hidden layer and
then the head: the weight matrix (fan_in x fan_out, row-major) followed by
its bias (fan_out).
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError
from .numerics import FLOAT, Rng, as_real

CHECKPOINT_FORMAT = "proto-adapt-model/1"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the pixel classifier."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims needs at least one positive width")

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for each hidden layer followed by the head."""
        widths = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))

    def num_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


def unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (weight, bias) per layer into the flat parameter vector."""
    if params.ndim != 1 or params.shape[0] != spec.num_params():
        raise ShapeError(
            f"parameter vector has shape {params.shape}, expected ({spec.num_params()},)"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        weight = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((weight, bias))
    return layers


def init_params(spec: ModelSpec, rng: Rng, scale: float = 1.0) -> np.ndarray:
    """Uniform(-scale, scale) / sqrt(fan_in) weights, zero biases."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    chunks = []
    for fan_in, fan_out in spec.layer_shapes():
        weight = rng.uniform(-scale, scale, (fan_in, fan_out)) / np.sqrt(fan_in)
        chunks.append(weight.ravel())
        chunks.append(np.zeros(fan_out, dtype=FLOAT))
    return np.concatenate(chunks).astype(FLOAT)


def _check_image(spec: ModelSpec, image) -> np.ndarray:
    image = as_real(image, "image")
    if image.ndim < 1 or image.shape[-1] != spec.input_dim:
        raise ShapeError(
            f"image has shape {image.shape}, last axis must be input_dim={spec.input_dim}"
        )
    return image


def _activations(spec: ModelSpec, params: np.ndarray, image: np.ndarray):
    layers = unpack(spec, params)
    acts = [image.reshape(-1, spec.input_dim)]
    for weight, bias in layers[:-1]:
        acts.append(np.tanh(acts[-1] @ weight + bias))
    return layers, acts


def forward(spec: ModelSpec, params: np.ndarray, image) -> tuple[np.ndarray, np.ndarray]:
    """Return (features, logits) for an image of shape (..., input_dim).

    Leading axes are preserved, so a batch (B, H, W, input_dim) works as well
    as a single (H, W, input_dim) image.
    """
    image = _check_image(spec, image)
    layers, acts = _activations(spec, params, image)
    head_w, head_b = layers[-1]
    features = acts[-1]
    logits = features @ head_w + head_b
    lead = image.shape[:-1]
    return features.reshape(*lead, spec.feature_dim), logits.reshape(*lead, spec.num_classes)


def backward(
    spec: ModelSpec,
    params: np.ndarray,
    image,
    feature_grad: np.ndarray | None,
    logit_grad: np.ndarray | None,
) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector.

    ``feature_grad`` and ``logit_grad`` are dL/dfeatures and dL/dlogits, shaped
    like the outputs of :func:`forward`; ``None`` stands for all zeros.
    """
    image = _check_image(spec, image)
    lead = image.shape[:-1]
    layers, acts = _activations(spec, params, image)
    n = acts[0].shape[0]

    def _upstream(grad, width, name):
        if grad is None:
            return np.zeros((n, width), dtype=FLOAT)
        grad = np.asarray(grad, dtype=FLOAT)
        if grad.shape != (*lead, width):
            raise ShapeError(f"{name} has shape {grad.shape}, expected {(*lead, width)}")
        return grad.reshape(n, width)

    d_logits = _upstream(logit_grad, spec.num_classes, "logit_grad")
    d_feat = _upstream(feature_grad, spec.feature_dim, "feature_grad")

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    head_w, _ = layers[-1]
    grads.append((acts[-1].T @ d_logits, d_logits.sum(axis=0)))
    d_act = d_logits @ head_w.T + d_feat

    for index in range(len(layers) - 2, -1, -1):
        weight, _ = layers[index]
        out = acts[index + 1]
        d_pre = d_act * (1.0 - out * out)
        grads.append((acts[index].T @ d_pre, d_pre.sum(axis=0)))
        d_act = d_pre @ weight.T

    grads.reverse()
    return np.concatenate([part.ravel() for pair in grads for part in pair])


def save_checkpoint(path, spec: ModelSpec, params: np.ndarray) -> Path:
    """Write spec and parameters to an ``.npz`` container."""
    path = Path(path)
    if params.shape != (spec.num_params(),):
        raise ShapeError("parameter vector does not match the model spec")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(CHECKPOINT_FORMAT),
            spec=np.array(json.dumps(asdict(spec))),
            params=params.astype("<f8"),
        )
    return path


def load_checkpoint(path) -> tuple[ModelSpec, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["format"])
            spec = ModelSpec(**json.loads(str(data["spec"])))
            params = data["params"].astype(FLOAT)
    except (OSError, KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if fmt != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} has format {fmt!r}, expected {CHECKPOINT_FORMAT!r}")
    if params.shape != (spec.num_params(),):
        raise CheckpointError(f"{path}: parameter count does not match its model spec")
    return spec, params
