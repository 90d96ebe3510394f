"""Dense-array helpers shared by every other module.

Arrays are float64 ``numpy.ndarray`` values. Reductions over classes always
run on the last axis, and every argmax breaks ties toward the lowest index.
"""

from typing import Any

import numpy as np

from .errors import ShapeError

FLOAT = np.float64


def as_real(values, name: str = "array") -> np.ndarray:
    """Convert to a float64 array and reject NaN/Inf."""
    arr = np.asarray(values, dtype=FLOAT)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Softmax over the last axis of ``logits / temperature``."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = as_real(logits, "logits") / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Log of :func:`softmax`, evaluated without forming the probabilities."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = as_real(logits, "logits") / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def argmax_lastaxis(a) -> np.ndarray:
    """Index of the maximum along the last axis, lowest index on ties."""
    arr = np.asarray(a, dtype=FLOAT)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise ShapeError("argmax needs a non-empty last axis")
    # np.argmax returns the first occurrence of the maximum
    return np.argmax(arr, axis=-1)


def top2_lastaxis(a) -> tuple[np.ndarray, np.ndarray]:
    """Largest and second-largest values along the last axis."""
    arr = np.asarray(a, dtype=FLOAT)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise ShapeError("top-2 needs a last axis of length >= 2")
    ordered = np.sort(arr, axis=-1)
    return ordered[..., -1], ordered[..., -2]


def one_hot(labels, num_classes: int) -> np.ndarray:
    """Float one-hot expansion of an integer label array."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.eye(num_classes, dtype=FLOAT)[labels]


def sample_batch(rng: "Rng", num_images: int, batch_size: int) -> np.ndarray:
    """Distinct image indices for one training step, in draw order."""
    return rng.choice(num_images, min(batch_size, num_images), replace=False)


class Rng:
    """Seeded counter-based generator.

    Wraps numpy's Philox bit generator keyed by ``SeedSequence([seed, stream])``,
    so a given (seed, stream) pair yields the same stream on every platform.
    Separate streams keep data generation, initialization and batch sampling
    independent of one another.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence([self.seed, self.stream])
        self._gen = np.random.Generator(np.random.Philox(seq))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def get_state(self) -> dict[str, Any]:
        """JSON-friendly snapshot of the generator position."""
        state = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(x) for x in state["state"]["counter"]],
            "key": [int(x) for x in state["state"]["key"]],
            "buffer": [int(x) for x in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    @classmethod
    def from_state(cls, snapshot: dict[str, Any]) -> "Rng":
        rng = cls(snapshot["seed"], snapshot["stream"])
        rng._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(snapshot["counter"], dtype=np.uint64),
                "key": np.array(snapshot["key"], dtype=np.uint64),
            },
            "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
            "buffer_pos": snapshot["buffer_pos"],
            "has_uint32": snapshot["has_uint32"],
            "uinteger": snapshot["uinteger"],
        }
        return rng
