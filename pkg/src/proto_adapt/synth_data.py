"""Synthetic source/target benchmark with a controllable feature shift.

Each image gets a Voronoi partition of its pixel grid into class regions;
every pixel then draws its feature vector around its class mean. Target
images additionally pass through an affine map (block rotation plus offset),
which changes appearance statistics while leaving the classes recoverable.

Dataset container (all integers little-endian):

    magic        4 bytes  b"PADS"
    header       6 x uint32  version, count, height, width, input_dim, num_classes
    pixels       count*height*width*input_dim float64
    labels       count*height*width int32
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DomainSettings
from .errors import DataError
from .numerics import FLOAT, Rng

logger = logging.getLogger(__name__)

MAGIC = b"PADS"
VERSION = 1
HEADER_DTYPE = np.dtype("<u4")
HEADER_LEN = len(MAGIC) + 6 * HEADER_DTYPE.itemsize
PIXEL_DTYPE = np.dtype("<f8")
LABEL_DTYPE = np.dtype("<i4")

SOURCE_STREAM = 0
TARGET_STREAM = 1
MEANS_STREAM = 2


@dataclass
class DomainSpec:
    num_classes: int
    input_dim: int
    class_means: np.ndarray  # (C, input_dim)
    noise_scale: float
    shift_matrix: np.ndarray  # (input_dim, input_dim)
    shift_offset: np.ndarray  # (input_dim,)
    height: int
    width: int
    num_images: int
    num_sites: int = 12
    class_weights: np.ndarray | None = None  # relative frequency of region classes

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("a domain needs at least two classes")
        if self.class_means.shape != (self.num_classes, self.input_dim):
            raise ValueError("class_means must be (num_classes, input_dim)")
        if self.shift_matrix.shape != (self.input_dim, self.input_dim):
            raise ValueError("shift_matrix must be square in input_dim")
        if abs(np.linalg.det(self.shift_matrix)) < 1e-12:
            raise ValueError("shift_matrix must be invertible")

    @classmethod
    def from_settings(cls, settings: DomainSettings) -> "DomainSpec":
        if settings.mean_layout == "axes":
            means = settings.mean_scale * np.eye(settings.num_classes, settings.input_dim)
        else:
            rng = Rng(settings.seed, MEANS_STREAM)
            means = rng.normal((settings.num_classes, settings.input_dim), settings.mean_scale)
        weights = np.ones(settings.num_classes)
        if settings.rare_class is not None:
            if settings.rare_class >= settings.num_classes:
                raise ValueError("rare_class is not a valid class index")
            weights[settings.rare_class] = settings.rare_weight
        return cls(
            num_classes=settings.num_classes,
            input_dim=settings.input_dim,
            class_means=means,
            noise_scale=settings.noise_scale,
            shift_matrix=block_rotation(settings.input_dim, settings.rotation_deg),
            shift_offset=np.full(settings.input_dim, settings.offset, dtype=FLOAT),
            height=settings.height,
            width=settings.width,
            num_images=settings.num_images,
            num_sites=settings.num_sites,
            class_weights=weights,
        )


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (H, W, input_dim)
    labels: np.ndarray  # (H, W)


@dataclass
class ImageSet:
    """Pixels of a dataset without its labels."""

    pixels: np.ndarray  # (N, H, W, input_dim)
    num_classes: int


@dataclass
class LabeledDataset:
    pixels: np.ndarray  # (N, H, W, input_dim)
    labels: np.ndarray  # (N, H, W)
    num_classes: int


def block_rotation(dim: int, degrees: float) -> np.ndarray:
    """Rotate every consecutive pair of axes by ``degrees``; an odd last axis is kept."""
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    matrix = np.eye(dim, dtype=FLOAT)
    for i in range(0, dim - 1, 2):
        matrix[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return matrix


def voronoi_labels(spec: DomainSpec, rng: Rng) -> np.ndarray:
    """Class map from the nearest of ``num_sites`` random seed points."""
    sites = rng.uniform(0.0, 1.0, (spec.num_sites, 2)) * [spec.height, spec.width]
    weights = np.ones(spec.num_classes) if spec.class_weights is None else spec.class_weights
    cdf = np.cumsum(weights) / np.sum(weights)
    site_classes = np.minimum(
        np.searchsorted(cdf, rng.uniform(0.0, 1.0, spec.num_sites), side="right"),
        spec.num_classes - 1,
    )
    rows, cols = np.meshgrid(
        np.arange(spec.height) + 0.5, np.arange(spec.width) + 0.5, indexing="ij"
    )
    dist = (rows[..., None] - sites[:, 0]) ** 2 + (cols[..., None] - sites[:, 1]) ** 2
    return site_classes[np.argmin(dist, axis=-1)].astype(np.int64)


def generate_domain(spec: DomainSpec, rng: Rng, is_target: bool) -> list[LabeledImage]:
    """Draw ``num_images`` labeled images; target images get the affine shift."""
    images = []
    for _ in range(spec.num_images):
        labels = voronoi_labels(spec, rng)
        noise = rng.normal((spec.height, spec.width, spec.input_dim), 1.0)
        pixels = spec.class_means[labels] + spec.noise_scale * noise
        if is_target:
            pixels = pixels @ spec.shift_matrix.T + spec.shift_offset
        images.append(LabeledImage(pixels.astype(FLOAT), labels))
    logger.debug("generated %d %s images", len(images), "target" if is_target else "source")
    return images


def generate_benchmark(settings: DomainSettings) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """Source and target splits of one benchmark, each from its own stream."""
    spec = DomainSpec.from_settings(settings)
    source = generate_domain(spec, Rng(settings.seed, SOURCE_STREAM), is_target=False)
    target = generate_domain(spec, Rng(settings.seed, TARGET_STREAM), is_target=True)
    return source, target


def save_dataset(path, images: list[LabeledImage], num_classes: int) -> Path:
    """Write images and labels to the binary container described above."""
    if not images:
        raise DataError("cannot save an empty dataset")
    pixels = np.stack([img.pixels for img in images])
    labels = np.stack([img.labels for img in images])
    if pixels.ndim != 4 or labels.shape != pixels.shape[:3]:
        raise DataError("images must share one (H, W, input_dim) shape with matching labels")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels must lie in [0, {num_classes})")
    count, height, width, input_dim = pixels.shape
    header = np.array(
        [VERSION, count, height, width, input_dim, num_classes], dtype=HEADER_DTYPE
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.tobytes())
        fh.write(pixels.astype(PIXEL_DTYPE).tobytes())
        fh.write(labels.astype(LABEL_DTYPE).tobytes())
    return path


def _read_layout(path: Path, blob: bytes) -> tuple[tuple[int, int, int, int], int, int]:
    if len(blob) < HEADER_LEN:
        raise DataError(f"{path}: file too short for a dataset header")
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a dataset file (bad magic)")
    version, count, height, width, input_dim, num_classes = np.frombuffer(
        blob, dtype=HEADER_DTYPE, count=6, offset=len(MAGIC)
    ).tolist()
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if min(count, height, width, input_dim) < 1 or num_classes < 2:
        raise DataError(f"{path}: header holds empty dimensions")
    pixel_bytes = count * height * width * input_dim * PIXEL_DTYPE.itemsize
    label_bytes = count * height * width * LABEL_DTYPE.itemsize
    expected = HEADER_LEN + pixel_bytes + label_bytes
    if len(blob) < expected:
        raise DataError(f"{path}: truncated, {len(blob)} bytes of {expected} expected")
    if len(blob) > expected:
        raise DataError(f"{path}: header dimensions do not match payload size")
    return (count, height, width, input_dim), num_classes, pixel_bytes


def _read_blob(path) -> tuple[Path, bytes]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    return path, path.read_bytes()


def load_images(path) -> ImageSet:
    """Pixels only; labels in the file are never decoded."""
    path, blob = _read_blob(path)
    shape, num_classes, _ = _read_layout(path, blob)
    pixels = np.frombuffer(blob, dtype=PIXEL_DTYPE, count=int(np.prod(shape)), offset=HEADER_LEN)
    pixels = pixels.reshape(shape).astype(FLOAT)
    if not np.all(np.isfinite(pixels)):
        raise DataError(f"{path}: pixel payload holds non-finite values")
    return ImageSet(pixels, num_classes)


def load_dataset(path) -> LabeledDataset:
    """Pixels and labels, for supervised training and evaluation."""
    path, blob = _read_blob(path)
    shape, num_classes, pixel_bytes = _read_layout(path, blob)
    pixels = np.frombuffer(blob, dtype=PIXEL_DTYPE, count=int(np.prod(shape)), offset=HEADER_LEN)
    labels = np.frombuffer(
        blob, dtype=LABEL_DTYPE, count=int(np.prod(shape[:3])), offset=HEADER_LEN + pixel_bytes
    )
    labels = labels.reshape(shape[:3]).astype(np.int64)
    if not np.all(np.isfinite(pixels)):
        raise DataError(f"{path}: pixel payload holds non-finite values")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"{path}: labels outside [0, {num_classes})")
    return LabeledDataset(pixels.reshape(shape).astype(FLOAT), labels, num_classes)


def dataset_paths(prefix) -> tuple[Path, Path]:
    """``<prefix>.src.bin`` and ``<prefix>.tgt.bin``."""
    prefix = str(prefix)
    return Path(f"{prefix}.src.bin"), Path(f"{prefix}.tgt.bin")
