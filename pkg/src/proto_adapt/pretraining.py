"""Stage 1: supervised training of the segmenter on labeled source data."""

import logging
from pathlib import Path

from tqdm import tqdm

from . import segmenter
from .config import RunConfig
from .errors import DataError
from .evaluation import evaluate_params
from .losses import supervised_ce
from .metrics import IouReport
from .numerics import Rng, sample_batch
from .optimizer import apply_step, init_state
from .synth_data import load_dataset

logger = logging.getLogger(__name__)

INIT_STREAM = 10
PRETRAIN_STREAM = 11


def pretrain_source(config: RunConfig, progress: bool = False) -> tuple[Path, IouReport]:
    """Train from a seeded initialization and write the source checkpoint.

    Returns the checkpoint path and the final IoU on the source training set.
    """
    if config.source_data is None:
        raise DataError("config has no source_data path")
    data = load_dataset(config.source_data)
    spec = config.model_spec()
    if data.num_classes != spec.num_classes or data.pixels.shape[-1] != spec.input_dim:
        raise DataError(
            f"{config.source_data} has {data.num_classes} classes and input_dim "
            f"{data.pixels.shape[-1]}, config expects {spec.num_classes} and {spec.input_dim}"
        )

    params = segmenter.init_params(spec, Rng(config.seed, INIT_STREAM), config.init_scale)
    opt = init_state(
        spec.num_params(),
        lr=config.pretrain_lr,
        beta1=config.beta1,
        beta2=config.beta2,
        weight_decay=config.weight_decay,
        epsilon=config.epsilon,
    )
    rng = Rng(config.seed, PRETRAIN_STREAM)
    num_images = data.pixels.shape[0]

    for step in tqdm(range(config.pretrain_steps), desc="pretrain", disable=not progress):
        batch = sample_batch(rng, num_images, config.batch_size)
        pixels = data.pixels[batch]
        _, logits = segmenter.forward(spec, params, pixels)
        loss = supervised_ce(logits, data.labels[batch])
        grad = segmenter.backward(spec, params, pixels, None, loss.grad_logits)
        opt, params = apply_step(opt, params, grad)
        logger.debug("pretrain step %d: ce %.6f", step, loss.value)

    path = segmenter.save_checkpoint(config.source_checkpoint, spec, params)
    report = evaluate_params(spec, params, data)
    logger.info("source checkpoint written to %s, source IoU %.2f", path, report.overall)
    return path, report
