"""Stage 2: source-free adaptation of the source model to unlabeled target images.

Order of work inside one step:

1. sample a batch of whole target images
2. teacher pseudo-labels and probabilities
3. student features and logits
4. cosine weights, prototype labels, confidence ratios
5. weighted self-training loss + lambda_pce * prototype-contrast loss
6. AdamW step on the student
7. teacher EMA from the updated student
8. prototype EMA from the student features under the teacher labels

Target images are read with ``synth_data.load_images``, which never decodes
labels; nothing in this module can reach target ground truth.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from tqdm import tqdm

from . import segmenter
from .config import RunConfig
from .errors import CheckpointError, DataError
from .losses import (
    case_fractions,
    confidence_maps,
    prototype_contrast_loss,
    select_targets,
    selected_weights,
    total_adaptation_loss,
    weighted_st_ce,
)
from .numerics import FLOAT, Rng, sample_batch
from .optimizer import OptimizerState, apply_step, init_state
from .prototype_bank import (
    PrototypeBank,
    batch_prototypes,
    cosine_weights,
    ema_refresh,
    init_prototypes,
    prototype_labels,
)
from .synth_data import load_images
from .teacher import TeacherState, ema_update, init_teacher, pseudo_labels

logger = logging.getLogger(__name__)

ADAPT_STREAM = 20
STATE_FORMAT = "proto-adapt-run/1"


@dataclass
class StepRecord:
    step: int
    loss_ce: float
    loss_pce: float
    frac_agree: float
    frac_teacher: float
    frac_proto: float
    frac_tie: float
    mean_weight: float


class RunLog(list):
    """Per-step records, stored as JSON lines."""

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for record in self:
                fh.write(json.dumps(asdict(record)) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunLog":
        path = Path(path)
        if not path.exists():
            raise DataError(f"run log not found: {path}")
        names = {f.name for f in fields(StepRecord)}
        log = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                    log.append(StepRecord(**{k: raw[k] for k in names}))
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise DataError(f"{path}:{lineno}: malformed run-log record") from e
        return log


@dataclass
class RunState:
    """Everything needed to continue an adaptation run bit-exactly."""

    student: np.ndarray
    teacher: TeacherState
    bank: PrototypeBank
    opt: OptimizerState
    rng: Rng
    step: int


def initial_state(
    config: RunConfig, spec: segmenter.ModelSpec, source_params: np.ndarray, pixels: np.ndarray
) -> RunState:
    """Student and teacher from the source model, prototypes from the full target set."""
    return RunState(
        student=source_params.copy(),
        teacher=init_teacher(source_params, config.alpha_teacher),
        bank=init_prototypes(spec, source_params, pixels, config.alpha_proto),
        opt=init_state(
            spec.num_params(),
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            weight_decay=config.weight_decay,
            epsilon=config.epsilon,
        ),
        rng=Rng(config.seed, ADAPT_STREAM),
        step=0,
    )


def adapt_step(
    config: RunConfig, spec: segmenter.ModelSpec, state: RunState, pixels: np.ndarray
) -> tuple[RunState, StepRecord]:
    """Advance the run by one mini-batch."""
    batch = pixels[sample_batch(state.rng, pixels.shape[0], config.batch_size)]

    pseudo, teacher_probs = pseudo_labels(spec, state.teacher, batch)
    features, logits = segmenter.forward(spec, state.student, batch)

    weights = cosine_weights(features, state.bank)
    proto = prototype_labels(weights, state.bank.valid)
    conf = confidence_maps(teacher_probs, weights, config.tau_c)

    st_weights = np.ones_like(weights) if config.identity_bank else weights
    ce = weighted_st_ce(logits, pseudo, st_weights, clamp=config.clamp_weights)
    pce = prototype_contrast_loss(features, weights, pseudo, proto, conf, state.bank, config.tau)
    total = total_adaptation_loss(ce, pce, config.lambda_pce)

    grad = segmenter.backward(spec, state.student, batch, total.grad_features, total.grad_logits)
    opt, student = apply_step(state.opt, state.student, grad)
    teacher = ema_update(state.teacher, student)
    bank = ema_refresh(state.bank, *batch_prototypes(features, pseudo, spec.num_classes))

    _, cases = select_targets(pseudo, proto, conf)
    fractions = case_fractions(cases)
    record = StepRecord(
        step=state.step,
        loss_ce=ce.value,
        loss_pce=pce.value,
        frac_agree=fractions["agree"],
        frac_teacher=fractions["teacher"],
        frac_proto=fractions["proto"],
        frac_tie=fractions["tie"],
        mean_weight=float(selected_weights(pseudo, st_weights, config.clamp_weights).mean()),
    )
    return RunState(student, teacher, bank, opt, state.rng, state.step + 1), record


def save_run_state(path, spec: segmenter.ModelSpec, state: RunState) -> Path:
    opt_hyper = {
        k: getattr(state.opt, k) for k in ("lr", "beta1", "beta2", "weight_decay", "epsilon")
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(STATE_FORMAT),
            spec=np.array(json.dumps(asdict(spec))),
            student=state.student,
            teacher=state.teacher.params,
            teacher_alpha=np.array(state.teacher.alpha),
            protos=state.bank.protos,
            valid=state.bank.valid,
            proto_alpha=np.array(state.bank.alpha),
            opt_m=state.opt.m,
            opt_v=state.opt.v,
            opt_step=np.array(state.opt.step_count),
            opt_hyper=np.array(json.dumps(opt_hyper)),
            rng=np.array(json.dumps(state.rng.get_state())),
            step=np.array(state.step),
        )
    return path


def load_run_state(path, spec: segmenter.ModelSpec) -> RunState:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"run state not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            if str(data["format"]) != STATE_FORMAT:
                raise CheckpointError(f"{path} is not a run-state checkpoint")
            saved = segmenter.ModelSpec(**json.loads(str(data["spec"])))
            if saved != spec:
                raise CheckpointError(f"{path} was written for a different model spec")
            return RunState(
                student=data["student"].astype(FLOAT),
                teacher=TeacherState(data["teacher"].astype(FLOAT), float(data["teacher_alpha"])),
                bank=PrototypeBank(
                    data["protos"].astype(FLOAT), data["valid"].astype(bool),
                    float(data["proto_alpha"]),
                ),
                opt=OptimizerState(
                    m=data["opt_m"].astype(FLOAT),
                    v=data["opt_v"].astype(FLOAT),
                    step_count=int(data["opt_step"]),
                    **json.loads(str(data["opt_hyper"])),
                ),
                rng=Rng.from_state(json.loads(str(data["rng"]))),
                step=int(data["step"]),
            )
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"cannot read run state {path}: {e}") from e


def _load_inputs(config: RunConfig) -> tuple[segmenter.ModelSpec, np.ndarray, np.ndarray]:
    spec, params = segmenter.load_checkpoint(config.source_checkpoint)
    if spec != config.model_spec():
        raise CheckpointError(
            f"{config.source_checkpoint} holds {spec}, config describes {config.model_spec()}"
        )
    if config.target_data is None:
        raise DataError("config has no target_data path")
    target = load_images(config.target_data)
    if target.num_classes != spec.num_classes or target.pixels.shape[-1] != spec.input_dim:
        raise DataError(
            f"{config.target_data} does not match the model "
            f"({target.num_classes} classes, input_dim {target.pixels.shape[-1]})"
        )
    return spec, params, target.pixels


def adapt(config: RunConfig, resume: bool = False, progress: bool = False) -> tuple[Path, RunLog]:
    """Run adaptation, write the adapted checkpoint and the run log.

    With ``resume`` and an existing run-state file, training continues from the
    saved step and produces the same result as an uninterrupted run.
    """
    spec, source_params, pixels = _load_inputs(config)

    if resume and Path(config.run_state).exists():
        state = load_run_state(config.run_state, spec)
        log = RunLog(r for r in RunLog.read(config.run_log) if r.step < state.step)
        if len(log) != state.step:
            raise CheckpointError(
                f"run log holds {len(log)} records, run state is at step {state.step}"
            )
        logger.info("resuming adaptation at step %d", state.step)
    else:
        state = initial_state(config, spec, source_params, pixels)
        log = RunLog()
        logger.info(
            "prototypes initialised, valid classes: %s", np.flatnonzero(state.bank.valid).tolist()
        )

    remaining = range(state.step, config.adapt_steps)
    for _ in tqdm(remaining, desc="adapt", disable=not progress):
        state, record = adapt_step(config, spec, state, pixels)
        log.append(record)
        logger.debug(
            "step %d: ce %.6f pce %.6f agree %.3f",
            record.step, record.loss_ce, record.loss_pce, record.frac_agree,
        )
        if config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_run_state(config.run_state, spec, state)
            log.write(config.run_log)

    path = segmenter.save_checkpoint(config.adapted_checkpoint, spec, state.student)
    save_run_state(config.run_state, spec, state)
    log.write(config.run_log)
    logger.info("adapted checkpoint written to %s after %d steps", path, state.step)
    return path, log
