"""Test cases for source pretraining, adaptation and evaluation."""

import inspect
from pathlib import Path

import numpy as np
import pytest

from proto_adapt import adaptation, segmenter
from proto_adapt.adaptation import ADAPT_STREAM, RunLog, adapt, load_run_state
from proto_adapt.config import DomainSettings, RunConfig, load_domain_settings, load_run_config
from proto_adapt.errors import CheckpointError, DataError
from proto_adapt.evaluation import evaluate
from proto_adapt.losses import supervised_ce
from proto_adapt.numerics import Rng, sample_batch
from proto_adapt.optimizer import apply_step, init_state
from proto_adapt.pretraining import INIT_STREAM, pretrain_source
from proto_adapt.synth_data import (
    LabeledImage,
    dataset_paths,
    generate_benchmark,
    load_images,
    save_dataset,
)
from proto_adapt.teacher import ema_update, init_teacher, pseudo_labels

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def _with(config: RunConfig, tmp_path, tag: str, **overrides) -> RunConfig:
    """Copy of ``config`` writing its outputs under ``tmp_path/tag``."""
    outputs = {
        "source_checkpoint": str(tmp_path / tag / "source.ckpt.npz"),
        "adapted_checkpoint": str(tmp_path / tag / "adapted.ckpt.npz"),
        "run_state": str(tmp_path / tag / "adapt.state.npz"),
        "run_log": str(tmp_path / tag / "adapt.log.jsonl"),
    }
    outputs.update(overrides)
    return config.model_copy(update=outputs)


def test_pretrain_zero_steps_is_initialisation(tiny_config, tmp_path):
    """Test that zero pretraining steps save the initial parameters."""
    config = _with(tiny_config, tmp_path, "zero", pretrain_steps=0)
    path, _ = pretrain_source(config)
    spec, params = segmenter.load_checkpoint(path)
    expected = segmenter.init_params(spec, Rng(config.seed, INIT_STREAM), config.init_scale)
    assert spec == config.model_spec()
    assert np.array_equal(params, expected)


def test_pretrain_deterministic_and_learns(tiny_config, tmp_path):
    """Test that pretraining is reproducible and fits the source domain."""
    first, report = pretrain_source(_with(tiny_config, tmp_path, "a"))
    second, _ = pretrain_source(_with(tiny_config, tmp_path, "b"))
    assert np.array_equal(segmenter.load_checkpoint(first)[1], segmenter.load_checkpoint(second)[1])
    assert first.read_bytes() == second.read_bytes()
    assert 0.0 <= report.overall <= 100.0


def test_pretrain_missing_dataset(tiny_config, tmp_path):
    """Test pretraining without a source dataset."""
    config = tiny_config.model_copy(update={"source_data": str(tmp_path / "nope.bin")})
    with pytest.raises(DataError):
        pretrain_source(config)


def test_adapt_frozen_system(tiny_config, tmp_path):
    """Test adaptation with zero learning rate and frozen EMAs."""
    config = _with(tiny_config, tmp_path, "frozen", alpha_teacher=1.0, alpha_proto=1.0, lr=0.0)
    pretrain_source(config)
    spec, source = segmenter.load_checkpoint(config.source_checkpoint)
    pixels = load_images(config.target_data).pixels

    path, log = adapt(config)

    _, adapted = segmenter.load_checkpoint(path)
    state = load_run_state(config.run_state, spec)
    initial = adaptation.initial_state(config, spec, source, pixels)
    assert len(log) == config.adapt_steps
    assert np.array_equal(adapted, source)
    assert np.array_equal(state.teacher.params, source)
    seen = initial.bank.valid
    assert np.all(state.bank.valid[seen])
    assert np.array_equal(state.bank.protos[seen], initial.bank.protos[seen])


def test_identity_bank_reduces_to_plain_self_training(tiny_config, tmp_path):
    """Test that unit prototype weights give plain self-training."""
    config = _with(
        tiny_config, tmp_path, "plain", identity_bank=True, lambda_pce=0.0, adapt_steps=100
    )
    pretrain_source(config)
    path, _ = adapt(config)
    _, adapted = segmenter.load_checkpoint(path)

    spec, student = segmenter.load_checkpoint(config.source_checkpoint)
    pixels = load_images(config.target_data).pixels
    teacher = init_teacher(student, config.alpha_teacher)
    opt = init_state(
        spec.num_params(),
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        weight_decay=config.weight_decay,
        epsilon=config.epsilon,
    )
    rng = Rng(config.seed, ADAPT_STREAM)
    for _ in range(100):
        batch = pixels[sample_batch(rng, pixels.shape[0], config.batch_size)]
        labels, _ = pseudo_labels(spec, teacher, batch)
        loss = supervised_ce(segmenter.forward(spec, student, batch)[1], labels)
        grad = segmenter.backward(spec, student, batch, None, loss.grad_logits)
        opt, student = apply_step(opt, student, grad)
        teacher = ema_update(teacher, student)

    assert np.array_equal(adapted, student)


def test_adapt_deterministic(tiny_config, tmp_path):
    """Test that two identical adaptation runs write identical files."""
    pretrain_source(tiny_config)
    first = _with(tiny_config, tmp_path, "one", source_checkpoint=tiny_config.source_checkpoint)
    second = _with(tiny_config, tmp_path, "two", source_checkpoint=tiny_config.source_checkpoint)

    path_a, log_a = adapt(first)
    path_b, log_b = adapt(second)

    assert np.array_equal(segmenter.load_checkpoint(path_a)[1], segmenter.load_checkpoint(path_b)[1])
    assert path_a.read_bytes() == path_b.read_bytes()
    assert Path(first.run_state).read_bytes() == Path(second.run_state).read_bytes()
    assert log_a == log_b
    assert RunLog.read(first.run_log) == log_a


def test_adapt_resume_matches_uninterrupted(tiny_config, tmp_path):
    """Test that a resumed run ends where an uninterrupted one does."""
    pretrain_source(tiny_config)
    full = _with(tiny_config, tmp_path, "full", source_checkpoint=tiny_config.source_checkpoint)
    path_full, log_full = adapt(full)

    split = _with(
        tiny_config, tmp_path, "split", source_checkpoint=tiny_config.source_checkpoint,
        adapt_steps=4,
    )
    adapt(split)
    path_split, log_split = adapt(split.model_copy(update={"adapt_steps": 10}), resume=True)

    assert np.array_equal(
        segmenter.load_checkpoint(path_split)[1], segmenter.load_checkpoint(path_full)[1]
    )
    assert log_split == log_full
    assert path_split.read_bytes() == path_full.read_bytes()
    assert Path(split.run_state).read_bytes() == Path(full.run_state).read_bytes()


def test_run_log_records(tiny_config):
    """Test the per-step records of the run log."""
    pretrain_source(tiny_config)
    _, log = adapt(tiny_config)
    assert [r.step for r in log] == list(range(tiny_config.adapt_steps))
    for record in log:
        fractions = record.frac_agree + record.frac_teacher + record.frac_proto + record.frac_tie
        assert fractions == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= record.mean_weight <= 1.0
        assert np.isfinite(record.loss_ce) and np.isfinite(record.loss_pce)


def test_adapt_spec_mismatch(tiny_config):
    """Test adaptation with a config that does not match the checkpoint."""
    pretrain_source(tiny_config)
    with pytest.raises(CheckpointError):
        adapt(tiny_config.model_copy(update={"hidden_dims": [6, 5]}))


def test_adapt_cannot_reach_target_labels():
    """Test that the adaptation module never loads target labels."""
    source = inspect.getsource(adaptation)
    assert "load_dataset" not in source
    assert "LabeledDataset" not in source
    assert "evaluation" not in source
    assert not hasattr(adaptation, "load_dataset")


def test_evaluate_hand_computed(tmp_path):
    """Model predicting class 1 everywhere on one 4x4 image."""
    spec = segmenter.ModelSpec(input_dim=2, hidden_dims=(2,), num_classes=3)
    params = np.zeros(spec.num_params())
    segmenter.unpack(spec, params)[-1][1][1] = 1.0
    checkpoint = segmenter.save_checkpoint(tmp_path / "const.npz", spec, params)
    labels = np.array([[0, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1], [2, 2, 2, 2]])
    dataset = save_dataset(
        tmp_path / "one.bin", [LabeledImage(np.zeros((4, 4, 2)), labels)], 3
    )

    report = evaluate(checkpoint, dataset, "target")

    # confusion: row 0 -> col 1 (8), row 1 -> col 1 (4), row 2 -> col 1 (4)
    assert report.per_class[0] == 0.0
    assert report.per_class[1] == pytest.approx(100.0 * 4 / 16)
    assert report.per_class[2] == 0.0
    assert report.overall == pytest.approx(25.0 / 3)
    assert evaluate(checkpoint, dataset, "target").to_csv() == report.to_csv()


def test_evaluate_class_mismatch(tmp_path, tiny_data):
    """Test evaluation of a checkpoint with the wrong class count or domain."""
    spec = segmenter.ModelSpec(input_dim=4, hidden_dims=(3,), num_classes=4)
    checkpoint = segmenter.save_checkpoint(tmp_path / "c4.npz", spec, np.zeros(spec.num_params()))
    with pytest.raises(CheckpointError):
        evaluate(checkpoint, tiny_data[1])
    with pytest.raises(ValueError):
        evaluate(checkpoint, tiny_data[1], "elsewhere")


@pytest.mark.slow
def test_default_benchmark_adaptation(tmp_path):
    """The shipped benchmark configs: adaptation beats the source-only model on the target."""
    settings = load_domain_settings(CONFIGS / "benchmark_domain.yaml")
    assert settings == DomainSettings()
    source, target = generate_benchmark(settings)
    src_path, tgt_path = dataset_paths(tmp_path / "bench")
    save_dataset(src_path, source, settings.num_classes)
    save_dataset(tgt_path, target, settings.num_classes)
    config = _with(
        load_run_config(CONFIGS / "benchmark_run.yaml"),
        tmp_path,
        "run",
        source_data=str(src_path),
        target_data=str(tgt_path),
    )

    source_ckpt, source_report = pretrain_source(config)
    adapted_ckpt, log = adapt(config)
    before = evaluate(source_ckpt, tgt_path)
    after = evaluate(adapted_ckpt, tgt_path)

    assert len(log) == config.adapt_steps
    assert source_report.overall >= 90.0
    assert before.overall <= source_report.overall - 5.0
    assert after.overall >= before.overall + 5.0
    assert np.all(after.per_class >= before.per_class - 2.0)

    again = _with(config, tmp_path, "again", source_checkpoint=config.source_checkpoint)
    repeat_ckpt, _ = adapt(again)
    assert repeat_ckpt.read_bytes() == adapted_ckpt.read_bytes()
    assert Path(again.run_state).read_bytes() == Path(config.run_state).read_bytes()
    assert evaluate(repeat_ckpt, tgt_path).to_csv() == after.to_csv()
