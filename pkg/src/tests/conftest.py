"""Shared fixtures: a tiny synthetic benchmark and a matching run config."""

import pytest

from proto_adapt.config import DomainSettings, RunConfig
from proto_adapt.synth_data import dataset_paths, generate_benchmark, save_dataset


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run the full benchmark tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_settings():
    """Three-class benchmark small enough for every fast test."""
    return DomainSettings(
        num_classes=3,
        input_dim=4,
        height=8,
        width=8,
        num_images=4,
        num_sites=6,
        rotation_deg=20.0,
        offset=0.3,
        seed=3,
    )


@pytest.fixture
def tiny_data(tmp_path, tiny_settings):
    """Source and target files of the tiny benchmark."""
    source, target = generate_benchmark(tiny_settings)
    src_path, tgt_path = dataset_paths(tmp_path / "tiny")
    save_dataset(src_path, source, tiny_settings.num_classes)
    save_dataset(tgt_path, target, tiny_settings.num_classes)
    return src_path, tgt_path


@pytest.fixture
def tiny_config(tmp_path, tiny_data):
    """Short run over the tiny benchmark, writing under tmp_path."""
    src_path, tgt_path = tiny_data
    return RunConfig(
        input_dim=4,
        hidden_dims=[6, 6],
        num_classes=3,
        lr=1e-3,
        pretrain_lr=1e-2,
        batch_size=2,
        pretrain_steps=20,
        adapt_steps=10,
        seed=5,
        source_data=str(src_path),
        target_data=str(tgt_path),
        source_checkpoint=str(tmp_path / "runs" / "source.ckpt.npz"),
        adapted_checkpoint=str(tmp_path / "runs" / "adapted.ckpt.npz"),
        run_state=str(tmp_path / "runs" / "adapt.state.npz"),
        run_log=str(tmp_path / "runs" / "adapt.log.jsonl"),
    )
