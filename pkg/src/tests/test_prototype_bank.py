"""Test cases for the class prototype bank."""

import numpy as np
import pytest

from proto_adapt import segmenter
from proto_adapt.errors import ShapeError
from proto_adapt.numerics import Rng
from proto_adapt.prototype_bank import (
    PrototypeBank,
    batch_prototypes,
    cosine_weights,
    ema_refresh,
    init_prototypes,
    load_bank,
    prototype_labels,
    save_bank,
)

SPEC = segmenter.ModelSpec(input_dim=3, hidden_dims=(4,), num_classes=3)


def _bank(protos, valid=None, alpha=0.99):
    protos = np.asarray(protos, dtype=float)
    if valid is None:
        valid = np.ones(protos.shape[0], dtype=bool)
    return PrototypeBank(protos, np.asarray(valid, dtype=bool), alpha)


def test_init_single_class():
    """Test prototype init when every pixel is one class."""
    rng = Rng(0)
    params = segmenter.init_params(SPEC, rng)
    head_w, head_b = segmenter.unpack(SPEC, params)[-1]
    head_w[:] = 0.0
    head_b[:] = [1.0, 0.0, 0.0]
    image = rng.normal((4, 4, 3))

    bank = init_prototypes(SPEC, params, [image], 0.99)

    features, _ = segmenter.forward(SPEC, params, image)
    assert np.array_equal(bank.valid, [True, False, False])
    assert np.allclose(bank.protos[0], features.reshape(-1, 4).mean(axis=0), atol=1e-12)
    assert bank.alpha == 0.99


def test_init_matches_loop_oracle():
    """Test prototype init against a pixel loop."""
    rng = Rng(1)
    params = segmenter.init_params(SPEC, rng, scale=2.0)
    images = [rng.normal((4, 4, 3)) for _ in range(3)]

    bank = init_prototypes(SPEC, params, images, 0.99)

    sums = np.zeros((3, 4))
    counts = np.zeros(3)
    for image in images:
        features, logits = segmenter.forward(SPEC, params, image)
        for h in range(4):
            for w in range(4):
                c = int(np.argmax(logits[h, w]))
                sums[c] += features[h, w]
                counts[c] += 1
    assert np.array_equal(bank.valid, counts > 0)
    for c in range(3):
        if counts[c]:
            assert np.allclose(bank.protos[c], sums[c] / counts[c], rtol=0, atol=1e-12)


def test_init_rejects_empty_and_bad_alpha():
    """Test prototype init with no images or a bad momentum."""
    params = np.zeros(SPEC.num_params())
    with pytest.raises(ValueError):
        init_prototypes(SPEC, params, [], 0.99)
    with pytest.raises(ValueError):
        init_prototypes(SPEC, params, [np.zeros((2, 2, 3))], 1.2)


def test_batch_prototypes_mean():
    """Test the per-class mean of a batch."""
    features = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    protos, counts = batch_prototypes(features, np.array([[1, 1]]), 3)
    assert np.array_equal(counts, [0, 2, 0])
    assert np.array_equal(protos[1], [0.5, 0.5])


def test_batch_prototypes_single_pixel():
    """Test batch prototypes from one pixel."""
    features = np.array([[[0.3, -0.7]]])
    protos, counts = batch_prototypes(features, np.array([[2]]), 3)
    assert np.array_equal(protos[2], [0.3, -0.7])
    assert counts[2] == 1 and counts[0] == 0


def test_batch_prototypes_loop_oracle():
    """Test batch prototypes against a pixel loop."""
    rng = Rng(2)
    features = rng.normal((2, 5, 5, 4))
    labels = rng.integers(0, 3, (2, 5, 5))
    protos, counts = batch_prototypes(features, labels, 4)
    assert counts[3] == 0
    for c in range(3):
        members = [features[i, h, w] for i in range(2) for h in range(5) for w in range(5)
                   if labels[i, h, w] == c]
        assert counts[c] == len(members)
        if members:
            assert np.allclose(protos[c], np.mean(members, axis=0), rtol=0, atol=1e-12)


def test_batch_prototypes_shape_mismatch():
    """Test batch prototypes with mismatched labels."""
    with pytest.raises(ShapeError):
        batch_prototypes(np.zeros((2, 2, 4)), np.zeros((3, 2), dtype=int), 3)


def test_ema_refresh_rules():
    """Test blending, keeping and first-seen rows in the refresh."""
    bank = _bank([[1.0, 1.0], [2.0, -1.0], [0.0, 0.0]], valid=[True, True, False])
    batch = np.array([[0.0, 0.0], [5.0, 5.0], [3.0, 4.0]])
    counts = np.array([4, 0, 2])

    refreshed = ema_refresh(bank, batch, counts)

    assert np.allclose(refreshed.protos[0], [0.99, 0.99], rtol=0, atol=1e-15)
    assert np.array_equal(refreshed.protos[1], bank.protos[1])
    assert np.array_equal(refreshed.protos[2], [3.0, 4.0])
    assert np.array_equal(refreshed.valid, [True, True, True])
    assert np.array_equal(bank.valid, [True, True, False])


def test_ema_refresh_alpha_one_is_identity():
    """Test that momentum one freezes the bank."""
    bank = _bank(Rng(3).normal((3, 4)), alpha=1.0)
    refreshed = ema_refresh(bank, Rng(4).normal((3, 4)), np.array([1, 2, 3]))
    assert np.array_equal(refreshed.protos, bank.protos)


def test_ema_refresh_converges_to_constant_batch():
    """Test geometric convergence to a constant batch."""
    rng = Rng(5)
    bank = _bank(rng.normal((3, 4)))
    target = rng.normal((3, 4))
    gap = np.linalg.norm(bank.protos - target)
    for _ in range(50):
        bank = ema_refresh(bank, target, np.ones(3, dtype=int))
        assert np.all(np.isfinite(bank.protos))
        new_gap = np.linalg.norm(bank.protos - target)
        assert new_gap / gap == pytest.approx(0.99, abs=1e-9)
        gap = new_gap


def test_init_equals_refresh_of_empty_bank():
    """Test that init equals refreshing an empty bank."""
    rng = Rng(6)
    params = segmenter.init_params(SPEC, rng, scale=2.0)
    image = rng.normal((4, 4, 3))
    features, logits = segmenter.forward(SPEC, params, image)
    empty = _bank(np.zeros((3, 4)), valid=[False, False, False], alpha=0.0)

    refreshed = ema_refresh(empty, *batch_prototypes(features, np.argmax(logits, -1), 3))
    initialised = init_prototypes(SPEC, params, [image], 0.0)

    assert np.array_equal(refreshed.valid, initialised.valid)
    assert np.array_equal(refreshed.protos, initialised.protos)


def test_cosine_self_and_orthogonal():
    """Test cosine weights of parallel and orthogonal vectors."""
    bank = _bank([[1.0, 2.0], [-2.0, 1.0]])
    weights = cosine_weights(np.array([[[1.0, 2.0]]]), bank)
    assert weights[0, 0, 0] == pytest.approx(1.0, abs=1e-12)
    assert weights[0, 0, 1] == pytest.approx(0.0, abs=1e-12)


def test_cosine_zero_norm_and_invalid():
    """Test cosine weights for zero vectors and invalid classes."""
    bank = _bank([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], valid=[True, True, False])
    weights = cosine_weights(np.array([[[0.0, 0.0], [1.0, 1.0]]]), bank)
    assert np.array_equal(weights[0, 0], [0.0, 0.0, -1.0])
    assert weights[0, 1, 0] == 0.0
    assert weights[0, 1, 2] == -1.0


def test_cosine_matches_loop_oracle():
    """Test cosine weights against a loop."""
    rng = Rng(7)
    features = rng.normal((3, 3, 4))
    bank = _bank(rng.normal((5, 4)))
    weights = cosine_weights(features, bank)
    for h in range(3):
        for w in range(3):
            for c in range(5):
                f, z = features[h, w], bank.protos[c]
                expected = np.dot(f, z) / (np.linalg.norm(f) * np.linalg.norm(z))
                assert weights[h, w, c] == pytest.approx(expected, abs=1e-12)
    assert np.all(np.abs(weights) <= 1.0 + 1e-12)


def test_cosine_dimension_mismatch():
    """Test cosine weights with a feature size mismatch."""
    with pytest.raises(ShapeError):
        cosine_weights(np.zeros((2, 2, 3)), _bank(np.ones((2, 4))))


def test_prototype_labels():
    """Test prototype labels and the all-invalid bank."""
    one_hot = np.eye(3)[[[2, 0], [1, 2]]]
    assert np.array_equal(prototype_labels(one_hot), [[2, 0], [1, 2]])
    assert np.all(prototype_labels(np.full((2, 2, 3), 0.4)) == 0)
    with pytest.raises(ValueError):
        prototype_labels(np.full((1, 1, 3), -1.0), np.zeros(3, dtype=bool))


def test_prototype_labels_skip_invalid_sentinel():
    """A valid class at cosine -1 wins over an invalid class at the -1 sentinel."""
    weights = np.array([[[-1.0, -1.0, -1.0]]])
    valid = np.array([False, True, False])
    assert prototype_labels(weights)[0, 0] == 0
    assert prototype_labels(weights, valid)[0, 0] == 1

    bank = _bank([[0.0, 0.0], [-1.0, 0.0], [0.0, 0.0]], valid=[False, True, False])
    labels = prototype_labels(cosine_weights(np.array([[[1.0, 0.0]]]), bank), bank.valid)
    assert labels[0, 0] == 1


def test_prototype_labels_scan_and_rescaling():
    """Test prototype labels against a scan and under rescaling."""
    rng = Rng(8)
    weights = rng.uniform(-1.0, 1.0, (6, 6, 4))
    labels = prototype_labels(weights)
    for h in range(6):
        for w in range(6):
            row = list(weights[h, w])
            assert labels[h, w] == row.index(max(row))
    scale = rng.uniform(0.1, 10.0, (6, 6, 1))
    assert np.array_equal(prototype_labels(weights * scale), labels)


def test_bank_round_trip(tmp_path):
    """Test saving and loading a prototype bank."""
    bank = _bank(Rng(9).normal((3, 4)), valid=[True, False, True], alpha=0.95)
    loaded = load_bank(save_bank(tmp_path / "bank.npz", bank))
    assert np.array_equal(loaded.protos, bank.protos)
    assert np.array_equal(loaded.valid, bank.valid)
    assert loaded.alpha == 0.95
