"""Datasets, IDX loading, label corruption, and the MLP classifier oracle."""

import gzip
import struct

import numpy as np
import pytest

from safeopt.core import as_param_vector
from safeopt.models_data import (Dataset, IdxFormatError, MlpOracle, MlpSpec,
                                 batch_stream, batchnorm_tune, corrupt_labels,
                                 load_dataset, load_mnist_idx, save_dataset,
                                 subset, synth_blobs)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def write_idx_pair(tmp_path, images, labels, images_magic=IMAGES_MAGIC,
                   labels_magic=LABELS_MAGIC, gz=False, truncate_images=0,
                   truncate_labels=0):
    """Write a hand-built IDX image/label pair and return the two paths."""
    n, rows, cols = images.shape
    img_bytes = struct.pack(">IIII", images_magic, n, rows, cols)
    img_bytes += images.astype(np.uint8).tobytes()
    lbl_bytes = struct.pack(">II", labels_magic, len(labels))
    lbl_bytes += np.asarray(labels, dtype=np.uint8).tobytes()
    if truncate_images:
        img_bytes = img_bytes[:-truncate_images]
    if truncate_labels:
        lbl_bytes = lbl_bytes[:-truncate_labels]
    suffix = ".gz" if gz else ""
    img_path = tmp_path / f"images-idx3-ubyte{suffix}"
    lbl_path = tmp_path / f"labels-idx1-ubyte{suffix}"
    opener = gzip.open if gz else open
    with opener(img_path, "wb") as fh:
        fh.write(img_bytes)
    with opener(lbl_path, "wb") as fh:
        fh.write(lbl_bytes)
    return img_path, lbl_path


@pytest.fixture()
def tiny_idx(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 2, 3)).astype(np.uint8)
    labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    return write_idx_pair(tmp_path, images, labels), images, labels


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------


def test_dataset_validation():
    X = np.zeros((4, 3))
    y = np.array([0, 1, 0, 1])
    ds = Dataset(inputs=X, labels=y, n_classes=2)
    assert ds.n_samples == 4 and ds.dim == 3
    with pytest.raises(ValueError):
        Dataset(inputs=np.zeros(4), labels=y, n_classes=2)
    with pytest.raises(ValueError):
        Dataset(inputs=X, labels=y[:3], n_classes=2)
    with pytest.raises(ValueError):
        Dataset(inputs=X, labels=np.array([0, 1, 2, 1]), n_classes=2)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        Dataset(inputs=bad, labels=y, n_classes=2)


def test_subset_selects_rows_and_relabels_split():
    ds = synth_blobs(20, 3, n_classes=2, seed=0)
    sub = subset(ds, [0, 5, 7], split="val")
    assert sub.n_samples == 3
    assert sub.split == "val"
    np.testing.assert_array_equal(sub.inputs, ds.inputs[[0, 5, 7]])
    np.testing.assert_array_equal(sub.labels, ds.labels[[0, 5, 7]])


def test_synth_blobs_separation_and_single_class():
    ds = synth_blobs(200, 2, n_classes=2, separation=6.0, seed=1)
    assert set(np.unique(ds.labels)) == {0, 1}
    mu0 = ds.inputs[ds.labels == 0].mean(axis=0)
    mu1 = ds.inputs[ds.labels == 1].mean(axis=0)
    assert np.linalg.norm(mu0 - mu1) > 3.0
    solo = synth_blobs(10, 2, n_classes=1, seed=0)
    assert (solo.labels == 0).all()


def test_corrupt_labels_flips_exact_count_off_original():
    ds = synth_blobs(100, 2, n_classes=4, seed=2)
    bad = corrupt_labels(ds, 0.25, seed=3)
    changed = np.flatnonzero(bad.labels != ds.labels)
    assert len(changed) == 25
    assert bad.corruption is not None
    assert sorted(bad.corruption.indices) == sorted(changed)
    np.testing.assert_array_equal(bad.corruption.original_labels,
                                  ds.labels[bad.corruption.indices])
    # every corrupted label actually moved and stayed in range
    assert (bad.labels[changed] != ds.labels[changed]).all()
    assert bad.labels.max() < 4 and bad.labels.min() >= 0


def test_corrupt_labels_full_fraction_two_classes_flips_everything():
    ds = synth_blobs(30, 2, n_classes=2, seed=0)
    bad = corrupt_labels(ds, 1.0, seed=0)
    np.testing.assert_array_equal(bad.labels, 1 - ds.labels)


def test_corrupt_labels_zero_fraction_is_identity():
    ds = synth_blobs(10, 2, seed=0)
    same = corrupt_labels(ds, 0.0, seed=0)
    np.testing.assert_array_equal(same.labels, ds.labels)


def test_batch_stream_reshuffles_and_drops_partial():
    ds = synth_blobs(10, 2, seed=0)
    stream = batch_stream(ds, batch_size=3, seed=0)
    epoch1 = [next(stream) for _ in range(3)]  # 3 full batches, 1 row dropped
    epoch2 = [next(stream) for _ in range(3)]
    seen1 = np.concatenate([y for _, y in epoch1])
    assert len(seen1) == 9
    order1 = np.concatenate([X[:, 0] for X, _ in epoch1])
    order2 = np.concatenate([X[:, 0] for X, _ in epoch2])
    assert not np.array_equal(order1, order2)  # new permutation each epoch
    # generator body runs on first draw, which is where validation lives
    with pytest.raises(ValueError):
        next(batch_stream(ds, batch_size=0))
    with pytest.raises(ValueError):
        next(batch_stream(ds, batch_size=11))


def test_batch_stream_is_seeded():
    ds = synth_blobs(12, 2, seed=0)
    a = [next(batch_stream(ds, 4, seed=5))[1] for _ in range(1)]
    b = [next(batch_stream(ds, 4, seed=5))[1] for _ in range(1)]
    np.testing.assert_array_equal(a[0], b[0])


def test_dataset_file_round_trip(tmp_path):
    ds = corrupt_labels(synth_blobs(15, 4, n_classes=3, seed=1), 0.2, seed=2)
    path = tmp_path / "blob.bin"
    save_dataset(path, ds)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.n_classes == 3
    assert back.split == ds.split


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------


def test_idx_round_trip_values_and_scaling(tiny_idx):
    (img_path, lbl_path), images, labels = tiny_idx
    ds = load_mnist_idx(img_path, lbl_path)
    assert ds.n_samples == 5 and ds.dim == 6
    np.testing.assert_allclose(ds.inputs,
                               images.reshape(5, -1).astype(np.float64) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)


def test_idx_gzip_detection(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8)
    labels = np.array([1, 0, 1], dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, labels, gz=True)
    ds = load_mnist_idx(img_path, lbl_path)
    np.testing.assert_allclose(ds.inputs,
                               images.reshape(3, -1).astype(np.float64) / 255.0)


def test_idx_standardize_moments(tmp_path):
    rng = np.random.default_rng(2)
    images = rng.integers(0, 256, size=(50, 3, 3)).astype(np.uint8)
    labels = rng.integers(0, 10, size=50).astype(np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, labels)
    ds = load_mnist_idx(img_path, lbl_path, standardize=True)
    assert abs(ds.inputs.mean()) < 1e-10
    assert ds.inputs.std() == pytest.approx(1.0, abs=1e-10)


def test_idx_wrong_magic_names_the_field(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, labels,
                                        images_magic=0xDEADBEEF)
    with pytest.raises(IdxFormatError) as exc:
        load_mnist_idx(img_path, lbl_path)
    assert exc.value.field == "magic"


def test_idx_truncated_payloads(tmp_path):
    images = np.zeros((4, 2, 2), dtype=np.uint8)
    labels = np.zeros(4, dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, labels,
                                        truncate_images=3)
    with pytest.raises(IdxFormatError) as exc:
        load_mnist_idx(img_path, lbl_path)
    assert exc.value.field == "pixels"
    img_path2, lbl_path2 = write_idx_pair(tmp_path, images, labels,
                                          truncate_labels=2)
    with pytest.raises(IdxFormatError) as exc2:
        load_mnist_idx(img_path2, lbl_path2)
    assert exc2.value.field == "labels"


def test_idx_truncated_header(tmp_path):
    img_path = tmp_path / "images-idx3-ubyte"
    img_path.write_bytes(b"\x00\x00\x08")  # 3 bytes, header needs 16
    lbl_path = tmp_path / "labels-idx1-ubyte"
    lbl_path.write_bytes(struct.pack(">II", LABELS_MAGIC, 0))
    with pytest.raises(IdxFormatError) as exc:
        load_mnist_idx(img_path, lbl_path)
    assert exc.value.field == "header"


def test_idx_count_mismatch(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, np.zeros(3, np.uint8))
    # overwrite the labels file with a four-label payload
    labels = np.zeros(4, dtype=np.uint8)
    lbl_path.write_bytes(struct.pack(">II", LABELS_MAGIC, 4) + labels.tobytes())
    with pytest.raises(IdxFormatError) as exc:
        load_mnist_idx(img_path, lbl_path)
    assert exc.value.field == "count"


# ---------------------------------------------------------------------------
# MLP oracle
# ---------------------------------------------------------------------------


def small_batch(seed=0, n=16, dim=5, classes=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    y = rng.integers(0, classes, size=n)
    return X, y


def test_mlp_layout_segments_and_init():
    oracle = MlpOracle(MlpSpec((5, 7, 3)))
    x = oracle.init_params(seed=0)
    assert x.segment_names() == ("layer0.weight", "layer0.bias",
                                 "layer1.weight", "layer1.bias")
    assert oracle.dimension() == 5 * 7 + 7 + 7 * 3 + 3
    # biases are excluded from projections by default
    assert x.sparsifiable_count() == 5 * 7 + 7 * 3
    bound = 1.0 / np.sqrt(5.0)
    assert np.abs(x.segment("layer0.weight")).max() <= bound


def test_mlp_value_requires_batch():
    oracle = MlpOracle(MlpSpec((4, 3)))
    x = oracle.init_params()
    with pytest.raises(ValueError):
        oracle.value(x)
    with pytest.raises(ValueError):
        oracle.gradient(x)


def test_mlp_gradient_matches_finite_differences():
    oracle = MlpOracle(MlpSpec((5, 7, 3)))
    x = oracle.init_params(seed=1)
    batch = small_batch(seed=2)
    grad = oracle.gradient(x, batch).values
    rng = np.random.default_rng(3)
    coords = rng.choice(x.n, size=20, replace=False)
    eps = 1e-6
    for i in coords:
        xp = x.values.copy(); xp[i] += eps
        xm = x.values.copy(); xm[i] -= eps
        fd = (oracle.value(x.with_values(xp), batch) -
              oracle.value(x.with_values(xm), batch)) / (2 * eps)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        assert abs(grad[i] - fd) / denom < 1e-5


def test_mlp_gradient_matches_finite_differences_with_batch_norm():
    oracle = MlpOracle(MlpSpec((4, 6, 3), batch_norm=True))
    x = oracle.init_params(seed=4)
    batch = small_batch(seed=5, dim=4)
    grad = oracle.gradient(x, batch).values
    rng = np.random.default_rng(6)
    coords = rng.choice(x.n, size=15, replace=False)
    eps = 1e-6
    for i in coords:
        xp = x.values.copy(); xp[i] += eps
        xm = x.values.copy(); xm[i] -= eps
        fd = (oracle.value(x.with_values(xp), batch) -
              oracle.value(x.with_values(xm), batch)) / (2 * eps)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        assert abs(grad[i] - fd) / denom < 1e-4


def test_mlp_hidden_unit_permutation_symmetry():
    # permuting hidden units (columns of W0, b0, rows of W1) leaves the
    # function, loss, and accuracy unchanged
    spec = MlpSpec((4, 6, 3))
    oracle = MlpOracle(spec)
    x = oracle.init_params(seed=7)
    batch = small_batch(seed=8, dim=4)
    perm = np.random.default_rng(9).permutation(6)

    vals = x.values.copy()
    W0 = x.segment("layer0.weight").reshape(4, 6)
    b0 = x.segment("layer0.bias")
    W1 = x.segment("layer1.weight").reshape(6, 3)
    off = 0
    vals[off:off + 24] = W0[:, perm].ravel(); off += 24
    vals[off:off + 6] = b0[perm]; off += 6
    vals[off:off + 18] = W1[perm, :].ravel()
    x_perm = x.with_values(vals)

    assert oracle.value(x_perm, batch) == pytest.approx(oracle.value(x, batch),
                                                        rel=1e-12)
    logits_a = oracle.predict_logits(x, batch[0])
    logits_b = oracle.predict_logits(x_perm, batch[0])
    np.testing.assert_allclose(logits_a, logits_b, atol=1e-12)


def test_mlp_accuracy_on_separable_blobs():
    ds = synth_blobs(300, 2, n_classes=2, separation=8.0, seed=0)
    oracle = MlpOracle(MlpSpec((2, 8, 2)))
    x = oracle.init_params(seed=0)
    stream = batch_stream(ds, 32, seed=0)
    for _ in range(400):
        X, y = next(stream)
        g = oracle.gradient(x, (X, y))
        x = x.with_values(x.values - 0.5 * g.values)
    assert oracle.accuracy(x, ds) > 0.95


def test_batchnorm_tune_matches_direct_moments_and_freezes_weights():
    spec = MlpSpec((3, 5, 4, 2), batch_norm=True)
    oracle = MlpOracle(spec)
    x = oracle.init_params(seed=0)
    ds = synth_blobs(64, 3, n_classes=2, seed=1)
    before = x.values.copy()

    # one full-dataset batch makes the direct computation exact
    stats = batchnorm_tune(oracle, x, ds, n_samples=64, batch_size=64, seed=0)
    assert (x.values == before).all()
    assert set(stats) == {0, 1}

    W0 = x.segment("layer0.weight").reshape(3, 5)
    b0 = x.segment("layer0.bias")
    g0 = x.segment("layer0.bn_scale")
    s0 = x.segment("layer0.bn_shift")
    a0 = ds.inputs @ W0 + b0
    np.testing.assert_allclose(stats[0][0], a0.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(stats[0][1], a0.var(axis=0), atol=1e-6)
    np.testing.assert_allclose(oracle.running_mean[0], a0.mean(axis=0), atol=1e-6)

    h1 = np.maximum(g0 * (a0 - a0.mean(0)) / np.sqrt(a0.var(0) + spec.bn_eps)
                    + s0, 0.0)
    W1 = x.segment("layer1.weight").reshape(5, 4)
    b1 = x.segment("layer1.bias")
    a1 = h1 @ W1 + b1
    np.testing.assert_allclose(stats[1][0], a1.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(stats[1][1], a1.var(axis=0), atol=1e-6)


def test_batchnorm_tune_without_bn_warns_and_returns_empty():
    oracle = MlpOracle(MlpSpec((3, 4, 2)))
    x = oracle.init_params()
    ds = synth_blobs(16, 3, seed=0)
    with pytest.warns(UserWarning):
        out = batchnorm_tune(oracle, x, ds)
    assert out == {}


def test_batchnorm_eval_mode_uses_tuned_running_stats():
    spec = MlpSpec((3, 4, 2), batch_norm=True)
    oracle = MlpOracle(spec)
    x = oracle.init_params(seed=3)
    ds = synth_blobs(48, 3, seed=4)
    batchnorm_tune(oracle, x, ds, n_samples=48, batch_size=48, seed=0)
    single = ds.inputs[:1]
    logits_eval = oracle.predict_logits(x, single, mode="eval")
    # training mode on a singleton batch normalizes it to zero: different output
    logits_train = oracle.predict_logits(x, single, mode="train")
    assert np.abs(logits_eval - logits_train).max() > 1e-8
