import struct

import numpy as np
import pytest

from sprkit import dataio


@pytest.mark.parametrize("kind", ["blobs", "moons", "rings", "tiny-images"])
def test_generators_are_deterministic(kind):
    a = dataio.gen_synthetic(kind, 50, 2, 0.2, seed=4)
    b = dataio.gen_synthetic(kind, 50, 2, 0.2, seed=4)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    c = dataio.gen_synthetic(kind, 50, 2, 0.2, seed=5)
    assert a.inputs.tobytes() != c.inputs.tobytes()


@pytest.mark.parametrize("n,classes", [(10, 3), (101, 4), (64, 8)])
def test_class_histogram_is_balanced(n, classes):
    ds = dataio.gen_synthetic("tiny-images", n, classes, 0.1, seed=0)
    counts = np.bincount(ds.labels, minlength=classes)
    assert counts.max() - counts.min() <= 1


def test_noise_free_blobs_are_linearly_separable():
    ds = dataio.gen_synthetic("blobs", 200, 5, 0.0, seed=1)
    # linear scores c_k . x - |c_k|^2 / 2 from the class means
    means = np.stack([ds.inputs[ds.labels == k].mean(axis=0) for k in range(5)])
    scores = ds.inputs @ means.T - 0.5 * np.sum(means**2, axis=1)
    assert np.mean(scores.argmax(axis=1) == ds.labels) == 1.0


def test_tiny_images_shape_and_planted_pattern():
    ds = dataio.gen_synthetic("tiny-images", 40, 4, 0.0, seed=2, channels=3, size=8)
    assert ds.inputs.shape == (40, 3, 8, 8)
    # with zero noise every image holds exactly one coloured 3x3 pattern
    nz = (ds.inputs != 0).any(axis=1)
    rows, cols = np.nonzero(nz[0])
    assert rows.max() - rows.min() <= 2 and cols.max() - cols.min() <= 2


def test_invalid_generator_arguments():
    with pytest.raises(dataio.DataError):
        dataio.gen_synthetic("blobs", 1, 2)
    with pytest.raises(dataio.DataError):
        dataio.gen_synthetic("spirals", 10, 2)
    with pytest.raises(dataio.DataError):
        dataio.gen_synthetic("moons", 10, 3)
    with pytest.raises(dataio.DataError):
        dataio.gen_synthetic("blobs", 10, 2, noise=-1)


def test_train_test_split_is_disjoint():
    train, test = dataio.train_test("blobs", 30, 20, 3, 0.5, seed=0)
    assert len(train) == 30 and len(test) == 20
    a = {row.tobytes() for row in train.inputs}
    assert not any(row.tobytes() in a for row in test.inputs)
    assert (train.split, test.split) == ("train", "test")


def _idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


def test_idx_fixture_read_and_byte_round_trip(tmp_path):
    pixels = list(range(4 * 2 * 3))
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(_idx_bytes(0x803, (4, 2, 3), pixels))
    lab.write_bytes(_idx_bytes(0x801, (4,), [0, 2, 1, 2]))
    ds = dataio.load_idx(img, lab)
    assert ds.inputs.shape == (4, 1, 2, 3)
    assert ds.n_classes == 3
    assert ds.inputs[1, 0, 0, 0] == pytest.approx(6 / 255)
    imgs, labs = dataio.idx_arrays(ds)
    dataio.write_idx(tmp_path / "img2.idx", imgs)
    dataio.write_idx(tmp_path / "lab2.idx", labs)
    assert (tmp_path / "img2.idx").read_bytes() == img.read_bytes()
    assert (tmp_path / "lab2.idx").read_bytes() == lab.read_bytes()


def test_idx_errors(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(_idx_bytes(0x803, (2, 2, 2), range(8)))
    lab.write_bytes(_idx_bytes(0x803, (2,), [0, 1]))
    with pytest.raises(dataio.DataError, match="bad magic"):
        dataio.load_idx(img, lab)
    lab.write_bytes(_idx_bytes(0x801, (3,), [0, 1, 1]))
    with pytest.raises(dataio.DataError, match="mismatch"):
        dataio.load_idx(img, lab)
    img.write_bytes(_idx_bytes(0x803, (2, 2, 2), range(7)))
    with pytest.raises(dataio.DataError, match="truncated"):
        dataio.load_idx(img, lab)
    with pytest.raises(dataio.DataError):
        dataio.write_idx(tmp_path / "x", np.zeros((2, 2), dtype=np.uint8))


def test_normalize_uses_train_statistics():
    train, test = dataio.train_test("tiny-images", 64, 32, 2, 0.5, seed=0)
    ntrain, stats = dataio.normalize(train)
    np.testing.assert_allclose(ntrain.inputs.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    ntest = dataio.apply_stats(test, stats)
    assert ntest.stats is stats
    expect = (test.inputs - stats.mean[None, :, None, None]) / stats.std[None, :, None, None]
    np.testing.assert_array_equal(ntest.inputs, expect)


def test_constant_channel_is_floored():
    x = np.ones((5, 2, 3, 3))
    x[:, 1] = np.arange(5)[:, None, None]
    ds = dataio.Dataset(x, np.zeros(5, dtype=int), 1)
    out, stats = dataio.normalize(ds)
    assert stats.std[0] == 1e-8
    assert np.all(out.inputs[:, 0] == 0)


def test_augment_none_is_identity_and_flip_is_involution(rng):
    x = rng.standard_normal((3, 2, 5, 5))
    assert dataio.augment(x, "none") is x
    once = dataio.augment(x, pad=0, force_flip=True)
    np.testing.assert_array_equal(once, x[..., ::-1])
    np.testing.assert_array_equal(dataio.augment(once, pad=0, force_flip=True), x)


@pytest.mark.parametrize("pad", [0, 1, 2, 4])
def test_augment_keeps_shape_and_is_keyed(rng, pad):
    x = rng.standard_normal((6, 3, 5, 5))
    a = dataio.augment(x, pad=pad, seed=1, epoch=2, batch_index=3)
    b = dataio.augment(x, pad=pad, seed=1, epoch=2, batch_index=3)
    assert a.shape == x.shape
    np.testing.assert_array_equal(a, b)


def test_augment_crop_content_comes_from_zero_padded_image():
    x = np.ones((1, 1, 4, 4))
    out = dataio.augment(x, pad=1, seed=0, force_flip=False)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert out.sum() >= 9  # a 1-pixel shift keeps at least a 3x3 block


def test_augment_errors(rng):
    with pytest.raises(dataio.DataError):
        dataio.augment(rng.standard_normal((2, 1, 4, 4)), pad=4)
    with pytest.raises(dataio.DataError):
        dataio.augment(rng.standard_normal((2, 4)))
    with pytest.raises(dataio.DataError):
        dataio.augment(rng.standard_normal((2, 1, 4, 4)), policy="cutout")


def test_sprd_round_trip(tmp_path):
    ds = dataio.gen_synthetic("tiny-images", 12, 3, 0.1, seed=0)
    path = tmp_path / "d.sprd"
    dataio.dump_dataset(path, ds)
    back = dataio.load_dataset(path)
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.n_classes == 3
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(dataio.DataError):
        dataio.load_dataset(path)


def test_dataset_invariants():
    with pytest.raises(dataio.DataError):
        dataio.Dataset(np.zeros((2, 3)), np.array([0, 5]), 2)
    with pytest.raises(dataio.DataError):
        dataio.Dataset(np.zeros((2, 3)), np.array([0]), 2)
