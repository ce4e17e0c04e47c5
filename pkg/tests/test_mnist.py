import gzip
import struct

import numpy as np
import pytest

from scgrad import mnist
from scgrad.mnist import IdxFormatError

DATA = "tests/data/mnist1k"


def header(count, rows=28, cols=28, magic=mnist.IMAGES_MAGIC):
    return struct.pack(">IIII", magic, count, rows, cols)


def test_full_size_header_is_read_lazily(tmp_path):
    p = tmp_path / "train-images-idx3-ubyte"
    # header for 60000 images but only two images of pixel data
    p.write_bytes(header(60000) + bytes(range(256)) * 6 + bytes(1568 - 1536))
    img = mnist.read_image_header(p)
    assert (img.count, img.rows, img.cols) == (60000, 28, 28)
    first = next(img.batches(2))
    assert first.shape == (2, 784)
    assert first[0, 255] == 1.0 and first[0, 0] == 0.0
    with pytest.raises(IdxFormatError) as e:
        list(img.batches(3, limit=3))
    assert e.value.offset == 16 + 1568


def test_fixture_loads():
    m = mnist.load_mnist_idx(*mnist.find_files(DATA))
    x, y = m.load()
    assert x.shape == (m.count, 784) and m.count == 1000
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert np.bincount(y, minlength=10).tolist() == [100] * 10
    assert np.array_equal(np.concatenate(list(m.batches(300))), x)


def test_bad_magic_reports_position(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(header(1, magic=0x00000801) + bytes(784))
    with pytest.raises(IdxFormatError) as e:
        mnist.read_image_header(p)
    assert e.value.offset == 0 and "magic" in str(e.value) and "byte 0" in str(e.value)


def test_truncated_header(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(header(1)[:10])
    with pytest.raises(IdxFormatError) as e:
        mnist.read_image_header(p)
    assert e.value.offset == 10


def test_wrong_image_size(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(header(1, 32, 32) + bytes(1024))
    with pytest.raises(IdxFormatError, match="32x32"):
        mnist.read_image_header(p)
    assert mnist.read_image_header(p, expected=(32, 32)).pixels == 1024


def test_plain_and_gzip_agree(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (7, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 7, dtype=np.uint8)
    plain, gz = tmp_path / "plain", tmp_path / "gz"
    plain.mkdir()
    gz.mkdir()
    mnist.write_idx(plain / mnist.TRAIN_IMAGES, imgs)
    mnist.write_idx(plain / mnist.TRAIN_LABELS, labels)
    mnist.write_idx(gz / (mnist.TRAIN_IMAGES + ".gz"), imgs)
    mnist.write_idx(gz / (mnist.TRAIN_LABELS + ".gz"), labels)
    with gzip.open(gz / (mnist.TRAIN_IMAGES + ".gz")) as f:
        assert f.read() == (plain / mnist.TRAIN_IMAGES).read_bytes()
    a = mnist.load_mnist_idx(*mnist.find_files(plain)).load()
    b = mnist.load_mnist_idx(*mnist.find_files(gz)).load()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.array_equal(a[0], imgs.reshape(7, 784) / 255.0)
    assert np.array_equal(a[1], labels)


def test_label_count_mismatch(tmp_path):
    mnist.write_idx(tmp_path / mnist.TRAIN_IMAGES, np.zeros((3, 28, 28)))
    mnist.write_idx(tmp_path / mnist.TRAIN_LABELS, np.zeros(2))
    with pytest.raises(IdxFormatError, match="2 labels for 3 images"):
        mnist.load_mnist_idx(*mnist.find_files(tmp_path))


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        mnist.find_files(tmp_path)


def test_limit_and_batch_validation():
    m = mnist.load_mnist_idx(*mnist.find_files(DATA))
    assert m.load(5)[0].shape == (5, 784)
    with pytest.raises(ValueError):
        next(m.batches(0))
