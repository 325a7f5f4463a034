"""Checkpoint serialization: text preamble + length-prefixed float32 arrays."""

import numpy as np
import pytest

from seqrefine.checkpoint import (CheckpointFormatError, load_checkpoint,
                                  save_checkpoint)
from seqrefine.denoiser import DenoiserModel


def small_model(seed=0):
    return DenoiserModel(n_regions=3, dim=2, hidden=16, layers=2, seed=seed)


def test_roundtrip_is_bit_exact(tmp_path):
    model = small_model(seed=1)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_loaded_model_reproduces_predictions(tmp_path):
    model = small_model(seed=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    again = load_checkpoint(path)

    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2))
    t = rng.uniform(size=3)
    np.testing.assert_array_equal(loaded.predict(x, t), again.predict(x, t))
    # float32 storage quantizes float64 weights; predictions stay close
    np.testing.assert_allclose(loaded.predict(x, t), model.predict(x, t), atol=1e-5)


def test_metadata_restored(tmp_path):
    model = DenoiserModel(n_regions=5, dim=4, hidden=32, layers=3, seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert (loaded.n_regions, loaded.dim, loaded.hidden, loaded.layers, loaded.seed) \
        == (5, 4, 32, 3, 9)
    assert loaded.parameter_count == model.parameter_count
    for p in loaded.get_params():
        assert p.dtype == np.float64


def test_preamble_is_text(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    head, _, _ = raw.partition(b"\n\n")
    keys = [line.split()[0] for line in head.decode("ascii").splitlines()]
    assert keys == ["version", "n", "d", "h", "l", "seed"]


def test_truncated_file_rejected(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    head, sep, body = raw.partition(b"\n\n")
    head = head.replace(b"version 1", b"version 99")
    path.write_bytes(head + sep + body)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_missing_key_rejected(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    head, sep, body = raw.partition(b"\n\n")
    lines = [l for l in head.split(b"\n") if not l.startswith(b"h ")]
    path.write_bytes(b"\n".join(lines) + sep + body)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.ckpt")
