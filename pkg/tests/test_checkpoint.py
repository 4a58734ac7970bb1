import numpy as np
import pytest

from graphfolio import checkpoint


def test_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"b.w": rng.normal(size=(3, 2, 4)), "a": np.array([1e-300, -0.0, 1 / 3]), "s": np.array(2.5)}
    path = checkpoint.save(tmp_path / "sub" / "c.txt", arrays, {"seed": "4", "assets": "X,Y"})
    back, meta = checkpoint.load(path)
    assert meta == {"seed": "4", "assets": "X,Y"}
    assert back.keys() == arrays.keys()
    for k in arrays:
        assert back[k].shape == np.shape(arrays[k]) and np.array_equal(back[k], arrays[k])


def test_saves_are_byte_identical_and_key_order_free(tmp_path):
    a = {"x": np.arange(3.0), "y": np.ones((2, 2))}
    b = {"y": np.ones((2, 2)), "x": np.arange(3.0)}
    checkpoint.save(tmp_path / "1", a, {"k": "v"})
    checkpoint.save(tmp_path / "2", b, {"k": "v"})
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_bad_files_rejected(tmp_path):
    with pytest.raises(checkpoint.CheckpointError, match="no such"):
        checkpoint.load(tmp_path / "missing")
    (tmp_path / "junk").write_text("hello\n")
    with pytest.raises(checkpoint.CheckpointError, match="not a checkpoint"):
        checkpoint.load(tmp_path / "junk")
    (tmp_path / "v9").write_text("graphfolio-checkpoint 9\n")
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.load(tmp_path / "v9")
    (tmp_path / "short").write_text("graphfolio-checkpoint 1\narray w 2,2\n1.0 2.0 3.0\n")
    with pytest.raises(checkpoint.CheckpointError, match="3 values"):
        checkpoint.load(tmp_path / "short")


def test_whitespace_names_rejected(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.save(tmp_path / "c", {"bad name": np.ones(1)})
