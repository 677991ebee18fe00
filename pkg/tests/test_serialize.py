import numpy as np
import pytest

from deskrl.rng import Rng
from deskrl.serialize import MAGIC, read_container, write_container


def test_round_trip_preserves_meta_and_arrays(tmp_path):
    meta = {"config": {"a": 1, "b": "text"}, "nested": [1, 2, 3]}
    arrays = {
        "w": Rng(0).normal(size=(3, 4, 5)),
        "b": np.zeros(7),
        "scalar": np.asarray([42.0]),
    }
    path = tmp_path / "c.bin"
    write_container(path, meta, arrays)
    meta2, arrays2 = read_container(path)
    assert meta2 == meta
    assert set(arrays2) == set(arrays)
    for k in arrays:
        np.testing.assert_array_equal(arrays2[k], arrays[k])
        assert arrays2[k].dtype == np.float64


def test_identical_state_produces_identical_bytes(tmp_path):
    meta = {"x": 1}
    arrays = {"a": Rng(3).normal(size=(8, 8))}
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    write_container(p1, meta, arrays)
    write_container(p2, {"x": 1}, {"a": arrays["a"].copy()})
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_prefix_and_bad_magic(tmp_path):
    path = tmp_path / "c.bin"
    write_container(path, {}, {})
    assert path.read_bytes()[:8] == MAGIC
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        read_container(bad)


def test_empty_arrays_round_trip(tmp_path):
    path = tmp_path / "c.bin"
    write_container(path, {"only": "meta"}, {})
    meta, arrays = read_container(path)
    assert meta == {"only": "meta"}
    assert arrays == {}
