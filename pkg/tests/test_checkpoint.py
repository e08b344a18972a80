import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from popsan import checkpoint
from popsan.errors import CheckpointError
from popsan.network import init_popsan


def test_actor_round_trip_bit_exact(tmp_path):
    tensors = init_popsan(4, 2, hidden_sizes=(16, 8), seed=3).tensors()
    path = tmp_path / "actor.psan"
    checkpoint.save(path, tensors)
    loaded = checkpoint.load(path)
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        assert loaded[name].tobytes() == np.asarray(value, dtype=np.float64).tobytes()
    assert not (tmp_path / "actor.psan.tmp").exists()


def test_layout():
    data = checkpoint.dumps({"ab": np.array([[1.5, -2.0]])})
    assert data[:4] == b"PSAN"
    assert struct.unpack_from("<III", data, 4) == (1, 1, 2)
    assert data[16:18] == b"ab"
    assert struct.unpack_from("<IQQ", data, 18) == (2, 1, 2)
    assert struct.unpack_from("<2d", data, 38) == (1.5, -2.0)
    assert len(data) == 54


def test_scalar_and_empty_tensors():
    loaded = checkpoint.loads(checkpoint.dumps({"s": np.array(2.5), "e": np.zeros((0, 3))}))
    assert loaded["s"].shape == () and loaded["s"] == 2.5
    assert loaded["e"].shape == (0, 3)


def test_bad_magic():
    data = bytearray(checkpoint.dumps({"a": np.ones(2)}))
    data[:4] = b"NOPE"
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.loads(bytes(data))


def test_version_mismatch_names_both_versions():
    data = checkpoint.dumps({"a": np.ones(2)}, version=7)
    with pytest.raises(CheckpointError, match=r"version 7.*version 1"):
        checkpoint.loads(data)


def test_truncated():
    data = checkpoint.dumps({"a": np.ones(4)})
    for cut in (6, 14, len(data) - 3):
        with pytest.raises(CheckpointError):
            checkpoint.loads(data[:cut])


def test_trailing_bytes():
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.loads(checkpoint.dumps({"a": np.ones(1)}) + b"\0")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "absent.psan")


names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)
arrays = hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4))


@settings(max_examples=80, deadline=None)
@given(st.dictionaries(names, arrays, max_size=5))
def test_round_trip_property(tensors):
    loaded = checkpoint.loads(checkpoint.dumps(tensors))
    assert list(loaded) == list(tensors)
    for name, value in tensors.items():
        assert loaded[name].shape == value.shape
        assert loaded[name].tobytes() == value.tobytes()  # NaN payloads included
