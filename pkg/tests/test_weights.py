import struct

import numpy as np
import pytest

from camforge.errors import (
    DimensionMismatchError,
    FormatError,
    MagicMismatchError,
    MissingTensorError,
    UnknownTensorError,
)
from camforge.model import build_model, load_weights, read_tensor_records, save_weights, write_tensor_records
from camforge.model.weights import model_state


@pytest.fixture
def saved(tmp_path):
    model = build_model("tiny", seed=3)
    # make the running statistics non-trivial so they are exercised too
    for _, buf in model.named_buffers():
        buf += np.random.default_rng(0).uniform(0.1, 1.0, buf.shape).astype(buf.dtype)
    path = tmp_path / "w.camw"
    save_weights(model, path)
    return model, path


def test_round_trip_bit_exact(saved):
    model, path = saved
    loaded = load_weights(path, "tiny")
    a, b = model_state(model), model_state(loaded)
    assert list(a) == list(b)
    for name in a:
        assert a[name].tobytes() == b[name].tobytes(), name


def test_round_trip_campp(tmp_path):
    model = build_model("campp", seed=1)
    save_weights(model, tmp_path / "c.camw")
    loaded = load_weights(tmp_path / "c.camw", "campp")
    for (_, p), (_, q) in zip(model.named_parameters(), loaded.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def test_records_preserve_order_and_shape(tmp_path):
    recs = {"b": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.float32(1.5) * np.ones(())}
    write_tensor_records(tmp_path / "r", recs)
    out = read_tensor_records(tmp_path / "r")
    assert list(out) == ["b", "a"]
    np.testing.assert_array_equal(out["b"], recs["b"])
    assert out["a"].shape == ()


def test_truncated(saved):
    _, path = saved
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_weights(path, "tiny")


def test_magic(saved):
    _, path = saved
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(MagicMismatchError):
        load_weights(path, "tiny")


def test_unknown_tensor_named(saved):
    _, path = saved
    extra = "bogus.weight".encode()
    rec = struct.pack("<I", len(extra)) + extra + struct.pack("<II", 1, 2) + np.zeros(2, "<f4").tobytes()
    path.write_bytes(path.read_bytes() + rec)
    with pytest.raises(UnknownTensorError, match="bogus.weight"):
        load_weights(path, "tiny")


def test_missing_tensor(saved, tmp_path):
    model, _ = saved
    state = model_state(model)
    state.popitem()
    write_tensor_records(tmp_path / "m", state)
    with pytest.raises(MissingTensorError):
        load_weights(tmp_path / "m", "tiny")


def test_dimension_mismatch(saved, tmp_path):
    model, _ = saved
    state = model_state(model)
    name = next(iter(state))
    state[name] = np.zeros(state[name].shape + (1,), np.float32)
    write_tensor_records(tmp_path / "d", state)
    with pytest.raises(DimensionMismatchError, match=name):
        load_weights(tmp_path / "d", "tiny")


def test_wrong_preset_is_an_error(saved):
    _, path = saved
    with pytest.raises(FormatError):
        load_weights(path, "campp")
