import struct

import numpy as np
import pytest

from synthbody import container
from synthbody.container import ContainerError


def test_round_trip_preserves_float32_ints_and_flags():
    arrays = {
        "a": np.arange(12, dtype=np.float32).reshape(3, 4) / 7,
        "idx": np.array([[0, 1, 2], [2, 3, 0]], dtype=np.int64),
        "flag": np.array([True, False, True]),
    }
    meta, out = container.loads(container.dumps({"kind": "test", "x": 1}, arrays))
    assert meta == {"kind": "test", "x": 1}
    assert out["a"].dtype == np.float32 and np.array_equal(out["a"], arrays["a"])
    assert out["idx"].dtype == np.int32 and np.array_equal(out["idx"], arrays["idx"])
    assert out["flag"].dtype == np.uint8 and out["flag"].tolist() == [1, 0, 1]


def test_float64_payload_option_is_exact():
    x = np.random.default_rng(0).normal(size=(5, 3))
    _, out = container.loads(container.dumps({}, {"x": x}, float_dtype="<f8"))
    assert np.array_equal(out["x"], x)


def test_bytes_are_deterministic():
    arrays = {"b": np.ones(3), "a": np.zeros(2)}
    assert container.dumps({"z": 1, "a": 2}, arrays) == container.dumps({"a": 2, "z": 1}, arrays)


def test_header_layout():
    data = container.dumps({"k": "v"}, {"x": np.zeros(2, dtype=np.float32)})
    assert data[:4] == b"SBM1"
    (n,) = struct.unpack("<I", data[4:8])
    assert len(data) == 8 + n + 8


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: b"XXXX" + d[4:], "magic"),
        (lambda d: d[:10], "truncated"),
        (lambda d: d[:-4], "truncated"),
    ],
)
def test_corrupt_inputs_are_rejected(mutate, message):
    data = container.dumps({}, {"x": np.zeros(4, dtype=np.float32)})
    with pytest.raises(ContainerError, match=message):
        container.loads(mutate(data))


def test_reserved_key_and_bad_dtype():
    with pytest.raises(ContainerError):
        container.dumps({"arrays": 1}, {})
    with pytest.raises(ContainerError):
        container.dumps({}, {"c": np.zeros(2, dtype=complex)})
