import json

import numpy as np
import pytest

from errors import IngestionError
from tensor_io import TensorDump, read_tensor, sidecar_path_for, write_tensor


def test_write_produces_float32_and_sidecar(tmp_path):
    path = tmp_path / "q.bin"
    write_tensor(path, np.arange(6.0).reshape(2, 3), dim_order=["token", "channel"])
    assert path.stat().st_size == 6 * 4
    meta = json.loads(sidecar_path_for(path).read_text())
    assert meta["shape"] == [2, 3]
    assert meta["dim_order"] == ["token", "channel"]
    assert meta["pair_layout"] == "interleaved"
    assert meta["dtype"] == "float32"


def test_read_promotes_to_float64(tmp_path):
    path = tmp_path / "k.bin"
    values = np.array([[0.5, -1.25], [3.0, 8.0]])
    write_tensor(path, values)
    out = read_tensor(path)
    assert out.dtype == np.float64
    np.testing.assert_array_equal(out, values)


def test_sidecar_accepts_camel_case(tmp_path):
    path = tmp_path / "w.bin"
    path.write_bytes(np.zeros(4, dtype="<f4").tobytes())
    sidecar_path_for(path).write_text(json.dumps({"shape": [2, 2], "dimOrder": ["a", "b"], "pairLayout": "interleaved"}))
    dump = TensorDump.from_file(path)
    assert dump.sidecar.dim_order == ["a", "b"]


def test_explicit_sidecar_path(tmp_path):
    path = tmp_path / "raw.bin"
    side = tmp_path / "meta.json"
    path.write_bytes(np.ones(3, dtype="<f4").tobytes())
    side.write_text(json.dumps({"shape": [3]}))
    np.testing.assert_array_equal(read_tensor(path, side), np.ones(3))


def test_byte_count_mismatch(tmp_path):
    path = tmp_path / "q.bin"
    write_tensor(path, np.ones((2, 2)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(IngestionError, match="byte count mismatch"):
        read_tensor(path)


def test_missing_sidecar(tmp_path):
    path = tmp_path / "q.bin"
    path.write_bytes(b"\x00" * 8)
    with pytest.raises(IngestionError, match="sidecar not found"):
        read_tensor(path)


def test_missing_tensor(tmp_path):
    path = tmp_path / "q.bin"
    sidecar_path_for(path).write_text(json.dumps({"shape": [2]}))
    with pytest.raises(IngestionError, match="tensor file not found"):
        read_tensor(path)


@pytest.mark.parametrize(
    "meta",
    [
        {"shape": []},
        {"shape": [2, 0]},
        {"shape": [2], "dtype": "float16"},
        {"shape": [2], "pair_layout": "halves"},
        {"shape": [2, 2], "dim_order": ["token"]},
    ],
)
def test_invalid_sidecar(tmp_path, meta):
    path = tmp_path / "q.bin"
    path.write_bytes(b"\x00" * 16)
    sidecar_path_for(path).write_text(json.dumps(meta))
    with pytest.raises(IngestionError, match="invalid sidecar"):
        read_tensor(path)


def test_sidecar_not_json(tmp_path):
    path = tmp_path / "q.bin"
    path.write_bytes(b"\x00" * 4)
    sidecar_path_for(path).write_text("{shape: [1]")
    with pytest.raises(IngestionError, match="not valid JSON"):
        read_tensor(path)
