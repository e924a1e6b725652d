import numpy as np
import pytest

from ppseg import checkpoint
from ppseg.checkpoint import CheckpointError
from ppseg.model import build_model_spec, init_params


@pytest.fixture
def saved(tmp_path, tiny_config):
    m = build_model_spec(tiny_config)
    params = init_params(m)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, params, m.nets(), m.flat)
    return path, m, params


def test_round_trip_is_exact(saved):
    path, m, params = saved
    loaded, nets, cfg = checkpoint.load(path)
    assert cfg == m.flat
    assert set(nets) == set(m.nets())
    for net in params:
        for leaf in params[net]:
            assert loaded[net][leaf].data.tobytes() == params[net][leaf].data.tobytes()


def test_bad_magic(saved):
    path = saved[0]
    path.write_bytes(b"XXXXXX" + path.read_bytes()[6:])
    with pytest.raises(CheckpointError):
        checkpoint.load(path)


def test_truncated_payload(saved):
    path = saved[0]
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint.load(path)


def test_trailing_bytes(saved):
    path = saved[0]
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.load(path)


def test_corrupt_header(saved):
    path = saved[0]
    buf = bytearray(path.read_bytes())
    buf[10] = 0xFF
    path.write_bytes(bytes(buf))
    with pytest.raises(CheckpointError):
        checkpoint.load(path)


def test_payload_is_little_endian_float64(saved):
    path, _, params = saved
    buf = path.read_bytes()
    # tensors are stored in sorted (net, leaf) order, so the payload ends with the last one
    net = sorted(params)[-1]
    last = params[net][sorted(params[net])[-1]].data
    np.testing.assert_array_equal(np.frombuffer(buf[-8 * last.size :], dtype="<f8"), last.ravel())
