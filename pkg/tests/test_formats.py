import struct

import numpy as np
import pytest

from podkv import formats
from podkv.errors import FormatError
from podkv.formats import RunManifest
from podkv.model import ModelConfig, init_model


def test_tensor_layout():
    data = formats.encode_tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert data[:4] == b"PODT"
    assert struct.unpack_from("<II", data, 4) == (1, 2)
    assert struct.unpack_from("<QQ", data, 12) == (2, 3)
    assert len(data) == 12 + 16 + 4 * 6
    np.testing.assert_array_equal(np.frombuffer(data[28:], "<f4"), np.arange(6))


@pytest.mark.parametrize("shape", [(), (5,), (2, 3, 4), (1, 2, 3, 4)])
def test_tensor_roundtrip(shape, rng):
    a = rng.normal(size=shape).astype(np.float32).astype(np.float64)
    np.testing.assert_array_equal(formats.decode_tensor(formats.encode_tensor(a)), a)


def test_bad_magic():
    data = b"XXXX" + formats.encode_tensor(np.ones(2))[4:]
    with pytest.raises(FormatError, match="offset 0"):
        formats.decode_tensor(data)


def test_truncated_payload_names_counts():
    data = formats.encode_tensor(np.ones((2, 2)))[:-3]
    with pytest.raises(FormatError, match="payload has 13 bytes, expected 16"):
        formats.decode_tensor(data)


def test_bad_version():
    data = bytearray(formats.encode_tensor(np.ones(1)))
    data[4] = 2
    with pytest.raises(FormatError, match="offset 4"):
        formats.decode_tensor(bytes(data))


def test_tokens_roundtrip():
    samples = [np.array([1, 2, 10, 0]), np.array([255]), np.array([], dtype=np.int64)]
    back = formats.decode_tokens(formats.encode_tokens(samples))
    assert [s.tolist() for s in back] == [s.tolist() for s in samples]


def test_tokens_truncated():
    with pytest.raises(FormatError):
        formats.decode_tokens(formats.encode_tokens([np.arange(5)])[:-1])


def test_model_roundtrip_is_exact(tmp_path):
    w = init_model(ModelConfig.create(num_layers=2, num_heads=2, head_dim=4, vocab_size=17, seed=4))
    formats.save_model(tmp_path, w)
    back = formats.load_model(tmp_path)
    assert back.config == w.config
    for name, arr in w.named_tensors().items():
        assert back.named_tensors()[name].tobytes() == arr.tobytes()


def test_manifest_roundtrip_and_merge():
    m = RunManifest(model_sha256="abc", corpus_seed=1, q=16, delta=0.5, n_s=4, n_r=32, tau=None, output_dir="x")
    assert RunManifest.from_dict(m.to_dict()) == m
    assert RunManifest.from_dict(m.to_dict()).digest() == m.digest()
    assert m.merge(RunManifest(model_sha256="abc", output_dir="y")).output_dir == "x"
    with pytest.raises(FormatError, match="different runs"):
        m.merge(RunManifest(model_sha256="def"))


def test_stamped_hash_checked(tmp_path):
    m = RunManifest(q=3)
    doc = formats.stamp({"a": 1}, m)
    doc["manifest"]["q"] = 4
    formats.write_json(tmp_path / "x.json", doc)
    with pytest.raises(FormatError, match="hash"):
        formats.read_stamped(tmp_path / "x.json")
