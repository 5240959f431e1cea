import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dancer import checkpoint as ckpt
from dancer.config import Config, ConfigError


def sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "a/weight": rng.normal(size=(3, 3, 2, 4)).astype(np.float32),
        "scalar": np.float32(2.5).reshape(()),
        "empty": np.zeros((0, 3), np.float32),
        "ünï": np.array([np.inf, -0.0, np.nan], np.float32),
    }


def test_roundtrip_is_bitwise(tmp_path):
    t = sample_tensors()
    ckpt.write_container(tmp_path / "x.dncr", t, meta={"config": {"lr": 1e-5}})
    back, meta = ckpt.read_container(tmp_path / "x.dncr")
    assert list(back) == list(t)
    for k in t:
        assert back[k].shape == t[k].shape
        assert back[k].tobytes() == np.asarray(t[k]).tobytes()
    assert meta == {"config": {"lr": 1e-5}}


def test_header_layout():
    data = ckpt.encode_container({"w": np.ones((2, 3), np.float32)})
    assert data[:4] == b"DNCR"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[8:12], "little") == 1
    assert int.from_bytes(data[12:14], "little") == 1 and data[14:15] == b"w"
    assert data[15] == 0 and data[16] == 2
    assert len(data) == 12 + 2 + 1 + 2 + 8 + 24 + 4


def test_every_single_byte_corruption_detected():
    data = bytearray(ckpt.encode_container(sample_tensors()))
    for i in range(0, len(data), 7):
        bad = bytearray(data)
        bad[i] ^= 0x40
        with pytest.raises(ckpt.ContainerError):
            ckpt.decode_container(bytes(bad))


def test_truncation_detected():
    data = ckpt.encode_container(sample_tensors())
    with pytest.raises(ckpt.ContainerError):
        ckpt.decode_container(data[:-9])


def test_only_float32_written():
    with pytest.raises(TypeError):
        ckpt.encode_container({"x": np.zeros(3, np.float64)})


def test_atomic_write_leaves_no_temp(tmp_path):
    ckpt.write_container(tmp_path / "a.dncr", {"x": np.zeros(2, np.float32)})
    ckpt.write_container(tmp_path / "a.dncr", {"x": np.ones(2, np.float32)})
    assert [p.name for p in tmp_path.iterdir()] == ["a.dncr"]
    assert ckpt.read_container(tmp_path / "a.dncr")[0]["x"].tolist() == [1.0, 1.0]


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5)), st.text(min_size=1, max_size=20))
def test_roundtrip_property(arr, name):
    back = ckpt.decode_container(ckpt.encode_container({name: arr}))
    assert back[name].tobytes() == arr.tobytes() and back[name].shape == arr.shape


def test_config_defaults_and_validation(tmp_path):
    c = Config.load(None)
    assert c.lr == 1e-5 and c.batch_size == 1 and c.sampling_steps == 25 and c.sigma_cond == 0.1
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_frames": 4, "num_clips": 3}))
    assert Config.load(p).n_frames == 4
    for bad in ({"latent_size": 4}, {"smoothing_window": 2}, {"stage": "x"}, {"bogus": 1}, {"sampling_steps": 5000}):
        p.write_text(json.dumps(bad))
        with pytest.raises(ConfigError):
            Config.load(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        Config.load(p)


def test_config_json_roundtrip():
    c = Config(num_clips=2, frames_per_clip=[4, 9])
    assert Config.from_dict(json.loads(c.to_json())) == c.validate()
