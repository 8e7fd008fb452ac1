"""Binary parameter container: roundtrip, stability, and rejection."""

import struct

import numpy as np
import pytest

from permnet.checkpoint import (
    MAGIC,
    load_checkpoint,
    restore_parameters,
    save_checkpoint,
)
from permnet.hpn import HpnAgentNet
from permnet.learners import TrainConfig


def test_roundtrip_bitwise(tmp_path):
    net = HpnAgentNet(np.random.default_rng(0), 3, 3, hidden=8,
                      hyper_hidden=8)
    cfg = TrainConfig(seed=7, total_env_steps=1234)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net.named_parameters(), cfg)
    params, config = load_checkpoint(path)
    for name, tensor in net.named_parameters().items():
        assert np.array_equal(params[name], tensor.data)
        assert params[name].dtype == np.float64
    assert config["seed"] == 7
    assert config["total_env_steps"] == 1234


def test_save_is_byte_stable_and_order_free(tmp_path):
    arrays = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones(4)}
    reordered = {"a": np.ones(4), "b": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_checkpoint(p1, arrays, {"k": 1})
    save_checkpoint(p2, reordered, {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_restore_reproduces_network_output(tmp_path):
    src = HpnAgentNet(np.random.default_rng(1), 3, 3, hidden=8,
                      hyper_hidden=8)
    dst = HpnAgentNet(np.random.default_rng(2), 3, 3, hidden=8,
                      hyper_hidden=8)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, src.named_parameters(), None)
    params, _ = load_checkpoint(path)
    restore_parameters(dst.named_parameters(), params)
    rng = np.random.default_rng(3)
    from permnet.env import ENTITY_FEATURES, OWN_FEATURES, ObservationSet
    obs = ObservationSet(rng.normal(size=OWN_FEATURES),
                         rng.normal(size=(2, ENTITY_FEATURES)),
                         rng.normal(size=(3, ENTITY_FEATURES)))
    assert np.array_equal(src.forward(obs).data, dst.forward(obs).data)


def test_restore_rejects_mismatched_names(tmp_path):
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, {"w": np.zeros(3)}, None)
    params, _ = load_checkpoint(path)
    net = HpnAgentNet(np.random.default_rng(4), 3, 3, hidden=8,
                      hyper_hidden=8)
    with pytest.raises(ValueError, match="names do not match"):
        restore_parameters(net.named_parameters(), params)


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_rejects_unknown_version(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 99) + struct.pack("<I", 2)
                     + b"{}" + struct.pack("<I", 0))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path):
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, {"w": np.arange(10.0)}, {"k": 1})
    raw = good.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(bad)
