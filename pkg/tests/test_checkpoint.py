import struct

import numpy as np
import pytest

from avtrack.checkpoint import (
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from avtrack.encoder import EncoderConfig, TargetState
from avtrack.geometry import BBox
from avtrack.model import ModelConfig, TrackerNet
from avtrack.tensor import Tensor


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    items = [("a.w", rng.normal(size=(3, 4))),
             ("b.bias", rng.normal(size=7)),
             ("scalar", np.array(2.5)),
             ("deep", rng.normal(size=(2, 3, 4, 5)))]
    path = tmp_path / "p.avmp"
    save_checkpoint(path, items)
    back = load_checkpoint(path)
    assert list(back) == [n for n, _ in items]
    for name, arr in items:
        assert np.array_equal(back[name], arr)


def test_header_layout(tmp_path):
    path = tmp_path / "p.avmp"
    save_checkpoint(path, [("x", np.zeros((2, 2)))])
    blob = path.read_bytes()
    assert blob[:4] == MAGIC == b"AVMP"
    version, count = struct.unpack_from("<II", blob, 4)
    assert (version, count) == (1, 1)
    (nlen,) = struct.unpack_from("<H", blob, 12)
    assert blob[14:14 + nlen] == b"x"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "p.avmp"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "p.avmp"
    path.write_bytes(MAGIC + struct.pack("<II", 9, 0))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "p.avmp"
    save_checkpoint(path, [("x", np.zeros(2))])
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def _tiny_net(seed=0):
    cfg = ModelConfig(encoder=EncoderConfig(frame_side=8, patch=4, channels=8,
                                            layers=1, train_frames=1, heads=2,
                                            ffn_ratio=1),
                      decoder_depth=1)
    return TrackerNet(cfg, seed=seed)


def test_net_state_roundtrip_reproduces_forward(tmp_path):
    rng = np.random.default_rng(1)
    net = _tiny_net(seed=3)
    enc = net.config.encoder
    frames = [Tensor(rng.uniform(size=(8, 8, 3))) for _ in range(2)]
    states = [TargetState.for_box(BBox(1, 1, 5, 5), enc),
              TargetState.test_frame(enc)]
    cls_a, ltrb_a = net.forward_maps(frames, states)

    path = tmp_path / "net.avmp"
    save_checkpoint(path, net.state_items())
    other = _tiny_net(seed=99)  # different init
    other.load_state(load_checkpoint(path))
    cls_b, ltrb_b = other.forward_maps(frames, states)
    assert np.array_equal(cls_a.data, cls_b.data)
    assert np.array_equal(ltrb_a.data, ltrb_b.data)


def test_load_state_rejects_mismatch(tmp_path):
    net = _tiny_net()
    items = dict(net.state_items())
    items.pop("decoder.e0")
    with pytest.raises(ValueError, match="missing"):
        net.load_state(items)
