import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pseudovc.checkpoint import (
    MAGIC,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


def sample():
    rng = np.random.default_rng(0)
    return {"kind": "psg", "seed": 3, "lr": 1e-3}, {"a.w": rng.standard_normal((3, 4)).astype(np.float32),
                                                     "a.b": np.zeros(4, np.float32),
                                                     "s": np.array(2.5, np.float32)}


def test_layout_header():
    meta, tensors = sample()
    buf = encode_checkpoint(meta, tensors)
    assert buf[:4] == MAGIC == b"DIDV"
    version, meta_len = struct.unpack_from("<II", buf, 4)
    assert version == 1
    assert buf[12:12 + meta_len].decode() == '{"kind":"psg","lr":0.001,"seed":3}'


def test_round_trip_and_resave_identical(tmp_path):
    meta, tensors = sample()
    p1 = save_checkpoint(tmp_path / "a.ckpt", meta, tensors)
    ck = load_checkpoint(p1, kind="psg")
    assert ck.metadata == meta
    for k, v in tensors.items():
        assert ck.tensors[k].tobytes() == v.tobytes()
    p2 = save_checkpoint(tmp_path / "b.ckpt", ck.metadata, ck.tensors)
    assert p1.read_bytes() == p2.read_bytes()


@settings(max_examples=40, deadline=None)
@given(arr=hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                      elements=st.floats(-1e6, 1e6, width=32)),
       name=st.text(min_size=1, max_size=12))
def test_round_trip_property(arr, name):
    ck = decode_checkpoint(encode_checkpoint({"kind": "x"}, {name: arr}))
    assert ck.tensors[name].shape == arr.shape
    assert ck.tensors[name].tobytes() == arr.tobytes()


def test_rejects_bad_magic_version_and_truncation():
    meta, tensors = sample()
    buf = encode_checkpoint(meta, tensors)
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(buf[:4] + struct.pack("<I", 2) + buf[8:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(buf[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(buf + b"\x00")


def test_kind_mismatch(tmp_path):
    meta, tensors = sample()
    p = save_checkpoint(tmp_path / "a.ckpt", meta, tensors)
    with pytest.raises(CheckpointError, match="expected a 'vc'"):
        load_checkpoint(p, kind="vc")
