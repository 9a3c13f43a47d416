import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from certwatch.container import (BadMagicError, ContainerError, TruncatedFileError, UnsupportedVersionError,
                                 read_container, write_container)
from certwatch.model import DetectorConfig, ShapeMismatchError, build_detector, load_weights, save_weights
from certwatch.optim import Adam
from certwatch.rng import derive_seed, make_rng
from certwatch.tensor import Parameter


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
@settings(max_examples=50, deadline=None)
def test_container_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("c") / "t.vcd"
    write_container(path, {"kind": "x", "n": 3}, {"a": arr, "b": np.ones(2, np.float32)})
    meta, tensors = read_container(path)
    assert meta == {"kind": "x", "n": 3}
    np.testing.assert_array_equal(tensors["a"], arr)
    assert tensors["a"].shape == arr.shape


def test_container_little_endian_layout(tmp_path):
    path = tmp_path / "t.vcd"
    write_container(path, {}, {"w": np.array([1.0], np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"VCD1"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert raw[-4:] == struct.pack("<f", 1.0)


def test_container_errors(tmp_path):
    path = tmp_path / "t.vcd"
    write_container(path, {"k": 1}, {"w": np.zeros((3, 3), np.float32)})
    raw = path.read_bytes()
    (tmp_path / "magic.vcd").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "version.vcd").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    (tmp_path / "short.vcd").write_bytes(raw[:-5])
    (tmp_path / "long.vcd").write_bytes(raw + b"\0")
    with pytest.raises(BadMagicError):
        read_container(tmp_path / "magic.vcd")
    with pytest.raises(UnsupportedVersionError, match="version 9"):
        read_container(tmp_path / "version.vcd")
    with pytest.raises(TruncatedFileError, match="truncated"):
        read_container(tmp_path / "short.vcd")
    with pytest.raises(ContainerError, match="trailing"):
        read_container(tmp_path / "long.vcd")


@pytest.mark.parametrize("reduction", ["avg", "max", "fc"])
def test_weights_round_trip(tmp_path, reduction):
    model = build_detector(DetectorConfig(reduction=reduction), 5)
    save_weights(model, tmp_path / "w.vcd")
    loaded = load_weights(tmp_path / "w.vcd")
    assert loaded.config == model.config
    for name, p in model.params.items():
        np.testing.assert_array_equal(loaded.params[name].data, p.data)


def test_weights_shape_mismatch(tmp_path):
    model = build_detector(DetectorConfig(), 0)
    state = model.state_dict()
    state["head.weight"] = np.zeros((3, 2), np.float32)
    from dataclasses import asdict

    write_container(tmp_path / "bad.vcd", {"kind": "detector", "config": asdict(model.config)}, state)
    with pytest.raises(ShapeMismatchError, match="head.weight"):
        load_weights(tmp_path / "bad.vcd")
    del state["head.weight"]
    write_container(tmp_path / "missing.vcd", {"kind": "detector", "config": asdict(model.config)}, state)
    with pytest.raises(ShapeMismatchError, match="missing"):
        load_weights(tmp_path / "missing.vcd")


def test_rng_streams_are_reproducible_and_independent():
    a = make_rng(3, "dropout", 1).random(4)
    np.testing.assert_array_equal(a, make_rng(3, "dropout", 1).random(4))
    assert not np.allclose(a, make_rng(3, "dropout", 2).random(4))
    assert not np.allclose(a, make_rng(4, "dropout", 1).random(4))
    assert derive_seed(1, "x") == derive_seed(1, "x") < 2**63
    with pytest.raises(ValueError):
        make_rng(-1)


def test_adam_first_step_moves_by_lr_times_sign():
    # with zero moments the bias-corrected step is g / |g| up to eps
    p = Parameter(np.array([1.0, -2.0, 0.5]))
    p.grad = np.array([0.3, -4.0, 1e-3])
    Adam([p], lr=0.01).step()
    np.testing.assert_allclose(p.data, [0.99, -1.99, 0.49], atol=1e-7)


def test_adam_second_step_hand_computed():
    p = Parameter(np.array([0.0]))
    opt = Adam([p], lr=0.1)
    for g in (1.0, 3.0):
        p.grad = np.array([g])
        opt.step()
    m = (0.1 * 0.9 + 0.3) / (1 - 0.81)
    v = (0.001 * 0.999 + 0.009) / (1 - 0.999**2)
    expected = -0.1 * (1.0 / (1 + 1e-8)) - 0.1 * m / (np.sqrt(v) + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-6)
