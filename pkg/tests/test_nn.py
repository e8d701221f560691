"""Parameter plumbing: init bounds, Adam sanity, checkpoint round-trip."""

import numpy as np
import pytest

import entityrl.tensor as T
from entityrl.nn import (Adam, CHECKPOINT_MAGIC, ParamDict, clip_grad_norm,
                         linear_params, load_checkpoint, save_checkpoint, uniform_init)


def test_uniform_init_bounds():
    rng = np.random.default_rng(0)
    w = uniform_init(rng, 16, (1000,))
    bound = np.sqrt(1.0 / 16)
    assert np.all(np.abs(w) <= bound)
    assert np.std(w) > bound / 4  # actually spread out, not collapsed


def test_param_dict_rejects_duplicates():
    p = ParamDict()
    p.add("w", T.parameter(np.zeros(2)))
    with pytest.raises(ValueError):
        p.add("w", T.parameter(np.zeros(2)))
    assert p.num_params() == 2


def test_adam_descends_quadratic():
    p = ParamDict()
    x = p.add("x", T.parameter(np.array([5.0, -3.0], dtype=np.float32)))
    opt = Adam(p, lr=0.1)
    for _ in range(300):
        p.zero_grad()
        loss = T.sum(T.mul(x, x))
        loss.backward()
        opt.step()
    assert np.all(np.abs(x.data) < 1e-2)


def test_clip_grad_norm():
    p = ParamDict()
    a = p.add("a", T.parameter(np.zeros(3)))
    a.grad = np.array([3.0, 4.0, 0.0])
    norm = clip_grad_norm(p, 1.0)
    assert abs(norm - 5.0) < 1e-12
    assert abs(np.linalg.norm(a.grad) - 1.0) < 1e-9


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    params = ParamDict()
    params.add("enc.w", T.parameter(rng.standard_normal((7, 5)).astype(np.float32)))
    params.add("enc.b", T.parameter(rng.standard_normal(5).astype(np.float32)))
    params.add("scalarish", T.parameter(rng.standard_normal((1,)).astype(np.float32)))
    path = tmp_path / "model.erlw"
    save_checkpoint(path, params)
    blob = path.read_bytes()
    assert blob[:5] == CHECKPOINT_MAGIC
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for name, tensor in params.items():
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], tensor.data)
    # byte-identical when saved again
    save_checkpoint(tmp_path / "model2.erlw", params)
    assert (tmp_path / "model2.erlw").read_bytes() == blob


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.erlw"
    path.write_bytes(b"NOPE!")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_load_values_shape_and_name_mismatch():
    p = ParamDict()
    p.add("w", T.parameter(np.zeros((2, 2), dtype=np.float32)))
    with pytest.raises(ValueError):
        p.load_values({"w": np.zeros((3, 3), dtype=np.float32)})
    with pytest.raises(ValueError):
        p.load_values({"other": np.zeros((2, 2), dtype=np.float32)})


def test_linear_params_shapes():
    rng = np.random.default_rng(2)
    w, b = linear_params(rng, 8, 4)
    assert w.shape == (8, 4) and b.shape == (4,)
    assert w.requires_grad and b.requires_grad
