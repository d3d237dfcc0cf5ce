import numpy as np
import pytest

import oracles
from gfpc.autodiff import Tape
from gfpc.encoder import Encoder, EncoderConfig, init_params
from gfpc.errors import (ConfigError, ContractError, DegenerateSampleError,
                         DimensionError)

SMALL = EncoderConfig(widths=(4, 6), zdim=6, head_hidden=5, head_dim=3)


def small_image(seed=0, hw=16, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(3, hw, hw)).astype(dtype)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(widths=())
    with pytest.raises(ConfigError):
        EncoderConfig(widths=(8, 16), zdim=8)  # zdim must be last width
    with pytest.raises(ConfigError):
        EncoderConfig(widths=(8, 16), zdim=16, head_dim=16)
    with pytest.raises(ConfigError):
        EncoderConfig(widths=(8, 0), zdim=0)
    with pytest.raises(ConfigError):
        EncoderConfig(blocks_per_stage=0)
    assert EncoderConfig().min_input == 16
    assert SMALL.min_input == 4


def test_config_digest_stable_and_distinct():
    a = EncoderConfig().digest()
    assert a == EncoderConfig().digest()
    assert len(a) == 16
    assert int(a, 16) >= 0  # hex
    assert a != SMALL.digest()
    assert SMALL.digest() != EncoderConfig(
        widths=(4, 6), zdim=6, head_hidden=5, head_dim=2).digest()


def test_init_params_deterministic_and_complete():
    p1 = init_params(SMALL, seed=7)
    p2 = init_params(SMALL, seed=7)
    assert sorted(p1) == [
        "enc.s0.b0.b", "enc.s0.b0.w", "enc.s1.b0.b", "enc.s1.b0.w",
        "head.fc1.b", "head.fc1.w", "head.fc2.b", "head.fc2.w",
    ]
    for name in p1:
        assert np.array_equal(p1[name], p2[name])
        assert p1[name].dtype == np.float32
    p3 = init_params(SMALL, seed=8)
    assert not np.array_equal(p1["enc.s0.b0.w"], p3["enc.s0.b0.w"])
    # small constant bias keeps relus live and the projection off zero
    assert np.all(p1["enc.s0.b0.b"] == np.float32(0.01))
    assert np.all(p1["head.fc1.b"] == np.float32(0.01))


def test_init_params_he_scale():
    cfg = EncoderConfig(widths=(64, 128), zdim=128, head_hidden=64, head_dim=16)
    p = init_params(cfg, seed=0, dtype=np.float64)
    got = p["enc.s1.b0.w"].std()
    want = np.sqrt(2.0 / (64 * 9))
    assert got == pytest.approx(want, rel=0.05)
    assert p["head.fc1.w"].std() == pytest.approx(np.sqrt(2.0 / 128), rel=0.1)


def test_init_params_without_head():
    p = init_params(SMALL, seed=0, with_head=False)
    assert all(k.startswith("enc.") for k in p)


def test_feature_map_and_encode_shapes():
    enc = Encoder.build(SMALL, seed=0)
    tape = Tape(np.float32)
    fmap = enc.feature_map(tape, small_image())
    assert fmap.shape == (6, 4, 4)
    z = enc.encode(tape, small_image(1))
    assert z.shape == (6,)
    deep = EncoderConfig(widths=(4, 6), zdim=6, head_hidden=5, head_dim=3,
                         blocks_per_stage=2)
    enc2 = Encoder.build(deep, seed=0)
    tape2 = Tape(np.float32)
    assert enc2.feature_map(tape2, small_image()).shape == (6, 4, 4)


def test_encode_infer_matches_taped_encode():
    enc = Encoder.build(SMALL, seed=3)
    img = small_image(5)
    tape = Tape(np.float32)
    z_tape = enc.encode(tape, img).data
    z_infer = enc.encode_infer(img)
    assert np.array_equal(z_tape, z_infer)


def test_project_infer_matches_taped_project():
    enc = Encoder.build(SMALL, seed=4)
    img = small_image(6)
    tape = Tape(np.float32)
    h_tape = enc.project(tape, enc.encode(tape, img)).data
    h_infer = enc.project_infer(enc.encode_infer(img))
    assert np.array_equal(h_tape, h_infer)
    assert np.linalg.norm(h_infer) == pytest.approx(1.0, abs=1e-6)


def test_project_rejects_exactly_zero_projection():
    enc = Encoder.build(SMALL, seed=0)
    enc.params["head.fc2.w"] = np.zeros_like(enc.params["head.fc2.w"])
    enc.params["head.fc2.b"] = np.zeros_like(enc.params["head.fc2.b"])
    img = small_image(7)
    with pytest.raises(DegenerateSampleError):
        enc.project_infer(enc.encode_infer(img))
    tape = Tape(np.float32)
    with pytest.raises(DegenerateSampleError):
        enc.project(tape, enc.encode(tape, img))


def test_parameters_shared_across_calls_on_one_tape():
    enc = Encoder.build(SMALL, seed=1)
    tape = Tape(np.float32)
    z1 = enc.encode(tape, small_image(0))
    z2 = enc.encode(tape, small_image(1))
    loss = tape.dot(z1, z2)
    grads = tape.backward(loss)
    assert set(grads) == {k for k in enc.params if k.startswith("enc.")}
    assert all(np.isfinite(g).all() for g in grads.values())


def test_swapping_params_mid_tape_is_rejected():
    enc = Encoder.build(SMALL, seed=1)
    tape = Tape(np.float32)
    enc.encode(tape, small_image(0))
    enc.params = {k: v.copy() for k, v in enc.params.items()}
    with pytest.raises(ContractError):
        enc.encode(tape, small_image(1))


def test_gradients_match_finite_differences_small():
    cfg = EncoderConfig(widths=(2, 3), zdim=3, head_hidden=3, head_dim=2)
    enc = Encoder(cfg, init_params(cfg, seed=2, dtype=np.float64))
    img = small_image(8, hw=8, dtype=np.float64)
    cvec = np.random.default_rng(9).standard_normal(2)
    name = "enc.s0.b0.w"

    tape = Tape(np.float64)
    loss = tape.dot(enc.project(tape, enc.encode(tape, img)), tape.const(cvec))
    got = tape.backward(loss)[name]

    def f(wv):
        e2 = Encoder(cfg, {**enc.params, name: wv})
        return float(np.dot(e2.project_infer(e2.encode_infer(img)), cvec))

    fd = oracles.finite_diff(f, enc.params[name], eps=1e-6)
    assert oracles.max_rel_err(got, fd) < 1e-4


def test_image_contract_errors():
    enc = Encoder.build(SMALL, seed=0)
    with pytest.raises(DimensionError):
        enc.encode_infer(np.zeros((1, 16, 16), dtype=np.float32))
    with pytest.raises(DimensionError):
        enc.encode_infer(np.zeros((3, 2, 16), dtype=np.float32))
    with pytest.raises(ContractError):
        enc.encode_infer(np.zeros((3, 16, 16), dtype=np.float64))


def test_param_shape_validation_on_construct():
    params = init_params(SMALL, seed=0)
    del params["enc.s1.b0.w"]
    with pytest.raises(ContractError):
        Encoder(SMALL, params)
    params = init_params(SMALL, seed=0)
    params["enc.s0.b0.w"] = params["enc.s0.b0.w"][:, :2]
    with pytest.raises(DimensionError):
        Encoder(SMALL, params)
    params = init_params(SMALL, seed=0)
    params["head.fc1.w"] = params["head.fc1.w"].T.copy()
    with pytest.raises(DimensionError):
        Encoder(SMALL, params)


def test_copy_is_deep_for_arrays():
    enc = Encoder.build(SMALL, seed=0)
    dup = enc.copy()
    assert dup.params is not enc.params
    for k in enc.params:
        assert np.array_equal(dup.params[k], enc.params[k])
        assert dup.params[k] is not enc.params[k]
    assert dup.param_count() == enc.param_count()
    assert enc.dtype == np.float32
