import io

import numpy as np
import pytest

import oracles
from gfpc import checkpoint as ckpt
from gfpc import data, depth
from gfpc.autodiff import Tape
from gfpc.encoder import EncoderConfig, init_params
from gfpc.errors import (CheckpointError, ConfigError, ContractError,
                         DegenerateSampleError, DimensionError, InputError)

CFG = EncoderConfig(widths=(4, 6), zdim=6, head_hidden=5, head_dim=3)


def tiny_samples(count=6, size=16, seed=50):
    p = data.SyntheticSceneParams(height=size, width=size, min_boxes=1,
                                  max_boxes=2, seed=seed)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        rgb, d = data.render_scene(rng, p)
        half, mask = data.halve_depth(d, np.ones_like(d, dtype=bool))
        out.append(data.DepthSample(rgb.astype(np.float32), half, mask))
    return out


def test_finetune_config_validation():
    for bad in (dict(fraction=0.0), dict(fraction=1.5), dict(batch_size=0),
                dict(epochs=-1), dict(lr=-1e-3), dict(dtype="float16")):
        with pytest.raises(ConfigError):
            depth.FinetuneConfig(**bad)


def test_build_parameter_shapes():
    net = depth.DepthNet.build(CFG, seed=0)
    assert net.params["dec.u0.w"].shape == (4, 6, 3, 3)
    assert net.params["dec.u0.b"].shape == (4,)
    assert net.params["dec.out.w"].shape == (1, 4, 3, 3)
    assert net.params["dec.out.b"].shape == (1,)
    assert net.dtype == np.float32
    assert not any(k.startswith("enc.head") for k in net.params)


def test_decoder_identical_across_init_modes():
    rand = depth.DepthNet.build(CFG, seed=3)
    enc_params = init_params(CFG, seed=11, with_head=False)
    loaded = depth.DepthNet.build(CFG, seed=3, encoder_params=enc_params)
    for k in rand.params:
        if k.startswith("dec."):
            np.testing.assert_array_equal(rand.params[k], loaded.params[k])
    assert not np.array_equal(rand.params["enc.s0.b0.w"],
                              loaded.params["enc.s0.b0.w"])


def test_build_rejects_archives_without_encoder():
    with pytest.raises(CheckpointError, match="enc"):
        depth.DepthNet.build(CFG, 0, encoder_params={"head.w": np.ones(3)})


def test_decoder_shape_validation():
    net = depth.DepthNet.build(CFG, 0)
    bad = dict(net.params)
    bad["dec.u0.w"] = np.zeros((4, 5, 3, 3), dtype=np.float32)
    with pytest.raises(DimensionError, match="dec.u0.w"):
        depth.DepthNet(CFG, bad)
    missing = {k: v for k, v in net.params.items() if k != "dec.u0.w"}
    with pytest.raises(ContractError, match="dec.u0.w"):
        depth.DepthNet(CFG, missing)


def test_predict_matches_recorded_forward():
    net = depth.DepthNet.build(CFG, seed=4)
    img = np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32)
    got = net.predict(img)
    tape = Tape(np.float32)
    node = net.forward(tape, img)
    np.testing.assert_array_equal(got, node.data)
    assert got.shape == (8, 8)
    assert (got > 0).all()


def test_half_resolution_shape_contract():
    net = depth.DepthNet.build(CFG, seed=1)
    # landscape VGA-style input comes out at half size each way
    img = np.zeros((3, 480, 640), dtype=np.float32)
    assert net.predict(img).shape == (240, 320)
    with pytest.raises(DimensionError, match="stride"):
        net.predict(np.zeros((3, 18, 16), dtype=np.float32))


def test_predict_dtype_guard():
    net = depth.DepthNet.build(CFG, 0)
    with pytest.raises(ContractError, match="dtype"):
        net.predict(np.zeros((3, 16, 16), dtype=np.float64))


def test_predict_depth_transposes_hwc():
    net = depth.DepthNet.build(CFG, 2)
    rgb = np.random.default_rng(1).uniform(size=(16, 16, 3)).astype(np.float32)
    chw = np.ascontiguousarray(rgb.transpose(2, 0, 1))
    np.testing.assert_array_equal(depth.predict_depth(net, rgb),
                                  net.predict(chw))


def test_depth_loss_worked_example():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.array([[1.5, 2.0], [1.0, 9.0]])
    mask = np.array([[1, 1], [1, 0]])
    assert depth.depth_loss(pred, target, mask) == pytest.approx(2.5 / 3)
    with pytest.raises(DegenerateSampleError):
        depth.depth_loss(pred, target, np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        depth.depth_loss(pred, target, np.ones(3))


def test_depth_loss_matches_taped_twin():
    rng = np.random.default_rng(5)
    pred = rng.uniform(0.5, 4.0, size=(6, 6))
    target = rng.uniform(0.5, 4.0, size=(6, 6))
    mask = rng.uniform(size=(6, 6)) < 0.7
    plain = depth.depth_loss(pred, target, mask)
    tape = Tape(np.float64)
    node = tape.masked_l1(tape.param("p", pred), target, mask)
    assert float(node.data) == pytest.approx(plain, abs=1e-12)


def test_finetuned_init_from_checkpoint(tmp_path):
    enc_params = init_params(CFG, seed=21, with_head=False)
    path = tmp_path / "enc.ckpt"
    ckpt.save_checkpoint(path, enc_params, CFG.digest())
    fc = depth.FinetuneConfig(init=str(path), seed=6)
    net = depth.build_finetuned_init(fc, CFG, np.float32)
    for k, v in enc_params.items():
        np.testing.assert_array_equal(net.params[k], v)
    other = EncoderConfig(widths=(4, 4), zdim=4, head_hidden=5, head_dim=3)
    with pytest.raises(CheckpointError):
        depth.build_finetuned_init(fc, other, np.float32)


def test_finetune_bookkeeping():
    samples = tiny_samples()
    fc = depth.FinetuneConfig(epochs=3, batch_size=2, lr=1e-3, seed=0)
    log = io.StringIO()
    seen = []
    net, losses = depth.finetune(samples, fc, CFG, log_stream=log,
                                 progress=lambda e, total, m: seen.append((e, total)))
    assert len(losses) == 3
    lines = log.getvalue().strip().splitlines()
    assert lines[0] == "epoch,loss"
    assert len(lines) == 4 and lines[1].startswith("1,")
    assert seen == [(1, 3), (2, 3), (3, 3)]
    assert all(np.isfinite(losses))


def test_finetune_learns_on_tiny_set():
    samples = tiny_samples(count=4)
    fc = depth.FinetuneConfig(epochs=30, batch_size=4, lr=3e-3, seed=1)
    net, losses = depth.finetune(samples, fc, CFG)
    assert losses[-1] < losses[0] * 0.8


def test_finetune_determinism():
    samples = tiny_samples(count=4)
    fc = depth.FinetuneConfig(epochs=2, batch_size=2, lr=1e-3, seed=7)
    net_a, loss_a = depth.finetune(samples, fc, CFG)
    net_b, loss_b = depth.finetune(samples, fc, CFG)
    assert loss_a == loss_b
    for k in net_a.params:
        np.testing.assert_array_equal(net_a.params[k], net_b.params[k])


def test_finetune_subset_and_input_guards():
    samples = tiny_samples(count=5)
    with pytest.raises(InputError, match="empty"):
        depth.finetune([], depth.FinetuneConfig(), CFG)
    with pytest.raises(InputError, match="less than"):
        depth.finetune(samples, depth.FinetuneConfig(fraction=0.1), CFG)
    net, losses = depth.finetune(samples, depth.FinetuneConfig(epochs=0), CFG)
    assert losses == []


def test_full_network_gradients_match_finite_differences():
    cfg = EncoderConfig(widths=(2, 3), zdim=3, head_hidden=4, head_dim=2)
    net = depth.DepthNet.build(cfg, seed=8, dtype=np.float64)
    rng = np.random.default_rng(8)
    # spread the biases so no pre-activation sits within the finite
    # difference step of the relu kink, where central differences would
    # straddle two linear regimes
    for k, v in net.params.items():
        if k.endswith(".b"):
            net.params[k] = rng.uniform(0.02, 0.1, size=v.shape)
    img = rng.uniform(size=(3, 8, 8))
    target = rng.uniform(1.0, 3.0, size=(4, 4))
    mask = np.ones((4, 4))

    tape = Tape(np.float64)
    loss = tape.masked_l1(net.forward(tape, img), target, mask)
    grads = tape.backward(loss)

    for name in sorted(net.params):
        base = net.params[name]

        def loss_at(arr, _name=name):
            trial = dict(net.params)
            trial[_name] = np.asarray(arr, dtype=np.float64)
            t = Tape(np.float64)
            probe = depth.DepthNet(cfg, trial)
            return float(t.masked_l1(probe.forward(t, img), target,
                                     mask).data)

        fd = oracles.finite_diff(loss_at, base, eps=1e-6)
        err = oracles.max_rel_err(grads[name], fd)
        assert err < 1e-4, f"{name}: rel err {err:.2e}"


def test_evaluate_model():
    samples = tiny_samples(count=3)
    net = depth.DepthNet.build(CFG, seed=0)
    pooled, per = depth.evaluate_model(net, samples)
    assert len(per) == 3
    assert pooled.count == sum(r.count for r in per)
    with pytest.raises(InputError):
        depth.evaluate_model(net, [])
