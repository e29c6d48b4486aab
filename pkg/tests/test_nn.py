"""Neural engine tests: finite-difference gradient checks per layer, naive
convolution oracles, batchnorm semantics, optimizer reference math, and
checkpoint persistence."""

import numpy as np
import pytest

from manigen import nn
from manigen.errors import FormatError, ParameterError, ShapeError


def mse_loss(y):
    y64 = np.asarray(y, dtype=np.float64)
    return float(np.mean(y64 * y64)), (2.0 / y64.size) * y64


def check(net, seed=0, tol=1e-3):
    params = nn.init_params(net, seed)
    x = np.random.default_rng(seed + 100).standard_normal(
        (3,) + net.input_shape
    ).astype(np.float32)
    err = nn.grad_check(net, params, mse_loss, x)
    assert err < tol, f"grad check {err:.3e} >= {tol}"
    return err


def test_grad_dense():
    check(nn.NetworkSpec([nn.dense(7, 5), nn.relu(), nn.dense(5, 4)], (7,)))


def test_grad_conv2d_variants():
    check(nn.NetworkSpec([nn.conv2d(2, 3, 3, stride=1, padding=1)], (2, 6, 6)))
    check(nn.NetworkSpec([nn.conv2d(2, 4, 4, stride=2, padding=1)], (2, 8, 8)))
    check(nn.NetworkSpec([nn.conv2d(1, 2, 3, stride=2, padding=0)], (1, 7, 7)))


def test_grad_conv_transpose2d_variants():
    check(nn.NetworkSpec([nn.conv_transpose2d(3, 2, 4, stride=2, padding=1)], (3, 5, 5)))
    check(nn.NetworkSpec([nn.conv_transpose2d(2, 2, 3, stride=1, padding=1)], (2, 6, 6)))
    check(
        nn.NetworkSpec(
            [nn.conv_transpose2d(2, 1, 3, stride=2, padding=1, output_padding=1)],
            (2, 4, 4),
        )
    )


def test_grad_pool_norm_activations():
    check(nn.NetworkSpec([nn.conv2d(1, 2, 3, padding=1), nn.maxpool2x2()], (1, 6, 6)))
    check(nn.NetworkSpec([nn.conv2d(1, 3, 3, padding=1), nn.batchnorm(3), nn.relu()], (1, 5, 5)))
    check(nn.NetworkSpec([nn.dense(6, 8), nn.leaky_relu(0.2), nn.dense(8, 3), nn.tanh()], (6,)))
    check(nn.NetworkSpec([nn.dense(5, 12), nn.dropout(0.4), nn.dense(12, 2)], (5,)))
    check(nn.NetworkSpec([nn.dense(8, 12), nn.reshape((3, 2, 2)), nn.conv2d(3, 2, 2)], (8,)))


def test_conv2d_forward_matches_naive():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 7, 7))
    W = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    stride, padding = 2, 1
    y, _ = nn.conv2d_forward(x, W, b, stride, padding)

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (7 + 2 * padding - 3) // stride + 1
    naive = np.zeros((2, 4, oh, oh))
    for n in range(2):
        for co in range(4):
            for i in range(oh):
                for j in range(oh):
                    patch = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                    naive[n, co, i, j] = (patch * W[co]).sum() + b[co]
    assert np.abs(y - naive).max() < 1e-10


def test_conv_transpose2d_equals_zero_stuffed_conv():
    # [DERIVED] convT(x, W, stride s) == conv(zero-stuffed x, flipped W)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 4))
    W = rng.standard_normal((3, 2, 4, 4))  # [c_in, c_out, kh, kw]
    stride, padding = 2, 1
    y = nn.conv_transpose2d_forward(x, W, stride, padding, 0)

    s = np.zeros((2, 3, 4 + (4 - 1) * (stride - 1), 4 + (4 - 1) * (stride - 1)))
    s[:, :, ::stride, ::stride] = x
    Wf = W[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # flip taps, swap in/out
    pad = 4 - 1 - padding
    naive, _ = nn.conv2d_forward(s, Wf, np.zeros(2), 1, pad)
    assert y.shape == naive.shape == (2, 2, 8, 8)
    assert np.abs(y - naive).max() < 1e-10


def test_maxpool_forward_and_ties():
    x = np.array(
        [[[[1.0, 2.0, 5.0, 5.0], [3.0, 4.0, 5.0, 5.0], [0.0, 0.0, -1.0, -2.0], [0.0, 0.0, -3.0, -4.0]]]]
    )
    y, arg = nn.maxpool2x2_forward(x)
    assert y.shape == (1, 1, 2, 2)
    assert np.array_equal(y[0, 0], [[4.0, 5.0], [0.0, -1.0]])
    # gradient routes to a single argmax per window even under ties
    dy = np.ones_like(y)
    dx = nn.maxpool2x2_backward(arg, dy, x.shape)
    assert dx.sum() == 4.0
    assert np.all((dx == 0) | (dx == 1))


def test_batchnorm_semantics():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 3, 5, 5)).astype(np.float32) * 3.0 + 1.0
    gamma = np.ones(3)
    beta = np.zeros(3)
    stats = {"mean": np.zeros(3), "var": np.ones(3)}
    y, cache = nn.batchnorm_forward(x, gamma, beta, "train", stats, momentum=0.1)
    # per-channel normalization over (N, H, W)
    assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(y.astype(np.float64).var(axis=(0, 2, 3)) - 1.0).max() < 1e-4
    # running stats blended with momentum 0.1
    bm = x.astype(np.float64).mean(axis=(0, 2, 3))
    assert np.abs(stats["mean"] - 0.1 * bm).max() < 1e-6
    # eval mode uses the running stats, not the batch
    y2, _ = nn.batchnorm_forward(x, gamma, beta, "eval", stats)
    expect = (x - stats["mean"][None, :, None, None]) / np.sqrt(
        stats["var"][None, :, None, None] + 1e-5
    )
    assert np.abs(y2 - expect).max() < 1e-5


def test_forward_dropout_modes():
    net = nn.NetworkSpec([nn.dense(10, 10), nn.dropout(0.5)], (10,))
    params = nn.init_params(net, 0)
    x = np.ones((4, 10), dtype=np.float32)
    y_eval, _ = nn.forward(net, params, x, mode="eval")
    y1, _ = nn.forward(net, params, x, mode="train", rng_seed=7)
    y2, _ = nn.forward(net, params, x, mode="train", rng_seed=7)
    y3, _ = nn.forward(net, params, x, mode="train", rng_seed=8)
    assert np.array_equal(y1, y2)
    assert not np.array_equal(y1, y3)
    assert (y1 == 0).any()
    assert not (y_eval == 0).any()


def test_network_spec_shapes_and_errors():
    net = nn.NetworkSpec(
        [nn.dense(50, 512), nn.reshape((8, 8, 8)), nn.conv_transpose2d(8, 4, 4, 2, 1)],
        (50,),
    )
    assert net.output_shape == (4, 16, 16)
    with pytest.raises(ShapeError):
        nn.NetworkSpec([nn.dense(5, 4), nn.reshape((3, 3))], (5,))
    with pytest.raises(ShapeError):
        nn.NetworkSpec([nn.conv2d(2, 3, 5)], (2, 4, 4))  # kernel larger than input
    with pytest.raises(ParameterError):
        nn.dropout(1.5)


def test_init_params_deterministic():
    net = nn.NetworkSpec([nn.dense(6, 4), nn.batchnorm(4)], (6,))
    p1 = nn.init_params(net, 3)
    p2 = nn.init_params(net, 3)
    p3 = nn.init_params(net, 4)
    assert np.array_equal(p1.flat, p2.flat)
    assert not np.array_equal(p1.flat, p3.flat)
    assert p1.flat.dtype == np.float32


def test_adam_step_reference_math():
    # [DERIVED] one decoupled-weight-decay Adam step recomputed by hand
    net = nn.NetworkSpec([nn.dense(3, 2)], (3,))
    params = nn.init_params(net, 0)
    g = np.linspace(-1, 1, params.size).astype(np.float32)
    state = nn.adam_init(params)
    lr, b1, b2, eps, wd = 1e-2, 0.9, 0.999, 1e-8, 1e-2
    new, st = nn.adam_step(params, g, state, lr, b1, b2, eps, wd)

    flat = params.flat.astype(np.float64) * (1.0 - lr * wd)
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    mhat = m / (1 - b1)
    vhat = v / (1 - b2)
    expect = flat - lr * mhat / (np.sqrt(vhat) + eps)
    assert np.abs(new.flat - expect.astype(np.float32)).max() <= 1e-7
    assert st.step == 1
    # second step uses accumulated moments
    new2, st2 = nn.adam_step(new, g, st, lr, b1, b2, eps, 0.0)
    m2 = b1 * st.m.astype(np.float64) + (1 - b1) * g
    v2 = b2 * st.v.astype(np.float64) + (1 - b2) * g * g
    expect2 = new.flat.astype(np.float64) - lr * (m2 / (1 - b1**2)) / (
        np.sqrt(v2 / (1 - b2**2)) + eps
    )
    assert np.abs(new2.flat - expect2.astype(np.float32)).max() <= 1e-7
    assert st2.step == 2
    with pytest.raises(ParameterError):
        nn.adam_step(params, g[:-1], state, lr)


def test_adam_shares_running_stats():
    net = nn.NetworkSpec([nn.dense(4, 4), nn.batchnorm(4)], (4,))
    params = nn.init_params(net, 0)
    state = nn.adam_init(params)
    new, _ = nn.adam_step(params, np.zeros(params.size, dtype=np.float32), state, 1e-3)
    assert new.running_stats is params.running_stats


def test_cosine_lr_schedule():
    assert nn.cosine_lr(0, 100, 2e-4) == pytest.approx(2e-4)
    assert nn.cosine_lr(100, 100, 2e-4) == pytest.approx(0.0, abs=1e-20)
    assert nn.cosine_lr(50, 100, 2e-4) == pytest.approx(1e-4)
    assert nn.cosine_lr(50, 100, 2e-4, lr_min=1e-5) == pytest.approx((2e-4 + 1e-5) / 2)
    with pytest.raises(ParameterError):
        nn.cosine_lr(101, 100, 1e-3)


def test_checkpoint_roundtrip(tmp_path):
    net = nn.NetworkSpec(
        [nn.dense(6, 8), nn.batchnorm(8), nn.relu(), nn.dense(8, 2), nn.tanh()], (6,)
    )
    params = nn.init_params(net, 5)
    x = np.random.default_rng(0).standard_normal((4, 6)).astype(np.float32)
    nn.forward(net, params, x, mode="train")  # populate running stats
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(path, net, params, {"lr": 1e-3}, 7, extra={"kind": "test", "note": "x"})
    net2, params2, opt, epoch, extra = nn.load_checkpoint(path)
    assert [l.kind for l in net2.layers] == [l.kind for l in net.layers]
    assert net2.input_shape == net.input_shape
    assert np.array_equal(params.flat, params2.flat)
    assert set(params2.running_stats) == set(params.running_stats)
    for key, stats in params.running_stats.items():
        for stat in ("mean", "var"):
            assert np.allclose(stats[stat], params2.running_stats[key][stat], atol=1e-7)
    assert opt == {"lr": 1e-3}
    assert epoch == 7
    assert extra == {"kind": "test", "note": "x"}
    y1, _ = nn.forward(net, params, x)
    y2, _ = nn.forward(net2, params2, x)
    assert np.array_equal(y1, y2)


def test_checkpoint_rejects_corruption(tmp_path):
    net = nn.NetworkSpec([nn.dense(3, 3)], (3,))
    params = nn.init_params(net, 0)
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(path, net, params, {}, 0)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])  # truncated blob table entry
    with pytest.raises(FormatError):
        nn.load_checkpoint(path)
    path.write_bytes(b"XX" + blob[2:])  # smashed magic
    with pytest.raises(FormatError):
        nn.load_checkpoint(path)


def test_forward_backward_batch_independence():
    # each sample's gradient contribution is independent: summing per-sample
    # losses over a batch equals the batched backward pass
    net = nn.NetworkSpec([nn.dense(5, 4), nn.relu(), nn.dense(4, 2)], (5,))
    params = nn.init_params(net, 1)
    x = np.random.default_rng(2).standard_normal((6, 5)).astype(np.float32)

    def sum_sq(y):
        y64 = np.asarray(y, dtype=np.float64)
        return float((y64 * y64).sum()), 2.0 * y64

    y, tape = nn.forward(net, params, x)
    _, dy = sum_sq(y)
    dflat, _ = nn.backward(net, params, tape, dy)
    acc = np.zeros_like(dflat, dtype=np.float64)
    for i in range(6):
        yi, ti = nn.forward(net, params, x[i : i + 1])
        _, dyi = sum_sq(yi)
        di, _ = nn.backward(net, params, ti, dyi)
        acc += di
    assert np.abs(acc - dflat).max() < 1e-4
