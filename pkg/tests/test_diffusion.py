"""Tests for the embedding-space DDPM: schedule arithmetic, forward
corruption marginals, the MLP denoiser, ancestral sampling against closed
form oracles, and persistence.

The sampler oracles swap the network for analytic predictors: a zero
predictor whose state variance obeys an exact recursion, and an
annihilating predictor that must drive the final state to exactly zero.
"""

import math

import numpy as np
import pytest

from manigen import diffusion, nldr, nn, recon
from manigen.errors import (
    ConfigError,
    ParameterError,
    SamplingError,
    ShapeError,
)


def _standardized_blob(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    return (x - x.mean(axis=0)) / x.std(axis=0)


# ---------------------------------------------------------------------------
# schedule


def test_linear_schedule_frozen_values():
    s = diffusion.linear_schedule(1000)
    assert s.beta[0] == 1e-4  # exact endpoint
    assert s.beta[-1] == 0.02  # exact endpoint
    # [DERIVED] beta_500 = 1e-4 + (0.02 - 1e-4) * 499 / 999
    assert s.beta[499] == pytest.approx(0.01004004004004004, abs=1e-17)
    assert s.alpha_bar[0] == pytest.approx(0.9999, abs=1e-15)
    assert s.alpha_bar[-1] < 5e-5  # signal fully destroyed at t=T
    assert np.all(np.diff(s.beta) > 0)
    assert np.allclose(s.alpha, 1.0 - s.beta)


def test_schedule_validation():
    with pytest.raises(ParameterError):
        diffusion.linear_schedule(1)
    with pytest.raises(ParameterError):
        diffusion.linear_schedule(10, beta1=0.02, betaT=1e-4)
    with pytest.raises(ParameterError):
        diffusion.linear_schedule(10, beta1=0.0)
    good = diffusion.linear_schedule(10)
    with pytest.raises(ParameterError):  # alpha_bar not the running product
        diffusion.NoiseSchedule(10, good.beta, good.alpha, good.alpha_bar * 0.9)
    with pytest.raises(ParameterError):  # non-increasing betas
        diffusion.NoiseSchedule(
            10, good.beta[::-1].copy(), good.alpha, good.alpha_bar
        )


# ---------------------------------------------------------------------------
# forward corruption


def test_q_sample_closed_form():
    s = diffusion.linear_schedule(100)
    x0 = np.full((3, 2), 2.0)
    out = diffusion.q_sample(x0, 40, np.zeros((3, 2)), s)
    assert np.allclose(out, math.sqrt(s.alpha_bar[39]) * 2.0)
    out = diffusion.q_sample(np.zeros((3, 2)), 40, np.ones((3, 2)), s)
    assert np.allclose(out, math.sqrt(1.0 - s.alpha_bar[39]))
    with pytest.raises(ParameterError):
        diffusion.q_sample(x0, 0, np.zeros((3, 2)), s)
    with pytest.raises(ParameterError):
        diffusion.q_sample(x0, 101, np.zeros((3, 2)), s)
    with pytest.raises(ParameterError):
        diffusion.q_sample(x0, 5, np.zeros((2, 2)), s)


def test_q_sample_matches_iterated_corruption():
    # iterate Eq. 3 one step at a time and compare the empirical marginal
    # at t=T against the closed form
    T, n = 40, 20000
    s = diffusion.linear_schedule(T, 1e-3, 0.05)
    rng = np.random.default_rng(0)
    x0 = 1.7  # deterministic start isolates the corruption statistics
    x = np.full(n, x0)
    for t in range(1, T + 1):
        b = s.beta[t - 1]
        x = math.sqrt(1.0 - b) * x + math.sqrt(b) * rng.standard_normal(n)
    want_mean = math.sqrt(s.alpha_bar[-1]) * x0
    want_var = 1.0 - s.alpha_bar[-1]
    se_mean = math.sqrt(want_var / n)
    assert abs(x.mean() - want_mean) < 3 * se_mean
    assert abs(x.var() - want_var) / want_var < 0.03


# ---------------------------------------------------------------------------
# time embedding


def test_time_embedding_structure():
    emb = diffusion.time_embedding(0, 1000, 8)
    assert np.allclose(emb, [0, 1, 0, 1, 0, 1, 0, 1])  # sin 0, cos 0 pairs
    emb = diffusion.time_embedding(17, 1000, 32)
    assert emb.shape == (32,)
    assert np.all(np.abs(emb) <= 1.0)
    assert emb[0] == pytest.approx(math.sin(17.0))
    assert emb[1] == pytest.approx(math.cos(17.0))
    with pytest.raises(ParameterError):
        diffusion.time_embedding(5, 1000, 7)
    with pytest.raises(ParameterError):
        diffusion.time_embedding(5, 1000, 0)


def test_time_embedding_separates_timesteps():
    table = diffusion._embedding_table(1000, 32)
    sq = np.sum(table * table, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * table @ table.T
    np.fill_diagonal(d2, np.inf)
    # distinct timesteps stay well separated so the denoiser can tell them apart
    assert math.sqrt(max(d2.min(), 0.0)) > 1e-6


# ---------------------------------------------------------------------------
# denoiser and training


def test_make_denoiser_shapes():
    spec = diffusion.make_denoiser(3)
    assert spec.data_dim == 3
    assert spec.hidden == (256, 256, 256)
    assert spec.net.input_shape == (3 + 32,)
    assert spec.net.output_shape == (3,)
    spec = diffusion.make_denoiser(2, hidden=(16,), time_embed_dim=4)
    assert spec.net.input_shape == (6,)
    with pytest.raises(ParameterError):
        diffusion.make_denoiser(2, hidden=())
    with pytest.raises(ParameterError):
        diffusion.make_denoiser(0)
    with pytest.raises(ParameterError):
        diffusion.make_denoiser(2, time_embed_dim=5)
    with pytest.raises(ShapeError):  # net disagrees with declared dims
        diffusion.DenoiserSpec(3, (8,), 4, nn.NetworkSpec([nn.dense(5, 5)], (5,)))


def test_require_standardized():
    diffusion.require_standardized(_standardized_blob(200, 3, 0))
    with pytest.raises(ConfigError):
        diffusion.require_standardized(_standardized_blob(200, 3, 0) + 0.5)
    with pytest.raises(ConfigError):
        diffusion.require_standardized(_standardized_blob(200, 3, 0) * 3.0)


def test_train_diffusion_runs_and_is_deterministic():
    coords = _standardized_blob(128, 2, 1)
    sched = diffusion.linear_schedule(50)
    spec = diffusion.make_denoiser(2, hidden=(32, 32), time_embed_dim=8)
    cfg = diffusion.DiffusionTrainConfig(lr=1e-3, epochs=5, batch_size=64, seed=4)
    params, hist = diffusion.train_diffusion(coords, sched, cfg, spec=spec)
    assert len(hist) == 5
    # noise targets are unit variance, so an untrained net starts near 1.0
    assert 0.8 < hist[0] < 1.5
    assert hist[-1] < hist[0]
    params2, hist2 = diffusion.train_diffusion(coords, sched, cfg, spec=spec)
    assert np.array_equal(params.flat, params2.flat)
    assert hist == hist2


def test_train_diffusion_validation():
    sched = diffusion.linear_schedule(50)
    cfg = diffusion.DiffusionTrainConfig(epochs=1, batch_size=64)
    with pytest.raises(ParameterError):
        diffusion.train_diffusion(np.zeros(10), sched, cfg)
    with pytest.raises(ParameterError):  # fewer samples than a batch
        diffusion.train_diffusion(_standardized_blob(32, 2, 0), sched, cfg)
    with pytest.raises(ConfigError):  # unstandardized
        diffusion.train_diffusion(np.random.default_rng(0).normal(5.0, 1.0, (128, 2)), sched, cfg)
    spec3 = diffusion.make_denoiser(3, hidden=(8,), time_embed_dim=4)
    with pytest.raises(ShapeError):
        diffusion.train_diffusion(_standardized_blob(128, 2, 0), sched, cfg, spec=spec3)
    with pytest.raises(ParameterError):
        diffusion.DiffusionTrainConfig(lr=0.0)
    with pytest.raises(ParameterError):
        diffusion.DiffusionTrainConfig(epochs=0)


# ---------------------------------------------------------------------------
# ancestral sampling against analytic predictors


def test_ddpm_sample_zero_predictor_variance():
    # [DERIVED] with eps_hat = 0 the state variance obeys
    #   v_{t-1} = v_t / alpha_t + beta_t   (no noise on the final step)
    T, n, d = 50, 4000, 2
    sched = diffusion.linear_schedule(T, 1e-3, 0.04)
    spec = diffusion.make_denoiser(d, hidden=(4,), time_embed_dim=4)
    run = diffusion.ddpm_sample(None, spec, sched, n, seed=3, predictor=lambda x, t: np.zeros_like(x))
    v = 1.0
    for t in range(T, 0, -1):
        v = v / sched.alpha[t - 1]
        if t > 1:
            v += sched.beta[t - 1]
    got = float(run.coords.astype(np.float64).var())
    assert abs(got - v) / v < 0.05
    assert run.trajectory_stats["t"] == list(range(T, 0, -1))
    assert len(run.trajectory_stats["var"]) == T


def test_ddpm_sample_annihilating_predictor_collapses_to_zero():
    # eps_hat = sqrt(1 - ab_t) / beta_t * x_t cancels the deterministic part
    # of every step and z = 0 at t = 1, so the final state is zero up to the
    # one-ulp residue left by rounding the scalar in two stages
    T = 20
    sched = diffusion.linear_schedule(T)
    spec = diffusion.make_denoiser(3, hidden=(4,), time_embed_dim=4)

    def annihilate(x, t):
        return math.sqrt(1.0 - sched.alpha_bar[t - 1]) / sched.beta[t - 1] * x

    run = diffusion.ddpm_sample(None, spec, sched, 16, seed=0, predictor=annihilate)
    assert np.abs(run.coords).max() < 1e-12
    assert float(run.trajectory_stats["var"][-1]) < 1e-24


def test_ddpm_sample_determinism_and_errors():
    sched = diffusion.linear_schedule(10)
    spec = diffusion.make_denoiser(2, hidden=(4,), time_embed_dim=4)
    zero = lambda x, t: np.zeros_like(x)
    a = diffusion.ddpm_sample(None, spec, sched, 8, seed=1, predictor=zero)
    b = diffusion.ddpm_sample(None, spec, sched, 8, seed=1, predictor=zero)
    c = diffusion.ddpm_sample(None, spec, sched, 8, seed=2, predictor=zero)
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, c.coords)
    with pytest.raises(ParameterError):
        diffusion.ddpm_sample(None, spec, sched, 0, seed=1, predictor=zero)
    with pytest.raises(ShapeError):
        diffusion.ddpm_sample(None, spec, sched, 8, seed=1, predictor=lambda x, t: x[:, :1])
    with pytest.raises(SamplingError, match="non-finite state at timestep"):
        diffusion.ddpm_sample(
            None, spec, sched, 8, seed=1, predictor=lambda x, t: np.full_like(x, np.inf)
        )


def test_ddpm_sample_with_trained_network():
    coords = _standardized_blob(128, 2, 5)
    sched = diffusion.linear_schedule(25)
    spec = diffusion.make_denoiser(2, hidden=(16,), time_embed_dim=8)
    cfg = diffusion.DiffusionTrainConfig(lr=1e-3, epochs=2, batch_size=64, seed=0)
    params, _ = diffusion.train_diffusion(coords, sched, cfg, spec=spec)
    run = diffusion.ddpm_sample(params, spec, sched, 12, seed=7)
    assert run.coords.shape == (12, 2)
    assert np.isfinite(run.coords).all()


# ---------------------------------------------------------------------------
# persistence and decoding


def test_denoiser_checkpoint_roundtrip(tmp_path):
    coords = _standardized_blob(128, 2, 8)
    sched = diffusion.linear_schedule(25)
    spec = diffusion.make_denoiser(2, hidden=(8,), time_embed_dim=4)
    cfg = diffusion.DiffusionTrainConfig(lr=1e-3, epochs=1, batch_size=64, seed=0)
    params, _ = diffusion.train_diffusion(coords, sched, cfg, spec=spec)
    path = tmp_path / "denoiser.ckpt"
    diffusion.save_denoiser(path, spec, params, sched, cfg=cfg, epoch=1)
    spec2, params2, sched2 = diffusion.load_denoiser(path)
    assert spec2.data_dim == 2 and spec2.hidden == (8,) and spec2.time_embed_dim == 4
    assert sched2.T == 25
    assert np.array_equal(sched2.beta, sched.beta)
    a = diffusion.ddpm_sample(params, spec, sched, 6, seed=3)
    b = diffusion.ddpm_sample(params2, spec2, sched2, 6, seed=3)
    assert np.array_equal(a.coords, b.coords)

    other = tmp_path / "other.ckpt"
    nn.save_checkpoint(other, spec.net, params, {}, 0, extra={"kind": "decoder"})
    with pytest.raises(ConfigError):
        diffusion.load_denoiser(other)


def test_samples_roundtrip(tmp_path):
    sched = diffusion.linear_schedule(10)
    spec = diffusion.make_denoiser(2, hidden=(4,), time_embed_dim=4)
    run = diffusion.ddpm_sample(
        None, spec, sched, 8, seed=5, predictor=lambda x, t: np.zeros_like(x)
    )
    path = tmp_path / "samples.mgt"
    diffusion.save_samples(run, path, schedule_ref={"T": 10}, denoiser_ref="d.ckpt")
    back = diffusion.load_samples(path)
    assert back.seed == 5 and back.n == 8
    assert np.array_equal(back.coords, run.coords)
    assert back.trajectory_stats["t"] == run.trajectory_stats["t"]

    import json

    side = json.loads((tmp_path / "samples.mgt.json").read_text())
    side["schema"] = "other/1"
    (tmp_path / "samples.mgt.json").write_text(json.dumps(side))
    with pytest.raises(ConfigError):
        diffusion.load_samples(path)


def _toy_embedding_and_decoder(d, side, scale=1.0, standardized=True):
    rng = np.random.default_rng(0)
    coords = rng.uniform(-1, 1, (32, d)).astype(np.float32)
    stats = (coords.mean(axis=0).astype(np.float64), coords.std(axis=0).astype(np.float64))
    e = nldr.Embedding("lle", coords, {"k": 5}, stats if standardized else None, {})
    net = recon.build_dense_decoder(d, (1, side, side))
    params = nn.init_params(net, 0)
    params = params.copy()
    params.flat[:] = scale * np.random.default_rng(1).standard_normal(params.flat.shape)
    return e, (net, params)


def test_decode_coords_clips_and_validates():
    sched = diffusion.linear_schedule(10)
    spec = diffusion.make_denoiser(2, hidden=(4,), time_embed_dim=4)
    run = diffusion.ddpm_sample(
        None, spec, sched, 16, seed=2, predictor=lambda x, t: np.zeros_like(x)
    )
    e, decoder = _toy_embedding_and_decoder(2, 4, scale=5.0)
    images = diffusion.decode_coords(run, e, decoder)
    assert images.pixels.shape == (16, 1, 4, 4)
    assert images.pixels.min() >= -1.0 and images.pixels.max() <= 1.0
    assert np.any(np.abs(images.pixels) == 1.0)  # big weights force clipping

    e_raw, decoder2 = _toy_embedding_and_decoder(2, 4, standardized=False)
    with pytest.raises(ConfigError):
        diffusion.decode_coords(run, e_raw, decoder2)
    e3, decoder3 = _toy_embedding_and_decoder(3, 4)
    with pytest.raises(ShapeError):
        diffusion.decode_coords(run, e3, decoder3)
    e_ok, _ = _toy_embedding_and_decoder(2, 4)
    with pytest.raises(ShapeError):
        diffusion.decode_coords(run, e_ok, decoder3)


def test_generate_images_end_to_end():
    coords = _standardized_blob(128, 2, 9).astype(np.float32)
    e = nldr.Embedding(
        "lle", coords, {"k": 5}, (np.zeros(2), np.ones(2)), {}
    )
    sched = diffusion.linear_schedule(25)
    spec = diffusion.make_denoiser(2, hidden=(16,), time_embed_dim=8)
    cfg = diffusion.DiffusionTrainConfig(lr=1e-3, epochs=2, batch_size=64, seed=0)
    params, _ = diffusion.train_diffusion(coords.astype(np.float64), sched, cfg, spec=spec)
    net = recon.build_dense_decoder(2, (1, 4, 4))
    dparams = nn.init_params(net, 0)
    images = diffusion.generate_images((spec, params), sched, e, (net, dparams), 10, seed=3)
    assert images.pixels.shape == (10, 1, 4, 4)
    assert images.pixels.min() >= -1.0 and images.pixels.max() <= 1.0

    e_raw = nldr.Embedding("lle", coords, {"k": 5}, None, {})
    with pytest.raises(ConfigError):
        diffusion.generate_images((spec, params), sched, e_raw, (net, dparams), 4, seed=0)
    spec3 = diffusion.make_denoiser(3, hidden=(4,), time_embed_dim=4)
    with pytest.raises(ShapeError):
        diffusion.generate_images((spec3, params), sched, e, (net, dparams), 4, seed=0)
