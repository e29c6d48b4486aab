"""DDPM in embedding space: linear noise schedule, closed-form forward
corruption, a time-conditioned MLP noise predictor, ancestral sampling, and
decoding of sampled coordinates back to images.

The model runs on standardized coordinates only.  Method-dependent embedding
scales vary over orders of magnitude (spectral coordinates can sit near 1e-2,
geodesic ones near 1e2), and the reverse process starts from N(0, I), which
only matches unit-scale data; training therefore refuses visibly
unstandardized input rather than producing silently broken samples.

The training objective is the per-coordinate mean of the squared noise
prediction error, so its initial value sits near 1 regardless of data
dimension.  Timesteps are drawn uniformly per sample and conditioning uses a
sinusoidal embedding concatenated to the coordinates, keeping the denoiser a
plain MLP.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ParameterError, SamplingError, ShapeError
from .tensor import ImageBatch, load_tensor, save_tensor
from .util import read_json, seed_for, write_json

SAMPLES_SCHEMA = "manigen.samples/1"


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule: beta[t-1] is the Eq. 3 step variance at timestep t,
    alpha = 1 - beta, and alpha_bar the running product of alpha."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if self.T < 2 or self.beta.shape != (self.T,):
            raise ParameterError(f"schedule needs T >= 2 betas, got {self.beta.shape}")
        if not (np.all(self.beta > 0) and np.all(self.beta < 1)):
            raise ParameterError("betas must lie strictly inside (0, 1)")
        if not np.all(np.diff(self.beta) > 0):
            raise ParameterError("betas must be strictly increasing")
        if not (np.all(np.diff(self.alpha_bar) < 0) and np.all(self.alpha_bar > 0)
                and np.all(self.alpha_bar < 1)):
            raise ParameterError("alpha_bar must decrease strictly inside (0, 1)")
        ref = np.cumprod(self.alpha)
        if np.max(np.abs(self.alpha_bar - ref) / ref) > 1e-12:
            raise ParameterError("alpha_bar is not the running product of alpha")


def linear_schedule(T, beta1=1e-4, betaT=0.02):
    """Linearly spaced betas from beta1 at t=1 to betaT at t=T."""
    T = int(T)
    if T < 2:
        raise ParameterError(f"T must be >= 2, got {T}")
    if not 0.0 < beta1 < betaT < 1.0:
        raise ParameterError(f"need 0 < beta1 < betaT < 1, got {beta1}, {betaT}")
    beta = beta1 + (betaT - beta1) * np.arange(T, dtype=np.float64) / (T - 1)
    alpha = 1.0 - beta
    return NoiseSchedule(T, beta, alpha, np.cumprod(alpha))


def q_sample(x0, t, eps, sched):
    """Closed-form forward marginal x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps,
    equivalent to iterating the single-step corruption t times."""
    if not 1 <= t <= sched.T:
        raise ParameterError(f"timestep {t} outside [1, {sched.T}]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ParameterError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = float(sched.alpha_bar[t - 1])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def time_embedding(t, T, dim):
    """Sinusoidal timestep features: interleaved (sin, cos) pairs at
    frequencies 10000^(-2k/dim); every component lies in [-1, 1]."""
    if dim < 2 or dim % 2:
        raise ParameterError(f"embedding dim must be even and >= 2, got {dim}")
    k = np.arange(dim // 2, dtype=np.float64)
    ang = float(t) * 10000.0 ** (-2.0 * k / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def _embedding_table(T, dim):
    return np.stack([time_embedding(t, T, dim) for t in range(1, T + 1)])


# ---------------------------------------------------------------------------
# denoiser


@dataclass(frozen=True)
class DenoiserSpec:
    """MLP noise predictor taking (coordinates, time embedding) and returning
    a noise estimate of the coordinate width."""

    data_dim: int
    hidden: tuple
    time_embed_dim: int
    net: nn.NetworkSpec

    def __post_init__(self):
        if self.data_dim < 1:
            raise ParameterError(f"data_dim must be >= 1, got {self.data_dim}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ParameterError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        want_in = (self.data_dim + self.time_embed_dim,)
        if self.net.input_shape != want_in or self.net.output_shape != (self.data_dim,):
            raise ShapeError(
                f"denoiser net maps {self.net.input_shape} -> {self.net.output_shape}, "
                f"expected {want_in} -> {(self.data_dim,)}"
            )


def make_denoiser(data_dim, hidden=(256, 256, 256), time_embed_dim=32):
    """Three ReLU hidden layers of 256 units by default."""
    hidden = tuple(int(h) for h in hidden)
    if not hidden or any(h < 1 for h in hidden):
        raise ParameterError(f"hidden widths must be positive, got {hidden}")
    layers = []
    prev = int(data_dim) + int(time_embed_dim)
    for width in hidden:
        layers += [nn.dense(prev, width), nn.relu()]
        prev = width
    layers.append(nn.dense(prev, int(data_dim)))
    net = nn.NetworkSpec(layers, (int(data_dim) + int(time_embed_dim),))
    return DenoiserSpec(int(data_dim), hidden, int(time_embed_dim), net)


@dataclass(frozen=True)
class DiffusionTrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")


def require_standardized(coords):
    """Reject coordinates whose per-dimension mean strays beyond 0.1 or whose
    standard deviation leaves [0.9, 1.1]."""
    coords = np.asarray(coords, dtype=np.float64)
    mean = coords.mean(axis=0)
    sd = coords.std(axis=0)
    bad_mean = np.abs(mean) > 0.1
    bad_sd = np.abs(sd - 1.0) > 0.1
    if bad_mean.any() or bad_sd.any():
        dim = int(np.argmax(bad_mean | bad_sd))
        raise ConfigError(
            f"coordinates are not standardized: dimension {dim} has mean "
            f"{mean[dim]:.4f}, sd {sd[dim]:.4f}; standardize the embedding first"
        )


def train_diffusion(coords, sched, cfg, spec=None):
    """Noise-prediction training: per sample draw t uniform in [1, T] and
    eps ~ N(0, I), corrupt with q_sample, regress the MLP output onto eps
    under a per-coordinate mean squared error.  Adam at a constant learning
    rate.  Returns (Parameters, per-epoch loss history)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise ParameterError(f"coords must be 2-D, got shape {coords.shape}")
    n, d = coords.shape
    if n < cfg.batch_size:
        raise ParameterError(f"need at least batch_size={cfg.batch_size} samples, got {n}")
    require_standardized(coords)
    if spec is None:
        spec = make_denoiser(d)
    if spec.data_dim != d:
        raise ShapeError(f"denoiser expects {spec.data_dim}-dim data, coords have {d}")
    table = _embedding_table(sched.T, spec.time_embed_dim)
    params = nn.init_params(spec.net, cfg.seed)
    state = nn.adam_init(params)
    sqrt_ab = np.sqrt(sched.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bar)
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(seed_for(cfg.seed, f"diff{epoch}"))
        order = rng.permutation(n)
        running = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            t_b = rng.integers(1, sched.T + 1, size=len(batch))
            eps = rng.standard_normal((len(batch), d))
            x_t = sqrt_ab[t_b - 1, None] * coords[batch] + sqrt_1mab[t_b - 1, None] * eps
            inp = np.concatenate([x_t, table[t_b - 1]], axis=1).astype(np.float32)
            y, tape = nn.forward(spec.net, params, inp, mode="train")
            diff = y.astype(np.float64) - eps
            loss = float(np.mean(diff * diff))
            dy = (2.0 / diff.size) * diff
            dflat, _ = nn.backward(spec.net, params, tape, dy)
            params, state = nn.adam_step(params, dflat, state, cfg.lr, cfg.beta1, cfg.beta2)
            running += loss * len(batch)
        history.append(running / n)
    return params, history


# ---------------------------------------------------------------------------
# sampling


@dataclass
class SampleRun:
    """Result of one ancestral sampling run: final coordinates plus scalar
    mean/variance of the state after every reverse step (t descending)."""

    seed: int
    n: int
    coords: np.ndarray
    trajectory_stats: dict

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float32)
        if not np.isfinite(self.coords).all():
            raise SamplingError("sample coordinates contain non-finite values")


def ddpm_sample(params, spec, sched, n, seed, predictor=None):
    """Ancestral reverse process: x_T ~ N(0, I), then for t = T..1

        x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t)
                  + sqrt(beta_t) * z

    with z ~ N(0, I) for t > 1 and z = 0 at the final step.  ``predictor``
    (a callable (x, t) -> eps_hat) replaces the trained network when given,
    for oracle diagnostics."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    d = spec.data_dim
    rng = np.random.default_rng(seed_for(seed, "ddpm"))
    x = rng.standard_normal((n, d))
    if predictor is None:
        table = _embedding_table(sched.T, spec.time_embed_dim)

        def predictor(state, t):
            emb = np.broadcast_to(table[t - 1], (state.shape[0], spec.time_embed_dim))
            inp = np.concatenate([state, emb], axis=1).astype(np.float32)
            out, _ = nn.forward(spec.net, params, inp)
            return out.astype(np.float64)

    stats = {"t": [], "mean": [], "var": []}
    for t in range(sched.T, 0, -1):
        eps_hat = np.asarray(predictor(x, t), dtype=np.float64)
        if eps_hat.shape != x.shape:
            raise ShapeError(f"predictor returned shape {eps_hat.shape}, expected {x.shape}")
        a_t = float(sched.alpha[t - 1])
        ab_t = float(sched.alpha_bar[t - 1])
        b_t = float(sched.beta[t - 1])
        x = (x - b_t / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(a_t)
        if t > 1:
            x = x + math.sqrt(b_t) * rng.standard_normal((n, d))
        if not np.isfinite(x).all():
            raise SamplingError(f"non-finite state at timestep {t}")
        stats["t"].append(t)
        stats["mean"].append(float(x.mean()))
        stats["var"].append(float(x.var()))
    return SampleRun(int(seed), int(n), x.astype(np.float32), stats)


def decode_coords(run, e, decoder, batch_size=256):
    """Invert the embedding's stored standardization on sampled coordinates
    and decode them in eval mode.  ``decoder`` is a (NetworkSpec, Parameters)
    pair; returns images in [-1, 1]."""
    dec_net, dec_params = decoder
    if e.standardization is None:
        raise ConfigError("embedding carries no standardization stats; standardize it first")
    d = e.coords.shape[1]
    if run.coords.shape[1] != d:
        raise ShapeError(f"samples are {run.coords.shape[1]}-dim but embedding is {d}-dim")
    if dec_net.input_shape != (d,):
        raise ShapeError(f"decoder input {dec_net.input_shape} does not accept {d}-dim coords")
    mean, sd = e.standardization
    raw = run.coords.astype(np.float64) * sd + mean
    outs = []
    for lo in range(0, run.coords.shape[0], batch_size):
        y, _ = nn.forward(dec_net, dec_params, raw[lo : lo + batch_size].astype(np.float32))
        outs.append(y)
    pixels = np.clip(np.concatenate(outs, axis=0), -1.0, 1.0)
    return ImageBatch(pixels, (-1.0, 1.0))


def generate_images(denoiser, sched, e, decoder, n, seed, batch_size=256):
    """Sample standardized coordinates with the trained denoiser, then decode
    them via decode_coords.  ``denoiser`` is a (DenoiserSpec, Parameters)
    pair; returns images in [-1, 1]."""
    dspec, dparams = denoiser
    if e.standardization is None:
        raise ConfigError("embedding carries no standardization stats; standardize it first")
    if dspec.data_dim != e.coords.shape[1]:
        raise ShapeError(
            f"denoiser is {dspec.data_dim}-dim but embedding is {e.coords.shape[1]}-dim"
        )
    run = ddpm_sample(dparams, dspec, sched, n, seed)
    return decode_coords(run, e, decoder, batch_size=batch_size)


# ---------------------------------------------------------------------------
# persistence


def save_denoiser(path, spec, params, sched, cfg=None, epoch=0):
    """MGCKPT/1 with the schedule in the header (betas are rederived on
    load, only T and the endpoints are stored)."""
    opt = {"lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2} if cfg else {}
    extra = {
        "kind": "denoiser",
        "data_dim": spec.data_dim,
        "hidden": list(spec.hidden),
        "time_embed_dim": spec.time_embed_dim,
        "schedule": {
            "T": sched.T,
            "beta1": float(sched.beta[0]),
            "betaT": float(sched.beta[-1]),
        },
    }
    nn.save_checkpoint(path, spec.net, params, opt, epoch, extra)


def load_denoiser(path):
    """Returns (DenoiserSpec, Parameters, NoiseSchedule)."""
    net, params, _, _, extra = nn.load_checkpoint(path)
    if not extra or extra.get("kind") != "denoiser":
        raise ConfigError(f"{path}: checkpoint does not describe a denoiser")
    spec = DenoiserSpec(
        int(extra["data_dim"]),
        tuple(int(h) for h in extra["hidden"]),
        int(extra["time_embed_dim"]),
        net,
    )
    s = extra["schedule"]
    sched = linear_schedule(int(s["T"]), float(s["beta1"]), float(s["betaT"]))
    return spec, params, sched


def save_samples(run, path, schedule_ref=None, denoiser_ref=None):
    """MGT1 coordinates plus a JSON sidecar at ``path + '.json'``."""
    save_tensor(run.coords, path)
    write_json(
        str(path) + ".json",
        {
            "schema": SAMPLES_SCHEMA,
            "seed": run.seed,
            "n": run.n,
            "trajectory_stats": run.trajectory_stats,
            "schedule": schedule_ref,
            "denoiser": denoiser_ref,
        },
    )


def load_samples(path):
    coords = load_tensor(path)
    side = read_json(str(path) + ".json")
    if side.get("schema") != SAMPLES_SCHEMA:
        raise ConfigError(f"expected schema {SAMPLES_SCHEMA}, got {side.get('schema')!r}")
    return SampleRun(int(side["seed"]), int(side["n"]), coords, side["trajectory_stats"])
