"""Decoders from fixed manifold embeddings, the convolutional autoencoder
baseline, and reconstruction metrics.

Decoder training treats the embedding as frozen input: coordinates are
corrupted by plain zeroing dropout (no inverted rescaling, which would change
the coordinate scale the decoder sees), targets are the original images, and
the parameters returned are those of the best validation epoch.  The loss
keeps a slot for a perceptual term, but no feature backend ships here;
enabling the term without registering one raises instead of silently
contributing zero.

Image metrics (PSNR, SSIM) are computed after an affine rescale of both
operands to [0, 1], with peak value 1.  SSIM uses a uniform 8x8 window at
stride 1 with the standard constants C1=0.01^2, C2=0.03^2 and biased window
statistics, accumulated via integral images.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import AlignmentError, ConfigError, ParameterError, ShapeError
from .nldr import Embedding
from .tensor import ImageBatch
from .util import read_json, seed_for, write_json

REPORT_SCHEMA = "manigen.recon_report/1"

# Hook for a feature-space loss backend: a callable (pred, target) ->
# (loss, dloss_dpred).  None means the perceptual term is unavailable and
# lambda_perceptual must stay 0.
perceptual_backend = None


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by decoder and autoencoder training."""

    epochs: int = 50
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    lambda_mse: float = 1.0
    lambda_perceptual: float = 0.0
    coord_dropout_p: float = 0.1
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if not 0.0 <= self.coord_dropout_p < 1.0:
            raise ParameterError(f"coord_dropout_p must be in [0, 1), got {self.coord_dropout_p}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ParameterError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.lambda_mse < 0 or self.lambda_perceptual < 0:
            raise ParameterError("loss weights must be >= 0")


@dataclass
class ReconReport:
    """Per-epoch loss curves plus final validation metrics at the best epoch.

    ``val_psnr`` is +inf when the validation MSE is exactly zero; the
    ``psnr_infinite`` flag makes that state explicit and JSON-safe.
    """

    train_loss: list
    val_loss: list
    best_epoch: int
    val_mse: float
    val_psnr: float
    val_ssim: float
    psnr_infinite: bool
    seconds: float

    def __post_init__(self):
        if len(self.train_loss) != len(self.val_loss):
            raise ParameterError("train and val curves must have equal length")
        if not 0 <= self.best_epoch < len(self.val_loss):
            raise ParameterError(f"best_epoch {self.best_epoch} outside curve")
        if self.psnr_infinite != math.isinf(self.val_psnr):
            raise ParameterError("psnr_infinite flag disagrees with val_psnr")
        if not self.psnr_infinite and self.val_psnr < 0:
            raise ParameterError(f"PSNR on [0, 1] images cannot be negative, got {self.val_psnr}")
        if not -1.0 - 1e-9 <= self.val_ssim <= 1.0 + 1e-9:
            raise ParameterError(f"SSIM must lie in [-1, 1], got {self.val_ssim}")
        if self.seconds < 0:
            raise ParameterError("negative wall clock")


def save_report(report, path):
    """Write a ReconReport as JSON under the ``manigen.recon_report/1`` schema."""
    write_json(
        path,
        {
            "schema": REPORT_SCHEMA,
            "train_loss": [float(v) for v in report.train_loss],
            "val_loss": [float(v) for v in report.val_loss],
            "best_epoch": int(report.best_epoch),
            "val_mse": float(report.val_mse),
            "val_psnr": None if report.psnr_infinite else float(report.val_psnr),
            "val_ssim": float(report.val_ssim),
            "psnr_infinite": bool(report.psnr_infinite),
            "seconds": float(report.seconds),
        },
    )


def load_report(path):
    side = read_json(path)
    if side.get("schema") != REPORT_SCHEMA:
        raise ConfigError(f"expected schema {REPORT_SCHEMA}, got {side.get('schema')!r}")
    psnr = math.inf if side["psnr_infinite"] else float(side["val_psnr"])
    return ReconReport(
        [float(v) for v in side["train_loss"]],
        [float(v) for v in side["val_loss"]],
        int(side["best_epoch"]),
        float(side["val_mse"]),
        psnr,
        float(side["val_ssim"]),
        bool(side["psnr_infinite"]),
        float(side["seconds"]),
    )


# ---------------------------------------------------------------------------
# architectures


def _upsample_stages(h, w, most):
    """Largest u <= most with both dims divisible by 2**u and a base of at
    least 4 pixels per side after shrinking."""
    for u in range(most, -1, -1):
        step = 1 << u
        if h % step == 0 and w % step == 0 and h // step >= 4 and w // step >= 4:
            return u
    raise ShapeError(f"output {h}x{w} not reachable, need at least 4 pixels per side")


def build_paper_decoder(embed_dim, out_shape, channels=(128, 64, 32)):
    """Upsampling decoder: a dense projection to an 8-channel base grid, then
    stride-2 transposed convolutions (kernel 4) with batch norm and ReLU, and
    a final kernel-3 transposed convolution into a tanh output head.

    For 64x64 outputs the base grid is 8x8 (projection width 512) and all
    three configured widths are used; smaller outputs shrink the base grid
    and drop leading widths so each remaining stage still doubles the
    resolution.  Outputs land in (-1, 1).
    """
    c, h, w = (int(v) for v in out_shape)
    if embed_dim < 1:
        raise ParameterError(f"embed_dim must be >= 1, got {embed_dim}")
    channels = tuple(int(v) for v in channels)
    if any(v < 1 for v in channels):
        raise ParameterError(f"channel widths must be positive, got {channels}")
    u = _upsample_stages(h, w, min(3, len(channels)))
    base_h, base_w = h >> u, w >> u
    widths = channels[len(channels) - u :] if u else ()
    layers = [nn.dense(embed_dim, 8 * base_h * base_w), nn.reshape((8, base_h, base_w))]
    prev = 8
    for width in widths:
        layers += [
            nn.conv_transpose2d(prev, width, 4, stride=2, padding=1),
            nn.batchnorm(width),
            nn.relu(),
        ]
        prev = width
    layers += [nn.conv_transpose2d(prev, c, 3, stride=1, padding=1), nn.tanh()]
    return nn.NetworkSpec(layers, (embed_dim,))


def build_dense_decoder(embed_dim, out_shape, hidden=()):
    """Fully connected decoder with no output squashing, exactly affine when
    ``hidden`` is empty.  Capacity and sanity baseline, not the paper path."""
    out_shape = tuple(int(v) for v in out_shape)
    layers = []
    prev = int(embed_dim)
    for width in hidden:
        layers += [nn.dense(prev, int(width)), nn.relu()]
        prev = int(width)
    layers += [nn.dense(prev, int(np.prod(out_shape))), nn.reshape(out_shape)]
    return nn.NetworkSpec(layers, (int(embed_dim),))


def build_autoencoder(in_shape, latent_dim, channels=None):
    """Convolutional autoencoder: conv / batch norm / LeakyReLU(0.2) blocks
    each followed by a 2x2 max pool, a dense bottleneck, and a mirrored
    transposed-convolution decoder ending in tanh.

    The channel ladder defaults to 32-64-128-256 for RGB and half that for
    grayscale; inputs whose sides divide fewer powers of two use
    correspondingly fewer stages.  Odd input sides are rejected.
    """
    c, h, w = (int(v) for v in in_shape)
    if latent_dim < 1:
        raise ParameterError(f"latent_dim must be >= 1, got {latent_dim}")
    if channels is None:
        channels = (32, 64, 128, 256) if c == 3 else (16, 32, 64, 128)
    channels = tuple(int(v) for v in channels)
    stages = 0
    for s in range(min(4, len(channels)), 0, -1):
        if h % (1 << s) == 0 and w % (1 << s) == 0:
            stages = s
            break
    if stages == 0:
        raise ShapeError(f"input {h}x{w} does not admit 2x2 pooling, need even sides")
    widths = channels[:stages]
    base_h, base_w = h >> stages, w >> stages
    layers = []
    prev = c
    for width in widths:
        layers += [
            nn.conv2d(prev, width, 3, stride=1, padding=1),
            nn.batchnorm(width),
            nn.leaky_relu(0.2),
            nn.maxpool2x2(),
        ]
        prev = width
    flat = prev * base_h * base_w
    layers += [nn.reshape((flat,)), nn.dense(flat, int(latent_dim))]
    layers += [nn.dense(int(latent_dim), flat), nn.reshape((prev, base_h, base_w))]
    for width in widths[-2::-1]:
        layers += [
            nn.conv_transpose2d(prev, width, 4, stride=2, padding=1),
            nn.batchnorm(width),
            nn.leaky_relu(0.2),
        ]
        prev = width
    layers += [nn.conv_transpose2d(prev, c, 4, stride=2, padding=1), nn.tanh()]
    net = nn.NetworkSpec(layers, (c, h, w))
    assert net.output_shape == (c, h, w)
    return net


def build_dense_autoencoder(in_shape, latent_dim):
    """Linear bottleneck autoencoder (flatten, dense, dense, unflatten).
    With latent_dim >= input size the identity map is realizable."""
    in_shape = tuple(int(v) for v in in_shape)
    flat = int(np.prod(in_shape))
    layers = [
        nn.reshape((flat,)),
        nn.dense(flat, int(latent_dim)),
        nn.dense(int(latent_dim), flat),
        nn.reshape(in_shape),
    ]
    return nn.NetworkSpec(layers, in_shape)


# ---------------------------------------------------------------------------
# loss and input corruption


def total_loss(pred, target, cfg):
    """Weighted MSE plus the optional perceptual term.  Returns the scalar
    loss and its exact gradient with respect to ``pred`` (float64)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if cfg.lambda_perceptual > 0.0 and perceptual_backend is None:
        raise ConfigError("lambda_perceptual > 0 but no perceptual backend is registered")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = cfg.lambda_mse * float(np.mean(diff * diff))
    grad = (2.0 * cfg.lambda_mse / diff.size) * diff
    if cfg.lambda_perceptual > 0.0:
        ploss, pgrad = perceptual_backend(pred, target)
        loss += cfg.lambda_perceptual * float(ploss)
        grad = grad + cfg.lambda_perceptual * np.asarray(pgrad, dtype=np.float64)
    return loss, grad


def coordinate_dropout(coords, p, seed):
    """Zero each coordinate independently with probability p, leaving the
    survivors unscaled.  Input corruption for robustness, so no inverted
    rescaling: the decoder should keep seeing coordinates at their true
    scale."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    coords = np.asarray(coords)
    if p == 0.0:
        return coords.copy()
    keep = np.random.default_rng(seed).random(coords.shape) >= p
    return coords * keep.astype(coords.dtype)


# ---------------------------------------------------------------------------
# training


def predict(net, params, x, batch_size=256):
    """Eval-mode forward pass in batches; returns the stacked outputs."""
    outs = []
    for lo in range(0, x.shape[0], batch_size):
        y, _ = nn.forward(net, params, x[lo : lo + batch_size], mode="eval")
        outs.append(y)
    return np.concatenate(outs, axis=0)


def _split(n, val_fraction, seed):
    if n < 2:
        raise ParameterError(f"need at least 2 samples to hold out validation, got {n}")
    perm = np.random.default_rng(seed_for(seed, "split")).permutation(n)
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    return perm[n_val:], perm[:n_val]


def _epoch_batches(train_idx, batch_size, rng):
    """Shuffled batches; a trailing singleton merges into the previous batch
    so train-mode batch norm always sees at least two rows."""
    order = rng.permutation(train_idx)
    batches = [order[lo : lo + batch_size] for lo in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _batches_per_epoch(n_train, batch_size):
    count = -(-n_train // batch_size)
    if count > 1 and n_train % batch_size == 1:
        count -= 1
    return count


def _fit(net, params, inputs, images, cfg, corrupt):
    """Shared Adam / cosine-annealing loop over (inputs -> images.pixels).
    Returns (best parameters, ReconReport)."""
    t0 = time.perf_counter()
    targets = images.pixels
    train_idx, val_idx = _split(inputs.shape[0], cfg.val_fraction, cfg.seed)
    state = nn.adam_init(params)
    total_steps = _batches_per_epoch(len(train_idx), cfg.batch_size) * cfg.epochs
    train_hist, val_hist = [], []
    best_val, best_params, best_epoch = math.inf, params.copy(), 0
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(seed_for(cfg.seed, f"epoch{epoch}"))
        running = 0.0
        for bi, batch in enumerate(_epoch_batches(train_idx, cfg.batch_size, rng)):
            xb = inputs[batch]
            if corrupt and cfg.coord_dropout_p > 0.0:
                xb = coordinate_dropout(
                    xb, cfg.coord_dropout_p, seed_for(cfg.seed, f"drop{epoch}.{bi}")
                )
            y, tape = nn.forward(
                net, params, xb, mode="train", rng_seed=seed_for(cfg.seed, f"net{epoch}.{bi}")
            )
            loss, dy = total_loss(y, targets[batch], cfg)
            dflat, _ = nn.backward(net, params, tape, dy)
            lr_t = nn.cosine_lr(step, total_steps, cfg.lr)
            params, state = nn.adam_step(
                params, dflat, state, lr_t, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay
            )
            running += loss * len(batch)
            step += 1
        train_hist.append(running / len(train_idx))
        val_pred = predict(net, params, inputs[val_idx], cfg.batch_size)
        val_loss, _ = total_loss(val_pred, targets[val_idx], cfg)
        val_hist.append(val_loss)
        if val_loss < best_val:
            best_val, best_params, best_epoch = val_loss, params.copy(), epoch
    val_pred = predict(net, best_params, inputs[val_idx], cfg.batch_size)
    val_true = targets[val_idx]
    mse = metric_mse(val_pred, val_true)
    lo, hi = images.value_range
    pred_batch = ImageBatch(np.clip(val_pred, lo, hi), images.value_range)
    true_batch = ImageBatch(val_true, images.value_range)
    psnr = metric_psnr(pred_batch, true_batch)
    # tiny images: shrink the SSIM window to the image side
    win = min(8, images.height, images.width)
    ssim = metric_ssim(pred_batch, true_batch, window=win)
    report = ReconReport(
        train_hist,
        val_hist,
        best_epoch,
        mse,
        psnr,
        ssim,
        math.isinf(psnr),
        time.perf_counter() - t0,
    )
    return best_params, report


def train_decoder(e, images, cfg, net=None):
    """Train a decoder from a fixed embedding to its source images.  The
    network defaults to the upsampling decoder sized for the image shape;
    inputs are the raw (unstandardized) embedding coordinates."""
    if not isinstance(e, Embedding):
        raise ParameterError("train_decoder expects an Embedding")
    coords = e.coords
    if coords.shape[0] != images.count:
        raise AlignmentError(
            f"embedding has {coords.shape[0]} rows but image batch has {images.count}"
        )
    if net is None:
        net = build_paper_decoder(
            coords.shape[1], (images.channels, images.height, images.width)
        )
    if net.input_shape != (coords.shape[1],):
        raise ShapeError(
            f"network input {net.input_shape} does not accept {coords.shape[1]}-dim coordinates"
        )
    params = nn.init_params(net, cfg.seed)
    return _fit(net, params, coords, images, cfg, corrupt=True)


def train_autoencoder(images, cfg, latent_dim, net=None):
    """Joint encoder-decoder training on images alone, same optimizer stack
    as train_decoder but with no coordinate dropout."""
    if net is None:
        net = build_autoencoder((images.channels, images.height, images.width), latent_dim)
    if net.input_shape != (images.channels, images.height, images.width):
        raise ShapeError(
            f"network input {net.input_shape} does not match images "
            f"{(images.channels, images.height, images.width)}"
        )
    params = nn.init_params(net, cfg.seed)
    return _fit(net, params, images.pixels, images, cfg, corrupt=False)


# ---------------------------------------------------------------------------
# metrics


def metric_mse(a, b):
    """Mean squared difference, accumulated in float64."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def _to_unit(batch):
    lo, hi = batch.value_range
    return (batch.pixels.astype(np.float64) - lo) / (hi - lo)


def _check_pair(a, b):
    if not isinstance(a, ImageBatch) or not isinstance(b, ImageBatch):
        raise ParameterError("image metrics take ImageBatch operands")
    if a.pixels.shape != b.pixels.shape:
        raise ParameterError(f"image shapes {a.pixels.shape} and {b.pixels.shape} differ")
    if tuple(a.value_range) != tuple(b.value_range):
        raise ParameterError(
            f"value ranges {a.value_range} and {b.value_range} differ"
        )


def metric_psnr(a, b):
    """Peak signal-to-noise ratio in dB over [0, 1]-rescaled images with
    peak 1, so 10*log10(1/MSE); identical batches give +inf."""
    _check_pair(a, b)
    mse = metric_mse(_to_unit(a), _to_unit(b))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _window_mean(x, window):
    # integral image: O(1) per window regardless of window size
    s = np.cumsum(np.cumsum(x, axis=-2), axis=-1)
    s = np.pad(s, ((0, 0), (0, 0), (1, 0), (1, 0)))
    w = window
    total = s[..., w:, w:] - s[..., :-w, w:] - s[..., w:, :-w] + s[..., :-w, :-w]
    return total / (w * w)


def metric_ssim(a, b, window=8):
    """Mean structural similarity over uniform ``window`` x ``window``
    patches at stride 1, biased patch statistics, averaged over batch and
    channels."""
    _check_pair(a, b)
    if a.height < window or a.width < window:
        raise ParameterError(
            f"images {a.height}x{a.width} smaller than the {window}x{window} window"
        )
    x = _to_unit(a)
    y = _to_unit(b)
    mu_x = _window_mean(x, window)
    mu_y = _window_mean(y, window)
    var_x = _window_mean(x * x, window) - mu_x * mu_x
    var_y = _window_mean(y * y, window) - mu_y * mu_y
    cov = _window_mean(x * y, window) - mu_x * mu_y
    c1, c2 = 0.01**2, 0.03**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
