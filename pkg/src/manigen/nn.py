"""Minimal neural-network engine: declarative layer specs, forward/backward
passes, Adam with decoupled weight decay, cosine annealing, and checkpoint
I/O. Ten layer kinds, enough for the transposed-convolution decoder, the
convolutional autoencoder, and the denoiser MLP.

The engine is dtype-polymorphic: arrays flow in the dtype of the parameters,
float32 in normal training and float64 when gradient checking needs the
extra headroom.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ParameterError, ShapeError
from .tensor import MAGIC as MGT_MAGIC
from .util import seed_for, stable_json_dumps

CKPT_MAGIC = b"MGCKPT/1\n"

KINDS = (
    "dense",
    "conv2d",
    "conv_transpose2d",
    "maxpool2x2",
    "batchnorm",
    "relu",
    "leaky_relu",
    "tanh",
    "dropout",
    "reshape",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    cfg: tuple  # sorted (key, value) pairs; hashable and JSON-friendly

    def __getitem__(self, key):
        for k, v in self.cfg:
            if k == key:
                return v
        raise KeyError(key)

    def get(self, key, default=None):
        for k, v in self.cfg:
            if k == key:
                return v
        return default

    def to_dict(self):
        d = {"kind": self.kind}
        d.update({k: list(v) if isinstance(v, tuple) else v for k, v in self.cfg})
        return d


def _spec(kind, **cfg):
    if kind not in KINDS:
        raise ParameterError(f"unknown layer kind {kind!r}")
    canon = tuple(sorted((k, tuple(v) if isinstance(v, (list, tuple)) else v) for k, v in cfg.items()))
    return LayerSpec(kind, canon)


def dense(in_dim, out_dim):
    if in_dim < 1 or out_dim < 1:
        raise ParameterError(f"dense dims must be >= 1, got {in_dim}->{out_dim}")
    return _spec("dense", in_dim=int(in_dim), out_dim=int(out_dim))


def conv2d(in_ch, out_ch, kernel, stride=1, padding=0):
    if min(in_ch, out_ch, kernel, stride) < 1 or padding < 0:
        raise ParameterError("conv2d wants in_ch,out_ch,kernel,stride >= 1 and padding >= 0")
    return _spec("conv2d", in_ch=int(in_ch), out_ch=int(out_ch), kernel=int(kernel),
                 stride=int(stride), padding=int(padding))


def conv_transpose2d(in_ch, out_ch, kernel, stride=1, padding=0, output_padding=0):
    if min(in_ch, out_ch, kernel, stride) < 1 or padding < 0 or output_padding < 0:
        raise ParameterError("conv_transpose2d wants positive dims and nonnegative padding")
    if output_padding >= stride:
        raise ParameterError(f"output_padding {output_padding} must be < stride {stride}")
    return _spec("conv_transpose2d", in_ch=int(in_ch), out_ch=int(out_ch), kernel=int(kernel),
                 stride=int(stride), padding=int(padding), output_padding=int(output_padding))


def maxpool2x2():
    return _spec("maxpool2x2")


def batchnorm(channels, momentum=0.1, eps=1e-5):
    if channels < 1 or not 0 < momentum <= 1 or eps <= 0:
        raise ParameterError("batchnorm wants channels >= 1, momentum in (0,1], eps > 0")
    return _spec("batchnorm", channels=int(channels), momentum=float(momentum), eps=float(eps))


def relu():
    return _spec("relu")


def leaky_relu(slope=0.2):
    if slope < 0:
        raise ParameterError(f"slope must be >= 0, got {slope}")
    return _spec("leaky_relu", slope=float(slope))


def tanh():
    return _spec("tanh")


def dropout(p):
    if not 0 <= p < 1:
        raise ParameterError(f"dropout p must be in [0, 1), got {p}")
    return _spec("dropout", p=float(p))


def reshape(shape):
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ParameterError(f"reshape dims must be >= 1, got {shape}")
    return _spec("reshape", shape=shape)


def layer_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    maker = {
        "dense": dense, "conv2d": conv2d, "conv_transpose2d": conv_transpose2d,
        "maxpool2x2": maxpool2x2, "batchnorm": batchnorm, "relu": relu,
        "leaky_relu": leaky_relu, "tanh": tanh, "dropout": dropout, "reshape": reshape,
    }.get(kind)
    if maker is None:
        raise FormatError(f"unknown layer kind {kind!r} in spec")
    return maker(**d)


def _out_shape(layer, shape, idx):
    """Shape (without batch dim) after ``layer``; raises ShapeError naming it."""
    kind = layer.kind

    def bad(msg):
        raise ShapeError(f"layer {idx} ({kind}): {msg}")

    if kind == "dense":
        if len(shape) != 1 or shape[0] != layer["in_dim"]:
            bad(f"wants flat input of {layer['in_dim']}, got {shape}")
        return (layer["out_dim"],)
    if kind == "conv2d":
        if len(shape) != 3 or shape[0] != layer["in_ch"]:
            bad(f"wants [in_ch={layer['in_ch']}, h, w], got {shape}")
        k, s, p = layer["kernel"], layer["stride"], layer["padding"]
        h = (shape[1] + 2 * p - k) // s + 1
        w = (shape[2] + 2 * p - k) // s + 1
        if shape[1] + 2 * p < k or shape[2] + 2 * p < k:
            bad(f"kernel {k} exceeds padded input {shape[1:]}")
        return (layer["out_ch"], h, w)
    if kind == "conv_transpose2d":
        if len(shape) != 3 or shape[0] != layer["in_ch"]:
            bad(f"wants [in_ch={layer['in_ch']}, h, w], got {shape}")
        k, s, p, op = layer["kernel"], layer["stride"], layer["padding"], layer["output_padding"]
        h = (shape[1] - 1) * s - 2 * p + k + op
        w = (shape[2] - 1) * s - 2 * p + k + op
        if h < 1 or w < 1:
            bad(f"output {h}x{w} not positive")
        return (layer["out_ch"], h, w)
    if kind == "maxpool2x2":
        if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
            bad(f"wants [c, even h, even w], got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if kind == "batchnorm":
        c = layer["channels"]
        if len(shape) not in (1, 3) or shape[0] != c:
            bad(f"wants leading channel dim {c}, got {shape}")
        return shape
    if kind in ("relu", "leaky_relu", "tanh", "dropout"):
        return shape
    if kind == "reshape":
        target = layer["shape"]
        if int(np.prod(shape)) != int(np.prod(target)):
            bad(f"cannot reshape {shape} ({int(np.prod(shape))}) to {target} ({int(np.prod(target))})")
        return tuple(target)
    bad("unhandled kind")


@dataclass
class NetworkSpec:
    layers: list
    input_shape: tuple

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = list(self.layers)
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            shapes.append(_out_shape(layer, shapes[-1], i))
        self.shapes = shapes  # per-boundary shapes, len == len(layers) + 1

    @property
    def output_shape(self):
        return self.shapes[-1]

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([layer_from_dict(l) for l in d["layers"]], tuple(d["input_shape"]))


def _param_shapes(layer):
    kind = layer.kind
    if kind == "dense":
        return [("W", (layer["out_dim"], layer["in_dim"])), ("b", (layer["out_dim"],))]
    if kind == "conv2d":
        k = layer["kernel"]
        return [("W", (layer["out_ch"], layer["in_ch"], k, k)), ("b", (layer["out_ch"],))]
    if kind == "conv_transpose2d":
        k = layer["kernel"]
        return [("W", (layer["in_ch"], layer["out_ch"], k, k)), ("b", (layer["out_ch"],))]
    if kind == "batchnorm":
        return [("gamma", (layer["channels"],)), ("beta", (layer["channels"],))]
    return []


@dataclass
class Parameters:
    """All trainable values as one flat vector plus a per-layer layout table
    (layer index, name, offset, length, shape) and BatchNorm running stats.

    Running stats are updated in place by train-mode forward passes, the one
    deliberate piece of mutable state (mirrors standard framework behavior).
    """

    flat: np.ndarray
    layout: list
    running_stats: dict  # layer idx -> {"mean": [c], "var": [c]}

    def __post_init__(self):
        total = sum(length for _, _, _, length, _ in self.layout)
        if total != self.flat.shape[0]:
            raise ParameterError(f"layout covers {total} values, flat has {self.flat.shape[0]}")
        for stats in self.running_stats.values():
            if np.any(stats["var"] < 0):
                raise ParameterError("running variance must be >= 0")

    def view(self, idx, name):
        for li, nm, off, length, shape in self.layout:
            if li == idx and nm == name:
                return self.flat[off : off + length].reshape(shape)
        raise KeyError((idx, name))

    @property
    def size(self):
        return self.flat.shape[0]

    def astype(self, dtype):
        stats = {
            i: {"mean": s["mean"].astype(dtype), "var": s["var"].astype(dtype)}
            for i, s in self.running_stats.items()
        }
        return Parameters(self.flat.astype(dtype), list(self.layout), stats)

    def copy(self):
        return self.astype(self.flat.dtype)


def init_params(net, seed, dtype=np.float32):
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
    BatchNorm gamma=1/beta=0, running stats (0, 1). Deterministic in seed."""
    rng = np.random.default_rng(seed_for(seed, "init"))
    layout, chunks, stats = [], [], {}
    off = 0
    for idx, layer in enumerate(net.layers):
        for name, shape in _param_shapes(layer):
            length = int(np.prod(shape))
            if name == "W":
                if layer.kind == "dense":
                    fan_in, fan_out = layer["in_dim"], layer["out_dim"]
                elif layer.kind == "conv2d":
                    k = layer["kernel"]
                    fan_in, fan_out = layer["in_ch"] * k * k, layer["out_ch"] * k * k
                else:
                    k = layer["kernel"]
                    fan_in, fan_out = layer["in_ch"] * k * k, layer["out_ch"] * k * k
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                vals = rng.uniform(-bound, bound, size=length)
            elif name == "gamma":
                vals = np.ones(length)
            else:
                vals = np.zeros(length)
            layout.append((idx, name, off, length, shape))
            chunks.append(vals)
            off += length
        if layer.kind == "batchnorm":
            c = layer["channels"]
            stats[idx] = {"mean": np.zeros(c, dtype=dtype), "var": np.ones(c, dtype=dtype)}
    flat = np.concatenate(chunks).astype(dtype) if chunks else np.zeros(0, dtype=dtype)
    return Parameters(flat, layout, stats)


# ---------------------------------------------------------------------------
# layer primitives


def _conv2d_windows(x, kernel, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return np.ascontiguousarray(win[:, :, ::stride, ::stride])  # [n,c,oh,ow,k,k]


def conv2d_forward(x, W, b, stride, padding):
    win = _conv2d_windows(x, W.shape[2], stride, padding)
    y = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # [n,oh,ow,oc]
    y = np.moveaxis(y, 3, 1)
    if b is not None:
        y = y + b[None, :, None, None]
    return np.ascontiguousarray(y), win


def conv2d_backward(x, win, W, dy, stride, padding):
    n, c, h, w = x.shape
    db = dy.sum(axis=(0, 2, 3))
    dW = np.tensordot(np.moveaxis(dy, 1, 3), win, axes=([0, 1, 2], [0, 2, 3]))  # [oc,c,k,k]
    # input gradient: scatter dy back through each kernel tap
    k = W.shape[2]
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    oh, ow = dy.shape[2], dy.shape[3]
    dyt = np.moveaxis(dy, 1, 3)  # [n,oh,ow,oc]
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(dyt, W[:, :, i, j], axes=([3], [0]))  # [n,oh,ow,c]
            dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += np.moveaxis(
                contrib, 3, 1
            )
    dx = dxp[:, :, padding : padding + h, padding : padding + w]
    return dW, db, np.ascontiguousarray(dx)


def conv_transpose2d_forward(x, weights, stride, padding, output_padding, bias=None):
    """Transposed convolution, the adjoint of conv2d with the same geometry.

    weights have shape [in_ch, out_ch, k, k]; the output spatial size is
    (in - 1)*stride - 2*padding + kernel + output_padding. Implemented by
    scattering each kernel tap onto a strided canvas then cropping.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d wants [n,c,h,w], got {x.shape}")
    n, c, h, w = x.shape
    if c != weights.shape[0]:
        raise ShapeError(f"input channels {c} != weight in_ch {weights.shape[0]}")
    k = weights.shape[2]
    if output_padding >= stride:
        raise ShapeError(f"output_padding {output_padding} must be < stride {stride}")
    out_h = (h - 1) * stride - 2 * padding + k + output_padding
    out_w = (w - 1) * stride - 2 * padding + k + output_padding
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"computed output {out_h}x{out_w} not positive")
    canvas = np.zeros(
        (n, weights.shape[1], (h - 1) * stride + k + output_padding,
         (w - 1) * stride + k + output_padding),
        dtype=x.dtype,
    )
    xt = np.moveaxis(x, 1, 3)  # [n,h,w,in_ch]
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(xt, weights[:, :, i, j], axes=([3], [0]))  # [n,h,w,oc]
            canvas[:, :, i : i + h * stride : stride, j : j + w * stride : stride] += np.moveaxis(
                contrib, 3, 1
            )
    y = canvas[:, :, padding : padding + out_h, padding : padding + out_w]
    if bias is not None:
        y = y + bias[None, :, None, None]
    return np.ascontiguousarray(y)


def conv_transpose2d_backward(x, weights, dy, stride, padding, output_padding):
    n, c, h, w = x.shape
    k = weights.shape[2]
    db = dy.sum(axis=(0, 2, 3))
    # dx: restore dy to canvas coordinates (undo the forward crop), then
    # gather the same strided windows the forward scatter wrote into
    dyp = np.pad(dy, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    dyp = dyp[:, :, : (h - 1) * stride + k, : (w - 1) * stride + k]
    win = sliding_window_view(dyp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :h, :w]  # [n,oc,h,w,k,k]
    dx = np.tensordot(win, weights, axes=([1, 4, 5], [1, 2, 3]))  # [n,h,w,in_ch]
    dx = np.ascontiguousarray(np.moveaxis(dx, 3, 1))
    dW = np.tensordot(np.moveaxis(x, 1, 3), np.moveaxis(win, 1, 3), axes=([0, 1, 2], [0, 1, 2]))
    return dW, db, dx


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 wants even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    arg = blocks.argmax(axis=4)  # first maximum wins on ties
    y = np.take_along_axis(blocks, arg[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(y), arg


def maxpool2x2_backward(arg, dy, in_shape):
    n, c, h, w = in_shape
    dblocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dblocks, arg[..., None], dy[..., None], axis=4)
    dx = dblocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(dx)


def batchnorm_forward(x, gamma, beta, mode, running_stats, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization. Train mode normalizes by the biased
    batch statistics and folds them into the running stats with the given
    momentum; eval mode uses the running stats."""
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm wants [n,f] or [n,c,h,w], got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    expand = (lambda v: v) if x.ndim == 2 else (lambda v: v[:, None, None])
    if mode == "train":
        if x.shape[0] < 2:
            raise ParameterError("batchnorm train mode needs batch >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        kept = running_stats["mean"].dtype  # stats keep their storage dtype
        running_stats["mean"] = ((1 - momentum) * running_stats["mean"] + momentum * mean).astype(kept)
        running_stats["var"] = ((1 - momentum) * running_stats["var"] + momentum * var).astype(kept)
    else:
        mean = running_stats["mean"]
        var = running_stats["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - expand(mean)[None]) * expand(inv)[None]
    y = xhat * expand(gamma)[None] + expand(beta)[None]
    cache = (xhat, inv, axes, expand, mode)
    return y.astype(x.dtype), cache


def batchnorm_backward(cache, gamma, dy):
    xhat, inv, axes, expand, mode = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * expand(gamma)[None]
    if mode == "train":
        m = np.prod([xhat.shape[a] for a in axes])
        dx = (
            dxhat - expand(dxhat.sum(axis=axes) / m)[None]
            - xhat * expand((dxhat * xhat).sum(axis=axes) / m)[None]
        ) * expand(inv)[None]
    else:
        dx = dxhat * expand(inv)[None]
    return dgamma, dbeta, dx.astype(dy.dtype)


# ---------------------------------------------------------------------------
# network forward / backward


def forward(net, params, x, mode="eval", rng_seed=0):
    """Run the composed network. Returns (y, tape); the tape carries what
    backward needs. Train mode draws seeded dropout masks and updates
    BatchNorm running stats; eval is deterministic and batch-independent.

    Arithmetic runs in float64; results round to the parameter dtype at
    every layer boundary, so float32 parameters give float32 storage with
    float64 accumulation.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be train or eval, got {mode!r}")
    x = np.asarray(x)
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(
            f"input shape {tuple(x.shape[1:])} does not match network input {net.input_shape}"
        )
    storage = params.flat.dtype

    def store(a):
        return a if a.dtype == storage else a.astype(storage).astype(np.float64)

    def p64(idx, name):
        return params.view(idx, name).astype(np.float64)

    tape = {"mode": mode, "records": [], "x": x, "storage": storage}
    h = store(x.astype(np.float64))
    for idx, layer in enumerate(net.layers):
        kind = layer.kind
        rec = {"in": h}
        if kind == "dense":
            h = store(h @ p64(idx, "W").T + p64(idx, "b"))
        elif kind == "conv2d":
            h, win = conv2d_forward(h, p64(idx, "W"), p64(idx, "b"),
                                    layer["stride"], layer["padding"])
            h = store(h)
            rec["win"] = win
        elif kind == "conv_transpose2d":
            h = store(conv_transpose2d_forward(
                h, p64(idx, "W"), layer["stride"], layer["padding"],
                layer["output_padding"], bias=p64(idx, "b"),
            ))
        elif kind == "maxpool2x2":
            h, arg = maxpool2x2_forward(h)
            rec["arg"] = arg
        elif kind == "batchnorm":
            h, cache = batchnorm_forward(
                h, p64(idx, "gamma"), p64(idx, "beta"), mode,
                params.running_stats[idx], layer["momentum"], layer["eps"],
            )
            h = store(h)
            rec["bn"] = cache
        elif kind == "relu":
            h = np.maximum(h, 0)
        elif kind == "leaky_relu":
            s = layer["slope"]
            h = store(np.where(h >= 0, h, s * h))
        elif kind == "tanh":
            h = store(np.tanh(h))
        elif kind == "dropout":
            if mode == "train":
                p = layer["p"]
                rng = np.random.default_rng(seed_for(rng_seed, f"dropout{idx}"))
                mask = (rng.random(h.shape) >= p).astype(np.float64) / (1.0 - p)
                h = store(h * mask)
                rec["mask"] = mask
        elif kind == "reshape":
            h = h.reshape((h.shape[0],) + tuple(layer["shape"]))
        rec["out"] = h
        tape["records"].append(rec)
    return h.astype(storage), tape


def backward(net, params, tape, dy):
    """Gradients of the scalar whose output-gradient is ``dy`` with respect
    to every parameter (flat, aligned with params.layout) and the input."""
    dy = np.asarray(dy)
    expected = tape["records"][-1]["out"].shape if net.layers else tape["x"].shape
    if dy.shape != expected:
        raise ShapeError(f"dy shape {dy.shape} does not match network output {expected}")
    storage = params.flat.dtype
    dflat = np.zeros(params.flat.shape, dtype=np.float64)

    def put(idx, name, g):
        for li, nm, off, length, shape in params.layout:
            if li == idx and nm == name:
                dflat[off : off + length] += g.reshape(-1)
                return
        raise KeyError((idx, name))

    def p64(idx, name):
        return params.view(idx, name).astype(np.float64)

    g = dy.astype(np.float64)
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        rec = tape["records"][idx]
        kind = layer.kind
        h_in = rec["in"]
        if kind == "dense":
            put(idx, "W", g.T @ h_in)
            put(idx, "b", g.sum(axis=0))
            g = g @ p64(idx, "W")
        elif kind == "conv2d":
            dW, db, g = conv2d_backward(
                h_in, rec["win"], p64(idx, "W"), g, layer["stride"], layer["padding"]
            )
            put(idx, "W", dW)
            put(idx, "b", db)
        elif kind == "conv_transpose2d":
            dW, db, g = conv_transpose2d_backward(
                h_in, p64(idx, "W"), g, layer["stride"], layer["padding"],
                layer["output_padding"],
            )
            put(idx, "W", dW)
            put(idx, "b", db)
        elif kind == "maxpool2x2":
            g = maxpool2x2_backward(rec["arg"], g, h_in.shape)
        elif kind == "batchnorm":
            dgamma, dbeta, g = batchnorm_backward(rec["bn"], p64(idx, "gamma"), g)
            put(idx, "gamma", dgamma)
            put(idx, "beta", dbeta)
        elif kind == "relu":
            g = g * (h_in > 0)
        elif kind == "leaky_relu":
            s = layer["slope"]
            g = np.where(h_in >= 0, g, s * g)
        elif kind == "tanh":
            out = rec["out"]
            g = g * (1.0 - out * out)
        elif kind == "dropout":
            if "mask" in rec:
                g = g * rec["mask"]
        elif kind == "reshape":
            g = g.reshape(h_in.shape)
    return dflat.astype(storage), g.astype(storage)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise ParameterError("Adam moment shapes disagree")
        if np.any(self.v < 0):
            raise ParameterError("Adam second moment must be >= 0")


def adam_init(params):
    return AdamState(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)


def adam_step(params, dparams, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Bias-corrected Adam with decoupled weight decay applied to the
    parameters before the adaptive update. Returns (new_params, new_state)."""
    if dparams.shape != params.flat.shape:
        raise ParameterError(
            f"gradient shape {dparams.shape} != parameter shape {params.flat.shape}"
        )
    t = state.step + 1
    flat = params.flat * (1.0 - lr * weight_decay)
    m = beta1 * state.m + (1.0 - beta1) * dparams
    v = beta2 * state.v + (1.0 - beta2) * dparams * dparams
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    flat = (flat - lr * mhat / (np.sqrt(vhat) + eps)).astype(params.flat.dtype)
    new_params = Parameters(flat, list(params.layout), params.running_stats)
    return new_params, AdamState(m.astype(params.flat.dtype), v.astype(params.flat.dtype), t)


def cosine_lr(t, T, lr_max, lr_min=0.0):
    """lr_min + (lr_max - lr_min) * (1 + cos(pi t / T)) / 2."""
    if T < 1 or not 0 <= t <= T:
        raise ParameterError(f"need 0 <= t <= T and T >= 1, got t={t}, T={T}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * t / T))


def grad_check(net, params, loss_fn, x, eps=1e-5, rng_seed=0):
    """Worst disagreement between backward() and central finite differences
    over every parameter, relative to the gradient's largest component.

    ``loss_fn(y) -> (loss, dy)`` defines the scalar objective. The dropout
    seed is held fixed so stochastic layers see identical masks on both
    probes of each difference. The probes run with parameters upcast to
    float64 so the difference quotient is a high-precision oracle; backward
    runs in the network's native dtype and is what the check verifies.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    y, tape = forward(net, params, x, mode="train", rng_seed=rng_seed)
    _, dy = loss_fn(y)
    dflat, _ = backward(net, params, tape, dy)
    fd_vec = np.empty(params.size)
    probe = params.astype(np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    for i in range(params.size):
        orig = probe.flat[i]
        probe.flat[i] = orig + eps
        yp, _ = forward(net, probe, x64, mode="train", rng_seed=rng_seed)
        lp, _ = loss_fn(yp)
        probe.flat[i] = orig - eps
        ym, _ = forward(net, probe, x64, mode="train", rng_seed=rng_seed)
        lm, _ = loss_fn(ym)
        probe.flat[i] = orig
        fd_vec[i] = (lp - lm) / (2.0 * eps)
    bw = dflat.astype(np.float64)
    scale = max(np.abs(fd_vec).max(initial=0.0), np.abs(bw).max(initial=0.0), 1e-12)
    return float(np.abs(fd_vec - bw).max(initial=0.0) / scale)


# ---------------------------------------------------------------------------
# checkpoint I/O (MGCKPT/1)


def _mgt_bytes(arr):
    arr = np.asarray(arr)
    parts = [MGT_MAGIC, struct.pack("<I", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape)]
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def _mgt_from_bytes(blob, what):
    if blob[:4] != MGT_MAGIC:
        raise FormatError(f"{what}: bad embedded tensor magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    start = 8 + 4 * rank
    if len(blob) != start + 4 * count:
        raise FormatError(f"{what}: embedded tensor size mismatch")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape).copy()


def save_checkpoint(path, net, params, opt_hyper, epoch, extra=None):
    """MGCKPT/1: magic line, u32 header length, JSON header, then MGT1 blobs.

    The header records the network spec, parameter layout, optimizer
    hyperparameters, epoch, and a blob table of (name, offset, length)
    relative to the end of the header.
    """
    blobs = [("params", _mgt_bytes(params.flat))]
    for idx in sorted(params.running_stats):
        blobs.append((f"bn{idx}.mean", _mgt_bytes(params.running_stats[idx]["mean"])))
        blobs.append((f"bn{idx}.var", _mgt_bytes(params.running_stats[idx]["var"])))
    table, off = [], 0
    for name, blob in blobs:
        table.append({"name": name, "offset": off, "length": len(blob)})
        off += len(blob)
    header = {
        "format": "MGCKPT/1",
        "net": net.to_dict(),
        "layout": [
            {"layer": li, "name": nm, "offset": o, "length": ln, "shape": list(sh)}
            for li, nm, o, ln, sh in params.layout
        ],
        "opt": opt_hyper,
        "epoch": int(epoch),
        "extra": extra or {},
        "blobs": table,
    }
    hbytes = stable_json_dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for _, blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (net, params, opt_hyper, epoch, extra)."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(CKPT_MAGIC):
        raise FormatError(f"{path}: not an MGCKPT/1 checkpoint")
    base = len(CKPT_MAGIC)
    if len(raw) < base + 4:
        raise FormatError(f"{path}: truncated checkpoint header")
    (hlen,) = struct.unpack_from("<I", raw, base)
    hstart = base + 4
    if len(raw) < hstart + hlen:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[hstart : hstart + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format") != "MGCKPT/1":
        raise FormatError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    body = raw[hstart + hlen :]
    blobs = {}
    for entry in header["blobs"]:
        lo, hi = entry["offset"], entry["offset"] + entry["length"]
        if hi > len(body):
            raise FormatError(f"{path}: blob {entry['name']!r} extends past end of file")
        blobs[entry["name"]] = _mgt_from_bytes(body[lo:hi], entry["name"])
    net = NetworkSpec.from_dict(header["net"])
    layout = [
        (e["layer"], e["name"], e["offset"], e["length"], tuple(e["shape"]))
        for e in header["layout"]
    ]
    stats = {}
    for name in blobs:
        if name.startswith("bn") and name.endswith(".mean"):
            idx = int(name[2:].split(".")[0])
            stats[idx] = {"mean": blobs[name], "var": blobs[f"bn{idx}.var"]}
    params = Parameters(blobs["params"], layout, stats)
    return net, params, header["opt"], header["epoch"], header["extra"]
