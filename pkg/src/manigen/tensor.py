"""Float32 tensors, bit-exact MGT1 file I/O, image preprocessing, and
synthetic dataset generators.

Tensors are plain ``numpy.ndarray`` objects with dtype float32; the helpers
here enforce the finiteness invariant at the I/O boundary. Intermediate
accumulations run in float64 to bound drift, storage stays float32.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, ParameterError

MAGIC = b"MGT1"


def as_tensor(a):
    """Contiguous float32 view/copy of ``a``."""
    return np.ascontiguousarray(a, dtype=np.float32)


def check_finite(a, what="tensor"):
    if not np.all(np.isfinite(a)):
        bad = "NaN" if np.any(np.isnan(a)) else "Inf"
        raise DataError(f"{what} contains {bad} values")
    return a


def save_tensor(t, path):
    """Write ``t`` in the MGT1 format.

    Layout: b"MGT1", u32 little-endian rank, rank u32 dims, then the
    float32 little-endian payload in row-major order. Round-trips
    bit-exactly with load_tensor.
    """
    t = np.asarray(t)
    check_finite(t, f"tensor for {path}")
    payload = np.ascontiguousarray(t, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", t.ndim))
        f.write(struct.pack(f"<{t.ndim}I", *t.shape))
        f.write(payload.tobytes())


def load_tensor(path):
    """Read an MGT1 file back into a float32 array."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an MGT1 file")
    (rank,) = struct.unpack_from("<I", blob, 4)
    header_end = 8 + 4 * rank
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated header (rank {rank})")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = header_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob) - header_end} bytes, expected {4 * count}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=header_end)
    arr = data.reshape(shape).astype(np.float32, copy=True)
    if np.any(np.isnan(arr)):
        raise DataError(f"{path}: NaN in payload")
    if np.any(np.isinf(arr)):
        raise DataError(f"{path}: Inf in payload")
    return arr


@dataclass
class ImageBatch:
    """Batch of images, shape [count, channels, height, width], values in
    ``value_range``."""

    pixels: np.ndarray
    value_range: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = as_tensor(self.pixels)
        if self.pixels.ndim != 4:
            raise ParameterError(f"pixels must be 4-D, got shape {self.pixels.shape}")
        if self.channels not in (1, 3):
            raise ParameterError(f"channels must be 1 or 3, got {self.channels}")
        check_finite(self.pixels, "image batch")
        lo, hi = self.value_range
        if not lo < hi:
            raise ParameterError(f"value_range must satisfy lo < hi, got {self.value_range}")
        # clamp sub-ulp excursions from float32 rounding, reject real violations
        pmin, pmax = float(self.pixels.min(initial=lo)), float(self.pixels.max(initial=hi))
        tol = 1e-5 * (hi - lo)
        if pmin < lo - tol or pmax > hi + tol:
            raise ParameterError(
                f"pixel values [{pmin}, {pmax}] outside value_range {self.value_range}"
            )
        np.clip(self.pixels, lo, hi, out=self.pixels)

    @property
    def count(self):
        return self.pixels.shape[0]

    @property
    def channels(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[2]

    @property
    def width(self):
        return self.pixels.shape[3]


@dataclass
class SyntheticManifold:
    """Points in ambient space plus their ground-truth intrinsic parameters."""

    points: np.ndarray     # [n, ambient_dim]
    intrinsic: np.ndarray  # [n, intrinsic_dim]

    def __post_init__(self):
        self.points = as_tensor(self.points)
        self.intrinsic = as_tensor(self.intrinsic)
        if self.intrinsic.shape[1] >= self.points.shape[1]:
            raise ParameterError("intrinsic_dim must be < ambient_dim")


def normalize_minmax(batch, lo, hi):
    """Affine rescale of the whole batch so its global min maps to lo and
    global max to hi.

    A constant batch maps to the range midpoint and sets
    meta["degenerate_minmax"] = True instead of raising.
    """
    if not lo < hi:
        raise ParameterError(f"need lo < hi, got ({lo}, {hi})")
    x = batch.pixels.astype(np.float64)
    mn, mx = float(x.min()), float(x.max())
    meta = dict(batch.meta)
    meta["source_range"] = (mn, mx)
    if mx == mn:
        out = np.full_like(x, (lo + hi) / 2.0)
        meta["degenerate_minmax"] = True
    else:
        out = lo + (x - mn) * ((hi - lo) / (mx - mn))
        np.clip(out, lo, hi, out=out)
    return ImageBatch(out.astype(np.float32), (lo, hi), meta)


def resize_bilinear(batch, out_h, out_w):
    """Bilinear resampling with half-pixel centers (align_corners=false).

    Outputs are convex combinations of inputs, so values stay within the
    batch's value_range; resizing to the same dimensions is exact identity.
    """
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output dims must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = batch.pixels.shape
    x = batch.pixels.astype(np.float64)

    def axis_weights(out_len, in_len):
        scale = in_len / out_len
        src = (np.arange(out_len) + 0.5) * scale - 0.5
        src = np.clip(src, 0.0, in_len - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, in_len - 1)
        frac = src - i0
        return i0, i1, frac

    r0, r1, fr = axis_weights(out_h, h)
    c0, c1, fc = axis_weights(out_w, w)
    top = x[:, :, r0, :] * (1.0 - fr)[None, None, :, None] + x[:, :, r1, :] * fr[None, None, :, None]
    out = (
        top[:, :, :, c0] * (1.0 - fc)[None, None, None, :]
        + top[:, :, :, c1] * fc[None, None, None, :]
    )
    lo, hi = batch.value_range
    out = np.clip(out, lo, hi)
    return ImageBatch(out.astype(np.float32), batch.value_range, dict(batch.meta))


def flatten_images(batch):
    """[count, c, h, w] -> [count, c*h*w] in channel-major row-major order."""
    n = batch.count
    return batch.pixels.reshape(n, -1).copy()


def unflatten_images(x, channels, height, width, value_range):
    """Inverse of flatten_images given the image dimensions."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != channels * height * width:
        raise ParameterError(
            f"cannot unflatten shape {x.shape} to [{channels},{height},{width}]"
        )
    return ImageBatch(x.reshape(-1, channels, height, width).copy(), value_range)


def make_swiss_roll(n, noise_sd, seed):
    """Classic swiss roll: (t cos t, h, t sin t) with t ~ U[1.5pi, 4.5pi],
    h ~ U[0, 21], plus isotropic Gaussian noise of sd ``noise_sd``.

    Intrinsic coordinates are (t, h). Deterministic for a fixed seed.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    h = rng.uniform(0.0, 21.0, size=n)
    pts = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    if noise_sd > 0:
        pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
    return SyntheticManifold(pts, np.column_stack([t, h]))


def make_blob_images(n, height, width, channels=1, seed=0, amplitude2=-0.7):
    """Synthetic image manifold: each image is a pair of Gaussian bumps whose
    centers wander over the frame, giving a smooth 4-parameter family.

    Returns (ImageBatch normalized to [-1, 1], latents [n, 4]). The latent
    columns are the two bump centers in [0, 1]^2 order (x1, y1, x2, y2).
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    lat = rng.uniform(0.15, 0.85, size=(n, 4))
    yy, xx = np.meshgrid(
        (np.arange(height) + 0.5) / height,
        (np.arange(width) + 0.5) / width,
        indexing="ij",
    )
    sig1, sig2 = 0.16, 0.12
    g1 = np.exp(
        -((xx[None] - lat[:, 0, None, None]) ** 2 + (yy[None] - lat[:, 1, None, None]) ** 2)
        / (2 * sig1**2)
    )
    g2 = np.exp(
        -((xx[None] - lat[:, 2, None, None]) ** 2 + (yy[None] - lat[:, 3, None, None]) ** 2)
        / (2 * sig2**2)
    )
    img = g1 + amplitude2 * g2
    img = np.repeat(img[:, None, :, :], channels, axis=1)
    batch = ImageBatch(img.astype(np.float32), (float(img.min()), float(img.max() + 1e-6)))
    return normalize_minmax(batch, -1.0, 1.0), as_tensor(lat)


# ---------------------------------------------------------------------------
# PGM / PPM (binary, maxval 255) for visual output and small-format ingestion


def _to_bytes_image(a, value_range):
    lo, hi = value_range
    scaled = (np.asarray(a, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def save_pgm(path, gray, value_range=(-1.0, 1.0)):
    """Write a single [h, w] grayscale image as binary PGM (P5, maxval 255)."""
    img = _to_bytes_image(gray, value_range)
    if img.ndim != 2:
        raise ParameterError(f"PGM wants a 2-D array, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def save_ppm(path, rgb, value_range=(-1.0, 1.0)):
    """Write a single [3, h, w] RGB image as binary PPM (P6, maxval 255)."""
    img = _to_bytes_image(rgb, value_range)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ParameterError(f"PPM wants a [3, h, w] array, got shape {img.shape}")
    h, w = img.shape[1:]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.moveaxis(img, 0, -1).tobytes())


def _read_pnm_header(blob, path):
    # magic, whitespace/comment-separated width, height, maxval
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if i < len(blob) and blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError(f"{path}: truncated PNM header")
        tokens.append(blob[start:i])
    i += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: non-numeric PNM header fields") from None
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    return w, h, i


def load_pgm(path):
    """Read a binary PGM (P5) into a float32 [h, w] array scaled to [-1, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    w, h, off = _read_pnm_header(blob, path)
    if len(blob) - off != w * h:
        raise FormatError(f"{path}: payload is {len(blob) - off} bytes, expected {w * h}")
    img = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=off).reshape(h, w)
    return (img.astype(np.float32) / 255.0) * 2.0 - 1.0


def load_ppm(path):
    """Read a binary PPM (P6) into a float32 [3, h, w] array scaled to [-1, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    w, h, off = _read_pnm_header(blob, path)
    if len(blob) - off != 3 * w * h:
        raise FormatError(f"{path}: payload is {len(blob) - off} bytes, expected {3 * w * h}")
    img = np.frombuffer(blob, dtype=np.uint8, count=3 * w * h, offset=off).reshape(h, w, 3)
    return np.moveaxis((img.astype(np.float32) / 255.0) * 2.0 - 1.0, -1, 0)


def tile_grid(images, cols, pad=1, pad_value=None):
    """Tile [n, c, h, w] images into one [c, H, W] grid with ``pad`` pixel
    separators. Used for the emitted PGM/PPM sample grids."""
    images = as_tensor(images)
    n, c, h, w = images.shape
    if pad_value is None:
        pad_value = float(images.min())
    rows = (n + cols - 1) // cols
    grid = np.full(
        (c, rows * (h + pad) + pad, cols * (w + pad) + pad), pad_value, dtype=np.float32
    )
    for idx in range(n):
        r, col = divmod(idx, cols)
        y0 = pad + r * (h + pad)
        x0 = pad + col * (w + pad)
        grid[:, y0 : y0 + h, x0 : x0 + w] = images[idx]
    return grid


def save_image_grid(path, images, cols, value_range):
    """Write an image grid as PGM (1 channel) or PPM (3 channels)."""
    grid = tile_grid(images, cols, pad_value=value_range[0])
    if grid.shape[0] == 1:
        save_pgm(path, grid[0], value_range)
    else:
        save_ppm(path, grid, value_range)
