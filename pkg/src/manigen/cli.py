"""Command-line pipeline: dataset synthesis, embeddings, decoder and
autoencoder training, embedding-space diffusion, sampling, and report
comparison.

Configuration lives in an optional JSON file given with --config whose
sections are named after the subcommands (underscored); any flag passed on
the command line overrides the file.  Every command takes --out-dir for its
artifacts and a root --seed that is split per stage with the sha256 rule in
util.seed_for, so one seed reproduces the whole pipeline.

Exit codes: 0 success, 2 usage or configuration errors (bad flags, bad
config, missing or malformed input files), 1 runtime and numerical errors.
Every failure prints a single-line JSON object {"error", "message"} on
stderr.  Each successful command appends a stage entry (output files with
sha256 hashes, config hash, wall-clock seconds, timestamp) to
``manifest.json`` in the output directory; timestamps and seconds are the
only fields that vary between identical reruns.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__, diffusion, nldr, nn, recon, tensor
from .errors import AlignmentError, ConfigError, FormatError, ManigenError
from .util import read_json, seed_for, sha256_file, sha256_text, stable_json_dumps, write_json

_SECTIONS = (
    "make_dataset",
    "embed",
    "train_decoder",
    "train_ae",
    "train_diffusion",
    "sample",
    "evaluate",
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the JSON error contract
    instead of printing its own text and exiting."""

    def error(self, message):
        raise ConfigError(message)


def _require_file(path, what="input"):
    if not os.path.isfile(path):
        raise FormatError(f"{path}: no such {what} file")
    return path


def _load_config(path):
    if path is None:
        return {}
    _require_file(path, "config")
    try:
        cfg = read_json(path)
    except json.JSONDecodeError as ex:
        raise ConfigError(f"{path}: invalid JSON ({ex})") from ex
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config root must be an object")
    allowed = set(_SECTIONS) | {"seed", "out_dir"}
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return cfg


class _Resolver:
    """Flag > config-section value > config top level (seed, out_dir) >
    default.  Rejects unknown keys in the section so typos fail loudly."""

    def __init__(self, args, config, section):
        self.args = args
        self.top = config
        self.section = config.get(section, {})
        if not isinstance(self.section, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        self.known = set()

    def get(self, name, default=None):
        self.known.add(name)
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.section:
            return self.section[name]
        if name in ("seed", "out_dir") and name in self.top:
            return self.top[name]
        return default

    def finish(self):
        unknown = sorted(set(self.section) - self.known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")


def _int_list(text):
    try:
        return tuple(int(v) for v in str(text).split(",") if str(v).strip())
    except ValueError as ex:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from ex


def _out_dir(res):
    out = res.get("out_dir")
    if not out:
        raise ConfigError("an output directory is required (--out-dir)")
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# manifest


def _update_manifest(out_dir, stage, files, config_obj, seconds):
    path = os.path.join(out_dir, "manifest.json")
    manifest = {"version": __version__, "stages": {}}
    if os.path.isfile(path):
        manifest = read_json(path)
        manifest.setdefault("stages", {})
        manifest["version"] = __version__
    manifest["stages"][stage] = {
        "config_hash": sha256_text(stable_json_dumps(config_obj)),
        "seconds": round(float(seconds), 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "files": {name: sha256_file(os.path.join(out_dir, name)) for name in sorted(files)},
    }
    write_json(path, manifest)


def verify_manifest(out_dir):
    """Check every hash recorded in the manifest against the files on disk.
    Returns a list of problem strings, empty when the manifest validates."""
    path = os.path.join(out_dir, "manifest.json")
    if not os.path.isfile(path):
        return [f"{path}: missing manifest"]
    manifest = read_json(path)
    problems = []
    for stage, entry in manifest.get("stages", {}).items():
        for name, digest in entry.get("files", {}).items():
            full = os.path.join(out_dir, name)
            if not os.path.isfile(full):
                problems.append(f"{stage}: {name} is listed but missing")
            elif sha256_file(full) != digest:
                problems.append(f"{stage}: {name} hash mismatch")
    return problems


# ---------------------------------------------------------------------------
# shared loading


def _load_matrix(path):
    """MGT file as 2-D data: 2-D tensors pass through, 4-D image stacks are
    flattened row-major to [n, c*h*w]."""
    arr = tensor.load_tensor(_require_file(path))
    if arr.ndim == 2:
        return arr
    if arr.ndim == 4:
        return arr.reshape(arr.shape[0], -1)
    raise ConfigError(f"{path}: expected a 2-D matrix or 4-D image stack, got rank {arr.ndim}")


def _load_images(path):
    arr = tensor.load_tensor(_require_file(path, "image"))
    if arr.ndim != 4:
        raise ConfigError(f"{path}: expected a 4-D image stack, got rank {arr.ndim}")
    return tensor.ImageBatch(arr, (-1.0, 1.0))


def _load_embedding(path):
    _require_file(path, "embedding")
    _require_file(str(path) + ".json", "embedding sidecar")
    return nldr.load_embedding(path)


def _standardized(e, warn_stage):
    if e.standardization is not None:
        return e
    print(
        json.dumps(
            {
                "warning": f"{warn_stage}: embedding is not standardized; "
                "standardizing on the fly"
            }
        ),
        file=sys.stderr,
    )
    return nldr.standardize_embedding(e)


def _train_config(res, stage):
    return recon.TrainConfig(
        epochs=int(res.get("epochs", 50)),
        batch_size=int(res.get("batch_size", 64)),
        lr=float(res.get("lr", 2e-4)),
        beta1=float(res.get("beta1", 0.9)),
        beta2=float(res.get("beta2", 0.999)),
        weight_decay=float(res.get("weight_decay", 1e-4)),
        lambda_mse=float(res.get("lambda_mse", 1.0)),
        lambda_perceptual=float(res.get("lambda_perceptual", 0.0)),
        coord_dropout_p=float(res.get("coord_dropout_p", 0.1)),
        seed=seed_for(int(res.get("seed", 0)), stage),
        val_fraction=float(res.get("val_fraction", 0.2)),
    )


def _recon_grid(path, net, params, inputs, images, cfg):
    """Side-by-side grid: 16 validation originals interleaved with their
    reconstructions, pairs adjacent in each row."""
    _, val_idx = recon._split(inputs.shape[0], cfg.val_fraction, cfg.seed)
    take = val_idx[:16]
    pred = recon.predict(net, params, inputs[take], cfg.batch_size)
    lo, hi = images.value_range
    tiles = np.empty((2 * len(take),) + images.pixels.shape[1:], dtype=np.float32)
    tiles[0::2] = images.pixels[take]
    tiles[1::2] = np.clip(pred, lo, hi)
    tensor.save_image_grid(path, tiles, cols=8, value_range=images.value_range)


def _grid_name(base, channels):
    return f"{base}.{'pgm' if channels == 1 else 'ppm'}"


# ---------------------------------------------------------------------------
# commands


def _cmd_make_dataset(args, config):
    res = _Resolver(args, config, "make_dataset")
    kind = res.get("kind", "blobs")
    n = int(res.get("n", 512))
    seed = int(res.get("seed", 0))
    out = _out_dir(res)
    t0 = time.perf_counter()
    if kind == "blobs":
        height = int(res.get("height", 28))
        width = int(res.get("width", 28))
        channels = int(res.get("channels", 1))
        images, latents = tensor.make_blob_images(
            n, height, width, channels=channels, seed=seed_for(seed, "make-dataset")
        )
        tensor.save_tensor(images.pixels, os.path.join(out, "images.mgt"))
        tensor.save_tensor(latents.astype(np.float32), os.path.join(out, "latents.mgt"))
        files = ["images.mgt", "latents.mgt"]
        summary = f"make-dataset kind=blobs n={n} shape={channels}x{height}x{width}"
    elif kind == "swiss":
        noise_sd = float(res.get("noise_sd", 0.0))
        roll = tensor.make_swiss_roll(n, noise_sd, seed_for(seed, "make-dataset"))
        tensor.save_tensor(roll.points.astype(np.float32), os.path.join(out, "points.mgt"))
        tensor.save_tensor(roll.intrinsic.astype(np.float32), os.path.join(out, "intrinsic.mgt"))
        files = ["points.mgt", "intrinsic.mgt"]
        summary = f"make-dataset kind=swiss n={n} noise_sd={noise_sd}"
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}, expected blobs or swiss")
    res.finish()
    seconds = time.perf_counter() - t0
    cfgrec = {"kind": kind, "n": n, "seed": seed}
    _update_manifest(out, "make-dataset", files, cfgrec, seconds)
    print(f"{summary} {seconds:.2f}s -> {out}")
    return 0


def _cmd_embed(args, config):
    res = _Resolver(args, config, "embed")
    method = res.get("method")
    if method not in nldr.METHODS:
        raise ConfigError(f"method must be one of {nldr.METHODS}, got {method!r}")
    X = _load_matrix(res.get("input") or _missing("--input"))
    d = int(res.get("dim", 2))
    k = int(res.get("k", 10))
    seed = int(res.get("seed", 0))
    out = _out_dir(res)
    t0 = time.perf_counter()
    if method == "lle":
        e = nldr.lle_embed(X, k=k, d=d, reg=float(res.get("reg", 1e-3)))
    elif method == "isomap":
        e = nldr.isomap_embed(X, k=k, d=d)
    elif method == "le":
        e = nldr.le_embed(X, k=k, sigma=float(res.get("sigma", 1.0)), d=d)
    else:
        e = nldr.tsne_embed(
            X,
            d=d,
            perplexity=float(res.get("perplexity", 30.0)),
            lr=float(res.get("lr", 200.0)),
            iters=int(res.get("iters", 1000)),
            seed=seed_for(seed, f"embed:{method}"),
            mode=res.get("mode", "auto"),
            theta=float(res.get("theta", 0.5)),
        )
    if res.get("standardize", False):
        e = nldr.standardize_embedding(e)
    res.finish()
    seconds = time.perf_counter() - t0
    name = f"embedding_{method}.mgt"
    nldr.save_embedding(e, os.path.join(out, name))
    diag = " ".join(
        f"{key}={val:.6g}"
        for key, val in sorted(e.diagnostics.items())
        if isinstance(val, (int, float))
    )
    cfgrec = {"method": method, "k": k, "dim": d, "hyper": e.hyper, "seed": seed}
    _update_manifest(out, f"embed:{method}", [name, name + ".json"], cfgrec, seconds)
    print(f"embed method={method} n={e.coords.shape[0]} d={d} {seconds:.2f}s {diag}".rstrip())
    return 0


def _missing(flag):
    raise ConfigError(f"{flag} is required")


def _cmd_train_decoder(args, config):
    res = _Resolver(args, config, "train_decoder")
    e = _load_embedding(res.get("embedding") or _missing("--embedding"))
    images = _load_images(res.get("images") or _missing("--images"))
    if e.coords.shape[0] != images.count:
        raise AlignmentError(
            f"embedding has {e.coords.shape[0]} rows but image batch has {images.count}"
        )
    arch = res.get("arch", "paper_conv")
    method = e.method
    cfg = _train_config(res, f"decoder:{method}")
    embed_dim = e.coords.shape[1]
    shape = (images.channels, images.height, images.width)
    if arch == "paper_conv":
        channels = _int_list(res.get("channels", "128,64,32"))
        net = recon.build_paper_decoder(embed_dim, shape, channels=channels)
    elif arch == "dense":
        net = recon.build_dense_decoder(embed_dim, shape, hidden=_int_list(res.get("hidden", "")))
    else:
        raise ConfigError(f"arch must be paper_conv or dense, got {arch!r}")
    out = _out_dir(res)
    res.finish()
    t0 = time.perf_counter()
    params, report = recon.train_decoder(e, images, cfg, net=net)
    seconds = time.perf_counter() - t0
    ckpt = f"decoder_{method}.ckpt"
    rep = f"report_{method}.json"
    grid = _grid_name(f"recon_{method}", images.channels)
    nn.save_checkpoint(
        os.path.join(out, ckpt),
        net,
        params,
        {"lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2, "weight_decay": cfg.weight_decay},
        cfg.epochs,
        extra={"kind": "decoder", "method": method, "arch": arch, "embed_dim": embed_dim},
    )
    recon.save_report(report, os.path.join(out, rep))
    _recon_grid(os.path.join(out, grid), net, params, e.coords, images, cfg)
    cfgrec = {"method": method, "arch": arch, "train": dataclasses.asdict(cfg)}
    _update_manifest(out, f"train-decoder:{method}", [ckpt, rep, grid], cfgrec, seconds)
    print(
        f"train-decoder method={method} arch={arch} {seconds:.1f}s "
        f"val_mse={report.val_mse:.6f} psnr={report.val_psnr:.2f} ssim={report.val_ssim:.4f}"
    )
    return 0


def _cmd_train_ae(args, config):
    res = _Resolver(args, config, "train_ae")
    images = _load_images(res.get("images") or _missing("--images"))
    latent_dim = int(res.get("latent_dim", 50))
    cfg = _train_config(res, "autoencoder")
    out = _out_dir(res)
    res.finish()
    shape = (images.channels, images.height, images.width)
    net = recon.build_autoencoder(shape, latent_dim)
    t0 = time.perf_counter()
    params, report = recon.train_autoencoder(images, cfg, latent_dim, net=net)
    seconds = time.perf_counter() - t0
    ckpt = "autoencoder.ckpt"
    rep = "report_autoencoder.json"
    grid = _grid_name("recon_autoencoder", images.channels)
    nn.save_checkpoint(
        os.path.join(out, ckpt),
        net,
        params,
        {"lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2, "weight_decay": cfg.weight_decay},
        cfg.epochs,
        extra={"kind": "autoencoder", "latent_dim": latent_dim},
    )
    recon.save_report(report, os.path.join(out, rep))
    _recon_grid(os.path.join(out, grid), net, params, images.pixels, images, cfg)
    cfgrec = {"latent_dim": latent_dim, "train": dataclasses.asdict(cfg)}
    _update_manifest(out, "train-ae", [ckpt, rep, grid], cfgrec, seconds)
    print(
        f"train-ae latent={latent_dim} {seconds:.1f}s val_mse={report.val_mse:.6f} "
        f"psnr={report.val_psnr:.2f} ssim={report.val_ssim:.4f}"
    )
    return 0


def _cmd_train_diffusion(args, config):
    res = _Resolver(args, config, "train_diffusion")
    e = _standardized(_load_embedding(res.get("embedding") or _missing("--embedding")), "train-diffusion")
    method = e.method
    sched = diffusion.linear_schedule(
        int(res.get("timesteps", 1000)),
        float(res.get("beta_start", 1e-4)),
        float(res.get("beta_end", 0.02)),
    )
    seed = int(res.get("seed", 0))
    cfg = diffusion.DiffusionTrainConfig(
        lr=float(res.get("lr", 1e-4)),
        epochs=int(res.get("epochs", 100)),
        batch_size=int(res.get("batch_size", 64)),
        seed=seed_for(seed, f"diffusion:{method}"),
    )
    spec = diffusion.make_denoiser(
        e.coords.shape[1],
        hidden=_int_list(res.get("hidden", "256,256,256")),
        time_embed_dim=int(res.get("time_embed_dim", 32)),
    )
    out = _out_dir(res)
    res.finish()
    t0 = time.perf_counter()
    params, history = diffusion.train_diffusion(e.coords, sched, cfg, spec=spec)
    seconds = time.perf_counter() - t0
    ckpt = f"denoiser_{method}.ckpt"
    hist = f"diffusion_{method}.json"
    diffusion.save_denoiser(os.path.join(out, ckpt), spec, params, sched, cfg, epoch=cfg.epochs)
    write_json(
        os.path.join(out, hist),
        {
            "schema": "manigen.diffusion_history/1",
            "method": method,
            "loss_history": [float(v) for v in history],
        },
    )
    cfgrec = {"method": method, "T": sched.T, "train": dataclasses.asdict(cfg)}
    _update_manifest(out, f"train-diffusion:{method}", [ckpt, hist], cfgrec, seconds)
    print(
        f"train-diffusion method={method} T={sched.T} {seconds:.1f}s "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}"
    )
    return 0


def _cmd_sample(args, config):
    res = _Resolver(args, config, "sample")
    denoiser_path = res.get("denoiser") or _missing("--denoiser")
    decoder_path = res.get("decoder") or _missing("--decoder")
    if not os.path.isfile(decoder_path):
        raise ConfigError(f"{decoder_path}: missing decoder checkpoint")
    if not os.path.isfile(denoiser_path):
        raise ConfigError(f"{denoiser_path}: missing denoiser checkpoint")
    e = _standardized(_load_embedding(res.get("embedding") or _missing("--embedding")), "sample")
    method = e.method
    spec, dparams, sched = diffusion.load_denoiser(denoiser_path)
    dec_net, dec_params, _, _, _ = nn.load_checkpoint(decoder_path)
    n = int(res.get("n", 64))
    seed = int(res.get("seed", 0))
    cols = int(res.get("grid_cols", 0)) or max(1, int(round(np.sqrt(n))))
    out = _out_dir(res)
    res.finish()
    t0 = time.perf_counter()
    run = diffusion.ddpm_sample(dparams, spec, sched, n, seed_for(seed, f"sample:{method}"))
    images = diffusion.decode_coords(run, e, (dec_net, dec_params))
    seconds = time.perf_counter() - t0
    coords_name = f"samples_{method}.mgt"
    grid = _grid_name(f"samples_{method}", images.channels)
    diffusion.save_samples(
        run,
        os.path.join(out, coords_name),
        schedule_ref={"T": sched.T, "beta1": float(sched.beta[0]), "betaT": float(sched.beta[-1])},
        denoiser_ref=os.path.basename(denoiser_path),
    )
    tensor.save_image_grid(
        os.path.join(out, grid), images.pixels, cols=cols, value_range=images.value_range
    )
    cfgrec = {"method": method, "n": n, "seed": seed}
    _update_manifest(
        out, f"sample:{method}", [coords_name, coords_name + ".json", grid], cfgrec, seconds
    )
    print(f"sample method={method} n={n} {seconds:.1f}s -> {grid}")
    return 0


def _cmd_evaluate(args, config):
    res = _Resolver(args, config, "evaluate")
    cfg_reports = res.get("reports", [])
    paths = list(args.reports) if args.reports else list(cfg_reports or [])
    if not paths:
        raise ConfigError("no report files given")
    t0 = time.perf_counter()
    rows = []
    for path in paths:
        _require_file(path, "report")
        try:
            report = recon.load_report(path)
        except (ManigenError, json.JSONDecodeError, KeyError, TypeError, ValueError) as ex:
            raise ConfigError(f"{path}: malformed report ({ex})") from ex
        name = os.path.basename(path)
        name = name[len("report_"):] if name.startswith("report_") else name
        name = name.rsplit(".json", 1)[0]
        rows.append(
            {
                "name": name,
                "val_mse": report.val_mse,
                "val_psnr": None if report.psnr_infinite else report.val_psnr,
                "val_ssim": report.val_ssim,
            }
        )
    rows.sort(key=lambda r: r["val_mse"])
    out = _out_dir(res)
    res.finish()
    width = max(len(r["name"]) for r in rows)
    print(f"{'method'.ljust(width)}  val_mse    val_psnr  val_ssim")
    for r in rows:
        psnr = "inf" if r["val_psnr"] is None else f"{r['val_psnr']:.2f}"
        print(f"{r['name'].ljust(width)}  {r['val_mse']:.6f}  {psnr:>8}  {r['val_ssim']:.4f}")
    write_json(
        os.path.join(out, "evaluation.json"),
        {"schema": "manigen.evaluation/1", "rows": rows},
    )
    seconds = time.perf_counter() - t0
    _update_manifest(out, "evaluate", ["evaluation.json"], {"reports": sorted(paths)}, seconds)
    return 0


# ---------------------------------------------------------------------------
# argument surface


def build_parser():
    parser = _Parser(prog="manigen", description=__doc__, add_help=True)
    parser.add_argument("--version", action="version", version=f"manigen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, help="root seed (default 0)")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")

    p = sub.add_parser("make-dataset", help="synthesize a dataset")
    common(p)
    p.add_argument("--kind", choices=("blobs", "swiss"))
    p.add_argument("--n", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--channels", type=int, choices=(1, 3))
    p.add_argument("--noise-sd", dest="noise_sd", type=float)

    p = sub.add_parser("embed", help="run one NLDR method")
    common(p)
    p.add_argument("--input", help="MGT data file (2-D, or 4-D images to flatten)")
    p.add_argument("--method", choices=nldr.METHODS)
    p.add_argument("--dim", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--reg", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--perplexity", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--mode", choices=("auto", "exact", "bh"))
    p.add_argument("--theta", type=float)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction)

    def train_common(p):
        common(p)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--val-fraction", dest="val_fraction", type=float)

    p = sub.add_parser("train-decoder", help="train a decoder from an embedding")
    train_common(p)
    p.add_argument("--embedding", help="embedding MGT file (with sidecar)")
    p.add_argument("--images", help="image MGT file aligned with the embedding")
    p.add_argument("--arch", choices=("paper_conv", "dense"))
    p.add_argument("--channels", help="paper_conv stage widths, comma separated")
    p.add_argument("--hidden", help="dense hidden widths, comma separated")
    p.add_argument("--coord-dropout-p", dest="coord_dropout_p", type=float)

    p = sub.add_parser("train-ae", help="train the autoencoder baseline")
    train_common(p)
    p.add_argument("--images")
    p.add_argument("--latent-dim", dest="latent_dim", type=int)

    p = sub.add_parser("train-diffusion", help="train the embedding-space denoiser")
    common(p)
    p.add_argument("--embedding")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--beta-start", dest="beta_start", type=float)
    p.add_argument("--beta-end", dest="beta_end", type=float)
    p.add_argument("--hidden", help="denoiser hidden widths, comma separated")
    p.add_argument("--time-embed-dim", dest="time_embed_dim", type=int)

    p = sub.add_parser("sample", help="sample coordinates and decode to a grid")
    common(p)
    p.add_argument("--denoiser", help="denoiser checkpoint")
    p.add_argument("--decoder", help="decoder checkpoint")
    p.add_argument("--embedding", help="embedding file carrying standardization stats")
    p.add_argument("--n", type=int)
    p.add_argument("--grid-cols", dest="grid_cols", type=int)

    p = sub.add_parser("evaluate", help="tabulate reports by validation MSE")
    common(p)
    p.add_argument("reports", nargs="*", help="ReconReport JSON files")

    return parser


_COMMANDS = {
    "make-dataset": _cmd_make_dataset,
    "embed": _cmd_embed,
    "train-decoder": _cmd_train_decoder,
    "train-ae": _cmd_train_ae,
    "train-diffusion": _cmd_train_diffusion,
    "sample": _cmd_sample,
    "evaluate": _cmd_evaluate,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        config = _load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except ManigenError as ex:
        print(json.dumps({"error": type(ex).__name__, "message": str(ex)}), file=sys.stderr)
        return ex.exit_code
    except FileNotFoundError as ex:
        print(json.dumps({"error": "FormatError", "message": str(ex)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
