"""Shared plumbing: seed splitting, stable JSON, file hashing."""

import hashlib
import json

import numpy as np


def seed_for(root_seed, label):
    """Derive a per-stage seed from one root seed and a stage label.

    Splitting rule: the low 8 bytes (little-endian) of
    sha256(b"<root_seed>:<label>"). Stable across platforms and runs.
    """
    digest = hashlib.sha256(f"{int(root_seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root_seed, label):
    return np.random.default_rng(seed_for(root_seed, label))


def stable_json_dumps(obj):
    """Canonical JSON text: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=1)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        f.write(stable_json_dumps(obj))
        f.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
