"""Seeding and file-output helpers used throughout the package."""

import hashlib
import os
import tempfile

import numpy as np


def stage_seed(seed, stage):
    """Derive a reproducible sub-seed for a named pipeline stage.

    All randomness in a run flows from one root seed; each stage
    (ingest/split/model/classifier/...) gets its own stream so stages can
    be re-run independently without perturbing each other.
    """
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(seed, stage, index=None):
    """Generator seeded from (seed, stage) and an optional per-item index."""
    entropy = stage_seed(seed, stage)
    if index is None:
        return np.random.default_rng(entropy)
    return np.random.default_rng(np.random.SeedSequence([entropy, int(index)]))


def atomic_write_text(path, text):
    """Write text to `path` via a temp file + rename, so readers never see
    a half-written file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
