"""On-disk caches for profiles and kernels.

Files are ``.npz`` archives with a JSON header stored under ``__header__``.
A cached entry is used only when its header equals the requested one
exactly; writes go to a temporary file that is then renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

ENV_VAR = "SOLITONLAB_CACHE_DIR"
FORMAT_VERSION = 1


def cache_dir() -> Path:
    root = os.environ.get(ENV_VAR)
    path = Path(root) if root else Path.home() / ".cache" / "solitonlab"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _canonical(header: dict) -> str:
    return json.dumps({"format": FORMAT_VERSION, **header}, sort_keys=True, separators=(",", ":"))


def cache_key(kind: str, header: dict) -> str:
    digest = hashlib.sha256(_canonical(header).encode()).hexdigest()[:20]
    return f"{kind}-{digest}"


def save(kind: str, header: dict, arrays: dict, directory: Path | None = None) -> Path:
    directory = Path(directory) if directory else cache_dir()
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / f"{cache_key(kind, header)}.npz"
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, __header__=np.array(_canonical(header)), **arrays)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return target


def load(kind: str, header: dict, directory: Path | None = None) -> dict | None:
    directory = Path(directory) if directory else cache_dir()
    target = directory / f"{cache_key(kind, header)}.npz"
    if not target.exists():
        return None
    try:
        with np.load(target, allow_pickle=False) as data:
            if str(data["__header__"]) != _canonical(header):
                return None
            return {k: data[k] for k in data.files if k != "__header__"}
    except (OSError, ValueError, KeyError):
        return None
