"""Grayscale PNG and atomic file I/O helpers.

Images are stored as 8-bit grayscale PNG and normalized to [0, 1] floats
in memory. All writes go through a temp-file + rename so partially
written artifacts never appear under their final name.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


def read_gray(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG as float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def write_gray(path, image: np.ndarray) -> None:
    """Write a [0, 1] float raster as 8-bit grayscale PNG (atomic)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.rint(arr * 255.0).astype(np.uint8)
    buf = Image.fromarray(data, mode="L")
    _atomic(path, lambda fh: buf.save(fh, format="PNG"))


def read_mask(path) -> np.ndarray:
    """Load a binary mask PNG as a bool array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def write_mask(path, mask: np.ndarray) -> None:
    """Write a bool raster as a 0/255 grayscale PNG (atomic)."""
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    buf = Image.fromarray(data, mode="L")
    _atomic(path, lambda fh: buf.save(fh, format="PNG"))


def write_text(path, text: str) -> None:
    _atomic(path, lambda fh: fh.write(text.encode("utf-8")))


def write_json(path, obj) -> None:
    """Serialize deterministically: sorted keys, fixed separators."""
    write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _atomic(path, writer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
