"""Dataset ingestion (IDX, image directories) and synthetic desk-scale datasets."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .core import make_rng
from .errors import ConfigurationError, IngestionError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

# IDX type byte -> big-endian numpy dtype
IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_DTYPE_CODES = {np.dtype(v).newbyteorder("=").str: k for k, v in IDX_DTYPES.items()}

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif", ".pgm", ".ppm"}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse any IDX file into an array of its native dtype."""
    try:
        with _open(path) as fh:
            raw = fh.read()
    except OSError as e:
        raise IngestionError(f"{path}: cannot read ({e})") from e
    if len(raw) < 4:
        raise IngestionError(f"{path}: file too short for an IDX header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in IDX_DTYPES or ndim == 0:
        raise IngestionError(f"{path}: bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08X}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IngestionError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = np.dtype(IDX_DTYPES[code])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise IngestionError(f"{path}: header promises {expected} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _DTYPE_CODES.get(array.dtype.newbyteorder("=").str)
    if code is None:
        raise ConfigurationError(f"dtype {array.dtype} has no IDX encoding")
    head = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    body = np.ascontiguousarray(array, dtype=IDX_DTYPES[code]).tobytes()
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(head + body)


def resize_bilinear(images: np.ndarray, size: int) -> np.ndarray:
    """Resize an ``(N, C, H, W)`` batch to ``size x size`` (half-pixel centres)."""
    n, c, h, w = images.shape
    if (h, w) == (size, size):
        return images

    def axis(out_len, in_len):
        pos = np.clip((np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5, 0, in_len - 1)
        lo = np.floor(pos).astype(np.int64)
        return lo, np.minimum(lo + 1, in_len - 1), pos - lo

    r0, r1, rw = axis(size, h)
    c0, c1, cw = axis(size, w)
    rows = images[:, :, r0, :] * (1 - rw)[:, None] + images[:, :, r1, :] * rw[:, None]
    return rows[..., c0] * (1 - cw) + rows[..., c1] * cw


def load_idx_dataset(images_path, labels_path, image_size: int | None = None):
    """Images as ``(N, 1, H, W)`` floats in [0, 1] and int64 labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    with _open(images_path) as fh:
        magic = struct.unpack(">I", fh.read(4))[0]
    if magic != IDX_IMAGES:
        raise IngestionError(f"{images_path}: expected image magic 0x{IDX_IMAGES:08X}, got 0x{magic:08X}")
    with _open(labels_path) as fh:
        magic = struct.unpack(">I", fh.read(4))[0]
    if magic != IDX_LABELS:
        raise IngestionError(f"{labels_path}: expected label magic 0x{IDX_LABELS:08X}, got 0x{magic:08X}")
    if len(images) != len(labels):
        raise IngestionError(f"{images_path}: {len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[:, None] / 255.0
    if image_size:
        x = resize_bilinear(x, image_size)
    return x, labels.astype(np.int64)


def load_image_dir(root, image_size: int, channels: int = 1):
    """One sub-directory per class (sorted names -> class indices)."""
    from PIL import Image

    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if not classes:
        raise IngestionError(f"{root}: no class sub-directories")
    mode = "L" if channels == 1 else "RGB"
    xs, ys = [], []
    for label, cdir in enumerate(classes):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise IngestionError(f"{cdir}: empty class directory")
        for f in files:
            try:
                with Image.open(f) as im:
                    im = im.convert(mode).resize((image_size, image_size), Image.BILINEAR)
                    arr = np.asarray(im, dtype=np.float64) / 255.0
            except OSError as e:
                raise IngestionError(f"{f}: cannot decode image ({e})") from e
            xs.append(arr[None] if channels == 1 else arr.transpose(2, 0, 1))
            ys.append(label)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def load_dataset(path, format: str = "idx", labels_path=None, image_size: int | None = None,
                 channels: int = 1):
    if format == "idx":
        if labels_path is None:
            raise ConfigurationError("IDX datasets need a labels file")
        return load_idx_dataset(path, labels_path, image_size)
    if format == "image-dir":
        if not image_size:
            raise ConfigurationError("image-dir datasets need an image_size")
        return load_image_dir(path, image_size, channels)
    raise ConfigurationError(f"unknown dataset format {format!r}")


# -- synthetic recipes --------------------------------------------------------

RECIPES = ("blobs", "rings", "textures")


def _grid(size):
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="ij")


def synth_dataset(recipe: str, n: int, classes: int, image_size: int = 16, seed: int = 0,
                  noise: float = 0.1):
    """Balanced single-channel images in [0, 1].

    Every recipe is invariant under the training flips, so augmentation never
    turns one class into another:

    ``blobs``: class ``c`` shows ``c + 1`` Gaussian spots. ``rings``: an
    annulus whose radius grows with the class. ``textures``: a sinusoidal
    grating, horizontal or vertical, with a class-specific frequency.

    ``noise`` scales the per-sample jitter and the additive pixel noise;
    ``noise=0`` yields one fixed template per class.
    """
    if recipe not in RECIPES:
        raise ConfigurationError(f"unknown recipe {recipe!r}; choose from {RECIPES}")
    if classes < 2 or n < 10 * classes:
        raise ConfigurationError(f"need >= 2 classes and n >= 10*classes, got n={n}, classes={classes}")
    rng = make_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    yy, xx = _grid(image_size)
    images = np.empty((n, 1, image_size, image_size))
    templates = rng.uniform(0.2, 0.8, size=(classes, classes, 2))
    for i, c in enumerate(labels):
        if recipe == "blobs":
            pos = np.clip(templates[c, : c + 1] + 0.3 * noise * rng.normal(size=(c + 1, 2)), 0.1, 0.9)
            img = np.zeros_like(xx)
            for cy, cx in pos:
                img = np.maximum(img, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.07 ** 2)))
        elif recipe == "rings":
            jitter = noise * rng.normal(size=3)
            r = 0.1 + 0.3 * (c + 0.5) / classes + 0.03 * jitter[0]
            d = np.hypot(yy - 0.5 - 0.05 * jitter[1], xx - 0.5 - 0.05 * jitter[2])
            img = np.exp(-((d - r) ** 2) / (2 * 0.05 ** 2))
        else:
            axis = xx if c % 2 == 0 else yy
            freq = 1.5 + 1.25 * (c // 2) + 0.25 * noise * rng.normal()
            phase = rng.uniform(0, 2 * np.pi) if noise > 0 else 0.0
            img = 0.5 + 0.5 * np.sin(2 * np.pi * freq * axis + phase)
        if noise > 0:
            img = img + noise * rng.normal(size=img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return images, labels.astype(np.int64)
