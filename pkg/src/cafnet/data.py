"""Image I/O, paired datasets, bilinear resizing and training-time augmentation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import ConfigurationError, InvalidInputError

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


# -- PNG ------------------------------------------------------------------------
def read_png(path: PathLike) -> np.ndarray:
    """Decode an image file to an ``(h, w, 3)`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path: PathLike, pixels: np.ndarray) -> None:
    """Encode ``(h, w, 3)`` RGB or ``(h, w)`` grayscale uint8 pixels."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise InvalidInputError(f"write_png expects uint8 pixels, got {pixels.dtype}")
    mode = "L" if pixels.ndim == 2 else "RGB"
    Image.fromarray(pixels, mode=mode).save(path, format="PNG")


def to_float(pixels: np.ndarray) -> np.ndarray:
    """``(h, w, 3)`` uint8 -> ``(3, h, w)`` float32 in [0, 1]."""
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def to_uint8(image: np.ndarray) -> np.ndarray:
    """``(3, h, w)`` float -> ``(h, w, 3)`` uint8, clamping to [0, 1]."""
    clipped = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.rint(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0).copy()


def load_image(path: PathLike) -> np.ndarray:
    return to_float(read_png(path))


def save_image(path: PathLike, image: np.ndarray) -> None:
    write_png(path, to_uint8(image))


# -- dataset --------------------------------------------------------------------
@dataclass
class SamplePair:
    input: np.ndarray
    target: np.ndarray
    identifier: str


@dataclass
class Rejection:
    identifier: str
    reason: str


def load_dataset(directory: PathLike) -> tuple[list[SamplePair], list[Rejection]]:
    """Pair ``input/*.png`` with ``target/*.png`` by filename.

    Returns the matched pairs in lexicographic order and a list of rejected
    files (unmatched names or size mismatches).
    """
    root = Path(directory)
    in_dir, tgt_dir = root / "input", root / "target"
    if not in_dir.is_dir() or not tgt_dir.is_dir():
        raise InvalidInputError(f"{root} must contain input/ and target/ subdirectories")
    inputs = {p.name for p in in_dir.glob("*.png")}
    targets = {p.name for p in tgt_dir.glob("*.png")}
    rejected = [Rejection(name, "no matching target") for name in sorted(inputs - targets)]
    rejected += [Rejection(name, "no matching input") for name in sorted(targets - inputs)]
    pairs = []
    for name in sorted(inputs & targets):
        a, b = load_image(in_dir / name), load_image(tgt_dir / name)
        if a.shape != b.shape:
            rejected.append(Rejection(name, f"size mismatch {a.shape[1:]} vs {b.shape[1:]}"))
            continue
        pairs.append(SamplePair(a, b, name))
    for r in rejected:
        log.warning("rejected %s: %s", r.identifier, r.reason)
    return pairs, rejected


# -- resizing -------------------------------------------------------------------
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear interpolation weights with half-pixel centers."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of a ``(..., h, w)`` array (align_corners=False)."""
    if out_h <= 0 or out_w <= 0:
        raise ConfigurationError(f"target size must be positive, got {out_h}x{out_w}")
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if (h, w) == (out_h, out_w):
        return image.copy()
    rows = _interp_matrix(h, out_h)
    cols = _interp_matrix(w, out_w)
    out = rows @ image.astype(np.float64) @ cols.T
    return out.astype(image.dtype if image.dtype.kind == "f" else np.float64)


# -- augmentation -------------------------------------------------------------------
@dataclass(frozen=True)
class AugmentParams:
    scale: float
    height: int
    width: int
    top: int
    left: int
    flip: bool


class SkipSample(Exception):
    """Sample too small for the requested crop."""


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, epoch, sample index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch, index])))


def draw_augmentation(rng: np.random.Generator, h: int, w: int, crop: int,
                      scale_range: tuple[float, float] = (0.6, 1.0),
                      flip_prob: float = 0.5) -> AugmentParams:
    if min(h, w) < crop:
        raise SkipSample(f"short side {min(h, w)} < crop {crop}")
    lo, hi = scale_range
    scale = float(rng.uniform(lo, hi))
    scale = max(scale, crop / min(h, w))
    sh = max(crop, int(round(h * scale)))
    sw = max(crop, int(round(w * scale)))
    top = int(rng.integers(0, sh - crop + 1))
    left = int(rng.integers(0, sw - crop + 1))
    flip = bool(rng.random() < flip_prob)
    return AugmentParams(scale, sh, sw, top, left, flip)


def apply_augmentation(image: np.ndarray, params: AugmentParams, crop: int) -> np.ndarray:
    resized = resize_bilinear(image, params.height, params.width)
    patch = resized[..., params.top:params.top + crop, params.left:params.left + crop]
    if params.flip:
        patch = patch[..., ::-1]
    return np.ascontiguousarray(patch, dtype=np.float32)


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[..., ::-1])


def augment(pair: SamplePair, rng: np.random.Generator, crop: int = 256,
            scale_range: tuple[float, float] = (0.6, 1.0), flip_prob: float = 0.5,
            params: Optional[AugmentParams] = None) -> tuple[np.ndarray, np.ndarray]:
    """Random rescale, crop and horizontal flip shared by input and target."""
    h, w = pair.input.shape[-2:]
    if params is None:
        params = draw_augmentation(rng, h, w, crop, scale_range, flip_prob)
    return apply_augmentation(pair.input, params, crop), apply_augmentation(pair.target, params, crop)
