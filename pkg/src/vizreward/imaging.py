"""Raster image buffers and the PNG / resize / grayscale primitives.

Everything downstream (tiling, rewards, metrics, hashing) moves pixels
around as ``ImageBuf`` values: 8-bit, 1 or 3 channels, row-major. PNG is
the only interchange format. Resizing is plain bilinear with half-up
rounding so results are bit-reproducible across runs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeFailure

GRAY_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601 luma


@dataclass(frozen=True)
class ImageBuf:
    """Decoded raster image: ``samples`` is uint8 with shape (height, width, channels)."""

    width: int
    height: int
    channels: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be >= 1, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        arr = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if arr.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"samples shape {arr.shape} does not match "
                f"{(self.height, self.width, self.channels)}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def same_pixels(self, other: "ImageBuf") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and np.array_equal(self.samples, other.samples)
        )

    def digest(self) -> bytes:
        """Content key for memoization: dims + raw samples."""
        import hashlib

        h = hashlib.blake2b(digest_size=16)
        h.update(f"{self.width}x{self.height}x{self.channels}:".encode())
        h.update(self.samples.tobytes())
        return h.digest()


@dataclass(frozen=True)
class PixelRect:
    """Axis-aligned pixel rectangle, validated against nothing until ``check``."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("rect extents must be >= 1")
        if self.x < 0 or self.y < 0:
            raise ValueError("rect offsets must be >= 0")

    def check(self, img: ImageBuf) -> None:
        if self.x + self.w > img.width or self.y + self.h > img.height:
            raise ValueError(f"rect {self} exceeds image {img.width}x{img.height}")


def from_array(arr: np.ndarray) -> ImageBuf:
    """Build an ImageBuf from a (h, w) or (h, w, c) uint8-compatible array."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    return ImageBuf(width=w, height=h, channels=c, samples=a.astype(np.uint8))


def solid(width: int, height: int, value, channels: int = 3) -> ImageBuf:
    """Constant-color image; ``value`` is a scalar or per-channel sequence."""
    arr = np.empty((height, width, channels), dtype=np.uint8)
    arr[:] = np.asarray(value, dtype=np.uint8)
    return ImageBuf(width=width, height=height, channels=channels, samples=arr)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # np.rint rounds half-to-even; the codebase standardizes on half-up.
    return np.floor(x + 0.5)


def load_png(data: bytes) -> ImageBuf:
    """Decode a PNG byte stream.

    16-bit channels are downscaled to 8-bit; alpha (including palette
    transparency) is composited over white. Raises DecodeFailure for
    anything that is not a well-formed PNG.
    """
    try:
        im = Image.open(io.BytesIO(data))
        if im.format != "PNG":
            raise DecodeFailure(f"expected PNG stream, got {im.format or 'unknown format'}")
        im.load()
    except DecodeFailure:
        raise
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise DecodeFailure(f"PNG decode failed: {exc}") from exc

    if im.mode in ("I", "I;16", "I;16B", "I;16L"):
        arr = np.asarray(im, dtype=np.float64)
        arr = _round_half_up(arr * (255.0 / 65535.0)).clip(0, 255).astype(np.uint8)
        return from_array(arr)

    if im.mode == "P":
        im = im.convert("RGBA" if "transparency" in im.info else "RGB")
    if im.mode == "LA":
        im = im.convert("RGBA")
    if im.mode == "1":
        im = im.convert("L")

    if im.mode == "RGBA":
        arr = np.asarray(im, dtype=np.float64)
        alpha = arr[:, :, 3:4] / 255.0
        rgb = arr[:, :, :3] * alpha + 255.0 * (1.0 - alpha)
        return from_array(_round_half_up(rgb).clip(0, 255).astype(np.uint8))

    if im.mode == "L":
        return from_array(np.asarray(im, dtype=np.uint8))
    if im.mode == "RGB":
        return from_array(np.asarray(im, dtype=np.uint8))

    try:
        return from_array(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except Exception as exc:  # pragma: no cover - exotic modes
        raise DecodeFailure(f"unsupported PNG mode {im.mode}: {exc}") from exc


def encode_png(img: ImageBuf) -> bytes:
    """Encode losslessly; round-trips bit-exactly through load_png."""
    if img.channels == 1:
        pil = Image.fromarray(img.samples[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(img.samples, mode="RGB")
    out = io.BytesIO()
    pil.save(out, format="PNG")
    return out.getvalue()


def resize(img: ImageBuf, w: int, h: int) -> ImageBuf:
    """Bilinear resize to exactly (w, h); aspect ratio is not preserved.

    Identical target dims return the input unchanged, which makes the
    operation exactly idempotent at a fixed size.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target dims must be >= 1, got {w}x{h}")
    if w == img.width and h == img.height:
        return img

    src = img.samples.astype(np.float64)
    # Pixel-center mapping; clamped so edge pixels replicate.
    sx = (np.arange(w) + 0.5) * (img.width / w) - 0.5
    sy = (np.arange(h) + 0.5) * (img.height / h) - 0.5
    sx = np.clip(sx, 0.0, img.width - 1.0)
    sy = np.clip(sy, 0.0, img.height - 1.0)

    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]

    # Separable: columns first, then rows (same expression tree as the
    # direct 4-tap form, so results are bit-identical).
    cols = src[:, x0, :] * (1.0 - fx) + src[:, x1, :] * fx
    out = cols[y0, :, :] * (1.0 - fy) + cols[y1, :, :] * fy
    out = _round_half_up(out).clip(0, 255).astype(np.uint8)
    return ImageBuf(width=w, height=h, channels=img.channels, samples=out)


def to_grayscale(img: ImageBuf) -> ImageBuf:
    """BT.601 luma with half-up rounding; 1-channel input passes through."""
    if img.channels == 1:
        return img
    r, g, b = GRAY_WEIGHTS
    src = img.samples.astype(np.float64)
    luma = src[:, :, 0] * r + src[:, :, 1] * g + src[:, :, 2] * b
    out = _round_half_up(luma).clip(0, 255).astype(np.uint8)
    return ImageBuf(width=img.width, height=img.height, channels=1, samples=out[:, :, None])


def crop(img: ImageBuf, rect: PixelRect) -> ImageBuf:
    rect.check(img)
    view = img.samples[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w, :]
    return ImageBuf(width=rect.w, height=rect.h, channels=img.channels, samples=view.copy())
