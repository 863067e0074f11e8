"""ViT backbone wrapper producing global image descriptors.

The descriptor is the backbone's class-token output, L2-normalized.
Preprocessing: decode PNG, composite alpha over white, bilinear resize to
the backbone's native resolution (pixel-center sampling), scale to [0, 1],
standard ImageNet channel normalization.

The built-in model ("tiny-vit") is a small ViT with deterministically
seeded random weights: no downloads, bit-stable outputs, honest forward
pass. Any other identifier is loaded through ``transformers`` when that
library and the weights are available locally.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from PIL import Image, UnidentifiedImageError

DEFAULT_MODEL = "tiny-vit"
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class SidecarConfig:
    model: str = DEFAULT_MODEL
    device: str = "cpu"  # "cpu" | "accelerator"
    port: int = 9100
    declared_dims: int = 192

    def torch_device(self) -> str:
        if self.device == "accelerator" and torch.cuda.is_available():
            return "cuda"
        return "cpu"


class TinyViT(nn.Module):
    """Compact ViT: patch embedding, class token, pre-norm transformer blocks."""

    def __init__(self, image_size=224, patch=16, dim=192, depth=2, heads=3, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.image_size = image_size
        self.dim = dim
        n_patches = (image_size // patch) ** 2
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=patch, stride=patch)
        self.cls_token = nn.Parameter(torch.randn(1, 1, dim) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(1, n_patches + 1, dim) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=dim,
            nhead=heads,
            dim_feedforward=dim * 4,
            batch_first=True,
            norm_first=True,
            dropout=0.0,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=depth, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        tokens = torch.cat([cls, tokens], dim=1) + self.pos_embed
        tokens = self.encoder(tokens)
        return self.norm(tokens[:, 0, :])  # class token


def _bilinear_resize(arr: np.ndarray, w: int, h: int) -> np.ndarray:
    """Pixel-center bilinear resize of an (H, W, 3) float array."""
    src_h, src_w = arr.shape[:2]
    if (src_w, src_h) == (w, h):
        return arr
    sx = np.clip((np.arange(w) + 0.5) * (src_w / w) - 0.5, 0.0, src_w - 1.0)
    sy = np.clip((np.arange(h) + 0.5) * (src_h / h) - 0.5, 0.0, src_h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]
    cols = arr[:, x0, :] * (1.0 - fx) + arr[:, x1, :] * fx
    return cols[y0, :, :] * (1.0 - fy) + cols[y1, :, :] * fy


def decode_png_rgb(data: bytes) -> np.ndarray:
    """PNG bytes -> (H, W, 3) float64 in [0, 255]; alpha over white."""
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise ImageDecodeError(f"not a decodable image: {exc}") from exc
    if im.mode in ("P", "LA"):
        im = im.convert("RGBA")
    if im.mode == "RGBA":
        arr = np.asarray(im, dtype=np.float64)
        alpha = arr[:, :, 3:4] / 255.0
        return arr[:, :, :3] * alpha + 255.0 * (1.0 - alpha)
    if im.mode != "RGB":
        im = im.convert("RGB")
    return np.asarray(im, dtype=np.float64)


class Embedder:
    """Loads the backbone once and serves normalized class-token descriptors."""

    def __init__(self, config: SidecarConfig):
        self.config = config
        self.device = config.torch_device()
        self.model = self._build(config.model).to(self.device).eval()
        width = self._probe_width()
        if width != config.declared_dims:
            raise ValueError(
                f"declared_dims={config.declared_dims} but backbone produces {width}"
            )
        self.dims = width

    @staticmethod
    def _build(identifier: str) -> nn.Module:
        if identifier == DEFAULT_MODEL:
            return TinyViT()
        try:
            from transformers import AutoModel
        except ImportError as exc:
            raise ValueError(
                f"model {identifier!r} needs the transformers package; "
                f"only {DEFAULT_MODEL!r} is built in"
            ) from exc
        return _HFBackbone(AutoModel.from_pretrained(identifier))

    def _probe_width(self) -> int:
        size = getattr(self.model, "image_size", 224)
        with torch.no_grad():
            out = self.model(torch.zeros(1, 3, size, size, device=self.device))
        return int(out.shape[-1])

    @property
    def native_size(self) -> int:
        return getattr(self.model, "image_size", 224)

    def embed(self, png_bytes: bytes) -> np.ndarray:
        arr = decode_png_rgb(png_bytes)
        size = self.native_size
        arr = _bilinear_resize(arr, size, size) / 255.0
        arr = (arr - np.asarray(IMAGENET_MEAN)) / np.asarray(IMAGENET_STD)
        x = torch.from_numpy(arr.transpose(2, 0, 1)[None]).to(self.device, torch.float32)
        # single-threaded inference keeps outputs bit-reproducible
        threads = torch.get_num_threads()
        torch.set_num_threads(1)
        try:
            with torch.no_grad():
                out = self.model(x)[0].cpu().double().numpy()
        finally:
            torch.set_num_threads(threads)
        norm = float(np.linalg.norm(out))
        if norm == 0.0 or not math.isfinite(norm):
            raise RuntimeError("backbone produced a degenerate descriptor")
        return out / norm


class _HFBackbone(nn.Module):
    """Adapter exposing a transformers vision model as class-token features."""

    def __init__(self, inner):
        super().__init__()
        self.inner = inner
        self.image_size = getattr(getattr(inner, "config", None), "image_size", 224)

    def forward(self, x):
        out = self.inner(pixel_values=x)
        hidden = out.last_hidden_state
        return hidden[:, 0, :]
