"""Embedding inference sidecar speaking the /v1/embed wire contract."""

__version__ = "0.1.0"

from .model import Embedder, SidecarConfig, TinyViT
from .service import build_app

__all__ = ["Embedder", "SidecarConfig", "TinyViT", "build_app", "__version__"]
