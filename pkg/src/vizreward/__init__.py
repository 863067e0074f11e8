"""Visual reward scoring engine for code-generation RL."""

__version__ = "0.1.0"

from .embedding import EmbedderSpec, EmbeddingVector, cosine_sim, embed, visual_pair_score
from .grpo import (
    AdvantageSet,
    RolloutGroup,
    batch_surrogate,
    clipped_surrogate,
    group_advantages,
    prob_ratio,
)
from .imaging import ImageBuf, PixelRect, encode_png, load_png, resize, to_grayscale
from .render import (
    RendererConfig,
    RendererRegistry,
    RenderOutcome,
    RolloutScore,
    score_rollout,
)
from .reward import (
    AliasTable,
    RewardBreakdown,
    alignment_reward,
    coarse_to_fine_reward,
    combined_reward,
    extract_code_fence,
)
from .tiling import GridPlan, TileSet, make_thumbnail, plan_grid, split_tiles

__all__ = [
    "__version__",
    "AdvantageSet",
    "AliasTable",
    "EmbedderSpec",
    "EmbeddingVector",
    "GridPlan",
    "ImageBuf",
    "PixelRect",
    "RendererConfig",
    "RendererRegistry",
    "RenderOutcome",
    "RewardBreakdown",
    "RolloutGroup",
    "RolloutScore",
    "TileSet",
    "alignment_reward",
    "batch_surrogate",
    "clipped_surrogate",
    "coarse_to_fine_reward",
    "combined_reward",
    "cosine_sim",
    "embed",
    "encode_png",
    "extract_code_fence",
    "group_advantages",
    "load_png",
    "make_thumbnail",
    "plan_grid",
    "prob_ratio",
    "resize",
    "score_rollout",
    "split_tiles",
    "to_grayscale",
    "visual_pair_score",
]
