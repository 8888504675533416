from .rollout import (
    PerplexityProfile,
    RolloutConfig,
    RolloutResult,
    frame_counts,
    generate_frame,
    real_frame_perplexity,
    rollout,
    window_plan,
)
from .sampling import (
    GuidanceSchedule,
    cfg_logits,
    default_top_k,
    guidance_scale,
    top_k_filter,
)
from .video_decoding import (
    decode_plan,
    decode_rollout,
    write_gif,
    write_png_frames,
)

__all__ = [
    "GuidanceSchedule",
    "PerplexityProfile",
    "RolloutConfig",
    "RolloutResult",
    "cfg_logits",
    "decode_plan",
    "decode_rollout",
    "default_top_k",
    "frame_counts",
    "generate_frame",
    "guidance_scale",
    "real_frame_perplexity",
    "rollout",
    "top_k_filter",
    "window_plan",
    "write_gif",
    "write_png_frames",
]
