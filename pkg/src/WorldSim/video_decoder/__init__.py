from .sampling import denoise, mixed_denoise, sample_clip
from .schedule import (
    NoiseSchedule,
    cosine_schedule,
    ddim_step,
    noise,
    recover_eps,
    recover_x0,
    v_target,
)
from .tasks import DecoderTask, DecoderTaskMask, sample_task, task_mask, token_dropout
from .training import (
    DecoderEpisode,
    DecoderTrainingConfig,
    DiffusionBatch,
    ExponentialMovingAverage,
    decoder_loss,
    ema_update,
    masked_v_loss,
    train_decoder,
)
from .unet import DecoderConfig, VideoUNet, frames_to_model_space, model_space_to_frames

__all__ = [
    "DecoderConfig",
    "DecoderEpisode",
    "DecoderTask",
    "DecoderTaskMask",
    "DecoderTrainingConfig",
    "DiffusionBatch",
    "ExponentialMovingAverage",
    "NoiseSchedule",
    "VideoUNet",
    "cosine_schedule",
    "ddim_step",
    "decoder_loss",
    "denoise",
    "ema_update",
    "frames_to_model_space",
    "masked_v_loss",
    "mixed_denoise",
    "model_space_to_frames",
    "noise",
    "recover_eps",
    "recover_x0",
    "sample_clip",
    "sample_task",
    "task_mask",
    "token_dropout",
    "v_target",
]
