"""Simultaneous multi-speaker audio-visual speech separation."""

from .codec import (AudioCodec, Waveform, apply_mask, chunk, num_frames,
                    overlap_add, read_wav, write_wav)
from .errors import (AvsepError, ConfigError, DataError, FormatError,
                     InvalidInputError, VersionError)
from .losses import (LossBreakdown, combined_loss, pit_min_loss, si_sdr,
                     si_sdr_improvement, si_sdr_loss)
from .separator import (SeparationModel, SeparatorConfig, count_parameters,
                        parameter_breakdown)
from .visual import (FrameMaskPlan, VisualFeatures, align_to_chunks, mask_frames,
                     read_visual_features, synthesize_toy_features,
                     write_visual_features)

__version__ = "0.1.0"

__all__ = [
    "AudioCodec", "Waveform", "apply_mask", "chunk", "num_frames", "overlap_add",
    "read_wav", "write_wav",
    "AvsepError", "ConfigError", "DataError", "FormatError", "InvalidInputError",
    "VersionError",
    "LossBreakdown", "combined_loss", "pit_min_loss", "si_sdr", "si_sdr_improvement",
    "si_sdr_loss",
    "SeparationModel", "SeparatorConfig", "count_parameters", "parameter_breakdown",
    "FrameMaskPlan", "VisualFeatures", "align_to_chunks", "mask_frames",
    "read_visual_features", "synthesize_toy_features", "write_visual_features",
    "__version__",
]
