"""Time-domain audio codec: learned encoder/decoder plus the chunking pair.

The encoder is a bias-free 1-D convolution with kernel ``K`` and stride
``K/2``; the decoder is its transposed twin. Between them sits the
chunk / overlap-add pair that turns the frame axis into 50%-overlapped
windows and back. Overlap-add divides each frame by its overlap count,
so ``overlap_add(chunk(x))`` reproduces ``x`` exactly (not just
approximately) on the valid frames.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import DataError, FormatError, InvalidInputError

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Mono time-domain signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise InvalidInputError("waveform must be a non-empty 1-D signal")
        if not np.isfinite(self.samples).all():
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read a 16-bit PCM mono RIFF file.

    Raises FormatError for anything that is not 16-bit mono PCM and
    DataError when the file's rate differs from ``expected_rate``
    (there is no resampling).
    """
    try:
        with wave.open(str(path), "rb") as f:
            if f.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {f.getnchannels()} channels")
            if f.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} does not match expected {expected_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise DataError(f"{path}: file holds no samples")
    return Waveform(samples, rate)


def write_wav(path, wav: Waveform) -> None:
    """Write 16-bit PCM mono little-endian RIFF; values are clipped to [-1, 1)."""
    pcm = np.clip(np.rint(wav.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wav.sample_rate)
        f.writeframes(pcm.tobytes())


def num_frames(n_samples: int, kernel_size: int) -> int:
    # T_a = ceil(2 * T_x / K), realised by right zero padding before the conv
    return -(-2 * n_samples // kernel_size)


class AudioCodec(nn.Module):
    """Bias-free learned filterbank and its transposed-convolution inverse.

    Both directions are linear maps; there is no activation after the
    encoder convolution and no bias anywhere, which the shape/linearity
    tests rely on.
    """

    def __init__(self, kernel_size: int = 16, dim: int = 256):
        super().__init__()
        if kernel_size % 2 != 0 or kernel_size < 2:
            raise InvalidInputError("kernel_size must be a positive even integer")
        self.kernel_size = kernel_size
        self.stride = kernel_size // 2
        self.dim = dim
        self.conv = nn.Conv1d(1, dim, kernel_size, stride=self.stride, bias=False)
        self.deconv = nn.ConvTranspose1d(dim, 1, kernel_size, stride=self.stride, bias=False)
        # uniform +-1/sqrt(fan_in)
        for w, fan_in in ((self.conv.weight, kernel_size), (self.deconv.weight, dim * kernel_size)):
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(w, -bound, bound)

    def encode(self, wav) -> torch.Tensor:
        """Encode a Waveform, [T_x] or [B, T_x] tensor into [(B,) T_a, D] features."""
        if isinstance(wav, Waveform):
            x = torch.as_tensor(wav.samples, dtype=self.conv.weight.dtype)
        else:
            x = torch.as_tensor(wav)
            if x.numel() == 0:
                raise InvalidInputError("cannot encode an empty waveform")
            if not torch.isfinite(x).all():
                raise InvalidInputError("cannot encode non-finite samples")
        if x.dim() > 2:
            raise InvalidInputError(f"expected [T] or [batch, T], got shape {tuple(x.shape)}")
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        t_x = x.shape[-1]
        t_a = num_frames(t_x, self.kernel_size)
        # pad so the stride-K/2 framing produces exactly T_a frames
        pad = (t_a + 1) * self.stride - t_x
        x = torch.nn.functional.pad(x, (0, pad))
        out = self.conv(x.unsqueeze(1)).transpose(1, 2)  # [B, T_a, D]
        return out.squeeze(0) if squeeze else out

    def decode(self, features: torch.Tensor, length: int) -> torch.Tensor:
        """Decode [..., T_a, D] features back to [..., length] waveforms."""
        lead = features.shape[:-2]
        t_a, d = features.shape[-2:]
        if d != self.dim:
            raise InvalidInputError(f"feature dim {d} does not match codec dim {self.dim}")
        x = features.reshape(-1, t_a, d).transpose(1, 2)  # [B, D, T_a]
        out = self.deconv(x).squeeze(1)  # [B, T_out]
        if out.shape[-1] >= length:
            out = out[..., :length]
        else:
            out = torch.nn.functional.pad(out, (0, length - out.shape[-1]))
        return out.reshape(*lead, length)

    def decode_to_waveforms(self, features: torch.Tensor, length: int,
                            sample_rate: int = DEFAULT_SAMPLE_RATE) -> list[Waveform]:
        """Decode [N, T_a, D] into N Waveforms, order-preserving."""
        est = self.decode(features, length)
        return [Waveform(row.detach().cpu().double().numpy(), sample_rate) for row in est]


def chunk(features: torch.Tensor, chunk_len: int) -> tuple[torch.Tensor, int]:
    """Split [..., T, D] into 50%-overlapped windows -> ([..., S, L, D], T).

    The tail is zero padded so the last window is full. Returns the
    chunked tensor together with the original frame count, which
    overlap_add needs to trim its output.
    """
    if chunk_len % 2 != 0 or chunk_len < 2:
        raise InvalidInputError("chunk length must be a positive even integer")
    t = features.shape[-2]
    if chunk_len > t:
        raise InvalidInputError(f"chunk length {chunk_len} exceeds {t} frames")
    if not torch.isfinite(features).all():
        raise InvalidInputError("cannot chunk non-finite features")
    hop = chunk_len // 2
    s = (t - chunk_len + hop - 1) // hop + 1
    t_pad = (s + 1) * hop
    x = torch.nn.functional.pad(features, (0, 0, 0, t_pad - t))
    # [..., S, L, D]
    windows = x.unfold(-2, chunk_len, hop).movedim(-1, -2)
    return windows.contiguous(), t


def overlap_add(chunks: torch.Tensor, valid_length: int | None = None) -> torch.Tensor:
    """Inverse of chunk: [..., S, L, D] -> [..., T, D].

    Summed frames are divided by their overlap count (2 in the interior,
    1 at the edges), which makes the round trip exact.
    """
    *lead, s, chunk_len, d = chunks.shape
    hop = chunk_len // 2
    t_pad = (s + 1) * hop
    acc = chunks.new_zeros(*lead, t_pad, d)
    first = chunks[..., :, :hop, :].reshape(*lead, s * hop, d)
    second = chunks[..., :, hop:, :].reshape(*lead, s * hop, d)
    acc[..., :s * hop, :] += first
    acc[..., hop:, :] += second
    counts = chunks.new_ones(t_pad)
    counts[hop:s * hop] = 2.0
    out = acc / counts.unsqueeze(-1)
    if valid_length is not None:
        if valid_length > t_pad:
            raise InvalidInputError(f"valid_length {valid_length} exceeds padded length {t_pad}")
        out = out[..., :valid_length, :]
    return out


def apply_mask(encoded: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """Elementwise product of [T_a, D] features with [N, T_a, D] masks."""
    if encoded.shape != masks.shape[-2:]:
        raise InvalidInputError(
            f"mask shape {tuple(masks.shape)} does not match features {tuple(encoded.shape)}")
    return encoded.unsqueeze(-3) * masks
