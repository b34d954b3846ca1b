"""Lip-feature ingestion and the synthetic stand-in for a real extractor.

Real deployments feed precomputed lip-movement embeddings through the
VFEA container; the toy pipeline synthesizes features from each source
waveform's energy envelope so the cross-modal modules have an actual
audio-visual correspondence to learn.

VFEA container layout (one file per speaker-utterance), little-endian:

    magic   4 bytes  b"VFEA"
    version u16      currently 1
    T_v     u32      number of frames
    D_v     u32      feature dimension
    payload T_v * D_v float32, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import Waveform
from .errors import DataError, FormatError, InvalidInputError

VFEA_MAGIC = b"VFEA"
VFEA_VERSION = 1
DEFAULT_FPS = 25


@dataclass
class VisualFeatures:
    """Per-frame lip features for the P speakers that have a visual cue.

    ``present`` has one flag per mixture speaker; its True count equals
    the leading dimension of ``data``.
    """

    data: np.ndarray  # [P, T_v, D_v]
    fps: float = DEFAULT_FPS
    present: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise InvalidInputError(f"visual features must be [P, T_v, D_v], got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataError("visual features contain non-finite values")
        if self.fps <= 0:
            raise InvalidInputError("fps must be positive")
        if self.present is None:
            self.present = np.ones(self.data.shape[0], dtype=bool)
        self.present = np.asarray(self.present, dtype=bool)
        if int(self.present.sum()) != self.data.shape[0]:
            raise InvalidInputError(
                f"present marks {int(self.present.sum())} cues but data holds {self.data.shape[0]}")

    @property
    def n_present(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass
class FrameMaskPlan:
    """Which visual frames get zeroed, per speaker, for one mixture."""

    rate: float
    seed: int
    indices: list  # one sorted int array per speaker

    @classmethod
    def sample(cls, rate: float, n_frames: int, n_speakers: int, seed: int) -> "FrameMaskPlan":
        """Draw round(rate * T_v) distinct frames per speaker, uniformly."""
        if not 0.0 <= rate <= 1.0:
            raise InvalidInputError(f"frame mask rate {rate} outside [0, 1]")
        count = int(round(rate * n_frames))
        rng = np.random.default_rng(seed)
        indices = [np.sort(rng.choice(n_frames, size=count, replace=False))
                   for _ in range(n_speakers)]
        return cls(rate=rate, seed=seed, indices=indices)


def write_visual_features(path, data: np.ndarray) -> None:
    """Write one speaker-utterance's [T_v, D_v] features as a VFEA file."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise InvalidInputError(f"VFEA payload must be [T_v, D_v], got shape {data.shape}")
    with open(path, "wb") as f:
        f.write(VFEA_MAGIC)
        f.write(struct.pack("<HII", VFEA_VERSION, data.shape[0], data.shape[1]))
        f.write(data.tobytes())


def read_visual_features(path, fps: float = DEFAULT_FPS) -> VisualFeatures:
    """Read a VFEA file into single-speaker (P=1) VisualFeatures."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 14 or blob[:4] != VFEA_MAGIC:
        raise FormatError(f"{path}: not a VFEA file (bad magic)")
    version, t_v, d_v = struct.unpack("<HII", blob[4:14])
    if version != VFEA_VERSION:
        raise FormatError(f"{path}: unsupported VFEA version {version}")
    if t_v == 0 or d_v == 0 or t_v * d_v > 2**31:
        raise FormatError(f"{path}: implausible dims T_v={t_v}, D_v={d_v}")
    expected = 14 + 4 * t_v * d_v
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=14).reshape(t_v, d_v)
    if not np.isfinite(data).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return VisualFeatures(data[None], fps=fps)


def synthesize_toy_features(wav: Waveform, fps: float = DEFAULT_FPS,
                            d_v: int = 64, seed: int = 0) -> VisualFeatures:
    """Frame-rate energy envelope embedded through a fixed random projection.

    Deterministic: the same (waveform, seed) always yields the same
    tensor, and a silent waveform yields constant rows (the projection's
    fixed offset).
    """
    if fps <= 0:
        raise InvalidInputError("fps must be positive")
    spf = wav.sample_rate / fps  # samples per visual frame
    t_v = int(np.ceil(len(wav) / spf))
    edges = (np.arange(t_v + 1) * spf).round().astype(int)
    rms = np.empty(t_v)
    for i in range(t_v):
        frame = wav.samples[edges[i]:min(edges[i + 1], len(wav))]
        rms[i] = np.sqrt(np.mean(frame ** 2)) if frame.size else 0.0
    delta = np.diff(rms, prepend=rms[:1])
    stats = np.stack([rms, np.log1p(rms), delta], axis=1)  # [T_v, 3]
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0, size=(3, d_v))
    offset = rng.normal(0.0, 0.5, size=d_v)
    return VisualFeatures((stats @ proj + offset).astype(np.float32)[None], fps=fps)


def mask_frames(v: VisualFeatures, plan: FrameMaskPlan) -> VisualFeatures:
    """Zero the planned frames; every other frame stays bit-identical."""
    if len(plan.indices) != v.n_present:
        raise InvalidInputError(
            f"plan covers {len(plan.indices)} speakers, features hold {v.n_present}")
    data = v.data.copy()
    for p, idx in enumerate(plan.indices):
        idx = np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= v.n_frames):
            raise InvalidInputError(f"mask index out of range for T_v={v.n_frames}")
        data[p, idx] = 0.0
    return VisualFeatures(data, fps=v.fps, present=v.present.copy())


def align_time(data: np.ndarray, n_chunks: int) -> np.ndarray:
    """Pad (zeros, right) or truncate the [..., T_v, D_v] time axis to n_chunks."""
    t_v = data.shape[-2]
    if t_v == n_chunks:
        return data
    if t_v > n_chunks:
        return data[..., :n_chunks, :]
    pad = np.zeros(data.shape[:-2] + (n_chunks - t_v, data.shape[-1]), dtype=data.dtype)
    return np.concatenate([data, pad], axis=-2)


def align_to_chunks(v: VisualFeatures, n_chunks: int, projection=None) -> np.ndarray:
    """Align [P, T_v, D_v] to the chunk axis and project to the model dim.

    ``projection`` is the separator's learned D_v -> D map (a callable);
    None means the dims already agree and the features pass through.
    """
    aligned = align_time(v.data, n_chunks)
    if projection is None:
        return aligned
    return projection(aligned)
