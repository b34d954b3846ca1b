"""Mask-estimation network with speaker-wise interactions.

A mixture's encoded frames are chunked, replicated into N streams (one
per speaker to separate, symmetry broken by learned slot embeddings),
then refined by B blocks of five sub-modules:

    LCA   self-attention along the intra-chunk axis, per (stream, chunk)
    GAV   cross-attention along the chunk axis, visual frames as queries,
          applied to the P visually-guided streams only
    GCA   self-attention along the chunk axis, per (stream, position)
    SAI   self-attention along the stream axis, per (chunk, position)
    SAVI  cross-attention along the stream axis, visual queries, guided
          streams only

Every sub-module preserves the [batch, N, S, L, D] shape, and GAV/SAVI
leave the non-visually-guided streams bitwise untouched. Overlap-add of
the final streams yields one multiplicative mask per speaker.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from .codec import AudioCodec, Waveform, chunk, overlap_add
from .errors import ConfigError, InvalidInputError


@dataclass
class SeparatorConfig:
    """Architecture hyperparameters for the codec + separator stack."""

    kernel_size: int = 16     # encoder kernel K, stride K/2
    chunk_len: int = 160      # L
    dim: int = 256            # D
    content_layers: int = 2   # R, layers per LCA and GCA
    num_blocks: int = 5       # B
    heads: int = 8
    ffn_width: int | None = None  # defaults to 4 * dim
    n_max: int = 5
    dropout: float = 0.1
    visual_dim: int = 256     # D_v of the incoming lip features
    gav_enabled: bool = True
    sai_enabled: bool = True
    savi_enabled: bool = True
    mask_relu: bool = False

    def __post_init__(self):
        if self.kernel_size < 2 or self.kernel_size % 2:
            raise ConfigError("kernel_size: must be a positive even integer")
        if self.chunk_len < 2 or self.chunk_len % 2:
            raise ConfigError("chunk_len: must be a positive even integer")
        for name in ("dim", "content_layers", "num_blocks", "heads", "n_max", "visual_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.dim % self.heads:
            raise ConfigError(f"heads: dim {self.dim} not divisible by {self.heads} heads")
        if self.ffn_width is not None and self.ffn_width < 1:
            raise ConfigError("ffn_width: must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout: must lie in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.dim // self.heads

    @property
    def ffn(self) -> int:
        return self.ffn_width if self.ffn_width is not None else 4 * self.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict, where: str = "separator") -> "SeparatorConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"{where}.{key}: unknown field")
        try:
            return cls(**raw)
        except ConfigError as exc:
            raise ConfigError(f"{where}.{exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{where}: {exc}") from None


def sinusoid_table(length: int, dim: int, dtype, device) -> torch.Tensor:
    """Fixed sinusoidal positions, [length, dim]."""
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype, device=device)
                    * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table


class SelfAttentionLayer(nn.Module):
    """Pre-norm multi-head self-attention + feed-forward, residual around both."""

    def __init__(self, dim: int, heads: int, ffn_width: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.drop1 = nn.Dropout(dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_width),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_width, dim),
        )
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x):
        # x: [batch, seq, D]
        h = self.norm1(x)
        x = x + self.drop1(self.attn(h, h, h, need_weights=False)[0])
        return x + self.drop2(self.ffn(self.norm2(x)))


class CrossAttentionLayer(nn.Module):
    """Pre-norm cross-attention; guide supplies queries, audio keys/values.

    The output is residual-added to the audio stream, so the result
    stays audio-shaped (guide and audio share their sequence length).
    """

    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.norm_guide = nn.LayerNorm(dim)
        self.norm_audio = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.drop = nn.Dropout(dropout)

    def forward(self, audio, guide):
        # audio, guide: [batch, seq, D]
        q = self.norm_guide(guide)
        kv = self.norm_audio(audio)
        out = self.attn(q, kv, kv, need_weights=False)[0]
        return audio + self.drop(out)


class LocalContentAttention(nn.Module):
    """R stacked transformer layers along the intra-chunk axis."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            SelfAttentionLayer(cfg.dim, cfg.heads, cfg.ffn, cfg.dropout)
            for _ in range(cfg.content_layers))

    def forward(self, a):
        # [B, N, S, L, D] -> fold everything but L into the batch
        b, n, s, l, d = a.shape
        x = a.reshape(b * n * s, l, d)
        x = x + sinusoid_table(l, d, a.dtype, a.device)
        for layer in self.layers:
            x = layer(x)
        return x.reshape(b, n, s, l, d)


class GlobalContentAttention(nn.Module):
    """R stacked transformer layers along the chunk axis."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            SelfAttentionLayer(cfg.dim, cfg.heads, cfg.ffn, cfg.dropout)
            for _ in range(cfg.content_layers))

    def forward(self, a):
        b, n, s, l, d = a.shape
        x = a.permute(0, 1, 3, 2, 4).reshape(b * n * l, s, d)
        x = x + sinusoid_table(s, d, a.dtype, a.device)
        for layer in self.layers:
            x = layer(x)
        return x.reshape(b, n, l, s, d).permute(0, 1, 3, 2, 4)


class GlobalAudioVisual(nn.Module):
    """Single cross-attention along the chunk axis for the guided streams.

    Each visual frame queries the chunk sequence of its own stream; the
    streams without a cue pass through untouched.
    """

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.layer = CrossAttentionLayer(cfg.dim, cfg.heads, cfg.dropout)

    def forward(self, a, v):
        # a: [B, N, S, L, D], v: [B, P, S, D]
        p = v.shape[1]
        b, n, s, l, d = a.shape
        if p > n:
            raise InvalidInputError(f"{p} visual cues for {n} streams")
        if p == 0:
            return a
        audio = a[:, :p].permute(0, 1, 3, 2, 4).reshape(b * p * l, s, d)
        guide = v.unsqueeze(2).expand(b, p, l, s, d).reshape(b * p * l, s, d)
        out = self.layer(audio, guide).reshape(b, p, l, s, d).permute(0, 1, 3, 2, 4)
        return torch.cat([out, a[:, p:]], dim=1)


class SpeakerAudioInteraction(nn.Module):
    """Single self-attention layer along the stream axis (no positions)."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.layer = SelfAttentionLayer(cfg.dim, cfg.heads, cfg.ffn, cfg.dropout)

    def forward(self, a):
        b, n, s, l, d = a.shape
        x = a.permute(0, 2, 3, 1, 4).reshape(b * s * l, n, d)
        x = self.layer(x)
        return x.reshape(b, s, l, n, d).permute(0, 3, 1, 2, 4)


class SpeakerAudioVisualInteraction(nn.Module):
    """Single cross-attention along the stream axis, visual queries.

    For every (chunk, position) the P visual frames attend over the P
    guided streams; unguided streams pass through untouched.
    """

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.layer = CrossAttentionLayer(cfg.dim, cfg.heads, cfg.dropout)

    def forward(self, a, v):
        p = v.shape[1]
        b, n, s, l, d = a.shape
        if p > n:
            raise InvalidInputError(f"{p} visual cues for {n} streams")
        if p == 0:
            return a
        audio = a[:, :p].permute(0, 2, 3, 1, 4).reshape(b * s * l, p, d)
        guide = v.permute(0, 2, 1, 3).unsqueeze(2).expand(b, s, l, p, d).reshape(b * s * l, p, d)
        out = self.layer(audio, guide).reshape(b, s, l, p, d).permute(0, 3, 1, 2, 4)
        return torch.cat([out, a[:, p:]], dim=1)


class SeparationBlock(nn.Module):
    """One LCA -> GAV -> GCA -> SAI -> SAVI pass; GAV/SAI/SAVI are optional."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.lca = LocalContentAttention(cfg)
        self.gav = GlobalAudioVisual(cfg) if cfg.gav_enabled else None
        self.gca = GlobalContentAttention(cfg)
        self.sai = SpeakerAudioInteraction(cfg) if cfg.sai_enabled else None
        self.savi = SpeakerAudioVisualInteraction(cfg) if cfg.savi_enabled else None

    def forward(self, a, v=None):
        a = self.lca(a)
        if self.gav is not None and v is not None:
            a = self.gav(a, v)
        a = self.gca(a)
        if self.sai is not None:
            a = self.sai(a)
        if self.savi is not None and v is not None:
            a = self.savi(a, v)
        return a


class MaskEstimator(nn.Module):
    """Stream expansion plus the B separation blocks."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.cfg = cfg
        self.slots = nn.Parameter(torch.randn(cfg.n_max, cfg.dim) / math.sqrt(cfg.dim))
        if torch.unique(self.slots, dim=0).shape[0] != cfg.n_max:
            raise ConfigError("speaker slot embeddings initialised degenerate")
        self.visual_proj = (nn.Linear(cfg.visual_dim, cfg.dim)
                            if cfg.visual_dim != cfg.dim else None)
        self.blocks = nn.ModuleList(SeparationBlock(cfg) for _ in range(cfg.num_blocks))

    def expand_streams(self, chunks, n_speakers: int):
        """Replicate [B, S, L, D] chunks into [B, N, S, L, D] streams,
        offsetting stream i by slot embedding i."""
        if n_speakers < 1:
            raise InvalidInputError("need at least one output stream")
        if n_speakers > self.cfg.n_max:
            raise ConfigError(f"n_speakers {n_speakers} exceeds configured n_max {self.cfg.n_max}")
        slots = self.slots[:n_speakers].to(chunks.dtype).view(n_speakers, 1, 1, -1)
        return chunks.unsqueeze(1) + slots

    def project_visuals(self, visuals):
        if visuals is None or visuals.shape[1] == 0:
            return None
        if self.visual_proj is None:
            if visuals.shape[-1] != self.cfg.dim:
                raise InvalidInputError(
                    f"visual dim {visuals.shape[-1]} != model dim {self.cfg.dim} "
                    "and no projection was configured")
            return visuals
        return self.visual_proj(visuals)

    def forward(self, chunks, visuals, n_speakers: int):
        # chunks: [B, S, L, D]; visuals: [B, P, S, D_v] or None
        v = self.project_visuals(visuals)
        if v is not None and v.shape[1] > n_speakers:
            raise InvalidInputError(f"{v.shape[1]} visual cues for {n_speakers} speakers")
        a = self.expand_streams(chunks, n_speakers)
        for block in self.blocks:
            a = block(a, v)
        return a


class SeparationModel(nn.Module):
    """Codec + mask estimator; waveform mixtures in, per-speaker estimates out."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.config = cfg
        self.codec = AudioCodec(cfg.kernel_size, cfg.dim)
        self.mask_net = MaskEstimator(cfg)

    def _align_visuals(self, visuals, n_chunks: int):
        # [B, P, T_v, D_v] -> [B, P, S, D_v] by right zero pad / truncate
        t_v = visuals.shape[-2]
        if t_v >= n_chunks:
            return visuals[..., :n_chunks, :]
        return torch.nn.functional.pad(visuals, (0, 0, 0, n_chunks - t_v))

    def estimate_masks(self, encoded, visuals, n_speakers: int):
        """Encoded [B, T_a, D] (+ raw-length visuals) -> masks [B, N, T_a, D]."""
        chunks, valid = chunk(encoded, self.config.chunk_len)
        if visuals is not None:
            visuals = self._align_visuals(visuals, chunks.shape[-3])
        streams = self.mask_net(chunks, visuals, n_speakers)
        masks = overlap_add(streams, valid)
        if self.config.mask_relu:
            masks = torch.relu(masks)
        return masks

    def forward(self, mix, visuals, n_speakers: int):
        """mix [T_x] or [B, T_x]; visuals [(B,) P, T_v, D_v] or None."""
        squeeze = mix.dim() == 1
        if squeeze:
            mix = mix.unsqueeze(0)
            if visuals is not None:
                visuals = visuals.unsqueeze(0)
        t_x = mix.shape[-1]
        enc = self.codec.encode(mix)                                # [B, T_a, D]
        masks = self.estimate_masks(enc, visuals, n_speakers)       # [B, N, T_a, D]
        est = self.codec.decode(enc.unsqueeze(1) * masks, t_x)      # [B, N, T_x]
        return est.squeeze(0) if squeeze else est

    @torch.no_grad()
    def separate(self, wav, visual_features=None, n_speakers: int | None = None):
        """Separate one Waveform; returns n_speakers Waveforms, guided first."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            mix = torch.as_tensor(wav.samples, dtype=dtype)
            vis = None
            n_visual = 0
            if visual_features is not None and visual_features.n_present > 0:
                vis = torch.as_tensor(visual_features.data, dtype=dtype)
                n_visual = vis.shape[0]
            if n_speakers is None:
                n_speakers = max(n_visual, 1)
            if n_visual > n_speakers:
                raise InvalidInputError(f"{n_visual} visual cues for {n_speakers} speakers")
            est = self.forward(mix, vis, n_speakers)
            return [Waveform(row.cpu().double().numpy(), wav.sample_rate) for row in est]
        finally:
            self.train(was_training)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def parameter_breakdown(model: SeparationModel) -> dict[str, int]:
    """Trainable parameter counts per top-level component."""
    out = {"codec": count_parameters(model.codec),
           "slot_embeddings": model.mask_net.slots.numel()}
    if model.mask_net.visual_proj is not None:
        out["visual_projection"] = count_parameters(model.mask_net.visual_proj)
    for i, block in enumerate(model.mask_net.blocks):
        for name in ("lca", "gav", "gca", "sai", "savi"):
            sub = getattr(block, name)
            if sub is not None:
                out[f"block{i}.{name}"] = count_parameters(sub)
    out["total"] = count_parameters(model)
    return out
