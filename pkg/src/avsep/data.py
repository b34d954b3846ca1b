"""Corpus manifests, reproducible mixture synthesis, and the toy corpus.

A manifest is line-delimited JSON, one utterance per line, with paths
resolved relative to the manifest file. A mixture spec pins everything
needed to re-render one training/eval sample bit-exactly: component
utterances, gains (serialized as decimal strings so nothing drifts
through files), visual availability, frame-mask rate, and a seed for
the crop windows and frame selection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import Waveform, read_wav, write_wav
from .errors import DataError, FormatError, InvalidInputError
from .visual import (FrameMaskPlan, VisualFeatures, mask_frames,
                     read_visual_features, synthesize_toy_features,
                     write_visual_features)

SPEAKER_COUNT_CHOICES = (2, 3, 4, 5)
SPEAKER_COUNT_WEIGHTS = (0.4, 0.2, 0.2, 0.2)  # the 2:1:1:1 protocol
CUE_ABSENCE_PROB = 0.1


@dataclass
class UtteranceRecord:
    utterance_id: str
    speaker_id: str
    wav_path: str
    visual_path: str | None = None

    def __post_init__(self):
        if not self.utterance_id or not self.speaker_id:
            raise DataError("utterance and speaker ids must be non-empty")


class Manifest:
    """Utterance table with speaker grouping and path resolution."""

    def __init__(self, records: list[UtteranceRecord], root: Path | None = None):
        self.records = list(records)
        self.root = Path(root) if root is not None else Path(".")
        self.by_id = {r.utterance_id: r for r in self.records}
        if len(self.by_id) != len(self.records):
            raise DataError("duplicate utterance ids in manifest")
        self.by_speaker: dict[str, list[UtteranceRecord]] = {}
        for r in self.records:
            self.by_speaker.setdefault(r.speaker_id, []).append(r)

    def __len__(self):
        return len(self.records)

    @property
    def speakers(self) -> list[str]:
        return sorted(self.by_speaker)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    @classmethod
    def load(cls, path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        records = []
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                    records.append(UtteranceRecord(
                        utterance_id=raw["utterance_id"], speaker_id=raw["speaker_id"],
                        wav_path=raw["wav_path"], visual_path=raw.get("visual_path")))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
        manifest = cls(records, root=path.parent)
        if check_files:
            for r in records:
                if not manifest.resolve(r.wav_path).exists():
                    raise DataError(f"{path}: missing wav file {r.wav_path}")
        return manifest

    def save(self, path) -> None:
        with open(path, "w") as f:
            for r in self.records:
                row = {"utterance_id": r.utterance_id, "speaker_id": r.speaker_id,
                       "wav_path": r.wav_path}
                if r.visual_path is not None:
                    row["visual_path"] = r.visual_path
                f.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class MixtureSpec:
    """Reproducible recipe for one mixture sample."""

    sample_id: str
    components: list[tuple[str, float]]  # (utterance_id, gain_db)
    visual_present: list[bool]
    frame_mask_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        n = len(self.components)
        if not 2 <= n <= 5:
            raise InvalidInputError(f"mixture must hold 2-5 speakers, got {n}")
        if len(self.visual_present) != n:
            raise InvalidInputError("visual_present length must equal component count")
        if not 0.0 <= self.frame_mask_rate <= 1.0:
            raise InvalidInputError("frame_mask_rate outside [0, 1]")

    @property
    def n_speakers(self) -> int:
        return len(self.components)

    @property
    def n_visual(self) -> int:
        return sum(self.visual_present)


def sample_mixture_spec(manifest: Manifest, rng, sample_id: str = "mix",
                        n_speakers: int | None = None, n_visual: int | None = None,
                        frame_mask_rate: float = 0.0,
                        gain_range_db: tuple[float, float] = (-5.0, 5.0),
                        cue_absence_prob: float = CUE_ABSENCE_PROB) -> MixtureSpec:
    """Draw one mixture recipe.

    With n_speakers None the count follows the 2:1:1:1 protocol over
    {2,3,4,5}; with n_visual None, 1-2 cues go absent with probability
    cue_absence_prob (capped so at least one cue remains). Utterances
    come from pairwise-distinct speakers. Passing an integer seed
    instead of a Generator makes the draw self-contained.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if n_speakers is None:
        n = int(rng.choice(SPEAKER_COUNT_CHOICES, p=SPEAKER_COUNT_WEIGHTS))
    else:
        n = int(n_speakers)
        if not 2 <= n <= 5:
            raise InvalidInputError(f"n_speakers must be in [2, 5], got {n}")
    speakers = manifest.speakers
    required = 5 if n_speakers is None else n
    if len(speakers) < required:
        raise DataError(f"manifest has {len(speakers)} speakers, need at least {required}")
    chosen = rng.choice(len(speakers), size=n, replace=False)
    components = []
    for idx in chosen:
        utts = manifest.by_speaker[speakers[idx]]
        utt = utts[int(rng.integers(len(utts)))]
        gain = float(rng.uniform(*gain_range_db))
        components.append((utt.utterance_id, gain))
    present = [True] * n
    if n_visual is None:
        if rng.random() < cue_absence_prob:
            absent = min(int(rng.integers(1, 3)), n - 1)  # 1 or 2, at least one cue kept
            for idx in rng.choice(n, size=absent, replace=False):
                present[int(idx)] = False
    else:
        if not 0 <= n_visual <= n:
            raise InvalidInputError(f"n_visual={n_visual} outside [0, {n}]")
        for idx in rng.choice(n, size=n - n_visual, replace=False):
            present[int(idx)] = False
    return MixtureSpec(sample_id=sample_id, components=components, visual_present=present,
                       frame_mask_rate=frame_mask_rate, seed=int(rng.integers(2 ** 31)))


def render_mixture(spec: MixtureSpec, manifest: Manifest, clip_seconds: float = 6.0,
                   fps: float = 25.0, sample_rate: int = 16000,
                   ) -> tuple[Waveform, list[Waveform], VisualFeatures]:
    """Render (mix, refs, visuals) for one spec.

    Sources are cropped to a seeded window snapped to visual-frame
    boundaries (or right zero-padded when short), scaled by their gain,
    and reordered so visually-guided components come first; the mixture
    is the left-to-right sum of the reordered refs, which makes
    sum(refs) == mix exact.
    """
    spf = sample_rate / fps
    if abs(spf - round(spf)) > 1e-9:
        raise DataError(f"sample rate {sample_rate} is not a multiple of fps {fps}")
    spf = int(round(spf))
    t_clip = int(round(clip_seconds * sample_rate))
    frames_clip = math.ceil(t_clip / spf)
    rng = np.random.default_rng(spec.seed)

    sources, crops = [], []
    seen_speakers = set()
    for utt_id, gain_db in spec.components:
        record = manifest.by_id.get(utt_id)
        if record is None:
            raise DataError(f"spec {spec.sample_id}: unknown utterance {utt_id}")
        if record.speaker_id in seen_speakers:
            raise DataError(f"spec {spec.sample_id}: speaker {record.speaker_id} "
                            "appears twice")
        seen_speakers.add(record.speaker_id)
        wav = read_wav(manifest.resolve(record.wav_path), expected_rate=sample_rate)
        max_start = max(0, (len(wav) - t_clip) // spf)
        start_frame = int(rng.integers(0, max_start + 1))
        start = start_frame * spf
        clip = wav.samples[start:start + t_clip]
        if clip.shape[0] < t_clip:
            clip = np.pad(clip, (0, t_clip - clip.shape[0]))
        sources.append(clip * 10.0 ** (gain_db / 20.0))
        crops.append((record, start_frame))
    mask_seed = int(rng.integers(2 ** 31))

    order = [i for i, p in enumerate(spec.visual_present) if p] + \
            [i for i, p in enumerate(spec.visual_present) if not p]
    refs = [sources[i] for i in order]
    mix = np.zeros(t_clip)
    for ref in refs:
        mix = mix + ref

    guided = [i for i in order if spec.visual_present[i]]
    vis_rows = []
    for i in guided:
        record, start_frame = crops[i]
        if record.visual_path is None:
            raise DataError(f"spec {spec.sample_id}: {record.utterance_id} has a visual cue "
                            "but no visual_path")
        feats = read_visual_features(manifest.resolve(record.visual_path), fps=fps).data[0]
        window = feats[start_frame:start_frame + frames_clip]
        if window.shape[0] < frames_clip:
            window = np.pad(window, ((0, frames_clip - window.shape[0]), (0, 0)))
        vis_rows.append(window)
    n = spec.n_speakers
    present = np.array([True] * len(guided) + [False] * (n - len(guided)))
    if vis_rows:
        visuals = VisualFeatures(np.stack(vis_rows), fps=fps, present=present)
        if spec.frame_mask_rate > 0.0:
            plan = FrameMaskPlan.sample(spec.frame_mask_rate, visuals.n_frames,
                                        visuals.n_present, seed=mask_seed)
            visuals = mask_frames(visuals, plan)
    else:
        visuals = VisualFeatures(np.zeros((0, frames_clip, 1), dtype=np.float32),
                                 fps=fps, present=present)
    return (Waveform(mix, sample_rate),
            [Waveform(r, sample_rate) for r in refs],
            visuals)


def save_specs(specs: list[MixtureSpec], path) -> None:
    with open(path, "w") as f:
        for s in specs:
            row = {"sample_id": s.sample_id,
                   "components": [{"utterance_id": u, "gain_db": repr(g)}
                                  for u, g in s.components],
                   "visual_present": [bool(p) for p in s.visual_present],
                   "frame_mask_rate": s.frame_mask_rate,
                   "seed": s.seed}
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_specs(path) -> list[MixtureSpec]:
    specs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                specs.append(MixtureSpec(
                    sample_id=raw["sample_id"],
                    components=[(c["utterance_id"], float(c["gain_db"]))
                                for c in raw["components"]],
                    visual_present=[bool(p) for p in raw["visual_present"]],
                    frame_mask_rate=float(raw["frame_mask_rate"]),
                    seed=int(raw["seed"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad mixture spec ({exc})") from exc
    return specs


def materialize_test_set(manifest: Manifest, n_samples: int, n_speakers: int,
                         n_visual: int, frame_mask_rate: float, seed: int,
                         out_path=None, id_prefix: str = "eval") -> list[MixtureSpec]:
    """Generate a fixed-condition spec list and optionally persist it."""
    rng = np.random.default_rng(seed)
    specs = [sample_mixture_spec(manifest, rng, sample_id=f"{id_prefix}{i:05d}",
                                 n_speakers=n_speakers, n_visual=n_visual,
                                 frame_mask_rate=frame_mask_rate)
             for i in range(n_samples)]
    if out_path is not None:
        save_specs(specs, out_path)
    return specs


def _toy_source(rng: np.random.Generator, n_samples: int, sample_rate: int,
                f0: float) -> np.ndarray:
    """Harmonic tone with per-utterance vibrato and syllabic amplitude bumps."""
    t = np.arange(n_samples) / sample_rate
    vib_rate = rng.uniform(0.1, 0.5)
    vib_phase = rng.uniform(0, 2 * np.pi)
    f_t = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * vib_rate * t + vib_phase))
    phase = 2 * np.pi * np.cumsum(f_t) / sample_rate
    sig = np.zeros(n_samples)
    for k, amp in enumerate((1.0, 0.5, 0.25, 0.12, 0.06), start=1):
        sig += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # deep, slow syllabic bumps: the envelope is the cue the synthetic
    # visual features carry, so it has to discriminate utterances well
    am_rate = rng.uniform(0.6, 1.6)
    am_phase = rng.uniform(0, 2 * np.pi)
    env = (0.05 + 0.95 * np.sin(np.pi * am_rate * t + am_phase) ** 2) ** 2
    x = env * sig
    return 0.25 * x / max(np.abs(x).max(), 1e-9)


def toy_fundamental(speaker_index: int, n_speakers: int) -> float:
    """Per-speaker fundamental frequency; bands are pairwise distinct."""
    return float(np.linspace(85.0, 280.0, max(n_speakers, 2))[speaker_index])


def generate_toy_corpus(out_dir, n_speakers: int = 10, utts_per_speaker: int = 20,
                        seed: int = 0, duration: float = 6.0, sample_rate: int = 16000,
                        fps: float = 25.0, visual_dim: int = 64) -> Path:
    """Write a synthetic corpus (WAV + VFEA + manifest); returns the manifest path.

    Speakers get distinct fundamental-frequency bands; each utterance
    carries its own amplitude modulation, which also drives the
    synthetic visual features. Regeneration with the same arguments is
    byte-identical.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "visual").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration * sample_rate))
    records = []
    for s in range(n_speakers):
        f0 = toy_fundamental(s, n_speakers)
        for u in range(utts_per_speaker):
            utt_id = f"spk{s:02d}_utt{u:03d}"
            wav = Waveform(_toy_source(rng, n_samples, sample_rate, f0), sample_rate)
            wav_rel = f"audio/{utt_id}.wav"
            vis_rel = f"visual/{utt_id}.vfea"
            write_wav(out_dir / wav_rel, wav)
            feats = synthesize_toy_features(wav, fps=fps, d_v=visual_dim, seed=seed)
            write_visual_features(out_dir / vis_rel, feats.data[0])
            records.append(UtteranceRecord(utt_id, f"spk{s:02d}", wav_rel, vis_rel))
    manifest = Manifest(records, root=out_dir)
    manifest_path = out_dir / "manifest.jsonl"
    manifest.save(manifest_path)
    return manifest_path


def split_manifest(manifest: Manifest, val_utts_per_speaker: int
                   ) -> tuple[Manifest, Manifest]:
    """Hold out the last val_utts_per_speaker utterances of every speaker.

    Train/val must come from one corpus: the synthetic visual features
    share a single projection per corpus seed, so features from corpora
    with different seeds are mutually unintelligible.
    """
    train_records, val_records = [], []
    for speaker in manifest.speakers:
        utts = manifest.by_speaker[speaker]
        if len(utts) <= val_utts_per_speaker:
            raise DataError(f"speaker {speaker} has only {len(utts)} utterances, "
                            f"cannot hold out {val_utts_per_speaker}")
        train_records.extend(utts[:-val_utts_per_speaker])
        val_records.extend(utts[-val_utts_per_speaker:])
    return (Manifest(train_records, root=manifest.root),
            Manifest(val_records, root=manifest.root))


def batched_spec_stream(manifest: Manifest, rng: np.random.Generator, batch_size: int,
                        **sample_kwargs):
    """Yield lists of specs bucketed by (n_speakers, n_visual) so every
    batch collates into rectangular tensors."""
    buckets: dict[tuple[int, int], list[MixtureSpec]] = {}
    counter = 0
    while True:
        spec = sample_mixture_spec(manifest, rng, sample_id=f"train{counter:08d}",
                                   **sample_kwargs)
        counter += 1
        key = (spec.n_speakers, spec.n_visual)
        bucket = buckets.setdefault(key, [])
        bucket.append(spec)
        if len(bucket) == batch_size:
            yield list(bucket)
            bucket.clear()
