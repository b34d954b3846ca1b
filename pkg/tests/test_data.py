import numpy as np
import pytest

from avsep.data import (Manifest, MixtureSpec, UtteranceRecord, batched_spec_stream,
                        generate_toy_corpus, load_specs, materialize_test_set,
                        render_mixture, sample_mixture_spec, save_specs,
                        toy_fundamental)
from avsep.codec import read_wav
from avsep.errors import DataError, FormatError, InvalidInputError


def test_sample_spec_determinism(toy_corpus):
    a = sample_mixture_spec(toy_corpus, 1234)
    b = sample_mixture_spec(toy_corpus, 1234)
    assert a == b


def test_sample_spec_speaker_disjointness(toy_corpus):
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec = sample_mixture_spec(toy_corpus, rng)
        speakers = [toy_corpus.by_id[u].speaker_id for u, _ in spec.components]
        assert len(set(speakers)) == spec.n_speakers


def test_sample_spec_distributions(toy_corpus):
    rng = np.random.default_rng(1)
    counts = {2: 0, 3: 0, 4: 0, 5: 0}
    absent = 0
    trials = 4000
    for _ in range(trials):
        spec = sample_mixture_spec(toy_corpus, rng)
        counts[spec.n_speakers] += 1
        if spec.n_visual < spec.n_speakers:
            absent += 1
            assert spec.n_speakers - spec.n_visual in (1, 2)
            assert spec.n_visual >= 1  # at least one cue always remains
    # loose 3-sigma style bounds at this sample size; the acceptance
    # suite checks the tight ones over 100k draws
    assert abs(counts[2] / trials - 0.4) < 0.03
    for n in (3, 4, 5):
        assert abs(counts[n] / trials - 0.2) < 0.03
    assert abs(absent / trials - 0.1) < 0.02


def test_sample_spec_fixed_condition(toy_corpus):
    rng = np.random.default_rng(2)
    spec = sample_mixture_spec(toy_corpus, rng, n_speakers=4, n_visual=3,
                               frame_mask_rate=0.4)
    assert spec.n_speakers == 4 and spec.n_visual == 3
    assert spec.frame_mask_rate == 0.4
    with pytest.raises(InvalidInputError):
        sample_mixture_spec(toy_corpus, rng, n_speakers=6)
    with pytest.raises(InvalidInputError):
        sample_mixture_spec(toy_corpus, rng, n_speakers=3, n_visual=4)


def test_insufficient_speakers():
    records = [UtteranceRecord(f"u{i}", f"s{i % 2}", f"u{i}.wav") for i in range(4)]
    manifest = Manifest(records)
    with pytest.raises(DataError):
        sample_mixture_spec(manifest, 0)


def test_render_mixture_sum_identity(toy_corpus):
    rng = np.random.default_rng(3)
    for _ in range(5):
        spec = sample_mixture_spec(toy_corpus, rng)
        mix, refs, visuals = render_mixture(spec, toy_corpus, clip_seconds=1.0)
        acc = np.zeros(len(mix))
        for r in refs:
            acc = acc + r.samples
        assert np.array_equal(acc, mix.samples)
        assert len(refs) == spec.n_speakers
        assert visuals.n_present == spec.n_visual


def test_render_mixture_replay_is_bit_exact(toy_corpus):
    spec = sample_mixture_spec(toy_corpus, 99, frame_mask_rate=0.2)
    a_mix, a_refs, a_vis = render_mixture(spec, toy_corpus, clip_seconds=1.5)
    b_mix, b_refs, b_vis = render_mixture(spec, toy_corpus, clip_seconds=1.5)
    assert np.array_equal(a_mix.samples, b_mix.samples)
    for x, y in zip(a_refs, b_refs):
        assert np.array_equal(x.samples, y.samples)
    assert np.array_equal(a_vis.data, b_vis.data)


def test_render_reorders_guided_components_first(toy_corpus):
    rng = np.random.default_rng(4)
    spec = sample_mixture_spec(toy_corpus, rng, n_speakers=3, n_visual=2)
    # force an interleaved pattern: (guided, unguided, guided)
    spec = MixtureSpec(sample_id=spec.sample_id, components=spec.components,
                       visual_present=[True, False, True],
                       frame_mask_rate=0.0, seed=spec.seed)
    mix, refs, visuals = render_mixture(spec, toy_corpus, clip_seconds=1.0)
    assert visuals.n_present == 2
    assert list(visuals.present) == [True, True, False]
    # refs come back guided-first: 0 and 2, then 1
    plain = MixtureSpec(sample_id=spec.sample_id, components=spec.components,
                        visual_present=[True, True, True],
                        frame_mask_rate=0.0, seed=spec.seed)
    _, plain_refs, _ = render_mixture(plain, toy_corpus, clip_seconds=1.0)
    assert np.array_equal(refs[0].samples, plain_refs[0].samples)
    assert np.array_equal(refs[1].samples, plain_refs[2].samples)
    assert np.array_equal(refs[2].samples, plain_refs[1].samples)


def test_render_cancellation():
    # two equal-and-opposite sources cancel exactly
    import avsep.data as data_mod
    rng = np.random.default_rng(5)
    x = rng.normal(scale=0.2, size=8000)

    class FakeRecord:
        def __init__(self, uid):
            self.utterance_id = uid
            self.speaker_id = uid
            self.wav_path = uid
            self.visual_path = None

    class FakeManifest:
        by_id = {"a": FakeRecord("a"), "b": FakeRecord("b")}

        def resolve(self, p):
            return p

    spec = MixtureSpec(sample_id="t", components=[("a", 0.0), ("b", 0.0)],
                       visual_present=[False, False], seed=0)
    originals = {"a": x, "b": -x}
    real_read = data_mod.read_wav
    data_mod.read_wav = lambda path, expected_rate=None: data_mod.Waveform(originals[path], 16000)
    try:
        mix, refs, _ = render_mixture(spec, FakeManifest(), clip_seconds=0.5)
    finally:
        data_mod.read_wav = real_read
    assert np.count_nonzero(mix.samples) == 0
    assert len(refs) == 2


def test_spec_file_round_trip(tmp_path, toy_corpus):
    rng = np.random.default_rng(6)
    specs = [sample_mixture_spec(toy_corpus, rng, sample_id=f"s{i}",
                                 frame_mask_rate=0.2) for i in range(8)]
    path = tmp_path / "specs.jsonl"
    save_specs(specs, path)
    back = load_specs(path)
    assert back == specs  # gains survive serialization exactly

    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    with pytest.raises(FormatError):
        load_specs(bad)


def test_materialize_test_set_conditions(tmp_path, toy_corpus):
    path = tmp_path / "eval.jsonl"
    specs = materialize_test_set(toy_corpus, n_samples=10, n_speakers=5, n_visual=5,
                                 frame_mask_rate=0.0, seed=0, out_path=path)
    assert len(specs) == 10
    assert all(s.n_speakers == 5 and all(s.visual_present) for s in specs)

    specs = materialize_test_set(toy_corpus, n_samples=10, n_speakers=5, n_visual=4,
                                 frame_mask_rate=0.0, seed=1)
    assert all(sum(1 for p in s.visual_present if not p) == 1 for s in specs)

    specs = materialize_test_set(toy_corpus, n_samples=6, n_speakers=3, n_visual=3,
                                 frame_mask_rate=0.4, seed=2)
    assert all(s.frame_mask_rate == 0.4 for s in specs)

    assert load_specs(path) == materialize_test_set(
        toy_corpus, n_samples=10, n_speakers=5, n_visual=5,
        frame_mask_rate=0.0, seed=0)


def test_toy_corpus_contents(tmp_path):
    manifest_path = generate_toy_corpus(tmp_path / "c", n_speakers=3, utts_per_speaker=2,
                                        seed=11, duration=1.0, visual_dim=8)
    manifest = Manifest.load(manifest_path)
    assert len(manifest) == 6
    assert len(manifest.speakers) == 3
    for r in manifest.records:
        wav = read_wav(manifest.resolve(r.wav_path), expected_rate=16000)
        assert len(wav) == 16000
        assert r.visual_path is not None


def test_toy_corpus_determinism(tmp_path):
    p1 = generate_toy_corpus(tmp_path / "a", n_speakers=2, utts_per_speaker=1,
                             seed=3, duration=0.5)
    p2 = generate_toy_corpus(tmp_path / "b", n_speakers=2, utts_per_speaker=1,
                             seed=3, duration=0.5)
    m1, m2 = Manifest.load(p1), Manifest.load(p2)
    for r1, r2 in zip(m1.records, m2.records):
        assert m1.resolve(r1.wav_path).read_bytes() == m2.resolve(r2.wav_path).read_bytes()
        assert m1.resolve(r1.visual_path).read_bytes() == m2.resolve(r2.visual_path).read_bytes()


def test_toy_speakers_have_distinct_spectra(tmp_path):
    manifest_path = generate_toy_corpus(tmp_path / "c", n_speakers=4, utts_per_speaker=2,
                                        seed=5, duration=2.0)
    manifest = Manifest.load(manifest_path)
    sr = 16000
    spectra = {}
    for speaker in manifest.speakers:
        acc = None
        for r in manifest.by_speaker[speaker]:
            wav = read_wav(manifest.resolve(r.wav_path))
            power = np.abs(np.fft.rfft(wav.samples)) ** 2
            acc = power if acc is None else acc + power
        spectra[speaker] = acc
    freqs = np.fft.rfftfreq(2 * (len(next(iter(spectra.values()))) - 1), d=1.0 / sr)
    # each speaker's fundamental band should hold far more of its own energy
    # than any other speaker's band does
    for i, speaker in enumerate(manifest.speakers):
        f0 = toy_fundamental(i, 4)
        band = (freqs > f0 * 0.9) & (freqs < f0 * 1.1)
        own = spectra[speaker][band].sum() / spectra[speaker].sum()
        for j, other in enumerate(manifest.speakers):
            if i == j:
                continue
            theirs = spectra[other][band].sum() / spectra[other].sum()
            assert own > 2.0 * theirs, (speaker, other)


def test_batched_spec_stream_rectangular(toy_corpus):
    rng = np.random.default_rng(8)
    stream = batched_spec_stream(toy_corpus, rng, batch_size=3)
    for _ in range(5):
        batch = next(stream)
        assert len(batch) == 3
        assert len({(s.n_speakers, s.n_visual) for s in batch}) == 1


def test_manifest_errors(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"utterance_id": "a"}\n')
    with pytest.raises(FormatError):
        Manifest.load(path)
    path.write_text('{"utterance_id": "a", "speaker_id": "s", "wav_path": "gone.wav"}\n')
    with pytest.raises(DataError):
        Manifest.load(path)


def test_render_rejects_duplicate_speakers(toy_corpus):
    utts = [toy_corpus.by_speaker[toy_corpus.speakers[0]][i].utterance_id
            for i in range(2)]
    spec = MixtureSpec(sample_id="dup", components=[(utts[0], 0.0), (utts[1], 0.0)],
                       visual_present=[True, True], seed=0)
    with pytest.raises(DataError):
        render_mixture(spec, toy_corpus, clip_seconds=0.5)
