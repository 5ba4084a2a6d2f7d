import csv

import numpy as np
import pytest

from pseudovc.corpus import Corpus, SynthSpeakerSpec, speaker_spec, synth_corpus


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_is_byte_identical(tmp_path):
    a = synth_corpus(tmp_path / "a", 2, 2, 1.0, seed=4)
    b = synth_corpus(tmp_path / "b", 2, 2, 1.0, seed=4)
    assert files(a) == files(b)
    c = synth_corpus(tmp_path / "c", 2, 2, 1.0, seed=5)
    assert files(a) != files(c)


def test_manifest_counts(tmp_path):
    root = synth_corpus(tmp_path / "c", 8, 10, 0.5, seed=0)
    with open(root / "manifest.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["speaker_id", "utt_id", "path", "seconds"]
    assert len(rows) == 81
    corpus = Corpus(root)
    assert len(corpus.utterances) == 80 and len(corpus.speakers) == 8
    assert all(len(v) == 10 for v in corpus.by_speaker().values())


def test_needs_two_speakers(tmp_path):
    with pytest.raises(ValueError):
        synth_corpus(tmp_path / "c", 1, 2, 1.0, 0)


def test_speaker_specs_valid_and_seed_dependent():
    for i in range(20):
        s = speaker_spec(0, i)
        assert 80 <= s.f0 <= 400
        assert s.formant_centers[0] < s.formant_centers[1] < s.formant_centers[2] < 8000
    assert speaker_spec(0, 0) != speaker_spec(1, 0)
    assert speaker_spec(0, 0).speaker_id != speaker_spec(1, 0).speaker_id


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpeakerSpec("x", 50.0, (500.0, 1500.0, 2500.0), 0)
    with pytest.raises(ValueError):
        SynthSpeakerSpec("x", 120.0, (1500.0, 500.0, 2500.0), 0)


def test_audio_in_range_and_mel_shape(tmp_path):
    corpus = Corpus(synth_corpus(tmp_path / "c", 2, 1, 1.0, seed=0))
    u = corpus.utterances[0]
    w = corpus.wav(u)
    assert np.max(np.abs(w.samples)) <= 1.0
    assert corpus.mel(u).shape == (59, 80)
    assert corpus.mel(u) is corpus.mel(u)


def test_subset_shares_cache(tmp_path):
    corpus = Corpus(synth_corpus(tmp_path / "c", 2, 3, 0.5, seed=0))
    sub = corpus.subset(lambda u, i: i < 2)
    assert len(sub.utterances) == 4
    assert sub.mel(sub.utterances[0]) is corpus.mel(corpus.utterances[0])


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        Corpus(tmp_path)
