"""Deterministic synthetic multi-speaker corpus and manifest handling.

Each speaker is a glottal pulse train at its own f0 shaped by three formant
resonators.  Utterances differ by f0 contour, pulse jitter and a syllable-like
amplitude envelope.  All randomness flows from ``(seed, speaker_index,
utt_index)`` so corpora are byte-identical across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import SAMPLE_RATE, load_wav, mel_spectrogram, save_wav

MANIFEST_FIELDS = ["speaker_id", "utt_id", "path", "seconds"]
FORMANT_BANDWIDTHS = (70.0, 100.0, 140.0)


@dataclass(frozen=True)
class SynthSpeakerSpec:
    speaker_id: str
    f0: float
    formant_centers: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        if not 80 <= self.f0 <= 400:
            raise ValueError(f"f0 {self.f0} outside [80, 400] Hz")
        f = self.formant_centers
        if not (f[0] < f[1] < f[2] < SAMPLE_RATE / 2):
            raise ValueError(f"formants {f} must be strictly increasing and below Nyquist")


def speaker_spec(seed: int, index: int) -> SynthSpeakerSpec:
    rng = np.random.default_rng([seed, index])
    f0 = float(rng.uniform(90.0, 300.0))
    formants = (
        float(rng.uniform(300.0, 850.0)),
        float(rng.uniform(950.0, 2300.0)),
        float(rng.uniform(2450.0, 3700.0)),
    )
    return SynthSpeakerSpec(f"spk{seed}_{index:02d}", f0, formants, seed)


def _resonator(x: np.ndarray, freq: float, bw: float) -> np.ndarray:
    r = np.exp(-np.pi * bw / SAMPLE_RATE)
    theta = 2 * np.pi * freq / SAMPLE_RATE
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([sum(a)], a, x)


def _smooth_noise(rng: np.random.Generator, n: int, knots: int) -> np.ndarray:
    pts = rng.standard_normal(knots + 1)
    return np.interp(np.linspace(0, knots, n), np.arange(knots + 1), pts)


def _envelope(rng: np.random.Generator, n: int) -> np.ndarray:
    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.1) * SAMPLE_RATE)
    while pos < n:
        length = int(rng.uniform(0.15, 0.4) * SAMPLE_RATE)
        amp = rng.uniform(0.35, 1.0)
        seg = amp * np.sin(np.linspace(0, np.pi, length)) ** 0.5
        end = min(n, pos + length)
        env[pos:end] = seg[:end - pos]
        pos = end + int(rng.uniform(0.03, 0.12) * SAMPLE_RATE)
    return env


def synth_utterance(spec: SynthSpeakerSpec, index: int, speaker_index: int, seconds: float) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, speaker_index, index])
    n = int(round(seconds * SAMPLE_RATE))
    contour = spec.f0 * (1.0 + 0.04 * _smooth_noise(rng, n, 6))
    contour *= 1.0 + 0.01 * rng.standard_normal(n)
    phase = np.cumsum(contour) / SAMPLE_RATE
    pulses = np.diff(np.floor(phase), prepend=0.0)
    y = pulses
    for f, bw in zip(spec.formant_centers, FORMANT_BANDWIDTHS):
        y = _resonator(y, f, bw)
    y = y * _envelope(rng, n) + 1e-4 * rng.standard_normal(n)
    return (0.9 * y / np.max(np.abs(y))).astype(np.float32)


def synth_corpus(out_dir, n_speakers: int, utts_per_speaker: int, utt_seconds: float, seed: int) -> Path:
    """Write ``wavs/<speaker>/<utt>.wav`` plus ``manifest.csv`` and ``speakers.csv``."""
    if n_speakers < 2:
        raise ValueError("n_speakers must be >= 2")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} not writable: {exc}") from exc
    rows = []
    specs = [speaker_spec(seed, i) for i in range(n_speakers)]
    for si, spec in enumerate(specs):
        (out / "wavs" / spec.speaker_id).mkdir(parents=True, exist_ok=True)
        for ui in range(utts_per_speaker):
            utt_id = f"{spec.speaker_id}_u{ui:03d}"
            rel = f"wavs/{spec.speaker_id}/{utt_id}.wav"
            save_wav(out / rel, synth_utterance(spec, ui, si, utt_seconds))
            rows.append([spec.speaker_id, utt_id, rel, f"{utt_seconds:.3f}"])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    with open(out / "speakers.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["speaker_id", "f0", "f1", "f2", "f3", "seed"])
        for s in specs:
            w.writerow([s.speaker_id, f"{s.f0:.3f}", *(f"{f:.3f}" for f in s.formant_centers), s.seed])
    return out


@dataclass(frozen=True)
class Utterance:
    speaker_id: str
    utt_id: str
    path: Path
    seconds: float


class Corpus:
    """Manifest-backed corpus with a per-instance mel cache."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = self.root / "manifest.csv"
        if not manifest.exists():
            raise FileNotFoundError(f"corpus manifest not found: {manifest}")
        with open(manifest, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != MANIFEST_FIELDS:
                raise ValueError(f"{manifest}: header must be {','.join(MANIFEST_FIELDS)}")
            self.utterances = [
                Utterance(r["speaker_id"], r["utt_id"], self.root / r["path"], float(r["seconds"]))
                for r in reader
            ]
        self._mels: dict[str, np.ndarray] = {}

    @property
    def speakers(self) -> list[str]:
        return sorted({u.speaker_id for u in self.utterances})

    def by_speaker(self) -> dict[str, list[Utterance]]:
        out: dict[str, list[Utterance]] = {s: [] for s in self.speakers}
        for u in self.utterances:
            out[u.speaker_id].append(u)
        return out

    def mel(self, utt: Utterance) -> np.ndarray:
        m = self._mels.get(utt.utt_id)
        if m is None:
            m = self._mels[utt.utt_id] = mel_spectrogram(load_wav(utt.path))
        return m

    def wav(self, utt: Utterance):
        return load_wav(utt.path)

    def subset(self, keep) -> "Corpus":
        """View restricted to utterances for which ``keep(utt, index_within_speaker)`` is true.

        Shares the mel cache with the parent.
        """
        counts: dict[str, int] = {}
        chosen = []
        for u in self.utterances:
            i = counts.get(u.speaker_id, 0)
            counts[u.speaker_id] = i + 1
            if keep(u, i):
                chosen.append(u)
        view = object.__new__(Corpus)
        view.root = self.root
        view.utterances = chosen
        view._mels = self._mels
        return view
