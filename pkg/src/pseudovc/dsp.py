"""Audio I/O, log-mel analysis and Griffin-Lim inversion.

Analysis: 1024-point periodic-Hann STFT, hop 256, no centre padding, so a
signal of ``n`` samples gives ``1 + (n - 1024) // 256`` frames.  Magnitudes are
divided by the window sum, passed through 80 triangular mel filters over
0-8 kHz, floored at 1e-5, and mapped to [0, 1] by ``(log10(m) + 5) / 5``.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
N_MELS = 80
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = -5.0


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> Waveform:
    """Read 16-bit PCM mono 16 kHz; samples scaled by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            if w.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV ({w.getcompname()}) not supported")
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz (no resampling)")
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float32) / np.float32(32768.0))


def save_wav(path, wav: Waveform | np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = wav.samples if isinstance(wav, Waveform) else np.asarray(wav)
    ints = np.clip(np.round(samples.astype(np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(ints.tobytes())
    return path


# ---------------------------------------------------------------------------
# STFT


@lru_cache(maxsize=None)
def hann_window(n: int = N_FFT) -> np.ndarray:
    # periodic Hann
    return (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)).astype(np.float64)


def num_frames(n_samples: int) -> int:
    return 1 + (n_samples - N_FFT) // HOP


def stft(x: np.ndarray) -> np.ndarray:
    """Complex STFT, shape (frames, N_FFT // 2 + 1)."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < N_FFT:
        raise ValueError(f"signal of {len(x)} samples is shorter than one {N_FFT}-point window")
    frames = np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::HOP]
    return np.fft.rfft(frames * hann_window(), axis=1)


def istft(spec: np.ndarray) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`stft`."""
    win = hann_window()
    frames = np.fft.irfft(spec, n=N_FFT, axis=1) * win
    n = (len(spec) - 1) * HOP + N_FFT
    out = np.zeros(n)
    norm = np.zeros(n)
    for i, fr in enumerate(frames):
        out[i * HOP:i * HOP + N_FFT] += fr
        norm[i * HOP:i * HOP + N_FFT] += win * win
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    return out


# ---------------------------------------------------------------------------
# mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies() -> np.ndarray:
    pts = mel_to_hz(np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2))
    return pts[1:-1]


@lru_cache(maxsize=None)
def mel_filterbank() -> np.ndarray:
    """Peak-1 triangular filters, shape (N_MELS, N_FFT // 2 + 1)."""
    pts = mel_to_hz(np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2))
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_spectrogram(wav: Waveform | np.ndarray) -> np.ndarray:
    """Normalised log-mel, shape (frames, 80), values in [0, 1]."""
    x = wav.samples if isinstance(wav, Waveform) else np.asarray(wav)
    mag = np.abs(stft(x)) / hann_window().sum()
    mel = mag @ mel_filterbank().T
    logm = np.log10(np.maximum(mel, 10.0 ** LOG_FLOOR))
    return np.clip((logm - LOG_FLOOR) / -LOG_FLOOR, 0.0, 1.0).astype(np.float32)


@lru_cache(maxsize=None)
def _fb_pinv() -> np.ndarray:
    return np.linalg.pinv(mel_filterbank())


def mel_to_linear(mel: np.ndarray) -> np.ndarray:
    """Approximate STFT magnitude (frames, 513) from a normalised log-mel.

    The floor value maps to exactly zero energy.
    """
    mel = np.clip(np.asarray(mel, dtype=np.float64), 0.0, 1.0)
    m = np.maximum(10.0 ** (mel * -LOG_FLOOR + LOG_FLOOR) - 10.0 ** LOG_FLOOR, 0.0)
    lin = np.maximum(m @ _fb_pinv().T, 0.0)
    return lin * hann_window().sum()


def spectral_convergence(target_mag: np.ndarray, x: np.ndarray) -> float:
    est = np.abs(stft(x))
    denom = np.linalg.norm(target_mag)
    return float(np.linalg.norm(target_mag - est) / denom) if denom > 0 else 0.0


def griffin_lim_linear(mag: np.ndarray, iterations: int, seed: int = 0) -> np.ndarray:
    """Phase recovery for a (frames, 513) magnitude; returns the raw signal."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    x = istft(mag * phase)
    for _ in range(iterations):
        spec = stft(x)
        phase = np.exp(1j * np.angle(spec))
        x = istft(mag * phase)
    return x


def griffin_lim(mel: np.ndarray, iterations: int = 60, seed: int = 0) -> Waveform:
    """Invert a normalised log-mel to audio, peak-normalised to 0.95."""
    x = griffin_lim_linear(mel_to_linear(mel), iterations, seed)
    peak = np.max(np.abs(x))
    if peak > 1e-8:
        x = x * (0.95 / peak)
    return Waveform(x.astype(np.float32))
