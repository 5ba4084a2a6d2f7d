"""Speaker encoder: log-mel -> unit-norm 256-d embedding.

Two convolutional layers, mean pooling over time, a linear projection and L2
normalisation.  Trained with a throw-away cosine-softmax speaker classifier on
random 125-frame crops; only the embedding stack is checkpointed.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus
from .numcore import Tensor

EMB_DIM = 256
MIN_FRAMES = 32
KINDS = ("real", "averaged", "pseudo")


class FrozenModelError(RuntimeError):
    pass


@dataclass
class SpeakerEncoderConfig:
    n_mels: int = 80
    channels: int = 128
    kernel: int = 5
    emb_dim: int = EMB_DIM


@dataclass
class SpeakerTrainConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    crop_frames: int = 125
    logit_scale: float = 10.0
    # which utterances of each speaker the crops come from: all / even / odd index
    partition: str = "all"


class SpeakerEncoder:
    kind = "spkemb"

    def __init__(self, params: dict[str, np.ndarray], config: SpeakerEncoderConfig | None = None,
                 frozen: bool = False, meta: dict | None = None):
        self.params = params
        self.config = config or SpeakerEncoderConfig()
        self.frozen = frozen
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, config: SpeakerEncoderConfig | None = None, seed: int = 0, dtype=np.float32):
        config = config or SpeakerEncoderConfig()
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        nc.init_conv(p, "conv0", config.kernel, config.n_mels, config.channels, rng, dtype)
        nc.init_conv(p, "conv1", config.kernel, config.channels, config.channels, rng, dtype)
        nc.init_linear(p, "proj", config.channels, config.emb_dim, rng, dtype)
        return cls(p, config)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        if requires_grad and self.frozen:
            raise FrozenModelError("speaker encoder is frozen")
        return {k: Tensor(v, requires_grad=requires_grad, op=k) for k, v in self.params.items()}

    @staticmethod
    def forward(p, mel: Tensor) -> Tensor:
        """(B, T, 80) -> (B, 256), differentiable w.r.t. ``mel`` and ``p``."""
        h = nc.tanh(nc.conv(mel, p, "conv0"))
        h = nc.tanh(nc.conv(h, p, "conv1"))
        pooled = nc.mean(h, axis=1)
        return nc.l2_normalize(nc.dense(pooled, p, "proj"))

    def embed_batch(self, mels: np.ndarray) -> np.ndarray:
        mels = np.asarray(mels, dtype=np.float32)
        if mels.ndim != 3 or mels.shape[1] < MIN_FRAMES:
            raise ValueError(f"need (B, T>={MIN_FRAMES}, 80) mels, got {mels.shape}")
        with nc.no_grad():
            return self.forward(self.tensors(), Tensor(mels)).data

    def embed(self, mel: np.ndarray) -> np.ndarray:
        """Embedding of one (T, 80) utterance; T must be >= 32."""
        mel = np.asarray(mel)
        if mel.ndim != 2 or mel.shape[0] < MIN_FRAMES:
            raise ValueError(f"utterance needs at least {MIN_FRAMES} frames, got {mel.shape}")
        return self.embed_batch(mel[None])[0]

    def save(self, path) -> Path:
        meta = {"kind": self.kind, "config": asdict(self.config), **self.meta}
        return save_checkpoint(path, meta, self.params)

    @classmethod
    def load(cls, path, frozen: bool = True):
        ckpt = load_checkpoint(path, kind=cls.kind)
        meta = dict(ckpt.metadata)
        config = SpeakerEncoderConfig(**meta.pop("config"))
        meta.pop("kind")
        return cls(ckpt.tensors, config, frozen=frozen, meta=meta)


def average_embeddings(embs: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Arithmetic mean re-normalised to unit length."""
    arr = np.asarray(embs, dtype=np.float64)
    if arr.ndim != 2 or len(arr) == 0:
        raise ValueError("average_embeddings needs a non-empty list of vectors")
    if arr.shape[1] != EMB_DIM:
        raise ValueError(f"embeddings must be {EMB_DIM}-d, got {arr.shape[1]}")
    # sort rows so the float summation order does not depend on argument order
    arr = arr[np.lexsort(arr.T[::-1])]
    m = arr.sum(axis=0) / len(arr)
    norm = np.linalg.norm(m)
    if norm == 0:
        raise ValueError("embeddings cancel out; mean has zero norm")
    return (m / norm).astype(np.float32)


def random_crop(mel: np.ndarray, frames: int, rng: np.random.Generator) -> np.ndarray:
    """Random ``frames``-long crop; shorter inputs are padded with the floor value."""
    T = mel.shape[0]
    if T <= frames:
        return np.pad(mel, ((0, frames - T), (0, 0)))
    start = int(rng.integers(0, T - frames + 1))
    return mel[start:start + frames]


def _partition(utts: list, mode: str) -> list:
    if mode == "all":
        return utts
    if mode == "even":
        return utts[0::2]
    if mode == "odd":
        return utts[1::2]
    raise ValueError(f"unknown partition {mode!r}")


def train_speaker_encoder(corpus: Corpus, config: SpeakerTrainConfig | None = None, seed: int = 0,
                          model_config: SpeakerEncoderConfig | None = None):
    """Classification training; returns (frozen encoder, per-step history)."""
    config = config or SpeakerTrainConfig()
    speakers = corpus.speakers
    if len(speakers) < 2:
        raise ValueError("speaker encoder training needs at least 2 speakers")
    pools = {s: _partition(u, config.partition) for s, u in corpus.by_speaker().items()}
    model = SpeakerEncoder.init(model_config, seed)
    rng = np.random.default_rng([seed, 1])
    head = rng.normal(0, 1 / np.sqrt(model.config.emb_dim),
                      size=(model.config.emb_dim, len(speakers))).astype(np.float32)
    params = dict(model.params, **{"head.w": head})
    state = nc.AdamState()
    history = []
    for step in range(config.steps):
        labels = rng.integers(0, len(speakers), size=config.batch_size)
        crops = []
        for lab in labels:
            pool = pools[speakers[lab]]
            utt = pool[int(rng.integers(0, len(pool)))]
            crops.append(random_crop(corpus.mel(utt), config.crop_frames, rng))
        batch = np.stack(crops)

        logits_out = {}

        def loss_fn(t, batch=batch, labels=labels):
            emb = SpeakerEncoder.forward(t, Tensor(batch))
            logits = nc.mul(nc.matmul(emb, nc.l2_normalize(t["head.w"], axis=0)), config.logit_scale)
            logits_out["v"] = logits.data
            return nc.cross_entropy(logits, labels)

        value, grads = nc.forward_backward(loss_fn, params)
        nc.adam_step(params, grads, state, config.lr)
        acc = float(np.mean(logits_out["v"].argmax(1) == labels))
        history.append({"step": step, "loss": value, "accuracy": acc})
    model.params = {k: v for k, v in params.items() if not k.startswith("head.")}
    model.frozen = True
    model.meta = {"seed": seed, "steps": config.steps, "speakers": speakers, "partition": config.partition}
    return model, history


# ---------------------------------------------------------------------------
# embedding interchange CSV: id,kind,e0..e255[,extra columns]


def write_embeddings_csv(path, rows: Iterable[tuple[str, str, np.ndarray]], extra: Sequence[str] = (),
                         extra_values: Sequence[Sequence] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "kind", *(f"e{i}" for i in range(EMB_DIM)), *extra])
        for i, (ident, kind, vec) in enumerate(rows):
            if kind not in KINDS:
                raise ValueError(f"embedding kind must be one of {KINDS}, got {kind!r}")
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (EMB_DIM,):
                raise ValueError(f"embedding {ident!r} has dims {vec.shape}")
            ev = list(extra_values[i]) if extra_values is not None else []
            w.writerow([ident, kind, *(repr(float(v)) for v in vec), *ev])
    return path


def read_embeddings_csv(path) -> list[dict]:
    """Rows as dicts with ``id``, ``kind``, ``embedding`` and any extra columns."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [f"e{i}" for i in range(EMB_DIM)]
        if reader.fieldnames is None or reader.fieldnames[:2 + EMB_DIM] != ["id", "kind", *cols]:
            raise ValueError(f"{path}: header must start with id,kind,e0..e{EMB_DIM - 1}")
        for r in reader:
            row = {k: v for k, v in r.items() if k not in cols}
            row["embedding"] = np.array([float(r[c]) for c in cols], dtype=np.float32)
            out.append(row)
    return out


def crop_embeddings(corpus: Corpus, encoder: SpeakerEncoder, crops_per_utt: int = 16, seed: int = 0,
                    utterances=None) -> tuple[np.ndarray, list[str]]:
    """Embeddings of random 2-second crops of every utterance, with their speaker ids."""
    utts = corpus.utterances if utterances is None else list(utterances)
    rng = np.random.default_rng([seed, 5])
    embs, spk = [], []
    for u in utts:
        mel = corpus.mel(u)
        crops = np.stack([random_crop(mel, 125, rng) for _ in range(crops_per_utt)])
        embs.append(encoder.embed_batch(crops))
        spk.extend([u.speaker_id] * crops_per_utt)
    return np.concatenate(embs), spk
