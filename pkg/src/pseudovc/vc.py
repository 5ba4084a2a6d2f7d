"""Bottleneck voice-conversion autoencoder and its two-stage trainer.

Content encoder: two tanh convolutions, a bidirectional GRU with 32 units per
direction, and 32x temporal downsampling (forward state at the last frame of
each 32-frame block, backward state at its first frame) -> 64-d code per block.

Decoder: the code is repeated back to frame rate, the speaker embedding is
appended to every frame, then a tanh projection, a GRU and a linear layer give
the raw mel.  A five-layer convolutional post-net predicts a residual.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus
from .dsp import Waveform, griffin_lim, mel_spectrogram
from .numcore import Tensor
from .spkemb import SpeakerEncoder, average_embeddings, random_crop

DOWNSAMPLE = 32
CODE_DIM = 64
TRACE_FIELDS = ["step", "L_recon", "L_recon0", "L_content", "L_content_consist", "L_speaker_consist", "total"]


def block_position_features(frames: int, n: int, dtype=np.float32) -> np.ndarray:
    """(frames, n) sin/cos pairs of the phase within each 32-frame block."""
    k = np.arange(frames) % DOWNSAMPLE
    cols = []
    for j in range(1, n // 2 + 1):
        ang = 2 * np.pi * j * k / DOWNSAMPLE
        cols += [np.sin(ang), np.cos(ang)]
    return np.stack(cols, axis=1).astype(dtype)


@dataclass
class VcModelConfig:
    n_mels: int = 80
    spk_dim: int = 256
    enc_channels: int = 64
    neck: int = CODE_DIM // 2
    dec_channels: int = 96
    dec_hidden: int = 64
    post_channels: int = 64
    post_layers: int = 5
    kernel: int = 5
    # sin/cos features of the frame index within its 32-frame block, fed to the
    # decoder; content-free, so the bottleneck still carries all source content
    block_position: int = 8


@dataclass
class TrainingConfig:
    stage: int = 1
    mu: float = 1.0
    lambda_: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    steps: int = 5000
    batch_size: int = 16
    lr: float = 1e-4
    crop_frames: int = 128
    seed: int = 0
    eval_every: int = 50

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if min(self.mu, self.lambda_, self.alpha, self.beta) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.stage == 1 and (self.alpha or self.beta):
            raise ValueError("stage 1 does not use the consistency terms; alpha and beta must be 0")
        if self.crop_frames % DOWNSAMPLE:
            raise ValueError(f"crop_frames must be a multiple of {DOWNSAMPLE}")

    @classmethod
    def stage1(cls, **kw):
        return cls(**{"stage": 1, "mu": 1.0, "lambda_": 1.0, **kw})

    @classmethod
    def stage2(cls, **kw):
        return cls(**{"stage": 2, "mu": 1.0, "lambda_": 10.0, "alpha": 10.0, "beta": 0.1, "steps": 500, **kw})


def content_reference(p: dict) -> dict:
    """Snapshot of the encoder weights as graph constants."""
    return {k: Tensor(np.array(v.data), op=k) for k, v in p.items() if k.startswith("enc.")}


@dataclass
class ConversionOutput:
    raw: Tensor
    refined: Tensor


class VoiceConverter:
    kind = "vc"

    def __init__(self, params: dict[str, np.ndarray], config: VcModelConfig | None = None, meta: dict | None = None):
        self.params = params
        self.config = config or VcModelConfig()
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, config: VcModelConfig | None = None, seed: int = 0, dtype=np.float32):
        c = config or VcModelConfig()
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        nc.init_conv(p, "enc.conv0", c.kernel, c.n_mels, c.enc_channels, rng, dtype)
        nc.init_conv(p, "enc.conv1", c.kernel, c.enc_channels, c.enc_channels, rng, dtype)
        nc.init_gru(p, "enc.rnn.fwd", c.enc_channels, c.neck, rng, dtype)
        nc.init_gru(p, "enc.rnn.bwd", c.enc_channels, c.neck, rng, dtype)
        nc.init_linear(p, "dec.in", 2 * c.neck + c.spk_dim + c.block_position, c.dec_channels, rng, dtype)
        nc.init_gru(p, "dec.rnn", c.dec_channels, c.dec_hidden, rng, dtype)
        nc.init_linear(p, "dec.out", c.dec_hidden, c.n_mels, rng, dtype)
        chans = [c.n_mels] + [c.post_channels] * (c.post_layers - 1) + [c.n_mels]
        for i in range(c.post_layers):
            nc.init_conv(p, f"post.{i}", c.kernel, chans[i], chans[i + 1], rng, dtype)
        p[f"post.{c.post_layers - 1}.w"] *= 0.1
        return cls(p, c)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, op=k) for k, v in self.params.items()}

    # -- differentiable pieces -------------------------------------------------

    def encode(self, p, mel: Tensor) -> Tensor:
        """(B, T, 80) -> (B, T/32, 64)."""
        if mel.dims[1] % DOWNSAMPLE:
            raise ValueError(f"frame count {mel.dims[1]} is not a multiple of {DOWNSAMPLE}")
        h = nc.tanh(nc.conv(mel, p, "enc.conv0"))
        h = nc.tanh(nc.conv(h, p, "enc.conv1"))
        fwd, bwd = nc.bigru(h, p, "enc.rnn")
        return nc.concat([fwd[:, DOWNSAMPLE - 1::DOWNSAMPLE], bwd[:, ::DOWNSAMPLE]], axis=-1)

    def decode(self, p, code: Tensor, spk: Tensor) -> ConversionOutput:
        """(B, N, 64) x (B, 256) -> raw and refined (B, 32N, 80)."""
        T = code.dims[1] * DOWNSAMPLE
        up = nc.repeat(code, DOWNSAMPLE, axis=1)
        parts = [up, nc.expand(spk, 1, T)]
        if self.config.block_position:
            pos = block_position_features(T, self.config.block_position, code.dtype)
            parts.append(Tensor(np.broadcast_to(pos, (code.dims[0], *pos.shape)).copy()))
        x = nc.concat(parts, axis=-1)
        h = nc.tanh(nc.dense(x, p, "dec.in"))
        h = nc.gru(h, p, "dec.rnn")
        raw = nc.dense(h, p, "dec.out")
        y = raw
        last = self.config.post_layers - 1
        for i in range(last):
            y = nc.tanh(nc.conv(y, p, f"post.{i}"))
        refined = nc.add(raw, nc.conv(y, p, f"post.{last}"))
        return ConversionOutput(raw, refined)

    # -- losses -----------------------------------------------------------------

    def loss_stage1(self, p, x1: Tensor, s1: Tensor, cfg: TrainingConfig, ref=None) -> dict[str, Tensor]:
        """Self-reconstruction terms.

        The content term measures X_hat and X1 with ``ref``, a constant copy of
        the encoder weights (default: the current values in ``p``), so it
        trains the decoder and the encoder only through C1 -> X_hat.  Letting
        it move the measuring encoder as well collapses the code to a
        constant, which zeroes the term at desk scale.
        """
        ref = content_reference(p) if ref is None else ref
        c1 = self.encode(p, x1)
        out = self.decode(p, c1, s1)
        target = self.encode(ref, x1)
        losses = {
            "L_recon": nc.mse(out.raw, x1),
            "L_recon0": nc.mse(out.refined, x1),
            "L_content": nc.mae(self.encode(ref, out.raw), target),
        }
        losses["total"] = losses["L_recon"] + cfg.mu * losses["L_recon0"] + cfg.lambda_ * losses["L_content"]
        losses["_c1"] = c1
        losses["_target"] = target
        return losses

    def loss_stage2(self, p, es_p, x1: Tensor, s1: Tensor, s2: Tensor, cfg: TrainingConfig,
                    ref=None) -> dict[str, Tensor]:
        """Stage-1 terms on the self pair plus content/speaker consistency on the cross pair.

        ``es_p`` are the (frozen) speaker-encoder tensors; gradients flow
        through them to the converted mel.  ``ref`` as in :meth:`loss_stage1`.
        """
        if np.any(np.all(s1.data == s2.data, axis=-1)):
            raise ValueError("stage-2 pair has the same source and target speaker embedding")
        ref = content_reference(p) if ref is None else ref
        losses = self.loss_stage1(p, x1, s1, cfg, ref)
        c1 = losses.pop("_c1")
        target = losses.pop("_target")
        x12 = self.decode(p, c1, s2).raw
        losses["L_content_consist"] = nc.mae(self.encode(ref, x12), target)
        losses["L_speaker_consist"] = nc.mae(SpeakerEncoder.forward(es_p, x12), s2)
        losses["total"] = (losses["total"] + cfg.alpha * losses["L_content_consist"]
                           + cfg.beta * losses["L_speaker_consist"])
        return losses

    # -- inference --------------------------------------------------------------

    def convert_mel(self, mel: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pad to a multiple of 32 with the floor value, convert, trim, clamp to [0, 1]."""
        mel = np.asarray(mel, dtype=np.float32)
        T = mel.shape[0]
        if T < DOWNSAMPLE:
            raise ValueError(f"source needs at least {DOWNSAMPLE} frames, got {T}")
        padded = np.pad(mel, ((0, (-T) % DOWNSAMPLE), (0, 0)))
        with nc.no_grad():
            p = self.tensors()
            code = self.encode(p, Tensor(padded[None]))
            out = self.decode(p, code, Tensor(np.asarray(target, np.float32)[None]))
        raw = np.clip(out.raw.data[0, :T], 0.0, 1.0)
        refined = np.clip(out.refined.data[0, :T], 0.0, 1.0)
        return raw, refined

    def save(self, path) -> Path:
        return save_checkpoint(path, {"kind": self.kind, "config": asdict(self.config), **self.meta}, self.params)

    @classmethod
    def load(cls, path):
        ckpt = load_checkpoint(path, kind=cls.kind)
        meta = dict(ckpt.metadata)
        config = VcModelConfig(**meta.pop("config"))
        meta.pop("kind")
        return cls(ckpt.tensors, config, meta)


def encode_content(model: VoiceConverter, mel: np.ndarray) -> np.ndarray:
    """(T, 80) with T a multiple of 32 -> (T/32, 64)."""
    with nc.no_grad():
        return model.encode(model.tensors(), Tensor(np.asarray(mel, np.float32)[None])).data[0]


def convert(model: VoiceConverter, source: Waveform | np.ndarray, target: np.ndarray,
            gl_iterations: int = 60) -> tuple[np.ndarray, Waveform]:
    """Convert a waveform (or a precomputed mel) to ``target``; returns (refined mel, audio)."""
    mel = mel_spectrogram(source) if isinstance(source, Waveform) else np.asarray(source)
    _, refined = model.convert_mel(mel, target)
    return refined, griffin_lim(refined, gl_iterations)


# ---------------------------------------------------------------------------
# training


def speaker_table(corpus: Corpus, encoder: SpeakerEncoder) -> dict[str, np.ndarray]:
    """Averaged, re-normalised embedding of every utterance per speaker."""
    return {s: average_embeddings([encoder.embed(corpus.mel(u)) for u in utts])
            for s, utts in corpus.by_speaker().items()}


def derange_speakers(speaker_idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Permutation of batch positions so that no position keeps its own speaker.

    Raises ValueError when no such permutation exists, i.e. one speaker holds
    more than half of the batch.
    """
    n = len(speaker_idx)
    counts = np.bincount(speaker_idx)
    if counts.max() * 2 > n:
        raise ValueError("no derangement: one speaker holds more than half of the batch")
    perm = rng.permutation(n)
    for _ in range(100 * n):
        bad = np.flatnonzero(speaker_idx[perm] == speaker_idx)
        if len(bad) == 0:
            return perm
        i = bad[0]
        j = int(rng.integers(0, n))
        perm[i], perm[j] = perm[j], perm[i]
    # group positions by speaker and shift by the largest group
    order = np.argsort(speaker_idx, kind="stable")
    perm = np.empty(n, dtype=np.int64)
    perm[order] = order[(np.arange(n) + counts.max()) % n]
    return perm


def cross_targets(speaker_idx: np.ndarray, speakers: list, table: dict, s1: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Target embeddings of other speakers: a batch derangement when one exists,
    otherwise a random different speaker from the table per position."""
    if len(speakers) < 2:
        raise ValueError("stage 2 needs at least two speakers")
    try:
        return s1[derange_speakers(speaker_idx, rng)]
    except ValueError:
        k = len(speakers)
        other = (speaker_idx + rng.integers(1, k, size=len(speaker_idx))) % k
        return np.stack([table[speakers[i]] for i in other]).astype(np.float32)


@dataclass
class TrainResult:
    model: VoiceConverter
    trace: list[dict] = field(default_factory=list)
    eval_trace: list[dict] = field(default_factory=list)


def _sample_batch(corpus, speakers, table, crop, batch_size, rng):
    by = corpus.by_speaker()
    spk_idx = rng.integers(0, len(speakers), size=batch_size)
    mels = []
    for i in spk_idx:
        utts = by[speakers[i]]
        mels.append(random_crop(corpus.mel(utts[int(rng.integers(0, len(utts)))]), crop, rng))
    embs = np.stack([table[speakers[i]] for i in spk_idx])
    return np.stack(mels).astype(np.float32), embs.astype(np.float32), spk_idx


def frozen_eval_batch(corpus: Corpus, table: dict, cfg: TrainingConfig, size: int = 8):
    """A fixed stage-2 batch used to track the consistency terms during training."""
    rng = np.random.default_rng([cfg.seed, 7])
    speakers = sorted(table)
    x1, s1, idx = _sample_batch(corpus, speakers, table, cfg.crop_frames, size, rng)
    return x1, s1, cross_targets(idx, speakers, table, s1, rng)


def evaluate_losses(model: VoiceConverter, encoder: SpeakerEncoder, batch, cfg: TrainingConfig) -> dict[str, float]:
    x1, s1, s2 = batch
    with nc.no_grad():
        out = model.loss_stage2(model.tensors(), encoder.tensors(), Tensor(x1), Tensor(s1), Tensor(s2), cfg)
    return {k: float(v.data) for k, v in out.items()}


def train_vc(model: VoiceConverter, corpus: Corpus, encoder: SpeakerEncoder, cfg: TrainingConfig,
             table: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Adam on random crops; stage 2 pairs each crop with another speaker's embedding.

    ``model.params`` are updated in place.  The speaker encoder only ever
    enters the graph as constants.
    """
    if cfg.stage == 2 and model.meta.get("stage") not in (1, 2):
        raise ValueError("stage-2 training requires a stage-1 checkpoint")
    table = table or speaker_table(corpus, encoder)
    speakers = sorted(table)
    if len(speakers) < 2:
        raise ValueError("voice-conversion training needs at least 2 speakers")
    rng = np.random.default_rng([cfg.seed, cfg.stage])
    es_p = encoder.tensors()
    eval_batch = frozen_eval_batch(corpus, table, cfg)
    state = nc.AdamState()
    result = TrainResult(model)
    start_step = int(model.meta.get("steps_done", 0)) if cfg.stage == 2 else 0

    for step in range(cfg.steps):
        if step % cfg.eval_every == 0:
            result.eval_trace.append({"step": step, **evaluate_losses(model, encoder, eval_batch, cfg)})
        x1, s1, idx = _sample_batch(corpus, speakers, table, cfg.crop_frames, cfg.batch_size, rng)
        parts: dict[str, float] = {}
        if cfg.stage == 1:
            def graph(t):
                out = model.loss_stage1(t, Tensor(x1), Tensor(s1), cfg)
                parts.update({k: float(v.data) for k, v in out.items() if not k.startswith("_")})
                return out["total"]
        else:
            s2 = cross_targets(idx, speakers, table, s1, rng)

            def graph(t):
                out = model.loss_stage2(t, es_p, Tensor(x1), Tensor(s1), Tensor(s2), cfg)
                parts.update({k: float(v.data) for k, v in out.items()})
                return out["total"]

        _, grads = nc.forward_backward(graph, model.params)
        nc.adam_step(model.params, grads, state, cfg.lr)
        result.trace.append({"step": start_step + step, **parts})
    result.eval_trace.append({"step": cfg.steps, **evaluate_losses(model, encoder, eval_batch, cfg)})
    model.meta.update({"stage": cfg.stage, "seed": cfg.seed, "steps_done": start_step + cfg.steps,
                       f"stage{cfg.stage}": {k: v for k, v in asdict(cfg).items()}})
    return result


def write_loss_trace(path, trace: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for row in trace:
            w.writerow([row["step"], *("" if k not in row else repr(row[k]) for k in TRACE_FIELDS[1:])])
    return path
