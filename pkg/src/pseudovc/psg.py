"""VAE pseudo-speaker generator.

Encoder 256 -> 384 -> (mu, log-variance) in 64-d; generator 64 -> 384 -> 256,
one tanh hidden layer each.  Training objective per sample::

    L1     = sum |s - s_hat|
    L_dist = 1 - cos(s, s_hat)
    L_kl   = 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1)
    total  = L1 + lambda_dist * L_dist + L_kl

averaged over the batch.  ``objective`` swaps the reconstruction term for the
ablation (``l2`` uses the summed squared error; ``+dist`` toggles L_dist).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .checkpoint import load_checkpoint, save_checkpoint
from .numcore import Tensor
from .spkemb import EMB_DIM, write_embeddings_csv

HIDDEN = 384
LATENT = 64
OBJECTIVES = ("l1+dist", "l2+dist", "l2", "l1")
LEVELS = ("utterance", "speaker")


@dataclass
class PsgLossWeights:
    lambda_dist: float = 200.0

    def __post_init__(self):
        if self.lambda_dist < 0:
            raise ValueError("lambda_dist must be >= 0")


@dataclass
class PsgTrainConfig:
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 128
    objective: str = "l1+dist"
    weights: PsgLossWeights = field(default_factory=PsgLossWeights)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclass
class LatentGaussian:
    mu_z: Tensor
    log_var_z: Tensor

    @property
    def sigma_z(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var_z.data)


class PsgModel:
    kind = "psg"

    def __init__(self, params: dict[str, np.ndarray], meta: dict | None = None):
        self.params = params
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        nc.init_linear(p, "enc.h", EMB_DIM, HIDDEN, rng, dtype)
        nc.init_linear(p, "enc.mu", HIDDEN, LATENT, rng, dtype)
        nc.init_linear(p, "enc.logvar", HIDDEN, LATENT, rng, dtype)
        nc.init_linear(p, "gen.h", LATENT, HIDDEN, rng, dtype)
        nc.init_linear(p, "gen.out", HIDDEN, EMB_DIM, rng, dtype)
        p["enc.logvar.w"] *= 0.1
        return cls(p)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, op=k) for k, v in self.params.items()}

    @staticmethod
    def encode(p, s: Tensor) -> LatentGaussian:
        h = nc.tanh(nc.dense(s, p, "enc.h"))
        return LatentGaussian(nc.dense(h, p, "enc.mu"), nc.dense(h, p, "enc.logvar"))

    @staticmethod
    def generate(p, z: Tensor) -> Tensor:
        return nc.dense(nc.tanh(nc.dense(z, p, "gen.h")), p, "gen.out")

    def save(self, path) -> Path:
        return save_checkpoint(path, {"kind": self.kind, **self.meta}, self.params)

    @classmethod
    def load(cls, path):
        ckpt = load_checkpoint(path, kind=cls.kind)
        meta = dict(ckpt.metadata)
        meta.pop("kind")
        return cls(ckpt.tensors, meta)


def vae_encode(model: PsgModel, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mu_z, log_var_z) for one embedding or a batch."""
    with nc.no_grad():
        lg = model.encode(model.tensors(), Tensor(np.asarray(s, np.float32)))
    return lg.mu_z.data, lg.log_var_z.data


def reparameterize(lg: LatentGaussian, eps) -> Tensor:
    """z = mu + exp(0.5 * log_var) * eps."""
    sigma = nc.exp(nc.mul(lg.log_var_z, 0.5))
    return nc.add(lg.mu_z, nc.mul(sigma, nc.as_tensor(eps, lg.mu_z)))


def psg_decode(model: PsgModel, z: np.ndarray) -> np.ndarray:
    """Raw (un-normalised) generator output."""
    with nc.no_grad():
        return model.generate(model.tensors(), Tensor(np.asarray(z, np.float32))).data


def psg_loss(s: Tensor, s_hat: Tensor, lg: LatentGaussian, w: PsgLossWeights | None = None,
             objective: str = "l1+dist") -> dict[str, Tensor]:
    """Per-sample sums, batch mean.  Inputs may be single vectors or (B, d) batches."""
    w = w or PsgLossWeights()
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    diff = nc.sub(s, s_hat)
    l1 = nc.sum_(nc.abs_(diff), axis=-1)
    l2 = nc.sum_(nc.square(diff), axis=-1)
    dist = nc.sub(1.0, nc.cosine_similarity(s, s_hat))
    lv = lg.log_var_z
    kl = nc.mul(nc.sum_(nc.sub(nc.add(nc.square(lg.mu_z), nc.exp(lv)), nc.add(lv, 1.0)), axis=-1), 0.5)
    recon = l2 if objective.startswith("l2") else l1
    per_sample = nc.add(recon, kl)
    if objective.endswith("+dist"):
        per_sample = nc.add(per_sample, nc.mul(dist, w.lambda_dist))
    return {
        "L1": nc.mean(l1),
        "L2": nc.mean(l2),
        "L_dist": nc.mean(dist),
        "L_kl": nc.mean(kl),
        "total": nc.mean(per_sample),
    }


def _fit(model: PsgModel, embeddings: np.ndarray, cfg: PsgTrainConfig, seed: int) -> list[dict]:
    emb = np.asarray(embeddings, dtype=np.float32)
    if emb.ndim != 2 or emb.shape[1] != EMB_DIM:
        raise ValueError(f"embeddings must be (N, {EMB_DIM}), got {emb.shape}")
    if len(emb) < 64:
        raise ValueError(f"PSG training needs at least 64 embeddings, got {len(emb)}")
    rng = np.random.default_rng([seed, 3])
    state = nc.AdamState()
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(emb))
        totals = []
        for start in range(0, len(emb), cfg.batch_size):
            batch = emb[order[start:start + cfg.batch_size]]
            eps = rng.standard_normal((len(batch), LATENT)).astype(np.float32)

            def graph(t, batch=batch, eps=eps):
                s = Tensor(batch)
                lg = PsgModel.encode(t, s)
                s_hat = PsgModel.generate(t, reparameterize(lg, eps))
                return psg_loss(s, s_hat, lg, cfg.weights, cfg.objective)["total"]

            value, grads = nc.forward_backward(graph, model.params)
            nc.adam_step(model.params, grads, state, cfg.lr)
            totals.append(value * len(batch))
        history.append({"epoch": epoch, "loss": float(np.sum(totals) / len(emb))})
    return history


def train_psg(embeddings: np.ndarray, cfg: PsgTrainConfig | None = None, seed: int = 0):
    """Fresh model trained with Adam; returns (model, per-epoch history)."""
    cfg = cfg or PsgTrainConfig()
    model = PsgModel.init(seed)
    history = _fit(model, embeddings, cfg, seed)
    model.meta = {"seed": seed, "objective": cfg.objective, "epochs": cfg.epochs,
                  "lambda_dist": cfg.weights.lambda_dist, "finetuned": False}
    return model, history


def finetune_psg(model: PsgModel, embeddings: np.ndarray, cfg: PsgTrainConfig | None = None, seed: int = 0):
    """Continue training ``model`` (in place) on a new embedding set with a fresh optimiser."""
    cfg = cfg or PsgTrainConfig()
    history = _fit(model, embeddings, cfg, seed)
    model.meta.update({"finetuned": True, "finetune_epochs": cfg.epochs, "finetune_seed": seed})
    return model, history


def reconstruct(model: PsgModel, embeddings: np.ndarray) -> np.ndarray:
    """Deterministic reconstruction through the posterior mean (z = mu_z), un-normalised."""
    mu, _ = vae_encode(model, embeddings)
    return psg_decode(model, mu)


@dataclass
class PseudoSpeakers:
    embeddings: np.ndarray
    seed: int
    level: str

    def __len__(self):
        return len(self.embeddings)

    def write_csv(self, path, prefix: str = "pseudo") -> Path:
        n = len(self.embeddings)
        rows = [(f"{prefix}{i:05d}", "pseudo", self.embeddings[i]) for i in range(n)]
        return write_embeddings_csv(path, rows, extra=("seed", "index", "level"),
                                    extra_values=[(self.seed, i, self.level) for i in range(n)])


def sample_pseudo(model: PsgModel, n: int, seed: int, level: str = "utterance") -> PseudoSpeakers:
    """Decode ``n`` standard-normal latents and unit-normalise them.

    ``level`` does not change the draw; it records whether the converter should
    reuse one embedding per user (``speaker``) or one per utterance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    z = np.random.default_rng([seed, 11]).standard_normal((n, LATENT)).astype(np.float32)
    raw = psg_decode(model, z).astype(np.float64)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return PseudoSpeakers((raw / norms).astype(np.float32), seed, level)


def psg_config_dict(cfg: PsgTrainConfig) -> dict:
    return asdict(cfg)
