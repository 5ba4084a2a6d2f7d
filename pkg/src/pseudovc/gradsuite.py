"""Finite-difference checks of every training objective on micro-batches."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Tensor
from .psg import LATENT, PsgLossWeights, PsgModel, psg_loss, reparameterize
from .spkemb import EMB_DIM, SpeakerEncoder, SpeakerEncoderConfig
from .vc import TrainingConfig, VcModelConfig, VoiceConverter, content_reference

LOSSES = ("vc_stage1", "vc_stage2", "psg")
# The L1 terms have kinks; a bias step of 1e-3 shifts every output element and
# regularly straddles one, so the composed losses use a smaller step.
STEP = 1e-4


def _unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _micro_vc(seed: int):
    cfg = VcModelConfig(enc_channels=16, dec_channels=16, dec_hidden=16, post_channels=8)
    return VoiceConverter.init(cfg, seed=seed, dtype=np.float64)


def check_vc_stage1(seed: int, tol: float = 1e-3, max_per_input: int = 4) -> nc.GradReport:
    rng = np.random.default_rng([seed, 101])
    model = _micro_vc(seed)
    cfg = TrainingConfig.stage1(steps=1)
    inputs = dict(model.params)
    inputs["x1"] = rng.uniform(0, 1, size=(2, 32, 80))
    s1 = _unit_rows(rng, 2, EMB_DIM)

    ref = content_reference(model.tensors())  # fixed while the inputs are perturbed

    def graph(t):
        return model.loss_stage1(t, t["x1"], Tensor(s1), cfg, ref)["total"]

    return nc.grad_check(graph, inputs, h=STEP, tol=tol, max_per_input=max_per_input, seed=seed)


def check_vc_stage2(seed: int, tol: float = 1e-3, max_per_input: int = 4) -> nc.GradReport:
    """Stage-2 total, both consistency terms included, through a frozen speaker encoder."""
    rng = np.random.default_rng([seed, 102])
    model = _micro_vc(seed)
    enc = SpeakerEncoder.init(SpeakerEncoderConfig(channels=16), seed=seed + 1, dtype=np.float64)
    enc.frozen = True
    es_p = enc.tensors()
    cfg = TrainingConfig.stage2(steps=1)
    inputs = dict(model.params)
    inputs["x1"] = rng.uniform(0, 1, size=(2, 32, 80))
    s1 = _unit_rows(rng, 2, EMB_DIM)
    s2 = s1[::-1].copy()  # two speakers, swapped

    ref = content_reference(model.tensors())

    def graph(t):
        return model.loss_stage2(t, es_p, t["x1"], Tensor(s1), Tensor(s2), cfg, ref)["total"]

    return nc.grad_check(graph, inputs, h=STEP, tol=tol, max_per_input=max_per_input, seed=seed)


def check_psg(seed: int, tol: float = 1e-3, max_per_input: int = 8) -> nc.GradReport:
    """PSG composite loss through the reparameterised path with eps held fixed."""
    rng = np.random.default_rng([seed, 103])
    model = PsgModel.init(seed, dtype=np.float64)
    inputs = dict(model.params)
    s = _unit_rows(rng, 2, EMB_DIM)
    eps = rng.standard_normal((2, LATENT))
    w = PsgLossWeights()

    def graph(t):
        st = Tensor(s)
        lg = PsgModel.encode(t, st)
        s_hat = PsgModel.generate(t, reparameterize(lg, Tensor(eps)))
        return psg_loss(st, s_hat, lg, w)["total"]

    return nc.grad_check(graph, inputs, h=STEP, tol=tol, max_per_input=max_per_input, seed=seed)


CHECKS = {"vc_stage1": check_vc_stage1, "vc_stage2": check_vc_stage2, "psg": check_psg}


def run_suite(seeds, tol: float = 1e-3) -> dict[str, list[nc.GradReport]]:
    return {name: [fn(int(s), tol=tol) for s in seeds] for name, fn in CHECKS.items()}
