import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudovc import numcore as nc
from pseudovc.numcore import Tensor
from pseudovc.spkemb import EMB_DIM, SpeakerEncoder, SpeakerEncoderConfig
from pseudovc.vc import (
    CODE_DIM,
    TRACE_FIELDS,
    TrainingConfig,
    VcModelConfig,
    VoiceConverter,
    content_reference,
    cross_targets,
    derange_speakers,
    encode_content,
    train_vc,
    write_loss_trace,
)

SMALL = VcModelConfig(enc_channels=16, dec_channels=16, dec_hidden=16, post_channels=8)


@pytest.fixture(scope="module")
def model():
    return VoiceConverter.init(SMALL, seed=0)


def unit(rng, n):
    v = rng.standard_normal((n, EMB_DIM))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


def mel(rng, T, B=None):
    shape = (T, 80) if B is None else (B, T, 80)
    return rng.uniform(0, 1, shape).astype(np.float32)


@pytest.mark.parametrize("T,frames", [(128, 4), (32, 1)])
def test_code_shape(model, T, frames):
    code = encode_content(model, mel(np.random.default_rng(0), T))
    assert code.shape == (frames, CODE_DIM)


def test_code_requires_multiple_of_32(model):
    with pytest.raises(ValueError):
        encode_content(model, np.zeros((40, 80)))


def test_bottleneck_is_under_3_percent():
    assert CODE_DIM * (128 // 32) / (128 * 80) < 0.03


def test_code_gradient_wrt_mel():
    m = VoiceConverter.init(SMALL, seed=1, dtype=np.float64)
    p = m.tensors()
    rep = nc.grad_check(lambda t: nc.sum_(m.encode(p, t["mel"])),
                        {"mel": np.random.default_rng(1).uniform(0, 1, (1, 64, 80))},
                        h=1e-5, tol=1e-3, max_per_input=40, seed=0)
    assert rep.passed, rep.max_rel_error


def test_decode_shape_and_determinism(model):
    rng = np.random.default_rng(0)
    code = Tensor(rng.standard_normal((2, 3, CODE_DIM)).astype(np.float32))
    spk = Tensor(unit(rng, 2))
    p = model.tensors()
    a, b = model.decode(p, code, spk), model.decode(p, code, spk)
    assert a.raw.dims == a.refined.dims == (2, 96, 80)
    assert a.refined.data.tobytes() == b.refined.data.tobytes()


def test_loss_arithmetic():
    x = np.random.default_rng(0).uniform(0, 1, (2, 32, 80))
    assert float(nc.mse(Tensor(x + 0.1), Tensor(x)).data) == pytest.approx(0.01)
    assert float(nc.mse(Tensor(x), Tensor(x)).data) == 0
    e = unit(np.random.default_rng(1), 1).astype(np.float64)
    assert float(nc.mae(Tensor(e + 0.01), Tensor(e)).data) == pytest.approx(0.01)


def stage2_losses(model, seed=0):
    rng = np.random.default_rng(seed)
    enc = SpeakerEncoder.init(SpeakerEncoderConfig(channels=16), seed=2)
    enc.frozen = True
    s1 = unit(rng, 2)
    out = model.loss_stage2(model.tensors(), enc.tensors(), Tensor(mel(rng, 64, 2)), Tensor(s1),
                            Tensor(s1[::-1].copy()), TrainingConfig.stage2(steps=1))
    return {k: float(v.data) for k, v in out.items()}


def test_stage2_terms_nonnegative_and_total_is_weighted_sum(model):
    cfg = TrainingConfig.stage2(steps=1)
    out = stage2_losses(model)
    assert all(v >= 0 for v in out.values())
    total = (out["L_recon"] + cfg.mu * out["L_recon0"] + cfg.lambda_ * out["L_content"]
             + cfg.alpha * out["L_content_consist"] + cfg.beta * out["L_speaker_consist"])
    assert out["total"] == pytest.approx(total, rel=1e-6)


def test_stage2_rejects_same_speaker_pair(model):
    rng = np.random.default_rng(0)
    enc = SpeakerEncoder.init(SpeakerEncoderConfig(channels=16), seed=2)
    s = unit(rng, 2)
    with pytest.raises(ValueError, match="same source and target"):
        model.loss_stage2(model.tensors(), enc.tensors(), Tensor(mel(rng, 32, 2)), Tensor(s), Tensor(s),
                          TrainingConfig.stage2(steps=1))


def test_content_reference_is_a_constant_snapshot(model):
    p = model.tensors(requires_grad=True)
    ref = content_reference(p)
    assert set(ref) == {k for k in p if k.startswith("enc.")}
    assert all(not t.requires_grad for t in ref.values())
    assert all(ref[k].data is not p[k].data for k in ref)


def test_speaker_encoder_gets_no_gradients(model):
    rng = np.random.default_rng(0)
    enc = SpeakerEncoder.init(SpeakerEncoderConfig(channels=16), seed=2)
    enc.frozen = True
    s1 = unit(rng, 2)
    x = Tensor(mel(rng, 32, 2))

    def graph(t):
        return model.loss_stage2(t, enc.tensors(), x, Tensor(s1), Tensor(s1[::-1].copy()),
                                 TrainingConfig.stage2(steps=1))["total"]

    _, grads = nc.forward_backward(graph, model.params)
    assert set(grads) <= set(model.params)
    assert not any(k.startswith("conv") or k.startswith("proj") for k in grads)


@pytest.mark.parametrize("kw", [dict(stage=1, alpha=1.0), dict(mu=-1.0), dict(stage=3), dict(crop_frames=100)])
def test_training_config_validation(kw):
    with pytest.raises(ValueError):
        TrainingConfig(**kw)


def test_derange_speakers():
    rng = np.random.default_rng(0)
    idx = np.array([0, 0, 1, 2, 2, 1, 0, 3])
    for _ in range(50):
        perm = derange_speakers(idx, rng)
        assert sorted(perm) == list(range(len(idx)))
        assert np.all(idx[perm] != idx)
    with pytest.raises(ValueError):
        derange_speakers(np.zeros(4, int), rng)
    with pytest.raises(ValueError, match="more than half"):
        derange_speakers(np.array([0, 0, 0, 1, 1]), rng)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=12))
def test_cross_targets_never_keep_the_speaker(idx):
    idx = np.array(idx)
    speakers = ["a", "b", "c", "d"]
    table = {s: np.eye(4, dtype=np.float32)[k] for k, s in enumerate(speakers)}
    s1 = np.stack([table[speakers[i]] for i in idx])
    s2 = cross_targets(idx, speakers, table, s1, np.random.default_rng(0))
    assert s2.shape == s1.shape
    assert not np.any(np.all(s1 == s2, axis=1))


def test_convert_keeps_frame_count(model):
    rng = np.random.default_rng(0)
    src = mel(rng, 77)
    raw, refined = model.convert_mel(src, unit(rng, 1)[0])
    assert raw.shape == refined.shape == (77, 80)
    assert refined.min() >= 0 and refined.max() <= 1
    with pytest.raises(ValueError):
        model.convert_mel(mel(rng, 20), unit(rng, 1)[0])


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    from pseudovc.corpus import Corpus, synth_corpus

    return Corpus(synth_corpus(tmp_path_factory.mktemp("c"), 2, 3, 1.0, 0))


@pytest.fixture(scope="module")
def tiny_encoder():
    enc = SpeakerEncoder.init(SpeakerEncoderConfig(channels=16), seed=4)
    enc.frozen = True
    return enc


def test_training_is_deterministic_and_leaves_encoder_alone(tiny_corpus, tiny_encoder, tmp_path):
    before = tiny_encoder.save(tmp_path / "spk.ckpt").read_bytes()
    saved = []
    for k in range(2):
        m = VoiceConverter.init(SMALL, seed=0)
        r1 = train_vc(m, tiny_corpus, tiny_encoder, TrainingConfig.stage1(steps=3, batch_size=2, crop_frames=32))
        r2 = train_vc(m, tiny_corpus, tiny_encoder, TrainingConfig.stage2(steps=3, batch_size=2, crop_frames=32))
        saved.append(m.save(tmp_path / f"m{k}.ckpt").read_bytes())
        assert [r["step"] for r in r2.trace] == [3, 4, 5]
    assert saved[0] == saved[1]
    assert tiny_encoder.save(tmp_path / "spk2.ckpt").read_bytes() == before
    write_loss_trace(tmp_path / "t1.csv", r1.trace)
    with open(tmp_path / "t1.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TRACE_FIELDS
    assert rows[1][4] == rows[1][5] == ""


def test_stage2_needs_stage1(tiny_corpus, tiny_encoder):
    with pytest.raises(ValueError, match="stage-1"):
        train_vc(VoiceConverter.init(SMALL), tiny_corpus, tiny_encoder, TrainingConfig.stage2(steps=1))


@pytest.mark.slow
def test_two_speakers_2000_steps_reduce_recon(tiny_corpus, tiny_encoder):
    m = VoiceConverter.init(seed=0)
    r = train_vc(m, tiny_corpus, tiny_encoder, TrainingConfig.stage1(steps=2000, lr=1e-3, eval_every=2000))
    assert r.eval_trace[-1]["L_recon"] < 0.2 * r.eval_trace[0]["L_recon"]


# ---- desk-scale checks on the shared pipeline run -------------------------------


@pytest.mark.slow
def test_speaker_embedding_is_consumed(desk):
    m = VoiceConverter.load(desk.ws.model("vc_stage2"))
    corpus = desk.ws.corpus("test")
    src = corpus.mel(corpus.utterances[0])
    rng = np.random.default_rng(0)
    a, b = unit(rng, 2)
    assert np.max(np.abs(m.convert_mel(src, a)[1] - m.convert_mel(src, b)[1])) > 0


@pytest.mark.slow
def test_two_pseudo_targets_are_distinguishable(desk):
    from pseudovc.dsp import griffin_lim, mel_spectrogram
    from pseudovc.psg import PsgModel, sample_pseudo

    m = VoiceConverter.load(desk.ws.model("vc_stage2"))
    adv = desk.ws.encoder("adversary")
    corpus = desk.ws.corpus("test")
    src = corpus.mel(corpus.utterances[0])
    t1, t2 = sample_pseudo(PsgModel.load(desk.ws.model("psg")), 2, seed=0).embeddings
    e1, e2 = (adv.embed(mel_spectrogram(griffin_lim(m.convert_mel(src, t)[1], 30))) for t in (t1, t2))
    assert float(e1 @ e2) < float(e1 @ e1)
