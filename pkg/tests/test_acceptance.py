"""The nine acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed immediately and again in the
terminal summary) before asserting.
"""

import csv
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, run_desk

from pseudovc import dsp, gradsuite
from pseudovc import pipeline as pl
from pseudovc.eval import ScoreSet, compute_eer
from pseudovc.numcore import Tensor
from pseudovc.psg import LATENT, LatentGaussian, psg_loss
from pseudovc.spkemb import EMB_DIM
from pseudovc.vc import VoiceConverter, speaker_table

pytestmark = pytest.mark.slow


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_1_gradient_suite():
    t = time.perf_counter()
    results = gradsuite.run_suite(range(10), tol=1e-3)
    seconds = time.perf_counter() - t
    worst = {name: max(r.max_rel_error for r in reps) for name, reps in results.items()}
    ok = all(r.passed for reps in results.values() for r in reps) and seconds < 120
    record(1, ok, ", ".join(f"{k} max_rel {v:.2e}" for k, v in worst.items()) + f"; 10 seeds in {seconds:.1f}s")


def test_2_closed_form_oracles():
    f32 = np.float32
    s = np.random.default_rng(0).standard_normal(EMB_DIM).astype(f32)
    s /= np.linalg.norm(s)
    orth = np.zeros(EMB_DIM, f32)
    orth[0], orth[1] = s[1], -s[0]  # orthogonal to s
    zero, one = np.zeros(LATENT, f32), np.ones(LATENT, f32)

    def terms(a, b, mu, log_var):
        out = psg_loss(Tensor(a), Tensor(b), LatentGaussian(Tensor(mu), Tensor(log_var)))
        return float(out["L_kl"].data), float(out["L_dist"].data)

    kl0, dist_same = terms(s, s, zero, zero)
    kl1, _ = terms(s, s, one, zero)
    _, dist_orth = terms(s, orth, zero, zero)
    ok = abs(kl0) <= 1e-7 and abs(kl1 - 32) <= 1e-5 and abs(dist_same) <= 1e-6 and abs(dist_orth - 1) <= 1e-6
    record(2, ok, f"L_kl(0,1)={kl0:.1e} L_kl(1,1)={kl1:.7f} L_dist(e,e)={dist_same:.1e} L_dist(e,perp)={dist_orth:.7f}")


def _brute_force(genuine, impostor):
    from fractions import Fraction

    u = sorted(set(genuine) | set(impostor))
    cands = [x for k, v in enumerate(u) for x in ([v, (v + u[k + 1]) / 2] if k + 1 < len(u) else [v])]
    best = None
    for t in cands:
        far = Fraction(sum(x >= t for x in impostor), len(impostor))
        frr = Fraction(sum(x < t for x in genuine), len(genuine))
        if best is None or abs(far - frr) < best[0]:
            best = (abs(far - frr), float((far + frr) / 2), t)
    return best[1], best[2]


def test_3_eer_oracle_equivalence():
    rng = np.random.default_rng(2024)
    mismatches = not_invariant = 0
    for k in range(1000):
        ng = int(rng.integers(1, 50))
        scores = rng.integers(0, 15, 50) / 10.0 if k % 3 == 0 else np.round(rng.normal(0, 1, 50), 4)
        scores[:ng] += rng.uniform(0, 1.5)
        ss = ScoreSet.from_arrays(scores[:ng].tolist(), scores[ng:].tolist())
        got = compute_eer(ss)
        mismatches += got != _brute_force(ss.genuine.tolist(), ss.impostor.tolist())
        for f in (np.exp, lambda x: x ** 3 + 2 * x, np.arctan):
            not_invariant += compute_eer(ScoreSet(ss.trial_ids, ss.labels, f(ss.scores)))[0] != got[0]
    record(3, mismatches == 0 and not_invariant == 0,
           f"1000 score sets: {mismatches} brute-force mismatches, {not_invariant} transform changes")


@pytest.fixture(scope="module")
def ablation(desk):
    t = time.perf_counter()
    _, rows = pl.step_psg_ablation(desk.ws)
    return {(r.objective, r.split): r for r in rows}, time.perf_counter() - t


def test_4_psg_objective_trend(ablation):
    rows, seconds = ablation
    cos = {o: rows[(o, "heldout")].cos_sim for o in ("l1+dist", "l2+dist", "l2")}
    mse_l1d, mse_l2 = rows[("l1+dist", "train")].mse, rows[("l2", "train")].mse
    ok = (cos["l1+dist"] > cos["l2+dist"] > cos["l2"] and cos["l1+dist"] - cos["l2"] >= 0.1
          and mse_l1d < mse_l2 and seconds < 600)
    record(4, ok, "held-out cos " + " > ".join(f"{k} {v:.4f}" for k, v in cos.items())
           + f"; train MSE l1+dist {mse_l1d:.5f} vs l2 {mse_l2:.5f}; {seconds:.0f}s")


def test_5_deidentification(desk):
    rows = {r["scenario"]: r for r in read_csv(desk.root / "eval" / "report.csv")}
    base = {k: compute_eer(ScoreSet.read_csv(desk.root / "eval" / f"scores_baseline_{k}.csv"))[0] for k in "SU"}
    sxp, sxp_base = float(rows["SxP"]["eer"]), float(rows["SxP"]["baseline_eer"])
    ok = max(base.values()) < 0.05 and sxp >= sxp_base + 0.15 and desk.seconds < 1800
    record(5, ok, f"clean EER S {base['S']:.3f} U {base['U']:.3f}; SxP EER {sxp:.3f} "
                  f"(needs >= {sxp_base + 0.15:.3f}); pipeline {desk.seconds:.0f}s")


def test_6_consistency_and_freeze(desk):
    trace = read_csv(desk.root / "traces" / "vc_stage2_eval.csv")
    first, last = float(trace[0]["L_speaker_consist"]), float(trace[-1]["L_speaker_consist"])
    manifest = {r["path"]: r["sha256"] for r in read_csv(desk.root / pl.MANIFEST)}
    unchanged = all(manifest[f"models/spk_{role}.ckpt"] == pl.sha256(desk.ws.model(f"spk_{role}"))
                    for role in ("pipeline", "adversary"))
    record(6, last < first and unchanged,
           f"frozen-batch L_speaker_consist {first:.5f} -> {last:.5f}; encoder bytes unchanged: {unchanged}")


def test_7_self_reconstruction(desk):
    trace = read_csv(desk.root / "traces" / "vc_stage1_eval.csv")
    r0, r1 = float(trace[0]["L_recon"]), float(trace[-1]["L_recon"])
    corpus = desk.ws.corpus("train")
    table = speaker_table(corpus, desk.ws.encoder("pipeline"))
    model = VoiceConverter.load(desk.ws.model("vc_stage1"))
    heldout = [u for us in corpus.by_speaker().values() for u in us[-pl.VC_HOLDOUT:]]
    mse = [float(np.mean((model.convert_mel(corpus.mel(u), table[u.speaker_id])[1] - corpus.mel(u)) ** 2))
           for u in heldout]
    ok = r1 < 0.2 * r0 and max(mse) < 0.05
    record(7, ok, f"L_recon {r0:.4f} -> {r1:.4f} ({r1 / r0:.1%}); held-out self-conversion MSE "
                  f"mean {np.mean(mse):.4f} max {max(mse):.4f} over {len(mse)} utterances")


def test_8_dsp_sanity():
    n = np.arange(dsp.SAMPLE_RATE)
    sine = (0.5 * np.sin(2 * np.pi * 440 * n / dsp.SAMPLE_RATE)).astype(np.float32)
    out = dsp.griffin_lim(dsp.mel_spectrogram(sine), 60).samples
    peak = np.argmax(np.abs(np.fft.rfft(out))) * dsp.SAMPLE_RATE / len(out)
    bin_hz = dsp.SAMPLE_RATE / dsp.N_FFT
    frames = dsp.mel_spectrogram(np.resize(sine, 16384)).shape[0]
    record(8, abs(peak - 440) <= bin_hz and frames == 61,
           f"Griffin-Lim peak {peak:.1f} Hz (bin {bin_hz:.1f} Hz); 16384 samples -> {frames} frames")


def test_9_determinism(desk, tmp_path_factory):
    again = run_desk(tmp_path_factory.mktemp("desk_again"), seed=desk.ws.seed)
    files = sorted(
        p.relative_to(desk.root)
        for sub in ("models", "embeddings", "eval")
        for p in (desk.root / sub).rglob("*")
        if p.is_file() and p.name != "psg_ablation.csv"  # the ablation only ran in the first tree
    )
    differ = [str(p) for p in files if (desk.root / p).read_bytes() != (again.root / p).read_bytes()]
    record(9, bool(files) and not differ,
           f"{len(files)} checkpoints/embedding CSVs/reports compared, {len(differ)} differ {differ[:3]}")
