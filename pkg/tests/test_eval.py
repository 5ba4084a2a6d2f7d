import csv
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudovc.eval import (
    ReconReport,
    ScoreSet,
    check_disjoint,
    compute_eer,
    embedding_metrics,
    score_trials,
    write_ablation_csv,
)


def brute_force_eer(genuine, impostor):
    """Every candidate threshold, exact fractions, first minimum wins."""
    u = sorted(set(genuine) | set(impostor))
    cands = []
    for k, v in enumerate(u):
        cands.append(v)
        if k + 1 < len(u):
            cands.append((v + u[k + 1]) / 2)
    best = None
    for t in cands:
        far = Fraction(sum(s >= t for s in impostor), len(impostor))
        frr = Fraction(sum(s < t for s in genuine), len(genuine))
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, float((far + frr) / 2), t)
    return best[1], best[2]


def random_sets(n_sets=1000, n=50, seed=0):
    rng = np.random.default_rng(seed)
    for k in range(n_sets):
        ng = int(rng.integers(1, n))
        if k % 2:
            # coarse grid to force ties
            scores = rng.integers(0, 12, n) / 10 - 0.5
        else:
            scores = np.round(rng.normal(0, 1, n) + np.r_[np.full(ng, rng.uniform(0, 2)), np.zeros(n - ng)], 3)
        yield ScoreSet.from_arrays(scores[:ng].tolist(), scores[ng:].tolist())


def test_examples():
    assert compute_eer(ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2]))[0] == 0.0
    assert compute_eer(ScoreSet.from_arrays([0.1], [0.9]))[0] == 1.0
    assert compute_eer(ScoreSet.from_arrays([0.8, 0.6, 0.4], [0.7, 0.5, 0.3]))[0] == pytest.approx(1 / 3)


def test_missing_class():
    with pytest.raises(ValueError):
        compute_eer(ScoreSet.from_arrays([0.5, 0.6], []))
    with pytest.raises(ValueError):
        compute_eer(ScoreSet.from_arrays([], [0.5]))


def test_scoreset_validation():
    with pytest.raises(ValueError):
        ScoreSet.from_arrays([float("nan")], [0.1])
    with pytest.raises(ValueError):
        ScoreSet(["a"], ["maybe"], [0.1])


def test_matches_brute_force_on_1000_sets():
    for ss in random_sets():
        assert compute_eer(ss) == brute_force_eer(ss.genuine.tolist(), ss.impostor.tolist())


@pytest.mark.parametrize("f", [lambda x: 3 * x + 1, np.exp, lambda x: x ** 3 + x, np.arctan])
def test_increasing_transform_invariance(f):
    for ss in random_sets():
        t = ScoreSet(ss.trial_ids, ss.labels, f(ss.scores))
        assert compute_eer(t)[0] == compute_eer(ss)[0]


def test_label_swap_within_one_over_n():
    for ss in random_sets(200):
        swapped = ScoreSet(ss.trial_ids, ["impostor" if lab == "genuine" else "genuine" for lab in ss.labels],
                           ss.scores)
        assert abs(compute_eer(swapped)[0] - (1 - compute_eer(ss)[0])) <= 1 / len(ss) + 1e-12


@settings(max_examples=100, deadline=None)
@given(g=st.lists(st.floats(-5, 5), min_size=1, max_size=30), i=st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_eer_in_unit_interval_and_matches_oracle(g, i):
    eer, thr = compute_eer(ScoreSet.from_arrays(g, i))
    assert 0 <= eer <= 1
    assert (eer, thr) == brute_force_eer(g, i)


def test_scores_csv_round_trip(tmp_path):
    ss = ScoreSet.from_arrays([0.1, 0.7], [0.3])
    p = ss.write_csv(tmp_path / "s.csv")
    assert p.read_text().splitlines()[0] == "trial_id,label,score"
    back = ScoreSet.read_csv(p)
    assert back.trial_ids == ss.trial_ids and back.labels == ss.labels
    assert back.scores.tobytes() == ss.scores.tobytes()


def test_embedding_metrics_examples():
    rng = np.random.default_rng(0)
    e = rng.standard_normal(256)
    e /= np.linalg.norm(e)
    same = embedding_metrics([(e, e), (e, e)])
    assert same.mse == 0 and same.cos_sim == pytest.approx(1)
    opp = embedding_metrics([(e, -e)])
    assert opp.cos_sim == pytest.approx(-1)
    assert opp.mse == pytest.approx(4 / 256)
    with pytest.raises(ValueError):
        embedding_metrics([])


def test_ablation_csv_structure(tmp_path):
    rows = [ReconReport(s, 0.1, 0.5, o) for o in ("l2", "l2+dist", "l1+dist") for s in ("train", "heldout")]
    with open(write_ablation_csv(tmp_path / "a.csv", rows), newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["objective", "split", "mse", "cos_sim"] and len(got) == 7


def test_score_trials_design():
    enrolled = {"a": np.eye(3)[0], "b": np.eye(3)[1], "c": np.eye(3)[2]}
    probes = [("u1", "a", np.array([1.0, 0.1, 0])), ("u2", "c", np.array([0, 0.2, 1.0]))]
    ss = score_trials("X", probes, enrolled)
    assert len(ss) == 6
    assert [t for t, lab in zip(ss.trial_ids, ss.labels) if lab == "genuine"] == ["X:u1:a", "X:u2:c"]
    with pytest.raises(ValueError):
        score_trials("X", [("u3", "z", np.ones(3))], enrolled)


def test_overlapping_corpora_rejected(tmp_path):
    from pseudovc.corpus import Corpus, synth_corpus

    a = Corpus(synth_corpus(tmp_path / "a", 2, 1, 0.5, 0))
    b = Corpus(synth_corpus(tmp_path / "b", 2, 1, 0.5, 0))
    with pytest.raises(ValueError, match="share speakers"):
        check_disjoint(a, b)


# ---- desk-scale checks on the shared pipeline run -------------------------------


@pytest.mark.slow
@pytest.mark.parametrize("scenario", ["SxU", "UxU", "SxP", "UxP"])
def test_scenario_trials_disjoint_and_cover_each_utterance(desk, scenario):
    ss = ScoreSet.read_csv(desk.root / "eval" / f"scores_{scenario}.csv")
    genuine = [t for t, lab in zip(ss.trial_ids, ss.labels) if lab == "genuine"]
    impostor = [t for t, lab in zip(ss.trial_ids, ss.labels) if lab == "impostor"]
    assert not set(genuine) & set(impostor)
    assert len(set(ss.trial_ids)) == len(ss)
    corpus = desk.ws.corpus("train" if scenario[0] == "S" else "test")
    evaluated = [u.utt_id for us in corpus.by_speaker().values() for u in us[desk.ws.cfg.eval.enroll_utts:]]
    assert sorted(t.split(":")[1] for t in genuine) == sorted(evaluated)


@pytest.mark.slow
def test_report_rows(desk):
    with open(desk.root / "eval" / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["scenario"] for r in rows] == ["SxU", "UxU", "SxP", "UxP"]
    for r in rows:
        assert 0 <= float(r["eer"]) <= 1
        ss = ScoreSet.read_csv(desk.root / "eval" / f"scores_{r['scenario']}.csv")
        assert int(r["n_trials"]) == len(ss)
        assert compute_eer(ss) == (float(r["eer"]), float(r["threshold"]))
