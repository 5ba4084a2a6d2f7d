"""Equal error rate, embedding reconstruction metrics and the scenario matrix."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus
from .dsp import griffin_lim, mel_spectrogram
from .psg import PsgModel, PsgTrainConfig, reconstruct, sample_pseudo, train_psg
from .spkemb import SpeakerEncoder, average_embeddings, random_crop
from .vc import VoiceConverter

SCENARIOS = ("SxU", "UxU", "SxP", "UxP")
ABLATION_OBJECTIVES = ("l2", "l2+dist", "l1+dist")
LABELS = ("genuine", "impostor")


@dataclass
class ScoreSet:
    trial_ids: list[str]
    labels: list[str]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not (len(self.trial_ids) == len(self.labels) == len(self.scores)):
            raise ValueError("trial_ids, labels and scores differ in length")
        bad = set(self.labels) - set(LABELS)
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @classmethod
    def from_arrays(cls, genuine: Sequence[float], impostor: Sequence[float]) -> "ScoreSet":
        g, i = list(genuine), list(impostor)
        return cls([f"g{k}" for k in range(len(g))] + [f"i{k}" for k in range(len(i))],
                   ["genuine"] * len(g) + ["impostor"] * len(i), np.array(g + i, dtype=np.float64))

    @property
    def genuine(self) -> np.ndarray:
        return self.scores[np.array(self.labels) == "genuine"]

    @property
    def impostor(self) -> np.ndarray:
        return self.scores[np.array(self.labels) == "impostor"]

    def __len__(self):
        return len(self.scores)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial_id", "label", "score"])
            for t, lab, s in zip(self.trial_ids, self.labels, self.scores):
                w.writerow([t, lab, repr(float(s))])
        return path

    @classmethod
    def read_csv(cls, path) -> "ScoreSet":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["trial_id", "label", "score"]:
                raise ValueError(f"{path}: header must be trial_id,label,score")
            rows = list(reader)
        return cls([r["trial_id"] for r in rows], [r["label"] for r in rows],
                   np.array([float(r["score"]) for r in rows]))


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Sorted distinct scores with the midpoints between neighbours interleaved."""
    u = np.unique(scores)
    out = np.empty(2 * len(u) - 1)
    out[0::2] = u
    out[1::2] = (u[:-1] + u[1:]) / 2
    return out


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """(eer, threshold).

    FAR(t) = share of impostors scoring >= t, FRR(t) = share of genuines below
    t.  The threshold minimising |FAR - FRR| wins, lowest threshold on ties,
    and the EER is (FAR + FRR) / 2 there.  The comparison is done on integer
    counts so results do not depend on float rounding.
    """
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    ng, ni = len(g), len(i)
    if ng == 0 or ni == 0:
        raise ValueError("EER needs at least one genuine and one impostor trial")
    t = candidate_thresholds(scores.scores)
    fa = ni - np.searchsorted(i, t, side="left")  # impostors >= t
    fr = np.searchsorted(g, t, side="left")  # genuines < t
    gap = np.abs(fa * ng - fr * ni)
    k = int(np.argmin(gap))  # first minimum = lowest threshold
    # one correctly rounded integer division: the exact rational EER to nearest float
    eer = (int(fa[k]) * ng + int(fr[k]) * ni) / (2 * ng * ni)
    return float(eer), float(t[k])


@dataclass
class ReconReport:
    split: str
    mse: float
    cos_sim: float
    objective: str = ""


def embedding_metrics(pairs: Iterable[tuple[np.ndarray, np.ndarray]] | tuple[np.ndarray, np.ndarray],
                      split: str = "") -> ReconReport:
    """Mean per-coordinate squared error and mean cosine over (S_r, S_hat_r) pairs.

    Accepts a list of pairs or a (targets, reconstructions) tuple of 2-d arrays.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        a, b = (np.asarray(x, np.float64) for x in pairs)
    else:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("embedding_metrics needs at least one pair")
        a = np.stack([np.asarray(p[0], np.float64) for p in pairs])
        b = np.stack([np.asarray(p[1], np.float64) for p in pairs])
    if a.shape != b.shape or len(a) == 0:
        raise ValueError(f"pair shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm embedding in cosine")
    cos = float(np.clip(np.mean(np.sum(a * b, axis=1) / (na * nb)), -1.0, 1.0))
    return ReconReport(split, mse, cos)


def ablate_psg_objectives(train_emb: np.ndarray, heldout_emb: np.ndarray, seed: int = 0,
                          cfg: PsgTrainConfig | None = None,
                          objectives: Sequence[str] = ABLATION_OBJECTIVES) -> list[ReconReport]:
    """Train one PSG per objective on identical data and seed; report train and held-out metrics.

    Reconstruction goes through the posterior mean, before unit normalisation.
    """
    cfg = cfg or PsgTrainConfig()
    rows = []
    for obj in objectives:
        run_cfg = PsgTrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                                 objective=obj, weights=cfg.weights)
        model, _ = train_psg(train_emb, run_cfg, seed)
        for split, data in (("train", train_emb), ("heldout", heldout_emb)):
            rep = embedding_metrics((data, reconstruct(model, data)), split)
            rep.objective = obj
            rows.append(rep)
    return rows


def write_ablation_csv(path, rows: Sequence[ReconReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["objective", "split", "mse", "cos_sim"])
        for r in rows:
            w.writerow([r.objective, r.split, repr(r.mse), repr(r.cos_sim)])
    return path


# ---------------------------------------------------------------------------
# scenario matrix


@dataclass
class ScenarioReport:
    scenario: str
    eer: float
    threshold: float
    n_trials: int
    baseline_eer: float
    scores: ScoreSet | None = field(default=None, repr=False)


@dataclass
class ScenarioConfig:
    enroll_utts: int = 4  # per speaker, held back from evaluation
    enroll_crops: int = 10
    crop_frames: int = 125
    gl_iterations: int = 30
    # cap on evaluated utterances per speaker (None = all non-enrollment utterances)
    eval_utts: int | None = None


@dataclass
class EvalSet:
    """One corpus split into enrollment and evaluation utterances."""

    name: str
    corpus: Corpus
    enroll: dict[str, list]
    evaluate: list

    @classmethod
    def build(cls, name: str, corpus: Corpus, cfg: ScenarioConfig) -> "EvalSet":
        enroll, evaluate = {}, []
        for spk, utts in corpus.by_speaker().items():
            if len(utts) <= cfg.enroll_utts:
                raise ValueError(f"speaker {spk} has {len(utts)} utterances; need more than {cfg.enroll_utts}")
            enroll[spk] = utts[:cfg.enroll_utts]
            rest = utts[cfg.enroll_utts:]
            evaluate.extend(rest if cfg.eval_utts is None else rest[:cfg.eval_utts])
        return cls(name, corpus, enroll, evaluate)

    def averaged(self, encoder: SpeakerEncoder, cfg: ScenarioConfig, seed: int) -> dict[str, np.ndarray]:
        """Average of ``enroll_crops`` random 2-second crops of each speaker's enrollment audio."""
        out = {}
        for k, (spk, utts) in enumerate(sorted(self.enroll.items())):
            rng = np.random.default_rng([seed, 21, k])
            crops = [random_crop(self.corpus.mel(utts[int(rng.integers(0, len(utts)))]), cfg.crop_frames, rng)
                     for _ in range(cfg.enroll_crops)]
            out[spk] = average_embeddings(encoder.embed_batch(np.stack(crops)))
        return out


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def score_trials(prefix: str, probes: list[tuple[str, str, np.ndarray]],
                 enrolled: dict[str, np.ndarray]) -> ScoreSet:
    """Every probe against every enrolled speaker: its own speaker is the genuine trial."""
    ids, labels, scores = [], [], []
    for utt_id, true_spk, emb in probes:
        if true_spk not in enrolled:
            raise ValueError(f"probe {utt_id} has no enrollment for {true_spk}")
        for spk in sorted(enrolled):
            ids.append(f"{prefix}:{utt_id}:{spk}")
            labels.append("genuine" if spk == true_spk else "impostor")
            scores.append(_cos(emb, enrolled[spk]))
    return ScoreSet(ids, labels, np.array(scores))


def check_disjoint(a: Corpus, b: Corpus) -> None:
    overlap = set(a.speakers) & set(b.speakers)
    if overlap:
        raise ValueError(f"train and test corpora share speakers: {sorted(overlap)}")


@dataclass
class ScenarioResult:
    reports: list[ScenarioReport]
    baselines: dict[str, ScoreSet]
    # EER on clean audio passed through mel -> Griffin-Lim -> mel without conversion
    resynth_eer: dict[str, float]


def run_scenarios(vc_model: VoiceConverter, psg_model: PsgModel, pipeline_encoder: SpeakerEncoder,
                  adversary: SpeakerEncoder, corpus_train: Corpus, corpus_test: Corpus, seed: int = 0,
                  cfg: ScenarioConfig | None = None, scenarios: Sequence[str] = SCENARIOS) -> ScenarioResult:
    """Seen/unseen sources crossed with unseen-real/pseudo targets, utterance-level assignment.

    Targets: ``U`` draws a random test-set speaker other than the source and
    uses its averaged pipeline-encoder embedding; ``P`` takes a fresh PSG
    sample per utterance.  Converted mels go through Griffin-Lim and are
    re-analysed before the adversary embeds them.
    """
    cfg = cfg or ScenarioConfig()
    check_disjoint(corpus_train, corpus_test)
    bad = set(scenarios) - set(SCENARIOS)
    if bad:
        raise ValueError(f"unknown scenarios {sorted(bad)}")
    sets = {"S": EvalSet.build("S", corpus_train, cfg), "U": EvalSet.build("U", corpus_test, cfg)}
    enrolled = {k: s.averaged(adversary, cfg, seed) for k, s in sets.items()}
    unseen_targets = sets["U"].averaged(pipeline_encoder, cfg, seed + 1)

    def probe(mel):
        return adversary.embed(mel)

    baselines, resynth = {}, {}
    for key, es in sets.items():
        clean = [(u.utt_id, u.speaker_id, probe(es.corpus.mel(u))) for u in es.evaluate]
        baselines[key] = score_trials(f"base{key}", clean, enrolled[key])
        regen = [(u.utt_id, u.speaker_id,
                  probe(mel_spectrogram(griffin_lim(es.corpus.mel(u), cfg.gl_iterations, seed=seed))))
                 for u in es.evaluate]
        resynth[key] = compute_eer(score_trials(f"resynth{key}", regen, enrolled[key]))[0]

    reports = []
    for si, name in enumerate(SCENARIOS):
        if name not in scenarios:
            continue
        src, tgt = name[0], name[2]
        es = sets[src]
        rng = np.random.default_rng([seed, 31, si])
        n = len(es.evaluate)
        pseudo = sample_pseudo(psg_model, n, seed=int(rng.integers(0, 2**31)), level="utterance").embeddings
        test_spk = sorted(unseen_targets)
        probes = []
        for k, u in enumerate(es.evaluate):
            if tgt == "P":
                target = pseudo[k]
            else:
                choices = [s for s in test_spk if s != u.speaker_id]
                target = unseen_targets[choices[int(rng.integers(0, len(choices)))]]
            _, refined = vc_model.convert_mel(es.corpus.mel(u), target)
            wav = griffin_lim(refined, cfg.gl_iterations, seed=seed)
            probes.append((u.utt_id, u.speaker_id, probe(mel_spectrogram(wav))))
        ss = score_trials(name, probes, enrolled[src])
        eer, thr = compute_eer(ss)
        reports.append(ScenarioReport(name, eer, thr, len(ss), compute_eer(baselines[src])[0], ss))
    return ScenarioResult(reports, baselines, resynth)


def write_report_csv(path, reports: Sequence[ScenarioReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "eer", "threshold", "n_trials", "baseline_eer"])
        for r in reports:
            w.writerow([r.scenario, repr(r.eer), repr(r.threshold), r.n_trials, repr(r.baseline_eer)])
    return path
