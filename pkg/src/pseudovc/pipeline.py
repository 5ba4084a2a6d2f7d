"""Artifact layout and the steps fronted by the command line.

Everything lives under one output directory::

    corpus/{train,test}/          synthetic corpora
    models/*.ckpt                 speaker encoders, converter stages, PSG
    traces/*.csv                  loss traces
    embeddings/*.csv              speaker tables and pseudo speakers
    converted/                    converted audio and mels
    eval/                         scores, reports, ablation table
    MANIFEST.csv                  command,path,bytes,sha256 for every artifact

Each step checks its inputs before writing anything and raises
:class:`ValidationError` naming the missing artifact.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import eval as ev
from . import gradsuite
from .config import RunConfig
from .corpus import Corpus, synth_corpus
from .dsp import load_wav, mel_spectrogram, save_wav
from .psg import PsgLossWeights, PsgModel, PsgTrainConfig, finetune_psg, sample_pseudo, train_psg
from .spkemb import (
    SpeakerEncoder,
    SpeakerEncoderConfig,
    SpeakerTrainConfig,
    crop_embeddings,
    read_embeddings_csv,
    train_speaker_encoder,
    write_embeddings_csv,
)
from .vc import TrainingConfig, VoiceConverter, convert, speaker_table, train_vc, write_loss_trace

MANIFEST = "MANIFEST.csv"
# utterances per training speaker kept out of converter training for the self-conversion check
VC_HOLDOUT = 2


class ValidationError(ValueError):
    """Bad arguments, config or missing input artifacts (exit code 1)."""


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Workspace:
    def __init__(self, out_dir, seed: int = 0, config: RunConfig | None = None):
        self.root = Path(out_dir)
        self.seed = int(seed)
        self.cfg = config or RunConfig()

    # -- paths -------------------------------------------------------------------

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    @property
    def train_corpus_dir(self) -> Path:
        return self.path("corpus", "train")

    @property
    def test_corpus_dir(self) -> Path:
        return self.path("corpus", "test")

    def model(self, name: str) -> Path:
        return self.path("models", f"{name}.ckpt")

    def require(self, path: Path, what: str) -> Path:
        if not Path(path).exists():
            raise ValidationError(f"missing {what}: {path}")
        return Path(path)

    def corpus(self, split: str) -> Corpus:
        d = self.train_corpus_dir if split == "train" else self.test_corpus_dir
        self.require(d / "manifest.csv", f"{split} corpus (run synth-corpus)")
        return Corpus(d)

    def encoder(self, role: str) -> SpeakerEncoder:
        return SpeakerEncoder.load(self.require(self.model(f"spk_{role}"), f"{role} speaker encoder (run train-spk --role {role})"))

    # -- manifest ------------------------------------------------------------------

    def record(self, command: str, paths) -> Path:
        """Merge ``paths`` into the manifest (one row per path, last writer wins)."""
        manifest = self.path(MANIFEST)
        rows: dict[str, list[str]] = {}
        if manifest.exists():
            with open(manifest, newline="") as fh:
                for r in csv.DictReader(fh):
                    rows[r["path"]] = [r["command"], r["path"], r["bytes"], r["sha256"]]
        for p in paths:
            p = Path(p)
            rel = p.relative_to(self.root).as_posix()
            rows[rel] = [command, rel, str(p.stat().st_size), sha256(p)]
        self.root.mkdir(parents=True, exist_ok=True)
        with open(manifest, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["command", "path", "bytes", "sha256"])
            for key in sorted(rows):
                w.writerow(rows[key])
        return manifest


def _corpus_files(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_file())


def _history_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
    return path


# ---------------------------------------------------------------------------
# steps


def step_synth_corpus(ws: Workspace, split: str = "both") -> list[Path]:
    if split not in ("train", "test", "both"):
        raise ValidationError(f"--split must be train, test or both, got {split!r}")
    d = ws.cfg.data
    if d.train_speakers < 2 or d.test_speakers < 2:
        raise ValidationError("[data] needs at least 2 train and 2 test speakers")
    if d.test_seed_offset == 0:
        raise ValidationError("[data] test_seed_offset must be nonzero so speaker sets stay disjoint")
    written = []
    if split in ("train", "both"):
        synth_corpus(ws.train_corpus_dir, d.train_speakers, d.utts_per_speaker, d.utt_seconds, ws.seed)
        written += _corpus_files(ws.train_corpus_dir)
    if split in ("test", "both"):
        synth_corpus(ws.test_corpus_dir, d.test_speakers, d.utts_per_speaker, d.utt_seconds,
                     ws.seed + d.test_seed_offset)
        written += _corpus_files(ws.test_corpus_dir)
    ws.record("synth-corpus", written)
    return written


def step_train_spk(ws: Workspace, role: str = "pipeline") -> Path:
    """Pipeline encoder: even utterances, --seed.  Adversary: odd utterances, --seed + offset."""
    if role not in ("pipeline", "adversary"):
        raise ValidationError(f"--role must be pipeline or adversary, got {role!r}")
    corpus = ws.corpus("train")
    s = ws.cfg.spkemb
    seed = ws.seed + (s.adversary_seed_offset if role == "adversary" else 0)
    tcfg = SpeakerTrainConfig(steps=s.steps, batch_size=s.batch_size, lr=s.lr, crop_frames=s.crop_frames,
                              partition="odd" if role == "adversary" else "even")
    enc, history = train_speaker_encoder(corpus, tcfg, seed, SpeakerEncoderConfig(channels=s.channels))
    enc.meta["role"] = role
    ckpt = enc.save(ws.model(f"spk_{role}"))
    trace = _history_csv(ws.path("traces", f"spk_{role}.csv"), history)
    ws.record("train-spk", [ckpt, trace])
    return ckpt


def vc_training_config(ws: Workspace, stage: int) -> TrainingConfig:
    v = ws.cfg.vc
    if stage == 1:
        return TrainingConfig.stage1(mu=v.stage1_mu, lambda_=v.stage1_lambda_, steps=v.stage1_steps,
                                     batch_size=v.batch_size, lr=v.stage1_lr, crop_frames=v.crop_frames,
                                     seed=ws.seed, eval_every=v.eval_every)
    return TrainingConfig.stage2(mu=v.mu, lambda_=v.lambda_, alpha=v.alpha, beta=v.beta, steps=v.steps,
                                 batch_size=v.batch_size, lr=v.lr, crop_frames=v.crop_frames,
                                 seed=ws.seed, eval_every=v.eval_every)


def vc_train_corpus(corpus: Corpus) -> Corpus:
    n = len(next(iter(corpus.by_speaker().values())))
    return corpus.subset(lambda u, i: i < n - VC_HOLDOUT)


def step_train_vc(ws: Workspace, stage: int) -> Path:
    if stage not in (1, 2):
        raise ValidationError(f"--stage must be 1 or 2, got {stage}")
    try:
        cfg = vc_training_config(ws, stage)
    except ValueError as exc:
        raise ValidationError(f"[vc] {exc}") from None
    if stage == 2:
        stage1 = ws.require(ws.model("vc_stage1"), "stage-1 converter checkpoint (run train-vc --stage 1)")
    corpus = ws.corpus("train")
    encoder = ws.encoder("pipeline")
    model = VoiceConverter.load(stage1) if stage == 2 else VoiceConverter.init(seed=ws.seed)
    result = train_vc(model, vc_train_corpus(corpus), encoder, cfg, table=speaker_table(corpus, encoder))
    ckpt = model.save(ws.model(f"vc_stage{stage}"))
    trace = write_loss_trace(ws.path("traces", f"vc_stage{stage}.csv"), result.trace)
    evals = write_loss_trace(ws.path("traces", f"vc_stage{stage}_eval.csv"), result.eval_trace)
    ws.record("train-vc", [ckpt, trace, evals])
    return ckpt


def psg_config(ws: Workspace, epochs: int | None = None, objective: str | None = None) -> PsgTrainConfig:
    p = ws.cfg.psg
    try:
        return PsgTrainConfig(lr=p.lr, epochs=p.epochs if epochs is None else epochs, batch_size=p.batch_size,
                              objective=objective or p.objective, weights=PsgLossWeights(p.lambda_dist))
    except ValueError as exc:
        raise ValidationError(f"[psg] {exc}") from None


def corpus_embeddings(ws: Workspace, split: str, seed_offset: int = 0) -> np.ndarray:
    emb, _ = crop_embeddings(ws.corpus(split), ws.encoder("pipeline"), ws.cfg.psg.crops_per_utt,
                             ws.seed + seed_offset)
    return emb


def _embeddings_from_csv(path) -> np.ndarray:
    rows = read_embeddings_csv(path)
    if not rows:
        raise ValidationError(f"{path}: no embeddings")
    return np.stack([r["embedding"] for r in rows])


def step_train_psg(ws: Workspace, embeddings_csv=None) -> Path:
    cfg = psg_config(ws)
    if embeddings_csv is not None:
        emb = _embeddings_from_csv(ws.require(Path(embeddings_csv), "embedding file"))
    else:
        emb = corpus_embeddings(ws, "train")
    if len(emb) < 64:
        raise ValidationError(f"PSG training needs at least 64 embeddings, got {len(emb)}")
    model, history = train_psg(emb, cfg, ws.seed)
    ckpt = model.save(ws.model("psg"))
    trace = _history_csv(ws.path("traces", "psg.csv"), history)
    ws.record("train-psg", [ckpt, trace])
    return ckpt


def step_finetune_psg(ws: Workspace, embeddings_csv=None, checkpoint=None) -> Path:
    base = ws.require(Path(checkpoint) if checkpoint else ws.model("psg"), "PSG checkpoint (run train-psg)")
    cfg = psg_config(ws, epochs=ws.cfg.psg.finetune_epochs)
    if embeddings_csv is not None:
        emb = _embeddings_from_csv(ws.require(Path(embeddings_csv), "embedding file"))
    else:
        # the converter's own training speakers, a different crop draw than train-psg
        emb = corpus_embeddings(ws, "train", seed_offset=1)
    if len(emb) < 64:
        raise ValidationError(f"PSG finetuning needs at least 64 embeddings, got {len(emb)}")
    model, history = finetune_psg(PsgModel.load(base), emb, cfg, ws.seed)
    ckpt = model.save(ws.model("psg_finetuned"))
    trace = _history_csv(ws.path("traces", "psg_finetune.csv"), history)
    ws.record("finetune-psg", [ckpt, trace])
    return ckpt


def _psg_model(ws: Workspace) -> PsgModel:
    ft = ws.model("psg_finetuned")
    if ft.exists():
        return PsgModel.load(ft)
    return PsgModel.load(ws.require(ws.model("psg"), "PSG checkpoint (run train-psg)"))


def step_gen_speakers(ws: Workspace, n: int, level: str = "utterance", output=None) -> Path:
    if n < 1:
        raise ValidationError("--n must be >= 1")
    if level not in ("utterance", "speaker"):
        raise ValidationError(f"--level must be utterance or speaker, got {level!r}")
    model = _psg_model(ws)
    out = Path(output) if output else ws.path("embeddings", "pseudo_speakers.csv")
    path = sample_pseudo(model, n, ws.seed, level).write_csv(out)
    if path.resolve().is_relative_to(ws.root.resolve()):
        ws.record("gen-speakers", [path])
    return path


def step_convert(ws: Workspace, source, target: str, index: int = 0, name: str | None = None) -> tuple[Path, Path]:
    src = ws.require(Path(source), "source audio")
    model = VoiceConverter.load(ws.require(ws.model("vc_stage2"), "stage-2 converter checkpoint (run train-vc --stage 2)"))
    if target == "pseudo":
        emb = sample_pseudo(_psg_model(ws), 1, ws.seed, "utterance").embeddings[0]
        tag = f"pseudo{ws.seed}"
    else:
        rows = read_embeddings_csv(ws.require(Path(target), "target embedding file"))
        if not 0 <= index < len(rows):
            raise ValidationError(f"--index {index} out of range for {target} ({len(rows)} rows)")
        emb, tag = rows[index]["embedding"], rows[index]["id"]
    wav = load_wav(src)
    if mel_spectrogram(wav).shape[0] < 32:
        raise ValidationError(f"{src}: need at least 32 mel frames")
    mel, out_wav = convert(model, wav, emb, ws.cfg.eval.gl_iterations)
    stem = name or f"{src.stem}_to_{tag}"
    wav_path = save_wav(ws.path("converted", f"{stem}.wav"), out_wav)
    mel_path = ws.path("converted", f"{stem}.mel.npy")
    np.save(mel_path, mel.astype(np.float32))
    ws.record("convert", [wav_path, mel_path])
    return wav_path, mel_path


def step_eval_eer(ws: Workspace, scores_csv) -> tuple[float, float]:
    path = ws.require(Path(scores_csv), "scores file")
    try:
        scores = ev.ScoreSet.read_csv(path)
        eer, thr = ev.compute_eer(scores)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    out = ws.path("eval", "eer.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scores", "eer", "threshold", "n_trials"])
        w.writerow([str(path), repr(eer), repr(thr), len(scores)])
    ws.record("eval-eer", [out])
    return eer, thr


def step_psg_ablation(ws: Workspace) -> tuple[Path, list[ev.ReconReport]]:
    train = corpus_embeddings(ws, "train")
    heldout = corpus_embeddings(ws, "test")
    rows = ev.ablate_psg_objectives(train, heldout, ws.seed, psg_config(ws))
    path = ev.write_ablation_csv(ws.path("eval", "psg_ablation.csv"), rows)
    ws.record("eval-psg-ablation", [path])
    return path, rows


def scenario_config(ws: Workspace) -> ev.ScenarioConfig:
    e = ws.cfg.eval
    return ev.ScenarioConfig(enroll_utts=e.enroll_utts, enroll_crops=e.enroll_crops, crop_frames=e.crop_frames,
                             gl_iterations=e.gl_iterations)


def step_run_scenarios(ws: Workspace) -> tuple[Path, ev.ScenarioResult]:
    vc_model = VoiceConverter.load(ws.require(ws.model("vc_stage2"), "stage-2 converter checkpoint (run train-vc --stage 2)"))
    psg_model = _psg_model(ws)
    pipe, adv = ws.encoder("pipeline"), ws.encoder("adversary")
    train, test = ws.corpus("train"), ws.corpus("test")
    try:
        ev.check_disjoint(train, test)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    result = ev.run_scenarios(vc_model, psg_model, pipe, adv, train, test, ws.seed, scenario_config(ws))
    written = [ev.write_report_csv(ws.path("eval", "report.csv"), result.reports)]
    for r in result.reports:
        written.append(r.scores.write_csv(ws.path("eval", f"scores_{r.scenario}.csv")))
    for key, ss in result.baselines.items():
        written.append(ss.write_csv(ws.path("eval", f"scores_baseline_{key}.csv")))
    diag = ws.path("eval", "diagnostics.csv")
    with open(diag, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_set", "baseline_eer", "resynth_eer"])
        for key in sorted(result.baselines):
            w.writerow([key, repr(ev.compute_eer(result.baselines[key])[0]), repr(result.resynth_eer[key])])
    written.append(diag)
    ws.record("run-scenarios", written)
    return written[0], result


def step_grad_check(seeds, tol: float = 1e-3) -> dict[str, list]:
    return gradsuite.run_suite(seeds, tol)


PIPELINE = ("synth-corpus", "train-spk pipeline", "train-spk adversary", "train-vc 1", "train-vc 2",
            "train-psg", "gen-speakers", "convert", "run-scenarios")


def run_pipeline(ws: Workspace, log=print) -> dict:
    """Every step on the desk-scale defaults; returns the scenario result and key paths."""
    log("synth-corpus")
    step_synth_corpus(ws)
    for role in ("pipeline", "adversary"):
        log(f"train-spk --role {role}")
        step_train_spk(ws, role)
    for stage in (1, 2):
        log(f"train-vc --stage {stage}")
        step_train_vc(ws, stage)
    log("train-psg")
    step_train_psg(ws)
    log("gen-speakers")
    pseudo = step_gen_speakers(ws, 4, "speaker")
    log("convert")
    first = ws.corpus("test").utterances[0]
    converted = step_convert(ws, first.path, str(pseudo), 0)
    log("run-scenarios")
    report, result = step_run_scenarios(ws)
    return {"report": report, "result": result, "pseudo": pseudo, "converted": converted}


def config_snapshot(cfg: RunConfig) -> dict:
    return asdict(cfg)
