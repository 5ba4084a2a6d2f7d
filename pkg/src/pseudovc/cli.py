"""``pseudovc`` command line.

Exit codes: 0 success, 1 validation error (bad flags, config or missing
inputs), 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline as pl
from .config import ConfigError, load_config


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for every random stream (default 0)")
    p.add_argument("--config", default=None, help="sectioned key=value run config")
    p.add_argument("--out-dir", default="run", help="artifact root (default ./run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudovc", description="Speaker de-identification toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _common(p)
        return p

    p = add("synth-corpus", "write the synthetic train and test corpora")
    p.add_argument("--split", choices=("train", "test", "both"), default="both")

    p = add("train-spk", "train a speaker encoder (pipeline or adversary)")
    p.add_argument("--role", choices=("pipeline", "adversary"), default="pipeline")

    p = add("train-vc", "train the conversion model")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)

    p = add("train-psg", "train the pseudo-speaker generator")
    p.add_argument("--embeddings", default=None, help="embedding CSV (default: crops of the train corpus)")

    p = add("finetune-psg", "continue PSG training on a new embedding set")
    p.add_argument("--embeddings", default=None, help="embedding CSV (default: fresh crops of the train corpus)")
    p.add_argument("--checkpoint", default=None, help="PSG checkpoint to start from (default models/psg.ckpt)")

    p = add("gen-speakers", "sample pseudo-speaker embeddings")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--level", choices=("utterance", "speaker"), default="utterance")
    p.add_argument("--output", default=None, help="CSV path (default embeddings/pseudo_speakers.csv)")

    p = add("convert", "convert one WAV file to a target voice")
    p.add_argument("--input", required=True, help="16 kHz mono 16-bit WAV")
    p.add_argument("--target", required=True, help="'pseudo' or an embedding CSV")
    p.add_argument("--index", type=int, default=0, help="row of the embedding CSV (default 0)")
    p.add_argument("--name", default=None, help="output file stem")

    p = add("eval-eer", "equal error rate of a scores CSV")
    p.add_argument("--scores", required=True)

    add("eval-psg-ablation", "reconstruction metrics for the three PSG objectives")
    add("run-scenarios", "SxU / UxU / SxP / UxP de-identification evaluation")

    p = add("grad-check", "finite-difference check of every training loss")
    p.add_argument("--n-seeds", type=int, default=1, help="check seeds --seed .. --seed+n-1")
    p.add_argument("--tol", type=float, default=1e-3)

    add("pipeline", "run every step on the desk-scale defaults")
    return parser


def _run(args) -> int:
    ws = pl.Workspace(args.out_dir, args.seed, load_config(args.config))
    cmd = args.command
    if cmd == "synth-corpus":
        files = pl.step_synth_corpus(ws, args.split)
        print(f"wrote {len(files)} files under {ws.path('corpus')}")
    elif cmd == "train-spk":
        print(f"wrote {pl.step_train_spk(ws, args.role)}")
    elif cmd == "train-vc":
        print(f"wrote {pl.step_train_vc(ws, args.stage)}")
    elif cmd == "train-psg":
        print(f"wrote {pl.step_train_psg(ws, args.embeddings)}")
    elif cmd == "finetune-psg":
        print(f"wrote {pl.step_finetune_psg(ws, args.embeddings, args.checkpoint)}")
    elif cmd == "gen-speakers":
        print(f"wrote {pl.step_gen_speakers(ws, args.n, args.level, args.output)}")
    elif cmd == "convert":
        wav, mel = pl.step_convert(ws, args.input, args.target, args.index, args.name)
        print(f"wrote {wav}\nwrote {mel}")
    elif cmd == "eval-eer":
        eer, thr = pl.step_eval_eer(ws, args.scores)
        print(f"eer {eer:.6f} threshold {thr:.6f}")
    elif cmd == "eval-psg-ablation":
        path, rows = pl.step_psg_ablation(ws)
        for r in rows:
            print(f"{r.objective:8s} {r.split:8s} mse {r.mse:.6f} cos_sim {r.cos_sim:.4f}")
        print(f"wrote {path}")
    elif cmd == "run-scenarios":
        path, result = pl.step_run_scenarios(ws)
        _print_reports(result)
        print(f"wrote {path}")
    elif cmd == "grad-check":
        if args.n_seeds < 1 or args.tol <= 0:
            raise pl.ValidationError("--n-seeds must be >= 1 and --tol > 0")
        seeds = range(args.seed, args.seed + args.n_seeds)
        ok = True
        for name, reports in pl.step_grad_check(seeds, args.tol).items():
            worst = max(r.max_rel_error for r in reports)
            passed = all(r.passed for r in reports)
            ok &= passed
            print(f"{name:10s} max_rel_error {worst:.3e} {'PASS' if passed else 'FAIL'}")
        return 0 if ok else 2
    elif cmd == "pipeline":
        out = pl.run_pipeline(ws)
        _print_reports(out["result"])
        print(f"wrote {out['report']}")
    return 0


def _print_reports(result) -> None:
    for r in result.reports:
        print(f"{r.scenario}  eer {r.eer:.4f}  threshold {r.threshold:.4f}  trials {r.n_trials}  "
              f"baseline {r.baseline_eer:.4f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    try:
        if threadpool_limits is not None:
            # single-threaded BLAS keeps float reductions, and so checkpoints, reproducible
            with threadpool_limits(1):
                return _run(args)
        return _run(args)
    except (pl.ValidationError, ConfigError) as exc:
        print(f"pseudovc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"pseudovc {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
