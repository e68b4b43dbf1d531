"""Command-line entry point: prepare, synth, train, evaluate, sweep, ablate.

Every command writes a ``manifest.json`` next to its artifacts and refuses
to overwrite an existing output unless ``--force`` is given. Failures exit 1
with one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config, parse_override
from .corpus import SECONDS_PER_DAY, load_interactions, load_prepared, prepare_corpus, save_prepared
from .evaluator import evaluate
from .synth import SynthSpec, generate
from .trainer import format_sweep, parse_grid, split_report, sweep, train

OUTPUT_ROOT_ENV = "CDSR_OUTPUT_ROOT"


class OutputExists(Exception):
    pass


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _default_out(command: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command


def _claim_dir(path: Path, force: bool) -> Path:
    if path.exists() and (path.is_file() or any(path.iterdir())):
        if not force:
            raise OutputExists(f"{path} exists; pass --force to overwrite")
        shutil.rmtree(path) if path.is_dir() else path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(path: Path, command: str, args, **extra) -> None:
    manifest = {
        "command": command,
        "config_path": getattr(args, "config", None),
        "seed": extra.pop("seed", getattr(args, "seed", None)),
        "tool_version": __version__,
        "output": str(extra.pop("output", "")),
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _config_from_args(args) -> TrainConfig:
    overrides = dict(parse_override(s) for s in args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_prepare(args) -> int:
    records, load_report = load_interactions(args.input, args.format)
    out = _claim_dir(Path(args.out), args.force)
    params = {
        "window_seconds": args.window_days * SECONDS_PER_DAY,
        "max_len": args.max_len,
        "min_per_domain": args.min_per_domain,
        "min_interactions": args.min_interactions,
    }
    corpus, reports = prepare_corpus(records, **params)
    reports["load"] = {k: v for k, v in vars(load_report).items() if k != "warnings"}
    fingerprint = save_prepared(corpus, out, {"params": params, "reports": reports})
    _write_manifest(out / "manifest.json", "prepare", args, output=out, input=str(args.input),
                    input_fingerprint=_file_hash(args.input), corpus_fingerprint=fingerprint, params=params)
    print(json.dumps(corpus.stats))
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec.from_file(args.spec) if args.spec else SynthSpec()
    for key, value in (parse_override(s) for s in args.set or []):
        setattr(spec, key, value)
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    out = Path(args.out)
    if out.exists() and not args.force:
        raise OutputExists(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus = generate(spec)
    corpus.write(out)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "synth", args, seed=spec.seed, output=out,
                    spec=vars(spec), output_fingerprint=_file_hash(out))
    print(json.dumps({"records": len(corpus.records), "cross_transitions": corpus.cross_transitions,
                      "planted": corpus.planted}))
    return 0


def _train_and_report(args, config: TrainConfig, command: str) -> int:
    corpus = load_prepared(args.corpus)
    out = _claim_dir(Path(args.out) if args.out else _default_out(command), args.force)
    result = train(config, corpus, out)
    eff = config.effective()
    summary = {"best_epoch": result.checkpoint.epoch, "best_valid_mrr": result.checkpoint.best_valid_mrr,
               "diverged": result.diverged, "effective_lambda": eff.lam, "effective_layers": eff.n_layers}
    if command == "ablate":
        report = split_report(result, corpus, args.split, eff.seed)
        (out / f"report-{args.split}.json").write_text(report.to_json() + "\n")
        summary["report"] = report.to_dict()
        print(report.format_table())
    _write_manifest(out / "manifest.json", command, args, seed=eff.seed, output=out,
                    corpus_fingerprint=corpus.fingerprint, config=eff.to_dict(), summary=summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "report"}))
    return 1 if result.diverged else 0


def cmd_train(args) -> int:
    return _train_and_report(args, _config_from_args(args), "train")


def cmd_ablate(args) -> int:
    config = _config_from_args(args)
    config.variant = args.variant
    if config.variant == "full" and config.lam == 1.0:
        config.lam = 0.7
    return _train_and_report(args, config.validate(), "ablate")


def cmd_evaluate(args) -> int:
    path = Path(args.ckpt)
    if path.is_dir():
        path = path / "ckpt-best"
    ckpt = load_checkpoint(path)
    corpus = load_prepared(args.corpus) if args.corpus else None
    out = _claim_dir(Path(args.out), args.force) if args.out else None
    dump = args.dump_candidates or (out / "candidates.jsonl" if out else None)
    report = evaluate(ckpt, args.split, args.seed, corpus, mode=args.mode, dump_path=dump)
    if out is not None:
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.format_table() + "\n")
        _write_manifest(out / "manifest.json", "evaluate", args, output=out, checkpoint=str(path),
                        corpus_fingerprint=ckpt.corpus_fingerprint)
    print(report.to_json() if args.json else report.format_table())
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    grid = dict(parse_grid(g) for g in args.grid or [])
    corpus = load_prepared(args.corpus)
    out = _claim_dir(Path(args.out) if args.out else _default_out("sweep"), args.force)
    rows = sweep(config, grid, corpus, args.split, out)
    (out / "sweep.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (out / "sweep.txt").write_text(format_sweep(rows) + "\n")
    _write_manifest(out / "manifest.json", "sweep", args, seed=config.seed, output=out,
                    corpus_fingerprint=corpus.fingerprint, config=config.to_dict(), grid=grid)
    print(format_sweep(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdsr", description="Cross-domain sequential recommendation toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="build a prepared corpus from a raw interaction log")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("tsv", "jsonl"))
    sp.add_argument("--window-days", type=int, default=365)
    sp.add_argument("--max-len", type=int, default=30)
    sp.add_argument("--min-per-domain", type=int, default=3)
    sp.add_argument("--min-interactions", type=int, default=10)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("synth", help="generate a synthetic interaction log")
    sp.add_argument("--spec", help="flat key = value file of SynthSpec fields")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_synth)

    def training_args(sp):
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--force", action="store_true")

    sp = sub.add_parser("train", help="train a model")
    training_args(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="rank held-out items with a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", choices=("train", "valid", "test"), default="test")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--corpus")
    sp.add_argument("--mode", choices=("both", "single", "cross"), default="both")
    sp.add_argument("--out")
    sp.add_argument("--dump-candidates")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="train over a hyperparameter grid")
    training_args(sp)
    sp.add_argument("--grid", action="append", metavar="KEY=SPEC", help="e.g. lambda=0.1:0.9:0.1 or L=0,1,2")
    sp.add_argument("--split", choices=("valid", "test"), default="test")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ablate", help="train and test one ablation variant")
    training_args(sp)
    sp.add_argument("--variant", choices=("full", "no_infomax", "no_gnn", "cross_only"), required=True)
    sp.add_argument("--split", choices=("valid", "test"), default="test")
    sp.set_defaults(func=cmd_ablate)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print("error: " + json.dumps(err), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
