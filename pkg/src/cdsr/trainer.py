"""Mini-batch Adam training with best-validation-MRR checkpoint retention,
plus grid sweeps over the harmonic factor and graph depth."""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import PreparedCorpus
from .evaluator import RankingReport, build_eval_cases, evaluate_cases
from .model import CrossDomainRecommender, make_batch
from .objectives import total_loss

log = logging.getLogger(__name__)

LOSS_KEYS = ("cross", "single_x", "single_y", "disc_x", "disc_y")


def build_model(config: TrainConfig, corpus: PreparedCorpus) -> CrossDomainRecommender:
    max_len = config.max_len or corpus.max_len
    return CrossDomainRecommender(
        corpus.vocab.n_x,
        corpus.vocab.n_y,
        max_len,
        dim=config.dim,
        n_layers=config.n_layers,
        dropout=config.dropout,
        n_blocks=config.n_blocks,
        activation=config.activation,
        graph=corpus.graph,
    )


def restore_model(ckpt: Checkpoint, corpus: PreparedCorpus) -> CrossDomainRecommender:
    if ckpt.corpus_fingerprint and corpus.fingerprint and ckpt.corpus_fingerprint != corpus.fingerprint:
        raise ValueError("checkpoint was trained on a different corpus (fingerprint mismatch)")
    config = TrainConfig.from_dict(ckpt.config)
    config.overrides_ok = True
    model = CrossDomainRecommender(
        ckpt.n_x, ckpt.n_y, ckpt.max_len, config.dim, config.n_layers, config.dropout,
        config.n_blocks, config.activation, corpus.graph,
    )
    model.load_state_dict(ckpt.state)
    model.eval()
    return model


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    model: CrossDomainRecommender | None = None
    diverged: bool = False


def _batches(n: int, batch_size: int, generator: torch.Generator) -> list[np.ndarray]:
    order = torch.randperm(n, generator=generator).numpy()
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _snapshot(model) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(
    config: TrainConfig,
    corpus: PreparedCorpus,
    out_dir=None,
    valid_cases=None,
    on_epoch=None,
) -> TrainResult:
    """Train one model; the returned checkpoint holds the best-validation epoch.

    Per-epoch losses are means per training sequence of each loss sum. When
    ``out_dir`` is given, ``metrics.jsonl`` and ``ckpt-best`` are written there.
    """
    cfg = config.effective()
    torch.manual_seed(cfg.seed)
    # separate streams: batch order must not depend on whether corruption draws happen
    gen = torch.Generator().manual_seed(cfg.seed)
    corrupt_gen = torch.Generator().manual_seed(cfg.seed + 1_000_003)
    model = build_model(cfg, corpus)
    for p in (model.disc_x, model.disc_y):
        p.requires_grad_(cfg.uses_infomax)
    params = [p for p in model.parameters() if p.requires_grad]
    # coupled L2: the gradient of 0.5 * l2 * ||theta||^2 folded into Adam's gradient
    optim = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps, weight_decay=cfg.l2)

    train_seqs = [s.items for s in corpus.train]
    if valid_cases is None and corpus.valid:
        valid_cases = build_eval_cases(corpus.valid, corpus.vocab, corpus.interacted(), cfg.seed, cfg.eval_negatives)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")

    def make_ckpt(state, epoch, best):
        return Checkpoint(
            config=cfg.to_dict(), state=state, epoch=epoch, n_x=model.n_x, n_y=model.n_y,
            max_len=model.max_len, best_valid_mrr=best, rng_state={"generator": gen.get_state(),
            "corruption": corrupt_gen.get_state(), "torch": torch.get_rng_state()}, corpus_fingerprint=corpus.fingerprint,
            corpus_path=str(corpus.path or ""),
        )

    best_ckpt = make_ckpt(_snapshot(model), 0, None)
    last_finite = best_ckpt
    best_mrr = -math.inf
    history: list[dict] = []
    diverged = False
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            sums = dict.fromkeys(LOSS_KEYS, 0.0)
            sums["total"] = 0.0
            for idx in _batches(len(train_seqs), cfg.batch_size, gen):
                batch = make_batch([train_seqs[i] for i in idx], model.pad)
                parts = model.losses(batch, corrupt_gen, single=cfg.uses_single, infomax=cfg.uses_infomax)
                loss = total_loss(cfg.lam, *(parts[k] for k in LOSS_KEYS))
                if not torch.isfinite(loss):
                    diverged = True
                    break
                optim.zero_grad()
                (loss / len(idx)).backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                optim.step()
                for k in LOSS_KEYS:
                    sums[k] += parts[k].item()
                sums["total"] += loss.item()
            if diverged:
                log.error("loss became non-finite in epoch %d; keeping last finite checkpoint", epoch)
                break
            n = max(len(train_seqs), 1)
            row = {"epoch": epoch, "loss_total": sums["total"] / n}
            row.update({f"loss_{k}": sums[k] / n for k in LOSS_KEYS})
            report = None
            if valid_cases and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                report = evaluate_cases(model, valid_cases, "valid", cfg.seed, batch_size=cfg.eval_batch_size)
            row["valid_mrr_x"] = report.mrr("X") if report else None
            row["valid_mrr_y"] = report.mrr("Y") if report else None
            row["seconds"] = round(time.perf_counter() - t0, 3)
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
            last_finite = make_ckpt(_snapshot(model), epoch, best_ckpt.best_valid_mrr)
            score = report.mean_mrr if report else None
            if score is not None and not math.isnan(score):
                if score > best_mrr:
                    best_mrr = score
                    best_ckpt = make_ckpt(last_finite.state, epoch, score)
            elif not valid_cases:
                best_ckpt = last_finite
            log.info("epoch %d loss %.4f valid %s", epoch, row["loss_total"], score)
            if on_epoch:
                on_epoch(row, model)
    finally:
        if log_fh:
            log_fh.close()
    if diverged:
        best_ckpt = best_ckpt if best_ckpt.epoch > 0 else last_finite
        best_ckpt.diverged = True
    if out_dir is not None:
        save_checkpoint(best_ckpt, out_dir / "ckpt-best")
    model.load_state_dict(best_ckpt.state)
    model.eval()
    return TrainResult(best_ckpt, history, model, diverged)


def parse_grid(text: str) -> tuple[str, list]:
    """``lambda=0.1:0.9:0.1`` (inclusive range) or ``n_layers=0,1,2``."""
    key, _, spec = text.partition("=")
    if not spec:
        raise ValueError(f"grid {text!r} is not key=values")
    key = {"lambda": "lam", "L": "n_layers", "layers": "n_layers"}.get(key.strip(), key.strip())
    if ":" in spec:
        lo, hi, step = (float(v) for v in spec.split(":"))
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        values = [round(lo + i * step, 10) for i in range(n)]
    else:
        values = [json.loads(v) if v.strip()[0].isdigit() or v.strip()[0] == "-" else v.strip()
                  for v in spec.split(",")]
    return key, values


def sweep(
    base: TrainConfig,
    grid: dict[str, list],
    corpus: PreparedCorpus,
    split: str = "test",
    out_dir=None,
) -> list[dict]:
    """Train once per grid point, evaluate each best checkpoint on ``split``.

    A failing point is recorded with its error and the sweep moves on.
    """
    if not grid:
        return []
    keys = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        row = dict(point)
        try:
            cfg = dataclasses.replace(base, **point)
            if cfg.lam == 1.0 and cfg.variant == "full":
                cfg.variant = "no_infomax"
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / "_".join(f"{k}-{v}" for k, v in point.items())
            res = train(cfg, corpus, run_dir)
            report = split_report(res, corpus, split, cfg.seed)
            row.update({"status": "ok", "best_epoch": res.checkpoint.epoch})
            for d, m in report.domains.items():
                row.update({f"{k}_{d.lower()}": m[k] for k in m if k != "cases"})
        except Exception as exc:
            log.exception("sweep point %s failed", point)
            row.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        rows.append(row)
    return rows


def split_report(result: TrainResult, corpus: PreparedCorpus, split: str, seed: int, mode="both") -> RankingReport:
    cases = build_eval_cases(corpus.split(split), corpus.vocab, corpus.interacted(), seed,
                             result.checkpoint.config.get("eval_negatives", 999))
    return evaluate_cases(result.model, cases, split, seed, mode=mode)


def format_sweep(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(dict.fromkeys(k for r in rows for k in r))
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)
    widths = {c: max(len(c), *(len(fmt(r.get(c, ""))) for r in rows)) for c in cols}
    lines = ["  ".join(c.rjust(widths[c]) for c in cols)]
    for r in rows:
        lines.append("  ".join(fmt(r.get(c, "")).rjust(widths[c]) for c in cols))
    return "\n".join(lines)
