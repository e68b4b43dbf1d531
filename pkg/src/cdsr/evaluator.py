"""Leave-one-out ranking against sampled same-domain negatives."""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from .corpus import DOMAINS, CrossDomainSequence, Vocabulary
from .model import CrossDomainRecommender, make_batch

HR_KS = (1, 5, 10)
NDCG_KS = (5, 10)
METRIC_NAMES = ("mrr", "ndcg@5", "ndcg@10", "hr@1", "hr@5", "hr@10")


@dataclass
class EvalCase:
    user_id: str
    prefix: list[int]
    positive: int
    domain: str
    candidates: np.ndarray  # domain-local indices, positive first
    seed: int

    @property
    def n_negatives(self) -> int:
        return len(self.candidates) - 1


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def build_eval_cases(
    sequences: Sequence[CrossDomainSequence],
    vocab: Vocabulary,
    interacted: dict[str, set[int]],
    seed: int,
    n_negatives: int = 999,
) -> list[EvalCase]:
    """One case per sequence: rank its last item given the rest.

    Negatives are drawn without replacement from the positive's domain,
    excluding everything the user touched in that domain. The draw depends
    only on (seed, user, ordinal of the sequence for that user).
    """
    cases = []
    ordinal: dict[str, int] = defaultdict(int)
    for s in sequences:
        if len(s) < 2:
            continue
        k = ordinal[s.user_id]
        ordinal[s.user_id] += 1
        positive = s.items[-1]
        domain = vocab.domain_of(positive)
        n_dom, offset = (vocab.n_x, 0) if domain == "X" else (vocab.n_y, vocab.n_x)
        touched = np.fromiter(
            (i - offset for i in interacted.get(s.user_id, ()) if vocab.domain_of(i) == domain), dtype=np.int64
        )
        touched = np.union1d(touched, [positive - offset])
        pool = np.setdiff1d(np.arange(n_dom, dtype=np.int64), touched, assume_unique=True)
        rng = np.random.default_rng([seed, _stable_int(s.user_id), k])
        negatives = rng.choice(pool, size=min(n_negatives, len(pool)), replace=False)
        candidates = np.concatenate([[positive - offset], negatives]).astype(np.int64)
        cases.append(EvalCase(s.user_id, list(s.items[:-1]), positive, domain, candidates, seed))
    return cases


@torch.no_grad()
def score_candidates(
    model: CrossDomainRecommender,
    cases: Sequence[EvalCase],
    batch_size: int = 512,
    mode: str = "both",
) -> list[np.ndarray]:
    """Raw prediction logits for each case's candidates (softmax is rank-neutral)."""
    was_training = model.training
    model.eval()
    scores: list[np.ndarray | None] = [None] * len(cases)
    device = next(model.parameters()).device
    tables = model.item_tables()
    for domain in DOMAINS:
        idx = [i for i, c in enumerate(cases) if c.domain == domain]
        for start in range(0, len(idx), batch_size):
            chunk = idx[start : start + batch_size]
            batch = make_batch([cases[i].prefix for i in chunk], model.pad, device)
            logits = model.last_logits(batch, domain, mode, tables).cpu().numpy()
            for row, i in enumerate(chunk):
                scores[i] = logits[row, cases[i].candidates]
    model.train(was_training)
    return scores


def rank_of_positive(scores: np.ndarray, positive: int = 0) -> int:
    """Pessimistic rank: every other candidate scoring >= the positive outranks it."""
    scores = np.asarray(scores)
    # the positive itself satisfies >=, which supplies the leading 1
    return int(np.count_nonzero(scores >= scores[positive]))


def rank_metrics(ranks: Iterable[int]) -> dict:
    ranks = np.asarray(list(ranks), dtype=np.float64)
    out: dict = {"cases": int(len(ranks))}
    if len(ranks) == 0:
        out.update({k: None for k in METRIC_NAMES})
        return out
    out["mrr"] = float(np.mean(1.0 / ranks))
    for k in NDCG_KS:
        out[f"ndcg@{k}"] = float(np.mean(np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)))
    for k in HR_KS:
        out[f"hr@{k}"] = float(np.mean(ranks <= k))
    return out


@dataclass
class RankingReport:
    domains: dict
    split: str
    seed: int
    config_fingerprint: str = ""
    mode: str = "both"
    negatives: dict = field(default_factory=dict)

    def mrr(self, domain: str) -> float | None:
        return self.domains[domain]["mrr"]

    @property
    def mean_mrr(self) -> float:
        vals = [self.domains[d]["mrr"] for d in DOMAINS if self.domains[d]["mrr"] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "seed": self.seed,
            "mode": self.mode,
            "config_fingerprint": self.config_fingerprint,
            "negatives": self.negatives,
            "domains": self.domains,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self, labels: dict | None = None) -> str:
        """Aligned text table in percent: one MRR/NDCG/HR block per domain."""
        labels = labels or {"X": "X-domain", "Y": "Y-domain"}
        cols = METRIC_NAMES
        width = 8
        top = "".join(f"{labels[d]:^{width * len(cols)}}" for d in DOMAINS)
        head = "".join(f"{c.upper():>{width}}" for _ in DOMAINS for c in cols)
        cells = []
        for d in DOMAINS:
            for c in cols:
                v = self.domains[d][c]
                cells.append(f"{'-':>{width}}" if v is None else f"{100 * v:>{width}.2f}")
        n = " ".join(f"{d}: {self.domains[d]['cases']} cases" for d in DOMAINS)
        return f"{'':10}{top}\n{'':10}{head}\n{self.split:<10}{''.join(cells)}\n({n}, seed {self.seed})"


def report_from_ranks(ranks_by_domain: dict, split: str, seed: int, fingerprint: str = "", mode="both", negatives=None):
    return RankingReport(
        {d: rank_metrics(ranks_by_domain.get(d, [])) for d in DOMAINS}, split, seed, fingerprint, mode, negatives or {}
    )


def evaluate_cases(model, cases: Sequence[EvalCase], split: str, seed: int, fingerprint="", mode="both", batch_size=512):
    scores = score_candidates(model, cases, batch_size, mode)
    ranks: dict[str, list[int]] = defaultdict(list)
    negs: dict[str, list[int]] = defaultdict(list)
    for case, s in zip(cases, scores):
        ranks[case.domain].append(rank_of_positive(s))
        negs[case.domain].append(case.n_negatives)
    negatives = {d: {"min": min(v), "max": max(v)} for d, v in negs.items()}
    return report_from_ranks(ranks, split, seed, fingerprint, mode, negatives)


def dump_candidates(cases: Sequence[EvalCase], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cases:
            row = {"user": c.user_id, "domain": c.domain, "positive": int(c.candidates[0]),
                   "candidates": c.candidates.tolist(), "seed": c.seed}
            fh.write(json.dumps(row) + "\n")


def evaluate(checkpoint, split: str, seed: int, corpus=None, mode: str = "both", batch_size: int = 512,
             dump_path=None) -> RankingReport:
    """Rank the held-out items of ``split`` with a checkpointed model."""
    from .corpus import load_prepared
    from .trainer import restore_model

    if corpus is None:
        corpus = load_prepared(checkpoint.corpus_path)
    model = restore_model(checkpoint, corpus)
    cases = build_eval_cases(corpus.split(split), corpus.vocab, corpus.interacted(), seed,
                             checkpoint.config.get("eval_negatives", 999))
    if dump_path is not None:
        dump_candidates(cases, dump_path)
    fp = hashlib.sha256(json.dumps(checkpoint.config, sort_keys=True).encode()).hexdigest()[:16]
    return evaluate_cases(model, cases, split, seed, fp, mode, batch_size)


def expected_random_mrr(n_candidates: int) -> float:
    """MRR of a uniformly random rank among ``n_candidates``."""
    return sum(1.0 / r for r in range(1, n_candidates + 1)) / n_candidates

