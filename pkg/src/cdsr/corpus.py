"""Raw interaction ingestion, sequence construction, temporal split and
item transition graphs.

A prepared corpus is a directory holding the vocabulary, the three sequence
splits, the three transition graphs as edge lists and a statistics report.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

DOMAINS = ("X", "Y")
CORPUS_FORMAT_VERSION = 1
SECONDS_PER_DAY = 86_400

_FIELDS = ("user", "item", "domain", "timestamp")


class CorpusError(Exception):
    """Raised for unreadable inputs or malformed prepared-corpus directories."""


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    domain: str
    timestamp: int

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be X or Y, got {self.domain!r}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass
class LoadReport:
    rows: int = 0
    loaded: int = 0
    skipped: int = 0
    warnings: list[str] = field(default_factory=list)


def _parse_fields(user, item, domain, timestamp) -> InteractionRecord:
    if user is None or item is None or domain is None or timestamp is None:
        raise ValueError("missing field")
    ts = int(str(timestamp).strip())
    return InteractionRecord(str(user).strip(), str(item).strip(), str(domain).strip(), ts)


def load_interactions(path, fmt: str | None = None) -> tuple[list[InteractionRecord], LoadReport]:
    """Read a TSV (``user<TAB>item<TAB>domain<TAB>timestamp``) or JSONL log.

    Records come back in file order. Malformed rows are skipped, logged and
    counted in the returned report. A TSV header line naming the four
    fields is tolerated.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in (".jsonl", ".json") else "tsv"
    if fmt not in ("tsv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc

    records: list[InteractionRecord] = []
    report = LoadReport()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if fmt == "tsv" and lineno == 1 and tuple(line.strip().split("\t")) == _FIELDS:
            continue
        report.rows += 1
        try:
            if fmt == "tsv":
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                rec = _parse_fields(*parts)
            else:
                obj = json.loads(line)
                rec = _parse_fields(*(obj.get(k) for k in _FIELDS))
        except (ValueError, TypeError, AttributeError) as exc:
            report.skipped += 1
            msg = f"{path}:{lineno}: skipped row ({exc})"
            report.warnings.append(msg)
            log.warning(msg)
            continue
        records.append(rec)
        report.loaded += 1
    return records, report


def write_interactions(records: Iterable[InteractionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.domain}\t{r.timestamp}\n")


@dataclass
class Vocabulary:
    """Merged item index: X items occupy [0, n_x), Y items [n_x, n_x + n_y).

    ``pad`` is the single sentinel ``n_x + n_y``; domain-local pad indices
    used by the single-domain embedding tables are ``n_x`` and ``n_y``.
    """

    x_items: list[str]
    y_items: list[str]

    def __post_init__(self):
        self._x_index = {item: i for i, item in enumerate(self.x_items)}
        self._y_index = {item: i for i, item in enumerate(self.y_items)}
        if len(self._x_index) != len(self.x_items) or len(self._y_index) != len(self.y_items):
            raise ValueError("duplicate item ids in vocabulary")

    @property
    def n_x(self) -> int:
        return len(self.x_items)

    @property
    def n_y(self) -> int:
        return len(self.y_items)

    @property
    def size(self) -> int:
        return self.n_x + self.n_y

    @property
    def pad(self) -> int:
        return self.n_x + self.n_y

    def merged_index(self, item_id: str, domain: str) -> int:
        if domain == "X":
            return self._x_index[item_id]
        return self.n_x + self._y_index[item_id]

    def domain_of(self, index: int) -> str:
        if 0 <= index < self.n_x:
            return "X"
        if self.n_x <= index < self.pad:
            return "Y"
        raise IndexError(f"index {index} outside vocabulary")

    def local(self, index: int) -> int:
        return index if index < self.n_x else index - self.n_x

    def item_id(self, index: int) -> str:
        return self.x_items[index] if index < self.n_x else self.y_items[index - self.n_x]

    @classmethod
    def from_items(cls, x_ids: Iterable[str], y_ids: Iterable[str]) -> "Vocabulary":
        return cls(sorted(set(x_ids)), sorted(set(y_ids)))


@dataclass
class CrossDomainSequence:
    """One user's merged chronological sequence.

    ``order`` keeps the input-file position of every event; it is the
    tie-breaker for equal timestamps.
    """

    user_id: str
    items: list[int]
    domains: list[str]
    timestamps: list[int] = field(default_factory=list)
    order: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def view(self, domain: str, pad: int) -> list[int]:
        return [i if d == domain else pad for i, d in zip(self.items, self.domains)]

    def count(self, domain: str) -> int:
        return sum(d == domain for d in self.domains)

    @property
    def last_timestamp(self) -> int:
        return self.timestamps[-1] if self.timestamps else 0


@dataclass
class BuildReport:
    records_in: int = 0
    users_single_domain: int = 0
    users_below_min: int = 0
    items_below_min: int = 0
    records_after_filter: int = 0
    windows: int = 0
    truncated: int = 0
    dropped_short: int = 0
    sequences: int = 0


def build_sequences(
    records: list[InteractionRecord],
    window_seconds: int = 365 * SECONDS_PER_DAY,
    min_per_domain: int = 3,
    max_len: int = 30,
    min_interactions: int = 10,
) -> tuple[list[CrossDomainSequence], Vocabulary, BuildReport]:
    """Group each user's interactions into time windows and emit sequences.

    Filters run once, in this order: users present in only one domain,
    users with fewer than ``min_interactions`` events, then items with fewer
    than ``min_interactions`` events among the remaining records. A window
    opens at a user's first unassigned event and spans ``window_seconds``.
    Windows are truncated to their most recent ``max_len`` events before the
    per-domain minimum is checked, so retained sequences always satisfy it.
    """
    if max_len < 2 * min_per_domain:
        raise ValueError(f"max_len={max_len} cannot hold {min_per_domain} items per domain")
    report = BuildReport(records_in=len(records))
    indexed = list(enumerate(records))

    user_domains: dict[str, set] = defaultdict(set)
    for _, r in indexed:
        user_domains[r.user_id].add(r.domain)
    single = {u for u, ds in user_domains.items() if len(ds) < 2}
    report.users_single_domain = len(single)
    indexed = [(i, r) for i, r in indexed if r.user_id not in single]

    user_counts = Counter(r.user_id for _, r in indexed)
    sparse_users = {u for u, c in user_counts.items() if c < min_interactions}
    report.users_below_min = len(sparse_users)
    indexed = [(i, r) for i, r in indexed if r.user_id not in sparse_users]

    item_counts = Counter((r.item_id, r.domain) for _, r in indexed)
    sparse_items = {k for k, c in item_counts.items() if c < min_interactions}
    report.items_below_min = len(sparse_items)
    indexed = [(i, r) for i, r in indexed if (r.item_id, r.domain) not in sparse_items]
    report.records_after_filter = len(indexed)

    by_user: dict[str, list[tuple[int, InteractionRecord]]] = defaultdict(list)
    for i, r in indexed:
        by_user[r.user_id].append((i, r))

    raw_windows: list[tuple[str, list[tuple[int, InteractionRecord]]]] = []
    for user in sorted(by_user):
        events = sorted(by_user[user], key=lambda e: (e[1].timestamp, e[0]))
        current: list[tuple[int, InteractionRecord]] = []
        start = None
        for ev in events:
            if start is None or ev[1].timestamp >= start + window_seconds:
                if current:
                    raw_windows.append((user, current))
                current, start = [], ev[1].timestamp
            current.append(ev)
        if current:
            raw_windows.append((user, current))
    report.windows = len(raw_windows)

    kept = []
    for user, events in raw_windows:
        if len(events) > max_len:
            events = events[-max_len:]
            report.truncated += 1
        n_x = sum(r.domain == "X" for _, r in events)
        if n_x < min_per_domain or len(events) - n_x < min_per_domain:
            report.dropped_short += 1
            continue
        kept.append((user, events))

    vocab = Vocabulary.from_items(
        (r.item_id for _, ev in kept for _, r in ev if r.domain == "X"),
        (r.item_id for _, ev in kept for _, r in ev if r.domain == "Y"),
    )
    sequences = [
        CrossDomainSequence(
            user_id=user,
            items=[vocab.merged_index(r.item_id, r.domain) for _, r in ev],
            domains=[r.domain for _, r in ev],
            timestamps=[r.timestamp for _, r in ev],
            order=[i for i, _ in ev],
        )
        for user, ev in kept
    ]
    report.sequences = len(sequences)
    return sequences, vocab, report


def eval_split_of(user_id: str) -> str:
    """Deterministic valid/test assignment by parity of the user-id hash."""
    digest = hashlib.sha256(user_id.encode("utf-8")).digest()
    return "valid" if digest[-1] % 2 == 0 else "test"


@dataclass
class SplitReport:
    users: int = 0
    single_sequence_users: int = 0
    valid: int = 0
    test: int = 0


def temporal_split(
    sequences: list[CrossDomainSequence],
) -> tuple[list[CrossDomainSequence], list[CrossDomainSequence], list[CrossDomainSequence], SplitReport]:
    """Each user's latest sequence goes to valid or test; all earlier ones to
    train. Users with a single sequence contribute only training data."""
    by_user: dict[str, list[CrossDomainSequence]] = defaultdict(list)
    for s in sequences:
        by_user[s.user_id].append(s)
    train, valid, test = [], [], []
    report = SplitReport(users=len(by_user))
    for user in sorted(by_user):
        seqs = sorted(by_user[user], key=lambda s: (s.last_timestamp, s.order[-1] if s.order else 0))
        if len(seqs) == 1:
            report.single_sequence_users += 1
            train.extend(seqs)
            continue
        train.extend(seqs[:-1])
        if eval_split_of(user) == "valid":
            valid.append(seqs[-1])
        else:
            test.append(seqs[-1])
    report.valid, report.test = len(valid), len(test)
    return train, valid, test, report


@dataclass
class TransitionGraph:
    """Binary directed item-item transitions as unique edge arrays.

    ``edges_x`` / ``edges_y`` use domain-local indices, ``edges`` uses merged
    indices. Each array has shape (n_edges, 2), rows sorted.
    """

    n_x: int
    n_y: int
    edges_x: np.ndarray
    edges_y: np.ndarray
    edges: np.ndarray

    def dense(self, which: str) -> np.ndarray:
        n, edges = {
            "X": (self.n_x, self.edges_x),
            "Y": (self.n_y, self.edges_y),
            "merged": (self.n_x + self.n_y, self.edges),
        }[which]
        adj = np.zeros((n, n), dtype=np.float64)
        if len(edges):
            adj[edges[:, 0], edges[:, 1]] = 1.0
        return adj


def _unique_edges(pairs: set) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


def build_transition_graphs(train: list[CrossDomainSequence], vocab: Vocabulary) -> TransitionGraph:
    ex, ey, em = set(), set(), set()
    for s in train:
        em.update(zip(s.items, s.items[1:]))
        xs = [i for i, d in zip(s.items, s.domains) if d == "X"]
        ys = [i - vocab.n_x for i, d in zip(s.items, s.domains) if d == "Y"]
        ex.update(zip(xs, xs[1:]))
        ey.update(zip(ys, ys[1:]))
    return TransitionGraph(vocab.n_x, vocab.n_y, _unique_edges(ex), _unique_edges(ey), _unique_edges(em))


@dataclass
class PreparedCorpus:
    vocab: Vocabulary
    train: list[CrossDomainSequence]
    valid: list[CrossDomainSequence]
    test: list[CrossDomainSequence]
    graph: TransitionGraph
    stats: dict
    fingerprint: str = ""
    path: Path | None = None

    def split(self, name: str) -> list[CrossDomainSequence]:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def interacted(self) -> dict[str, set[int]]:
        """Merged item indices each user touched, over all splits."""
        seen: dict[str, set[int]] = defaultdict(set)
        for s in (*self.train, *self.valid, *self.test):
            seen[s.user_id].update(s.items)
        return seen

    @property
    def max_len(self) -> int:
        return int(self.stats.get("max_len", max((len(s) for s in self.train), default=1)))


def corpus_statistics(vocab, train, valid, test, max_len: int) -> dict:
    """Per-domain counts in the layout of the usual CDSR dataset table."""
    every = [*train, *valid, *test]
    avg = float(np.mean([len(s) for s in every])) if every else 0.0

    def by_last_domain(split):
        c = Counter(s.domains[-1] for s in split)
        return {d: c.get(d, 0) for d in DOMAINS}

    return {
        "items": {"X": vocab.n_x, "Y": vocab.n_y},
        "train": len(train),
        "valid": by_last_domain(valid),
        "test": by_last_domain(test),
        "avg_length": round(avg, 4),
        "max_len": max_len,
    }


def prepare_corpus(
    records: list[InteractionRecord],
    window_seconds: int = 365 * SECONDS_PER_DAY,
    max_len: int = 30,
    min_per_domain: int = 3,
    min_interactions: int = 10,
) -> tuple[PreparedCorpus, dict]:
    sequences, vocab, build_report = build_sequences(
        records, window_seconds, min_per_domain, max_len, min_interactions
    )
    train, valid, test, split_report = temporal_split(sequences)
    graph = build_transition_graphs(train, vocab)
    stats = corpus_statistics(vocab, train, valid, test, max_len)
    reports = {"build": asdict(build_report), "split": asdict(split_report)}
    return PreparedCorpus(vocab, train, valid, test, graph, stats), reports


# -- prepared corpus directory ------------------------------------------------

_SPLITS = ("train", "valid", "test")
_GRAPH_FILES = {"X": "graph_x.tsv", "Y": "graph_y.tsv", "merged": "graph_merged.tsv"}


def _format_sequence(s: CrossDomainSequence) -> str:
    tokens = " ".join(f"{i}:{d}" for i, d in zip(s.items, s.domains))
    times = " ".join(str(t) for t in s.timestamps)
    return f"{s.user_id}\t{tokens}\t{times}\n"


def _parse_sequence(line: str, vocab: Vocabulary, where: str) -> CrossDomainSequence:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 2:
        raise CorpusError(f"{where}: expected user<TAB>tokens")
    items, domains = [], []
    for tok in parts[1].split():
        idx, _, dom = tok.partition(":")
        idx = int(idx)
        if vocab.domain_of(idx) != dom:
            raise CorpusError(f"{where}: token {tok} disagrees with vocabulary")
        items.append(idx)
        domains.append(dom)
    times = [int(t) for t in parts[2].split()] if len(parts) > 2 and parts[2] else []
    return CrossDomainSequence(parts[0], items, domains, times, list(range(len(items))))


def _fingerprint(directory: Path) -> str:
    h = hashlib.sha256()
    names = ["vocab.tsv", *(f"{s}.txt" for s in _SPLITS), *_GRAPH_FILES.values()]
    for name in names:
        h.update(name.encode())
        h.update((directory / name).read_bytes())
    return h.hexdigest()


def save_prepared(corpus: PreparedCorpus, directory, extra_meta: dict | None = None) -> str:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vocab = corpus.vocab
    with open(directory / "vocab.tsv", "w", encoding="utf-8") as fh:
        for idx in range(vocab.size):
            fh.write(f"{idx}\t{vocab.domain_of(idx)}\t{vocab.item_id(idx)}\n")
    for name in _SPLITS:
        with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
            fh.writelines(_format_sequence(s) for s in corpus.split(name))
    g = corpus.graph
    for which, edges in (("X", g.edges_x), ("Y", g.edges_y), ("merged", g.edges)):
        with open(directory / _GRAPH_FILES[which], "w", encoding="utf-8") as fh:
            fh.writelines(f"{a}\t{b}\n" for a, b in edges)
    (directory / "stats.json").write_text(json.dumps(corpus.stats, indent=2) + "\n")
    fingerprint = _fingerprint(directory)
    meta = {"format_version": CORPUS_FORMAT_VERSION, "fingerprint": fingerprint, **(extra_meta or {})}
    (directory / "corpus.json").write_text(json.dumps(meta, indent=2) + "\n")
    corpus.fingerprint, corpus.path = fingerprint, directory
    return fingerprint


def load_prepared(directory) -> PreparedCorpus:
    directory = Path(directory)
    meta_path = directory / "corpus.json"
    if not meta_path.exists():
        raise CorpusError(f"{directory} is not a prepared corpus (missing corpus.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != CORPUS_FORMAT_VERSION:
        raise CorpusError(
            f"{directory}: corpus format version {meta.get('format_version')} "
            f"!= supported {CORPUS_FORMAT_VERSION}"
        )
    x_items, y_items = [], []
    for lineno, line in enumerate((directory / "vocab.tsv").read_text(encoding="utf-8").splitlines()):
        idx, dom, item = line.split("\t", 2)
        if int(idx) != lineno:
            raise CorpusError(f"vocab.tsv:{lineno + 1}: indices must be contiguous")
        (x_items if dom == "X" else y_items).append(item)
    vocab = Vocabulary(x_items, y_items)
    splits = {}
    for name in _SPLITS:
        lines = (directory / f"{name}.txt").read_text(encoding="utf-8").splitlines()
        splits[name] = [_parse_sequence(l, vocab, f"{name}.txt:{i + 1}") for i, l in enumerate(lines) if l]
    edges = {}
    for which, fname in _GRAPH_FILES.items():
        rows = [tuple(map(int, l.split("\t"))) for l in (directory / fname).read_text().splitlines() if l]
        edges[which] = np.array(rows, dtype=np.int64).reshape(-1, 2)
    graph = TransitionGraph(vocab.n_x, vocab.n_y, edges["X"], edges["Y"], edges["merged"])
    stats = json.loads((directory / "stats.json").read_text())
    fingerprint = _fingerprint(directory)
    if meta.get("fingerprint") and meta["fingerprint"] != fingerprint:
        raise CorpusError(f"{directory}: content hash does not match corpus.json (files edited?)")
    return PreparedCorpus(vocab, splits["train"], splits["valid"], splits["test"], graph, stats, fingerprint, directory)
