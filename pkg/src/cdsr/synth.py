"""Synthetic two-domain interaction logs with a planted cross-domain signal.

Every position picks its item in one of three ways. At a cross-domain
transition (previous item from the other domain), with probability
``cross_strength`` the item is the image of that previous item under a
fixed random permutation. Otherwise it follows a per-domain Markov chain:
with probability ``1 - noise`` the fixed successor of the latest same-domain
item, else a uniform (optionally Zipf-skewed) draw.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .config import read_kv_file
from .corpus import SECONDS_PER_DAY, InteractionRecord, write_interactions


class SynthSpecError(ValueError):
    pass


@dataclass
class SynthSpec:
    users: int = 200
    items_per_domain: int = 200
    min_len: int = 8
    max_len: int = 16
    sequences_per_user: int = 4
    cross_strength: float = 0.8
    noise: float = 0.3
    zipf: float = 0.0
    window_days: int = 365
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if not 0.0 <= self.cross_strength <= 1.0:
            raise SynthSpecError(f"cross_strength must lie in [0, 1], got {self.cross_strength}")
        if not 0.0 <= self.noise <= 1.0:
            raise SynthSpecError(f"noise must lie in [0, 1], got {self.noise}")
        if self.min_len < 6 or self.max_len < self.min_len:
            raise SynthSpecError(f"need 6 <= min_len <= max_len, got {self.min_len}..{self.max_len}")
        if self.users < 1 or self.items_per_domain < 1 or self.sequences_per_user < 1:
            raise SynthSpecError("users, items_per_domain and sequences_per_user must be positive")
        return self

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        values = read_kv_file(path)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise SynthSpecError(f"unknown synth keys {sorted(unknown)}")
        return cls(**values).validate()


@dataclass
class SynthCorpus:
    records: list[InteractionRecord]
    # cross_map["X"][y] is the X item planted after Y item y; cross_map["Y"] likewise
    cross_map: dict[str, np.ndarray]
    successor: dict[str, np.ndarray]
    cross_transitions: int = 0
    planted: int = 0
    sequences: list[list[tuple[str, int]]] = field(default_factory=list)

    def write(self, path) -> None:
        write_interactions(self.records, path)


def item_name(domain: str, index: int) -> str:
    return f"{domain.lower()}{index:05d}"


def generate(spec: SynthSpec) -> SynthCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.items_per_domain
    cross_map = {"X": rng.permutation(n), "Y": rng.permutation(n)}
    successor = {"X": rng.permutation(n), "Y": rng.permutation(n)}
    if spec.zipf > 0:
        w = 1.0 / np.arange(1, n + 1) ** spec.zipf
        popularity = w / w.sum()
    else:
        popularity = None

    def draw():
        return int(rng.choice(n, p=popularity)) if popularity is not None else int(rng.integers(n))

    gap = (spec.window_days + 30) * SECONDS_PER_DAY
    step = 3600
    records, sequences = [], []
    crosses = planted = 0
    for u in range(spec.users):
        user = f"u{u:05d}"
        for k in range(spec.sequences_per_user):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            n_x = int(rng.integers(3, length - 3 + 1))
            domains = np.array(["X"] * n_x + ["Y"] * (length - n_x))
            rng.shuffle(domains)
            last = {"X": None, "Y": None}
            seq = []
            for t, dom in enumerate(domains):
                dom = str(dom)
                prev = seq[-1] if seq else None
                item = None
                if prev is not None and prev[0] != dom:
                    crosses += 1
                    if rng.random() < spec.cross_strength:
                        item = int(cross_map[dom][prev[1]])
                        planted += 1
                if item is None:
                    if last[dom] is not None and rng.random() >= spec.noise:
                        item = int(successor[dom][last[dom]])
                    else:
                        item = draw()
                seq.append((dom, item))
                last[dom] = item
            start = k * gap + int(rng.integers(0, 30 * SECONDS_PER_DAY))
            for t, (dom, item) in enumerate(seq):
                records.append(InteractionRecord(user, item_name(dom, item), dom, start + t * step))
            sequences.append(seq)
    return SynthCorpus(records, cross_map, successor, crosses, planted, sequences)
