"""Versioned, checksummed checkpoint container.

Layout: 8-byte magic, uint32 format version, uint64 payload length,
32-byte SHA-256 of the payload, then the payload (a ``torch.save`` dict).
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import torch

MAGIC = b"CDSRCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict
    state: dict
    epoch: int
    n_x: int
    n_y: int
    max_len: int
    best_valid_mrr: float | None = None
    rng_state: dict = field(default_factory=dict)
    corpus_fingerprint: str = ""
    corpus_path: str = ""
    diverged: bool = False
    format_version: int = FORMAT_VERSION

    def to_payload(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    buf = io.BytesIO()
    torch.save(ckpt.to_payload(), buf)
    payload = buf.getvalue()
    header = _HEADER.pack(MAGIC, ckpt.format_version, len(payload), hashlib.sha256(payload).digest())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header, {len(blob)} bytes present, {_HEADER.size} needed")
    magic, version, length, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0 ({magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    payload = blob[_HEADER.size :]
    if len(payload) != length:
        raise CheckpointError(
            f"{path}: payload at offset {_HEADER.size} should be {length} bytes, found {len(payload)}"
        )
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch over bytes {_HEADER.size}..{_HEADER.size + length}")
    try:
        fields = torch.load(io.BytesIO(payload), weights_only=True)
    except Exception as exc:  # torch raises a zoo of unpickling errors
        raise CheckpointError(f"{path}: cannot decode payload: {exc}") from exc
    return Checkpoint(**fields)
