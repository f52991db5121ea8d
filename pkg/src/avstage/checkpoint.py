"""Checkpoint persistence with stage lineage.

Binary layout (all little-endian):

    magic "AVSG" | u32 version | u32 meta_len | meta JSON (utf-8)
    | u32 n_tensors | tensor records

Tensor record: u16 path_len | path utf-8 | u8 trainable | u8 rank
| u32 dims[rank] | u32 crc32(payload) | float32 payload.

The metadata JSON carries the stage tag, the upstream checkpoint digest
(empty for a stage-"none" root), and free-form run metadata (objective,
language pair, model configuration, mode flags). A checkpoint's digest is
the sha256 of its file bytes; children record it, so every trained model
resolves through a digest chain back to its random initialization.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"AVSG"
VERSION = 1

STAGES = ("none", "pretrain", "midtrain", "finetune")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    stage: str
    params: dict[str, np.ndarray]
    trainable: dict[str, bool]
    meta: dict = field(default_factory=dict)
    upstream_digest: str = ""
    digest: str = ""  # sha256 of the serialized file, set by save/load

    def __post_init__(self):
        if self.stage not in STAGES:
            raise CheckpointError(f"unknown stage {self.stage!r}; expected one of {STAGES}")

    @property
    def objective(self) -> str:
        return self.meta.get("objective", "")

    @property
    def pair_tag(self) -> str:
        return self.meta.get("pair", "")


def checkpoint_from_tree(tree, stage: str, meta: dict | None = None,
                         upstream_digest: str = "") -> Checkpoint:
    return Checkpoint(
        stage=stage,
        params={p: np.ascontiguousarray(t.data, dtype="<f4") for p, t in tree.items()},
        trainable={p: tree.is_trainable(p) for p, _ in tree.items()},
        meta=dict(meta or {}),
        upstream_digest=upstream_digest,
    )


def _serialize(ckpt: Checkpoint) -> bytes:
    head = {
        "stage": ckpt.stage,
        "upstream_digest": ckpt.upstream_digest,
        "meta": ckpt.meta,
    }
    meta_bytes = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    paths = sorted(ckpt.params)
    out.append(struct.pack("<I", len(paths)))
    for path in paths:
        arr = np.ascontiguousarray(ckpt.params[path], dtype="<f4")
        payload = arr.tobytes()
        pb = path.encode("utf-8")
        out.append(struct.pack("<H", len(pb)))
        out.append(pb)
        out.append(struct.pack("<BB", int(ckpt.trainable.get(path, True)), arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
        out.append(payload)
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write the checkpoint; returns (and stores) its digest."""
    blob = _serialize(ckpt)
    with open(path, "wb") as fh:
        fh.write(blob)
    ckpt.digest = hashlib.sha256(blob).hexdigest()
    return ckpt.digest


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an AVSG checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} (expected {VERSION})")
    (meta_len,) = struct.unpack("<I", blob[8:12])
    pos = 12
    head = json.loads(blob[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_tensors,) = struct.unpack("<I", blob[pos : pos + 4])
    pos += 4
    params: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for _ in range(n_tensors):
        (path_len,) = struct.unpack("<H", blob[pos : pos + 2])
        pos += 2
        tpath = blob[pos : pos + path_len].decode("utf-8")
        pos += path_len
        train_flag, rank = struct.unpack("<BB", blob[pos : pos + 2])
        pos += 2
        dims = struct.unpack(f"<{rank}I", blob[pos : pos + 4 * rank])
        pos += 4 * rank
        (crc,) = struct.unpack("<I", blob[pos : pos + 4])
        pos += 4
        count = int(np.prod(dims)) if rank else 1
        payload = blob[pos : pos + 4 * count]
        pos += 4 * count
        if len(payload) < 4 * count:
            raise CheckpointError(f"{path}: truncated payload for tensor {tpath!r}")
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise CheckpointError(f"{path}: checksum mismatch for tensor {tpath!r}")
        params[tpath] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        trainable[tpath] = bool(train_flag)
    ckpt = Checkpoint(
        stage=head["stage"],
        params=params,
        trainable=trainable,
        meta=head.get("meta", {}),
        upstream_digest=head.get("upstream_digest", ""),
    )
    ckpt.digest = hashlib.sha256(blob).hexdigest()
    return ckpt


def checkpoints_equal(a: Checkpoint, b: Checkpoint) -> bool:
    """Bitwise equality of stage, lineage, metadata, and every tensor."""
    if (a.stage, a.upstream_digest, a.meta) != (b.stage, b.upstream_digest, b.meta):
        return False
    if sorted(a.params) != sorted(b.params):
        return False
    return all(
        a.trainable[p] == b.trainable[p]
        and a.params[p].shape == b.params[p].shape
        and a.params[p].tobytes() == b.params[p].tobytes()
        for p in a.params
    )
