"""Binary checkpoint container for model parameters, config and vocabularies.

Layout::

    b"QRTCKPT\\n"  | u32 version | u64 header length | JSON header | float32 LE arrays | sha256

The header is canonical JSON (sorted keys) so identical content always
serialises to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from quartet.models import DualStreamTransformer, Seq2SeqTransformer, config_from_dict, init_params

MAGIC = b"QRTCKPT\n"
VERSION = 1
_PREFIX = struct.Struct("<IQ")
_DIGEST = 32


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class KindMismatchError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: dict[str, np.ndarray]
    vocab: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def build_model(self):
        cfg = config_from_dict(self.kind, self.config)
        model = init_params(cfg, 0)
        named = model.params()
        if set(named) != set(self.params):
            missing = sorted(set(named) ^ set(self.params))
            raise CheckpointError(f"parameter names do not match the config: {missing[:5]}")
        for name, t in named.items():
            arr = self.params[name]
            if arr.shape != t.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} vs model {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
        return model


def from_model(model, vocab: dict | None = None, meta: dict | None = None) -> Checkpoint:
    params = {k: np.array(t.data, dtype="<f4", copy=True) for k, t in model.params().items()}
    return Checkpoint(model.cfg.kind, model.cfg.to_dict(), params, dict(vocab or {}), dict(meta or {}))


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"kind": ckpt.kind, "config": ckpt.config, "vocab": ckpt.vocab, "meta": ckpt.meta, "params": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + _PREFIX.pack(VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def from_bytes(data: bytes, expect_kind: str | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + _PREFIX.size + _DIGEST or not data.startswith(MAGIC):
        raise CorruptCheckpointError("not a checkpoint file (bad magic or too short)")
    version, hlen = _PREFIX.unpack_from(data, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads version {VERSION}")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("content hash mismatch (file truncated or modified)")
    start = len(MAGIC) + _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable header: {exc}") from None
    if expect_kind is not None and header["kind"] != expect_kind:
        raise KindMismatchError(f"expected a {expect_kind} checkpoint, file holds {header['kind']}")
    base = start + hlen
    params = {}
    for e in header["params"]:
        lo = base + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(body):
            raise CorruptCheckpointError(f"array {e['name']} runs past the end of the file")
        params[e["name"]] = np.frombuffer(body[lo:hi], dtype="<f4").reshape(e["shape"]).copy()
    return Checkpoint(header["kind"], header["config"], params, header["vocab"], header["meta"])


def save_checkpoint(path, ckpt: Checkpoint | DualStreamTransformer | Seq2SeqTransformer, **kw) -> Path:
    if not isinstance(ckpt, Checkpoint):
        ckpt = from_model(ckpt, **kw)
    path = Path(path)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expect_kind)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
