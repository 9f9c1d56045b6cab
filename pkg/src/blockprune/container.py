"""Single-file container for models, stats and scores.

Layout, all little-endian:

  "BIP1" | u32 version | u32 header_len | header (UTF-8 JSON) | payload

The header carries the kind, the model config / per-block widths, and a
named-tensor directory {name: {offset, size, shape}} with offsets
relative to the payload start. The payload is a concatenation of tensor
records, one per directory entry, in sorted-name order:

  "BTN1" | u32 rank | rank x u64 dims | f32 values, row-major

Written bytes are canonical (sorted JSON keys, sorted tensor names), so
write -> read -> write round-trips byte-identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .calib import ActivationStats
from .model import BlockWeights, Model, ModelConfig
from .score import ImportanceScores
from .tensor import DTYPE

MAGIC = b"BIP1"
VERSION = 1
TENSOR_MAGIC = b"BTN1"


class ContainerError(ValueError):
    """Malformed container: bad magic, version, or directory."""


def tensor_record_bytes(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype=DTYPE)
    parts = [TENSOR_MAGIC, struct.pack("<I", a.ndim)]
    for dim in a.shape:
        parts.append(struct.pack("<Q", dim))
    parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def parse_tensor_record(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Returns (array, record_size). Validates magic and length."""
    if buf[offset:offset + 4] != TENSOR_MAGIC:
        raise ContainerError(f"bad tensor magic at offset {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    if rank > 8:
        raise ContainerError(f"implausible tensor rank {rank}")
    dims = struct.unpack_from(f"<{rank}Q", buf, offset + 8)
    n = 1
    for dim in dims:
        n *= dim
    data_start = offset + 8 + 8 * rank
    data_end = data_start + 4 * n
    if data_end > len(buf):
        raise ContainerError("tensor record runs past end of buffer")
    arr = np.frombuffer(buf[data_start:data_end], dtype="<f4").reshape(dims).astype(DTYPE)
    return arr, data_end - offset


def write_container(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """header must not contain a 'tensors' key; the directory is added here."""
    records = {}
    offset = 0
    directory = {}
    for name in sorted(tensors):
        rec = tensor_record_bytes(tensors[name])
        records[name] = rec
        directory[name] = {
            "offset": offset,
            "size": len(rec),
            "shape": list(np.asarray(tensors[name]).shape),
        }
        offset += len(rec)
    full_header = dict(header)
    full_header["tensors"] = directory
    header_bytes = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header_bytes)))
        f.write(header_bytes)
        for name in sorted(records):
            f.write(records[name])


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"bad container magic in {path}")
    if len(blob) < 12:
        raise ContainerError(f"truncated container {path}")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if 12 + header_len > len(blob):
        raise ContainerError("header length exceeds file size")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"unparseable container header: {e}") from e
    payload = blob[12 + header_len:]
    tensors = {}
    for name, entry in header.get("tensors", {}).items():
        off, size = entry["offset"], entry["size"]
        if off < 0 or off + size > len(payload):
            raise ContainerError(f"tensor {name!r} directory entry out of bounds")
        arr, real_size = parse_tensor_record(payload, off)
        if real_size != size:
            raise ContainerError(f"tensor {name!r} size mismatch: directory {size}, record {real_size}")
        expect = tuple(entry.get("shape", arr.shape))
        if tuple(arr.shape) != expect:
            raise ContainerError(f"tensor {name!r} shape mismatch: directory {expect}, record {arr.shape}")
        tensors[name] = arr
    return header, tensors


# ---------------------------------------------------------------------------
# model / stats / scores adapters

def _config_header(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def _config_from_header(h: dict) -> ModelConfig:
    cfg = ModelConfig(**h)
    cfg.validate()
    return cfg


def save_model(path, model: Model) -> None:
    tensors = {"embedding": model.embedding, "pos": model.pos, "lm_head": model.lm_head}
    widths = []
    for l, w in enumerate(model.blocks):
        widths.append({"n_heads": w.n_heads(model.config.head_dim), "ffn_hidden": w.ffn_hidden})
        tensors[f"block{l}/wq"] = w.wq
        tensors[f"block{l}/wk"] = w.wk
        tensors[f"block{l}/wv"] = w.wv
        tensors[f"block{l}/wo"] = w.wo
        tensors[f"block{l}/wu"] = w.wu
        tensors[f"block{l}/wd"] = w.wd
        if w.wg is not None:
            tensors[f"block{l}/wg"] = w.wg
    header = {"kind": "model", "config": _config_header(model.config), "blocks": widths}
    write_container(path, header, tensors)


def load_model(path) -> Model:
    header, tensors = read_container(path)
    if header.get("kind") != "model":
        raise ContainerError(f"expected a model container, got kind={header.get('kind')!r}")
    cfg = _config_from_header(header["config"])
    blocks = []
    for l in range(cfg.n_blocks):
        def take(part, l=l):
            key = f"block{l}/{part}"
            if key not in tensors:
                raise ContainerError(f"missing tensor {key!r}")
            return tensors[key]
        wg = tensors.get(f"block{l}/wg") if cfg.gated else None
        if cfg.gated and wg is None:
            raise ContainerError(f"gated config but block {l} has no wg tensor")
        blocks.append(BlockWeights(wq=take("wq"), wk=take("wk"), wv=take("wv"),
                                   wo=take("wo"), wu=take("wu"), wd=take("wd"), wg=wg))
    for key in ("embedding", "pos", "lm_head"):
        if key not in tensors:
            raise ContainerError(f"missing tensor {key!r}")
    return Model(config=cfg, embedding=tensors["embedding"], pos=tensors["pos"],
                 blocks=blocks, lm_head=tensors["lm_head"])


def save_stats(path, stats: ActivationStats) -> None:
    tensors = {}
    for l, (xh, xu) in enumerate(zip(stats.mean_abs_xh, stats.mean_abs_xu)):
        tensors[f"stats/block{l}/xh"] = xh
        tensors[f"stats/block{l}/xu"] = xu
    header = {"kind": "stats", "token_count": stats.token_count,
              "n_blocks": len(stats.mean_abs_xh)}
    write_container(path, header, tensors)


def load_stats(path) -> ActivationStats:
    header, tensors = read_container(path)
    if header.get("kind") != "stats":
        raise ContainerError(f"expected a stats container, got kind={header.get('kind')!r}")
    n = header["n_blocks"]
    return ActivationStats(
        mean_abs_xh=[tensors[f"stats/block{l}/xh"] for l in range(n)],
        mean_abs_xu=[tensors[f"stats/block{l}/xu"] for l in range(n)],
        token_count=header["token_count"],
    )


def save_scores(path, scores: ImportanceScores) -> None:
    tensors = {}
    for l in range(len(scores.ffn)):
        tensors[f"scores/{scores.method}/block{l}/ffn"] = scores.ffn[l]
        tensors[f"scores/{scores.method}/block{l}/msa"] = scores.msa_channels[l]
        tensors[f"scores/{scores.method}/block{l}/heads"] = scores.heads[l]
    header = {"kind": "scores", "method": scores.method, "n_blocks": len(scores.ffn)}
    write_container(path, header, tensors)


def load_scores(path) -> ImportanceScores:
    header, tensors = read_container(path)
    if header.get("kind") != "scores":
        raise ContainerError(f"expected a scores container, got kind={header.get('kind')!r}")
    method = header["method"]
    n = header["n_blocks"]
    return ImportanceScores(
        method=method,
        ffn=[tensors[f"scores/{method}/block{l}/ffn"] for l in range(n)],
        msa_channels=[tensors[f"scores/{method}/block{l}/msa"] for l in range(n)],
        heads=[tensors[f"scores/{method}/block{l}/heads"] for l in range(n)],
    )
