"""Binary checkpoint format.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header
(format version, graph name, graph topology, ordered parameter names and
shapes, free-form metadata), then each parameter's values as little-endian
float32 in row-major order, in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

from dnbp.errors import DataError

MAGIC = b"DNBPCKPT"
FORMAT_VERSION = 1


def encode_checkpoint(graph_name: str, params: Mapping[str, torch.Tensor],
                      meta: Mapping[str, Any] | None = None) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "graph": graph_name,
        "params": [[name, list(t.shape)] for name, t in params.items()],
        "meta": dict(meta or {}),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    chunks = [MAGIC, struct.pack("<I", len(head)), head]
    for t in params.values():
        chunks.append(t.detach().cpu().contiguous().numpy().astype("<f4", copy=False).tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[dict, dict[str, torch.Tensor]]:
    if blob[:8] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    if len(blob) < 12:
        raise DataError("checkpoint truncated inside the header length")
    (n,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + n:
        raise DataError("checkpoint truncated inside the header")
    try:
        header = json.loads(blob[12:12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
    offset = 12 + n
    params: dict[str, torch.Tensor] = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise DataError(f"checkpoint truncated while reading {name}")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape)
        params[name] = torch.from_numpy(arr.astype(np.float32))
        offset = end
    if offset != len(blob):
        raise DataError("trailing bytes after last parameter")
    return header, params


def save_checkpoint(path: str | Path, graph_name: str, params: Mapping[str, torch.Tensor],
                    meta: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(graph_name, params, meta))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"checkpoint not found: {p}")
    return decode_checkpoint(p.read_bytes())
