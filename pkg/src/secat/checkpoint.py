"""Checkpoint container: model config + lexicon + named float32 tensors.

Layout:

    magic "SECATCKP" | u8 version=1
    u32 config_len | config_len bytes UTF-8 JSON
    repeated until EOF:
        u32 name_len | name bytes | u8 rank | rank * u32 dims |
        prod(dims) float32 values (little endian)
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, LengthError
from .lexicon import Lexicon
from .model import TinyVLMConfig

MAGIC = b"SECATCKP"
VERSION = 1


def save_checkpoint(path, params: dict, config: TinyVLMConfig, lex: Lexicon, meta: dict | None = None) -> None:
    blob = {
        "model": config.to_dict(),
        "lexicon": {"words": list(lex.words), "dynamic_slots": lex.dynamic_slots},
        "meta": meta or {},
    }
    cfg_bytes = json.dumps(blob, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, TinyVLMConfig, Lexicon, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:len(MAGIC)]!r}")
    off = len(MAGIC)
    version = blob[off]
    off += 1
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    cfg = json.loads(blob[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    params: dict[str, np.ndarray] = {}
    while off < len(blob):
        if off + 4 > len(blob):
            raise LengthError("truncated tensor header")
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        rank = blob[off]
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        nbytes = count * 4
        if off + nbytes > len(blob):
            raise LengthError(f"truncated tensor payload for {name!r}")
        params[name] = (
            np.frombuffer(blob[off : off + nbytes], dtype="<f4").reshape(dims).copy()
        )
        off += nbytes
    config = TinyVLMConfig(**cfg["model"])
    lex = Lexicon(list(cfg["lexicon"]["words"]), dynamic_slots=cfg["lexicon"]["dynamic_slots"])
    return params, config, lex, cfg.get("meta", {})
