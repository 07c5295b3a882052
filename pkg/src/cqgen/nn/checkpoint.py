"""Versioned checkpoint container: named float64 tensors + JSON metadata.

Stored as an .npz archive with the metadata under the reserved key
``__meta__``. Round-trips are bit-exact, which the determinism and
reduction-invariant tests rely on.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(RuntimeError):
    pass


def params_digest(state: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], meta: dict) -> None:
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    meta["params_digest"] = params_digest(state)
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in state.items()}
    if _META_KEY in arrays:
        raise CheckpointError(f"parameter name {_META_KEY!r} is reserved")
    arrays[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        if _META_KEY not in z:
            raise CheckpointError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(bytes(z[_META_KEY]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
        state = {k: z[k] for k in z.files if k != _META_KEY}
    if params_digest(state) != meta["params_digest"]:
        raise CheckpointError(f"{path}: parameter digest mismatch (corrupt checkpoint)")
    return state, meta


def load_text_embeddings(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    """Read 'word v1 ... v_d' lines; rows with the wrong arity are rejected."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise CheckpointError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}")
            table[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
    return table


def apply_pretrained_embeddings(emb: np.ndarray, vocab_tokens: list[str],
                                table: dict[str, np.ndarray]) -> int:
    """Overwrite embedding rows for covered tokens in place; returns coverage."""
    hits = 0
    for i, tok in enumerate(vocab_tokens):
        vec = table.get(tok)
        if vec is not None:
            if vec.shape[0] != emb.shape[1]:
                raise CheckpointError(f"embedding dim mismatch for {tok!r}: {vec.shape[0]} vs {emb.shape[1]}")
            emb[i] = vec
            hits += 1
    return hits
