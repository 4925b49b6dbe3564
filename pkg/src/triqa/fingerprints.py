"""Content fingerprints used for reproducibility and stage hygiene.

Artifacts record the fingerprints of their inputs; downstream stages refuse
inputs whose recomputed fingerprint disagrees. Files are hashed by their
bytes. In-memory objects are hashed over their canonical serialization, which
matches the file hash because writers emit exactly that serialization
(checkpoints are the exception: torch serialization is not canonicalized, so
they are fingerprinted over their parameter bytes and metadata instead).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def manifest_fingerprint(manifest) -> str:
    """Hash of the canonical JSON-Lines serialization (equals the file hash)."""
    from .triplets import manifest_to_bytes

    return sha256_bytes(manifest_to_bytes(manifest))


def checkpoint_fingerprint(ckpt) -> str:
    """Hash over config, step, manifest fingerprint, and raw parameter bytes."""
    from dataclasses import asdict

    h = hashlib.sha256()
    meta = {
        "config": asdict(ckpt.config),
        "step": ckpt.step,
        "manifest_fingerprint": ckpt.manifest_fingerprint,
    }
    h.update(json.dumps(meta, sort_keys=True, default=str).encode())
    for key in sorted(ckpt.state_dict):
        tensor = ckpt.state_dict[key].detach().cpu().contiguous()
        h.update(key.encode())
        h.update(str(tuple(tensor.shape)).encode())
        h.update(str(tensor.dtype).encode())
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def corpus_fingerprint(images_dir: str | os.PathLike) -> str:
    """Hash of (id, file hash) pairs for every image in a corpus directory."""
    from .images import list_corpus

    h = hashlib.sha256()
    for image_id, path in list_corpus(Path(images_dir)):
        h.update(image_id.encode())
        h.update(sha256_file(path).encode())
    return h.hexdigest()
