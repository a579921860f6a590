"""Self-describing checkpoint container with bit-exact tensor round-trips.

Layout:

    magic    4 bytes  b"FZLM"
    version  u16 LE
    hdr_len  u32 LE
    header   JSON (spec, vocabulary, epoch, metrics, tensor manifest)
    tensors  raw C-order bytes, in manifest order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..corpus import SymbolVocabulary
from ..errors import CheckpointFormatError, UnsupportedVersionError
from .params import CellParams, GATES, ModelParams, ModelSpec
from .training import Checkpoint, EvalMetrics

MAGIC = b"FZLM"
VERSION = 1


def _empty_params(spec: ModelSpec, dtype) -> ModelParams:
    u = spec.units
    cells = [
        [
            CellParams(
                wx=np.empty((spec.input_dim(layer), GATES * u), dtype=dtype),
                wh=np.empty((u, GATES * u), dtype=dtype),
                b=np.empty(GATES * u, dtype=dtype),
            )
            for _ in range(spec.directions)
        ]
        for layer in range(spec.layers)
    ]
    return ModelParams(
        spec=spec,
        cells=cells,
        wv=np.empty((u, spec.vocab_size), dtype=dtype),
        c=np.empty(spec.vocab_size, dtype=dtype),
    )


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    path = Path(path)
    named = checkpoint.params.named_tensors()
    header = {
        "spec": checkpoint.spec.to_dict(),
        "vocabulary": list(checkpoint.vocabulary.symbols),
        "epoch": checkpoint.epoch,
        "metrics": {
            "accuracy": checkpoint.metrics.accuracy,
            "error": checkpoint.metrics.error,
            "perplexity": checkpoint.metrics.perplexity,
        },
        "tensors": [
            {"name": name, "shape": list(t.shape), "dtype": str(t.dtype)}
            for name, t in named
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t).tobytes())
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    version, hdr_len = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: container version {version}, this build reads {VERSION}"
        )
    body = 10 + hdr_len
    if len(raw) < body:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[10:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header: {exc}") from exc

    spec = ModelSpec.from_dict(header["spec"])
    manifest = header["tensors"]
    dtype = np.dtype(manifest[0]["dtype"]) if manifest else np.float32
    params = _empty_params(spec, dtype)
    named = params.named_tensors()
    if [n for n, _ in named] != [m["name"] for m in manifest]:
        raise CheckpointFormatError(f"{path}: tensor manifest does not match spec")
    offset = body
    for (name, target), meta in zip(named, manifest):
        shape = tuple(meta["shape"])
        t_dtype = np.dtype(meta["dtype"])
        nbytes = int(np.prod(shape)) * t_dtype.itemsize
        if tuple(target.shape) != shape:
            raise CheckpointFormatError(f"{path}: tensor {name} has shape {shape}")
        if offset + nbytes > len(raw):
            raise CheckpointFormatError(f"{path}: truncated tensor data at {name}")
        target[...] = np.frombuffer(raw[offset : offset + nbytes], dtype=t_dtype).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: trailing bytes after tensor data")

    metrics = EvalMetrics(**header["metrics"])
    return Checkpoint(
        spec=spec,
        params=params,
        vocabulary=SymbolVocabulary(header["vocabulary"]),
        epoch=header["epoch"],
        metrics=metrics,
    )
