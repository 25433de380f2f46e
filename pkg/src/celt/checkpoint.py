"""Versioned checkpoints: a JSON manifest plus a flat little-endian float32 blob.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``.
Tensors are concatenated in manifest index order.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ModelParameters, init_parameters

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BINARY_NAME = "params.bin"
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointSizeError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class CheckpointManifest:
    config: dict
    lineage: dict
    vocab_hash: str
    tensors: list = field(default_factory=list)
    binary_sha256: str = ""
    created: float = 0.0
    format_version: int = FORMAT_VERSION
    labels: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "created": self.created,
            "lineage": self.lineage,
            "config": self.config,
            "vocab_hash": self.vocab_hash,
            "labels": self.labels,
            "binary_sha256": self.binary_sha256,
            "tensors": self.tensors,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CheckpointManifest":
        return cls(
            config=raw["config"],
            lineage=raw["lineage"],
            vocab_hash=raw["vocab_hash"],
            tensors=raw["tensors"],
            binary_sha256=raw["binary_sha256"],
            created=raw.get("created", 0.0),
            format_version=raw["format_version"],
            labels=raw.get("labels"),
            extra=raw.get("extra", {}),
        )

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config)


def save_checkpoint(params: ModelParameters, manifest: CheckpointManifest, path) -> Path:
    """Write ``params`` under directory ``path``; fills the manifest's tensor
    index, binary hash and (if unset) creation time.

    Raises:
        OSError: the directory cannot be created or written.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name, tensor in params.items():
        data = np.ascontiguousarray(tensor.data, dtype=_DTYPE)
        index.append({"name": name, "offset": offset, "shape": list(data.shape), "dtype": "float32"})
        chunks.append(data.tobytes())
        offset += data.size
    blob = b"".join(chunks)
    manifest.tensors = index
    manifest.binary_sha256 = hashlib.sha256(blob).hexdigest()
    if not manifest.created:
        manifest.created = time.time()
    (path / BINARY_NAME).write_bytes(blob)
    (path / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=1) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> CheckpointManifest:
    raw = json.loads((Path(path) / MANIFEST_NAME).read_text(encoding="utf-8"))
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format_version {version!r}; this reader supports {FORMAT_VERSION}")
    try:
        return CheckpointManifest.from_dict(raw)
    except KeyError as exc:
        raise CheckpointError(f"manifest lacks field {exc}") from exc


def expected_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Shapes of every tensor a model with ``config`` owns (pretraining heads included)."""
    params = init_parameters(config, np.random.default_rng(0), dtype=np.float32, pretraining=True)
    return {name: t.shape for name, t in params.items()}


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Read and validate a checkpoint.

    Returns ``(params, manifest)``. Tensors are checked against
    ``expected_config`` when given, else against the manifest's own config.

    Raises:
        CheckpointVersionError: unsupported ``format_version``.
        CheckpointSizeError: the blob length disagrees with the index.
        CheckpointHashError: the blob does not match its recorded hash.
        CheckpointShapeError: a tensor is missing or has the wrong shape.
    """
    path = Path(path)
    manifest = read_manifest(path)
    blob = (path / BINARY_NAME).read_bytes()
    total = sum(int(np.prod(t["shape"], dtype=np.int64)) for t in manifest.tensors)
    if len(blob) != total * _DTYPE.itemsize:
        raise CheckpointSizeError(f"{BINARY_NAME} holds {len(blob)} bytes; index needs {total * _DTYPE.itemsize}")
    if hashlib.sha256(blob).hexdigest() != manifest.binary_sha256:
        raise CheckpointHashError(f"{BINARY_NAME} content hash does not match the manifest")

    config = expected_config or manifest.model_config
    shapes = expected_shapes(config)
    flat = np.frombuffer(blob, dtype=_DTYPE)
    params = ModelParameters()
    for entry in manifest.tensors:
        name, shape = entry["name"], tuple(entry["shape"])
        want = shapes.get(name)
        if want is None:
            raise CheckpointShapeError(f"tensor {name} is not part of a model with the expected config")
        if want != shape:
            raise CheckpointShapeError(f"tensor {name} has shape {shape}; expected config needs {want}")
        n = int(np.prod(shape, dtype=np.int64))
        data = flat[entry["offset"] : entry["offset"] + n].reshape(shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True)
    missing = [n for n in shapes if n not in params and not n.startswith(("pretrain.", "heads.", "crf."))]
    if missing:
        raise CheckpointShapeError(f"checkpoint lacks tensors {missing}")
    return params, manifest
