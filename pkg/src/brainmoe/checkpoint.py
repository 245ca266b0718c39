"""Checkpoint files: a JSON text header plus raw little-endian tensor blobs.

Layout:  a magic line, a line with the header byte length, the JSON header,
then the concatenated row-major tensor payload.  The header records the
format version, pipeline stage, an architecture-config snapshot, RNG state,
parent checkpoint hashes, per-tensor (name, dtype, shape, offset), and the
SHA-256 of the payload; loads verify the digest, so any corrupted byte is
rejected.  Writes are atomic (temp file then rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import torch

MAGIC = b"BMOECKPT"
FORMAT_VERSION = 1
STAGES = ("rmae", "merged", "trained")

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class CheckpointIntegrityError(CheckpointError):
    """Payload digest mismatch or truncated file."""


class CheckpointVersionError(CheckpointError):
    """Unknown format version."""


@dataclass
class Checkpoint:
    """In-memory checkpoint: named tensors plus provenance."""

    stage: str
    config: dict
    tensors: dict[str, np.ndarray]
    rng_state: str = ""
    parents: tuple[str, ...] = ()
    format_version: int = FORMAT_VERSION
    payload_sha256: str = field(default="", compare=False)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise CheckpointError(f"unknown stage {self.stage!r}; known: {STAGES}")
        for name, value in self.tensors.items():
            if str(value.dtype) not in _DTYPES:
                raise CheckpointError(
                    f"tensor {name!r} has unsupported dtype {value.dtype}"
                )


def from_model(
    model: torch.nn.Module,
    stage: str,
    config: dict,
    parents: tuple[str, ...] = (),
) -> Checkpoint:
    """Snapshot a model's parameters into a checkpoint."""
    tensors = {
        name: p.detach().cpu().numpy().copy() for name, p in model.named_parameters()
    }
    rng_state = torch.get_rng_state().numpy().tobytes().hex()
    return Checkpoint(
        stage=stage, config=config, tensors=tensors, rng_state=rng_state, parents=parents
    )


def save_checkpoint(ckpt: Checkpoint, path: str) -> str:
    """Write the checkpoint; returns the payload SHA-256 for provenance."""
    names = sorted(ckpt.tensors)
    payload = bytearray()
    entries = []
    for name in names:
        value = np.ascontiguousarray(ckpt.tensors[name])
        blob = value.astype(_DTYPES[str(value.dtype)], copy=False).tobytes(order="C")
        entries.append(
            {
                "name": name,
                "dtype": str(value.dtype),
                "shape": list(value.shape),
                "offset": len(payload),
                "nbytes": len(blob),
            }
        )
        payload.extend(blob)
    digest = hashlib.sha256(bytes(payload)).hexdigest()
    header = {
        "format_version": ckpt.format_version,
        "stage": ckpt.stage,
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "parents": list(ckpt.parents),
        "tensors": entries,
        "payload_sha256": digest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out.extend(MAGIC + b"\n")
    out.extend(f"{len(header_bytes)}\n".encode())
    out.extend(header_bytes)
    out.extend(payload)

    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(out))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    ckpt.payload_sha256 = digest
    return digest


def load_checkpoint(path: str) -> Checkpoint:
    """Read and verify a checkpoint file."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != MAGIC:
            raise CheckpointIntegrityError(f"{path}: bad magic {magic!r}")
        try:
            header_len = int(fh.readline().strip())
        except ValueError as exc:
            raise CheckpointIntegrityError(f"{path}: unreadable header length") from exc
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointIntegrityError(f"{path}: truncated header")
        try:
            header = json.loads(header_bytes)
        except json.JSONDecodeError as exc:
            raise CheckpointIntegrityError(f"{path}: corrupt header JSON") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"{path}: format version {header.get('format_version')} "
                f"unknown (expected {FORMAT_VERSION})"
            )
        payload = fh.read()

    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointIntegrityError(f"{path}: payload digest mismatch")

    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointIntegrityError(f"{path}: tensor {entry['name']} out of range")
        value = np.frombuffer(
            payload[start : start + nbytes], dtype=_DTYPES[entry["dtype"]]
        ).reshape(entry["shape"])
        tensors[entry["name"]] = value.astype(entry["dtype"]).copy()
    return Checkpoint(
        stage=header["stage"],
        config=header["config"],
        tensors=tensors,
        rng_state=header["rng_state"],
        parents=tuple(header["parents"]),
        format_version=header["format_version"],
        payload_sha256=digest,
    )


def validate_names(ckpt: Checkpoint, expected: set[str]) -> None:
    """Reject checkpoints whose tensor-name set disagrees with the config."""
    actual = set(ckpt.tensors)
    if actual != expected:
        missing = sorted(expected - actual)
        extra = sorted(actual - expected)
        raise CheckpointError(
            f"tensor names disagree with architecture: missing={missing} extra={extra}"
        )


def apply_to_model(ckpt: Checkpoint, model: torch.nn.Module) -> None:
    """Load checkpoint tensors into a model (shapes must match)."""
    state = dict(model.named_parameters())
    validate_names(ckpt, set(state))
    with torch.no_grad():
        for name, value in ckpt.tensors.items():
            tensor = torch.from_numpy(np.ascontiguousarray(value)).to(state[name].dtype)
            if tensor.shape != state[name].shape:
                raise CheckpointError(
                    f"shape mismatch at {name!r}: checkpoint {tuple(tensor.shape)} "
                    f"vs model {tuple(state[name].shape)}"
                )
            state[name].copy_(tensor)
