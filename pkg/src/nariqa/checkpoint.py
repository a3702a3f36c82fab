"""Binary checkpoint persistence.

Little-endian layout:

    magic   4 bytes  b"CVKD"
    u32     format version (1)
    u32     config blob length, then that many UTF-8 bytes of flat
            ``key = value`` text (architecture echo + training metadata)
    u32     tensor count
    per tensor:
        u16      name length, then UTF-8 name
        u8       rank
        rank*u32 dims
        raw float32 values, row-major

Round trips are byte-exact; loading validates the magic, version and every
tensor shape against the echoed architecture before materializing.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError
from .network import ArchConfig, ModelParams, parameter_shapes
from .runconfig import (ARCH_SCHEMA, arch_from_dict, arch_to_dict,
                        coerce_config, format_kv_text, parse_kv_text)

MAGIC = b"CVKD"
VERSION = 1

# metadata keys stored next to the architecture echo
META_SCHEMA = {
    "stage": str,
    "epochs": int,
    "seed": int,
    "final_train_loss": float,
    "nar_mode": str,
    "kd_enabled": lambda s: s.lower() == "true",
    "distill_weight": float,
}


@dataclass
class Checkpoint:
    """One serialized parameter set plus its architecture and stage metadata."""

    arch: ArchConfig
    tensors: "OrderedDict[str, np.ndarray]"
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def stage(self) -> str:
        return self.meta.get("stage", "")

    def to_model_params(self) -> ModelParams:
        out = OrderedDict()
        for name, arr in self.tensors.items():
            out[name] = Tensor(arr.copy(), requires_grad=True)
        return ModelParams(out)


def make_checkpoint(params: ModelParams, arch: ArchConfig, meta: dict) -> Checkpoint:
    tensors = OrderedDict((name, np.ascontiguousarray(t.data, dtype=np.float32))
                          for name, t in params.items())
    return Checkpoint(arch=arch, tensors=tensors, meta=dict(meta))


def _validate_tensors(arch: ArchConfig, tensors) -> None:
    expected = parameter_shapes(arch)
    if list(tensors.keys()) != list(expected.keys()):
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        raise CheckpointError(
            f"tensor table does not match the echoed architecture "
            f"(missing={sorted(missing)}, unexpected={sorted(extra)})")
    for name, arr in tensors.items():
        want = expected[name][0]
        if tuple(arr.shape) != tuple(want):
            raise CheckpointError(
                f"tensor {name!r} shape {tuple(arr.shape)} != expected {tuple(want)}")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    _validate_tensors(ckpt.arch, ckpt.tensors)
    blob = dict(arch_to_dict(ckpt.arch))
    blob.update(ckpt.meta)
    config_bytes = format_kv_text(blob).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4", copy=False).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what} "
                              f"(wanted {n} bytes, got {len(data)})")
    return data


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with path.open("rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        blob = _read_exact(fh, blob_len, "config blob").decode("utf-8")

        raw = parse_kv_text(blob, source=f"{path}:config")
        arch_raw = {k: v for k, v in raw.items() if k in ARCH_SCHEMA}
        meta_raw = {k: v for k, v in raw.items() if k not in ARCH_SCHEMA}
        arch = arch_from_dict(coerce_config(arch_raw, ARCH_SCHEMA,
                                            source=f"{path}:config"))
        meta = {}
        for key, (_, value) in meta_raw.items():
            caster = META_SCHEMA.get(key, str)
            try:
                meta[key] = caster(value)
            except ValueError:
                raise CheckpointError(f"{path}: bad metadata value for {key!r}: {value!r}")

        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = OrderedDict()
        for t in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"tensor {t} name length"))
            name = _read_exact(fh, name_len, f"tensor {t} name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"tensor {name!r} rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank,
                                                          f"tensor {name!r} dims"))
            total = int(np.prod(dims)) if rank else 1
            data = _read_exact(fh, 4 * total, f"tensor {name!r} data")
            arr = np.frombuffer(data, dtype="<f4").copy()
            if arr.size != total:
                raise CheckpointError(f"{path}: tensor {name!r} size mismatch")
            if name in tensors:
                raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
            tensors[name] = arr.reshape(dims)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after tensor table")

    _validate_tensors(arch, tensors)
    return Checkpoint(arch=arch, tensors=tensors, meta=meta, version=version)
