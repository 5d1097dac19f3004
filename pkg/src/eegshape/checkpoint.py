"""On-disk checkpoints: a directory with a text manifest and one binary file per tensor.

Manifest (UTF-8, ``key=value`` per line)::

    format_version=1
    module=encoder
    created_from_seed=7
    tensor.conv1.kernels=3,3,1,32
    meta.split_seed=7

Tensor file layout: the 8-byte magic ``EEG2SHP1``, a little-endian u32
rank, ``rank`` little-endian u32 dims, then the row-major float32
little-endian payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"EEG2SHP1"
FORMAT_VERSION = 1
MANIFEST = "manifest.txt"


def tensor_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise CheckpointError("refusing to store a tensor with non-finite values")
    head = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def parse_tensor(data: bytes, where: str = "tensor") -> np.ndarray:
    if data[:8] != MAGIC:
        raise CheckpointError(f"{where}: bad magic {data[:8]!r}")
    if len(data) < 12:
        raise CheckpointError(f"{where}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 8)
    start = 12 + 4 * rank
    if len(data) < start:
        raise CheckpointError(f"{where}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - start != 4 * count:
        raise CheckpointError(f"{where}: payload has {len(data) - start} bytes, dims {dims} need {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=start).reshape(dims).astype(np.float32)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read tensor file {path}: {exc.strerror}") from exc
    return parse_tensor(data, str(path))


@dataclass
class Checkpoint:
    module: str
    seed: int
    tensors: dict[str, np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)


def save_checkpoint(directory, ckpt: Checkpoint) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"format_version={FORMAT_VERSION}", f"module={ckpt.module}", f"created_from_seed={ckpt.seed}"]
    for name in sorted(ckpt.tensors):
        if "/" in name or name.startswith("."):
            raise CheckpointError(f"invalid tensor name {name!r}")
        arr = np.asarray(ckpt.tensors[name])
        lines.append(f"tensor.{name}=" + ",".join(str(n) for n in arr.shape))
        write_tensor(d / f"{name}.bin", arr)
    lines += [f"meta.{k}={v}" for k, v in sorted(ckpt.meta.items())]
    (d / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d


def load_checkpoint(directory, module: str | None = None) -> Checkpoint:
    d = Path(directory)
    try:
        text = (d / MANIFEST).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"no readable manifest in {d}") from exc
    kv = {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"{d / MANIFEST} line {n}: expected key=value")
        k, v = line.split("=", 1)
        kv[k] = v
    try:
        version = int(kv["format_version"])
        found_module = kv["module"]
        seed = int(kv["created_from_seed"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{d / MANIFEST}: missing or invalid header field") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version}")
    if module is not None and found_module != module:
        raise CheckpointError(f"{d} holds a {found_module!r} checkpoint, expected {module!r}")
    tensors, meta = {}, {}
    for k, v in kv.items():
        if k.startswith("tensor."):
            name = k[len("tensor."):]
            want = tuple(int(x) for x in v.split(",")) if v else ()
            arr = read_tensor(d / f"{name}.bin")
            if arr.shape != want:
                raise CheckpointError(f"tensor {name}: file dims {arr.shape} disagree with manifest {want}")
            tensors[name] = arr
        elif k.startswith("meta."):
            meta[k[len("meta."):]] = v
    return Checkpoint(found_module, seed, tensors, meta)
