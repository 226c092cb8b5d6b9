"""
A module defining the binary checkpoint format of trained models.

Layout (little-endian):

    header   "<4sII"  magic b"MIMO", version, JSON length
    json     UTF-8 object {"kind", "config", "meta", ...}
    count    "<I"     number of tensors
    tensors  per tensor: "<I" name length, name, "<I" ndim, ndim × "<I" dims,
             prod(dims) × f64 values

Values are stored as float64, so a save/load round trip is bitwise exact.

Functions:
    encode_checkpoint, decode_checkpoint: Bytes codec.
    save_checkpoint, load_checkpoint: MimoModel to and from a file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import CorruptFile
from .field import MimoConfig, MimoModel
from .layers import OptimizerState
from .meshio import read_bytes
from .records import _require_at_least, _u32

MAGIC = b"MIMO"
VERSION = 1
HEADER_FMT = "<4sII"  # magic, version, json length
HEADER_LEN = struct.calcsize(HEADER_FMT)
U32 = struct.Struct("<I")

PathLike = Union[str, Path]


def encode_checkpoint(header: dict, tensors: Sequence[Tuple[str, np.ndarray]]) -> bytes:
    """
    Serialize a JSON header and named arrays.

    Raises:
        CorruptFile: if a length does not fit in u32.
    """
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    _u32("json length", len(blob))
    _u32("tensor count", len(tensors))
    parts = [struct.pack(HEADER_FMT, MAGIC, VERSION, len(blob)), blob, U32.pack(len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        _u32("name length", len(raw))
        parts += [U32.pack(len(raw)), raw, U32.pack(arr.ndim)]
        for dim in arr.shape:
            _u32("dimension", dim)
            parts.append(U32.pack(dim))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> Tuple[dict, Dict[str, np.ndarray]]:
    """
    Parse a checkpoint.

    Returns:
        Tuple[dict, Dict[str, np.ndarray]]: The header and arrays by name, in file order.

    Raises:
        CorruptFile: on a bad magic, version, truncation, duplicate name or
            trailing bytes.
    """
    _require_at_least(buf, 0, HEADER_LEN, "header")
    magic, version, json_len = struct.unpack(HEADER_FMT, buf[:HEADER_LEN])
    if magic != MAGIC:
        raise CorruptFile(f"bad magic: {magic!r}")
    if version != VERSION:
        raise CorruptFile(f"unsupported checkpoint version: {version}")
    off = HEADER_LEN
    _require_at_least(buf, off, json_len, "config")
    try:
        header = json.loads(buf[off : off + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"bad checkpoint header: {e}") from e
    off += json_len
    count, off = _read_u32(buf, off, "tensor count")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, off = _read_u32(buf, off, "name length")
        _require_at_least(buf, off, name_len, "tensor name")
        name = buf[off : off + name_len].decode("utf-8", errors="replace")
        off += name_len
        ndim, off = _read_u32(buf, off, "ndim")
        shape: List[int] = []
        for _ in range(ndim):
            dim, off = _read_u32(buf, off, "dimension")
            shape.append(dim)
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        _require_at_least(buf, off, nbytes, f"tensor {name}")
        if name in tensors:
            raise CorruptFile(f"duplicate tensor {name}")
        values = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=off)
        tensors[name] = values.astype(np.float64).reshape(shape)
        off += nbytes
    if off != len(buf):
        raise CorruptFile(f"length mismatch: parsed {off} bytes of {len(buf)}")
    return header, tensors


def model_tensors(model: MimoModel) -> List[Tuple[str, np.ndarray]]:
    """Parameters, then Adam moments when the model has been trained."""
    out = [(name, p.data) for name, p in model.named_parameters()]
    if model.optimizer is not None and model.optimizer.m:
        names = [name for name, _ in model.named_parameters()]
        out += [(f"adam.m.{n}", m) for n, m in zip(names, model.optimizer.m)]
        out += [(f"adam.v.{n}", v) for n, v in zip(names, model.optimizer.v)]
    return out


def save_checkpoint(path: PathLike, model: MimoModel) -> None:
    header = {"kind": "mimo", "config": model.config.to_dict(), "meta": model.meta}
    if model.optimizer is not None:
        o = model.optimizer
        header["optimizer"] = {"lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps, "t": o.t}
    Path(path).write_bytes(encode_checkpoint(header, model_tensors(model)))


def load_checkpoint(path: PathLike) -> MimoModel:
    """
    Rebuild a model written by save_checkpoint.

    Raises:
        CorruptFile: if the file is malformed or tensors are missing or misshapen.
    """
    header, tensors = decode_checkpoint(read_bytes(path))
    if header.get("kind") != "mimo":
        raise CorruptFile(f"{path}: not a field checkpoint (kind={header.get('kind')!r})")
    model = MimoModel(MimoConfig.from_dict(header["config"]))
    restore_parameters(model.named_parameters(), tensors, str(path))
    model.meta = dict(header.get("meta", {}))
    if "optimizer" in header:
        o = header["optimizer"]
        names = [name for name, _ in model.named_parameters()]
        try:
            m = [tensors[f"adam.m.{n}"] for n in names]
            v = [tensors[f"adam.v.{n}"] for n in names]
        except KeyError as e:
            m, v = [], []
            if o.get("t", 0):
                raise CorruptFile(f"{path}: missing optimizer moment {e}") from e
        model.optimizer = OptimizerState(
            lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], m=m, v=v, t=int(o["t"])
        )
    return model


def restore_parameters(named, tensors: Dict[str, np.ndarray], source: str) -> None:
    """Copy stored arrays into named Tensor parameters, checking shapes."""
    for name, p in named:
        if name not in tensors:
            raise CorruptFile(f"{source}: missing tensor {name}")
        if tensors[name].shape != p.shape:
            raise CorruptFile(f"{source}: tensor {name} has shape {tensors[name].shape}, expected {p.shape}")
        p.data = tensors[name].copy()


def _read_u32(buf: bytes, off: int, what: str) -> Tuple[int, int]:
    _require_at_least(buf, off, 4, what)
    return U32.unpack_from(buf, off)[0], off + 4
