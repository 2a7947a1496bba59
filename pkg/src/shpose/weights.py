"""Versioned weight container.

File layout (all integers little-endian)::

    bytes 0-3    magic b"SHPW"
    bytes 4-7    uint32 format version (currently 1)
    bytes 8-15   uint64 header length N
    next N bytes UTF-8 JSON header:
                 {"config": {...ModelConfig...},
                  "metadata": {...},
                  "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    remainder    payload; each tensor stored C-contiguous, little-endian,
                 at ``offset`` bytes from the payload start, in header order

Round trips are bit-exact because tensors are stored as raw bytes.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import ModelConfig, StackedHourglass, count_parameters

MAGIC = b"SHPW"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    pass


@dataclass
class ParameterStore:
    """Named arrays plus the config they belong to.

    Batch-norm running statistics are stored alongside the trainable
    parameters so an evaluation-mode forward is reproduced exactly.
    """

    config: Optional[ModelConfig]
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: StackedHourglass, **metadata) -> "ParameterStore":
        tensors = OrderedDict(
            (name, t.detach().cpu().numpy().copy()) for name, t in model.state_dict().items()
        )
        return cls(model.config, tensors, dict(metadata))

    def to_model(self, dtype=None) -> StackedHourglass:
        if self.config is None:
            raise WeightFileError("parameter store has no model config")
        model = StackedHourglass(self.config)
        expected = model.state_dict()
        missing = [k for k in expected if k not in self.tensors]
        extra = [k for k in self.tensors if k not in expected]
        if missing or extra:
            raise WeightFileError(f"weights do not match {self.config.name}: missing={missing[:5]} extra={extra[:5]}")
        if dtype is None:
            dtype = torch.from_numpy(next(iter(self.tensors.values()))).dtype
        model = model.to(dtype)
        state = OrderedDict()
        for name, ref in expected.items():
            arr = self.tensors[name]
            if tuple(arr.shape) != tuple(ref.shape):
                raise WeightFileError(f"{name}: shape {arr.shape} != {tuple(ref.shape)}")
            state[name] = torch.from_numpy(np.array(arr, copy=True))
        model.load_state_dict(state)
        model.eval()
        return model

    def num_parameters(self) -> int:
        return count_parameters(self)

    def save(self, path) -> None:
        save_tensors(path, self.tensors, config=self.config, metadata=self.metadata)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        tensors, config, metadata = load_tensors(path)
        return cls(config, tensors, metadata)


def save_tensors(path, tensors: dict, config: Optional[ModelConfig] = None, metadata: Optional[dict] = None) -> None:
    table = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        # ascontiguousarray would promote 0-d tensors to shape (1,)
        arr = np.asarray(arr, order="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes(order="C")
        table.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({
        "config": config.to_dict() if config is not None else None,
        "metadata": metadata or {},
        "tensors": table,
    }, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)


def load_tensors(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file")
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    start = 16
    header = json.loads(data[start:start + header_len].decode("utf-8"))
    payload = memoryview(data)[start + header_len:]
    tensors = OrderedDict()
    for entry in header["tensors"]:
        lo = entry["offset"]
        buf = payload[lo:lo + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    config = ModelConfig.from_dict(header["config"]) if header.get("config") else None
    return tensors, config, header.get("metadata", {})


def save_model(model: StackedHourglass, path, **metadata) -> None:
    ParameterStore.from_model(model, **metadata).save(path)


def load_model(path, dtype=None) -> StackedHourglass:
    return ParameterStore.load(path).to_model(dtype)
