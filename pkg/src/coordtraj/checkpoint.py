"""Binary checkpoint: magic, little-endian u32 header length, JSON header, raw tensors.

The header records ``format_version``, the model config, the bin grid, the
mask variant, optional training config and metrics, and one entry per tensor
with its name, shape, dtype and byte offset into the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, MultiEntityTransformer
from .trajectory_space import BinGrid

MAGIC = b"CTRJCKPT"
FORMAT_VERSION = 1
_DTYPES = {"float32": (torch.float32, "<f4"), "float64": (torch.float64, "<f8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: MultiEntityTransformer
    grid: BinGrid
    mask: str
    train_config: dict | None = None
    metrics: list = field(default_factory=list)

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def save_checkpoint(path, model: MultiEntityTransformer, grid: BinGrid, mask: str,
                    train_config: dict | None = None, metrics: list | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        dtype_name = str(tensor.dtype).removeprefix("torch.")
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {tensor.dtype} for {name}")
        raw = tensor.detach().cpu().numpy().astype(_DTYPES[dtype_name][1], copy=False).tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "dtype": dtype_name,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "grid": grid.to_dict(),
        "mask": mask,
        "train_config": train_config,
        "metrics": metrics or [],
        "tensors": entries,
    }
    hbytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < len(MAGIC) + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[start : start + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')} unsupported (expected {FORMAT_VERSION})"
        )
    payload = data[start + hlen :]
    config = ModelConfig.from_dict(header["model_config"])
    model = MultiEntityTransformer(config)
    state = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated tensor data for {e['name']}")
        torch_dtype, np_dtype = _DTYPES[e["dtype"]]
        arr = np.frombuffer(payload, dtype=np_dtype, count=e["nbytes"] // np.dtype(np_dtype).itemsize,
                            offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True)).to(torch_dtype)
    dtypes = {t.dtype for t in state.values()}
    if len(dtypes) == 1:
        model = model.to(dtypes.pop())
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: {e}") from e
    model.eval()
    return Checkpoint(model, BinGrid.from_dict(header["grid"]), header["mask"],
                      header.get("train_config"), header.get("metrics", []))
