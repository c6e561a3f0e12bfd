"""Versioned binary checkpoints for the full experiment state.

Layout: 8-byte magic, u32 version, u64-length-prefixed JSON manifest (sorted
keys, so identical states serialize to identical bytes), then one named,
length-prefixed, little-endian binary block per array. The manifest declares
every block's dtype and shape; load refuses on any mismatch.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibrationParams
from .data import MemoryBuffer
from .metrics import AccuracyMatrix
from .model import ModelState

MAGIC = b"TASKMASK"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


@dataclass
class ExperimentState:
    """Everything a resumed run needs: the model (with accumulated masks),
    the calibration memory, fitted calibration if any, the accuracy matrix,
    the resolved config, and a cursor saying how far training got. All other
    randomness is derived from (seed, task, stage, epoch), so the cursor is
    the entire RNG state."""

    model: ModelState
    memory: MemoryBuffer = field(default_factory=MemoryBuffer)
    calibration: CalibrationParams | None = None
    matrix: AccuracyMatrix | None = None
    config: dict | None = None
    cursor: dict = field(default_factory=dict)


def _collect_blocks(state: ExperimentState):
    model = state.model
    blocks: list[tuple[str, str, np.ndarray]] = []
    for name in sorted(model.params):
        blocks.append((name, "f4", model.params[name].data))
    for l, mask in enumerate(model.acc_mask):
        blocks.append((f"mask.{l}", "f4", mask))
    for task_id, gcls, _local, samples in state.memory.items():
        blocks.append((f"memory.{task_id}.{gcls}", "f4", samples))
    if state.matrix is not None:
        blocks.append(("matrix", "f8", state.matrix.values))
    return blocks


def save(state: ExperimentState, path: str | Path) -> None:
    """Write atomically (temp file in the target directory, then rename)."""
    model = state.model
    blocks = _collect_blocks(state)
    manifest = {
        "model": {
            "input_dim": model.input_dim,
            "hidden_width": model.hidden_width,
            "depth": model.depth,
            "proj_dim": model.proj_dim,
            "n_rotations": model.n_rotations,
            "seed": model.seed,
            "s_max": model.s_max,
        },
        "task_classes": {str(t): cls for t, cls in sorted(model.task_classes.items())},
        "memory": [{"task": t, "cls": c, "local": l}
                   for t, c, l, _ in state.memory.items()],
        "blocks": [{"name": n, "dtype": d, "shape": list(a.shape)}
                   for n, d, a in blocks],
        "calibration": state.calibration.as_dict() if state.calibration else None,
        "config": state.config,
        "cursor": state.cursor,
    }
    payload = json.dumps(manifest, sort_keys=True).encode()

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)
            for name, code, arr in blocks:
                raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
                encoded = name.encode()
                f.write(struct.pack("<H", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<Q", len(raw)))
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise ValueError(f"checkpoint truncated reading {what}: "
                         f"need {n} bytes at offset {offset}, have {len(buf) - offset}")
    return buf[offset:offset + n], offset + n


def load(path: str | Path) -> ExperimentState:
    buf = Path(path).read_bytes()
    raw, off = _take(buf, 0, len(MAGIC), "magic")
    if raw != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file (bad magic)")
    raw, off = _take(buf, off, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != VERSION:
        raise ValueError(f"checkpoint version {version} not supported; "
                         f"this build reads version {VERSION}")
    raw, off = _take(buf, off, 8, "manifest length")
    raw, off = _take(buf, off, struct.unpack("<Q", raw)[0], "manifest")
    manifest = json.loads(raw.decode())

    arrays: dict[str, np.ndarray] = {}
    for spec in manifest["blocks"]:
        name, shape = spec["name"], tuple(spec["shape"])
        dtype = _DTYPES[spec["dtype"]]
        raw, off = _take(buf, off, 2, f"name prefix of block '{name}'")
        raw, off = _take(buf, off, struct.unpack("<H", raw)[0], f"name of block '{name}'")
        if raw.decode() != name:
            raise ValueError(f"block name mismatch: manifest says '{name}', file has '{raw.decode()}'")
        raw, off = _take(buf, off, 8, f"length prefix of block '{name}'")
        nbytes = struct.unpack("<Q", raw)[0]
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise ValueError(f"block '{name}' declares {nbytes} bytes, "
                             f"manifest shape {list(shape)} needs {expected}")
        raw, off = _take(buf, off, nbytes, f"data of block '{name}'")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if off != len(buf):
        raise ValueError(f"{len(buf) - off} trailing bytes after the last block")

    m = manifest["model"]
    model = ModelState(input_dim=m["input_dim"], hidden_width=m["hidden_width"],
                       depth=m["depth"], proj_dim=m["proj_dim"], seed=m["seed"],
                       n_rotations=m["n_rotations"], s_max=m["s_max"])
    for t_str, classes in sorted(manifest["task_classes"].items(), key=lambda kv: int(kv[0])):
        model.register_task(int(t_str), classes)
    for name, tensor in model.params.items():
        if name not in arrays:
            raise ValueError(f"checkpoint is missing parameter block '{name}'")
        if arrays[name].shape != tensor.data.shape:
            raise ValueError(f"block '{name}' shape {arrays[name].shape} does not "
                             f"match architecture {tensor.data.shape}")
        tensor.data = arrays.pop(name)
    model.acc_mask = [arrays.pop(f"mask.{l}") for l in range(model.depth)]

    memory = MemoryBuffer()
    for entry in manifest["memory"]:
        memory.add(entry["task"], entry["cls"],
                   arrays.pop(f"memory.{entry['task']}.{entry['cls']}"), entry["local"])

    matrix = None
    if "matrix" in arrays:
        values = arrays.pop("matrix")
        matrix = AccuracyMatrix(len(values))
        matrix.values = values

    calibration = None
    if manifest["calibration"] is not None:
        calibration = CalibrationParams.from_dict(manifest["calibration"])

    return ExperimentState(model=model, memory=memory, calibration=calibration,
                           matrix=matrix, config=manifest["config"],
                           cursor=manifest["cursor"])
