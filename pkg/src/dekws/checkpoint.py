"""Versioned binary checkpoint container.

Layout: magic "DKWS", a uint32 format version, a uint64 header length, a
UTF-8 JSON header, then the raw little-endian bytes of every array in
header order. Arrays are written exactly as stored in memory, so a
save/load round trip is bit-exact for model parameters, running stats, and
buffer contents (including the reservoir's generator state).
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .buffer import ReservoirBuffer
from .errors import CheckpointError
from .model import TcResNet8, TcResNet8Config, build

MAGIC = b"DKWS"
VERSION = 1


@dataclass
class LoadedCheckpoint:
    model: TcResNet8
    experiment_config: dict
    buffer: ReservoirBuffer | None


def _array_records(arrays: dict) -> tuple[list, bytes]:
    meta = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        meta.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(little.tobytes())
    return meta, b"".join(blobs)


def save_checkpoint(path, model: TcResNet8, experiment_config: dict | None = None,
                    buffer: ReservoirBuffer | None = None) -> None:
    arrays = dict(model.state_arrays())
    buffer_meta = None
    if buffer is not None:
        state = buffer.state()
        entries = state["entries"]
        buffer_meta = {
            "capacity": state["capacity"],
            "num_classes": state["num_classes"],
            "num_seen": state["num_seen"],
            "rng_state": [
                state["rng_state"][0],
                list(state["rng_state"][1]),
                state["rng_state"][2],
            ],
            "num_entries": len(entries),
        }
        if entries:
            arrays["buffer.features"] = np.stack([f for f, _, _ in entries])
            arrays["buffer.labels"] = np.asarray(
                [label for _, label, _ in entries], dtype=np.int64
            )
            arrays["buffer.logits"] = np.stack([z for _, _, z in entries])
    meta, payload = _array_records(arrays)
    header = {
        "model_config": {
            "input_channels": model.cfg.input_channels,
            "channels": list(model.cfg.channels),
            "num_classes": model.cfg.num_classes,
            "kernel_first": model.cfg.kernel_first,
            "kernel_block": model.cfg.kernel_block,
            "dtype": str(model.dtype),
        },
        "experiment_config": experiment_config or {},
        "arrays": meta,
        "buffer": buffer_meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> LoadedCheckpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc

    arrays = {}
    offset = 16 + header_len
    for meta in header["arrays"]:
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
        shape = tuple(meta["shape"])
        n_elem = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = dtype.itemsize * n_elem
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array payload ({meta['name']})")
        if n_elem:
            arr = np.frombuffer(raw, dtype=dtype, count=n_elem, offset=offset)
            arr = arr.reshape(shape).astype(np.dtype(meta["dtype"]))
        else:
            arr = np.empty(shape, dtype=np.dtype(meta["dtype"]))
        arrays[meta["name"]] = arr
        offset += nbytes

    mc = header["model_config"]
    cfg = TcResNet8Config(
        input_channels=mc["input_channels"],
        channels=tuple(mc["channels"]),
        num_classes=mc["num_classes"],
        kernel_first=mc["kernel_first"],
        kernel_block=mc["kernel_block"],
    )
    model = build(cfg, seed=0, dtype=np.dtype(mc["dtype"]))
    model_keys = set(model.state_arrays())
    model.load_state_arrays({k: v for k, v in arrays.items() if k in model_keys})

    buf = None
    bmeta = header.get("buffer")
    if bmeta is not None:
        entries = []
        if bmeta["num_entries"]:
            feats = arrays["buffer.features"]
            labels = arrays["buffer.labels"]
            logits = arrays["buffer.logits"]
            entries = [
                (feats[i], int(labels[i]), logits[i])
                for i in range(bmeta["num_entries"])
            ]
        buf = ReservoirBuffer.from_state(
            {
                "capacity": bmeta["capacity"],
                "num_classes": bmeta["num_classes"],
                "num_seen": bmeta["num_seen"],
                "rng_state": bmeta["rng_state"],
                "entries": entries,
            }
        )
    return LoadedCheckpoint(model, header.get("experiment_config", {}), buf)
