"""Binary checkpoint container.

Layout::

    b"EDGEFLOW"            8-byte magic
    uint32 LE              format version
    uint64 LE              header length in bytes
    header                 UTF-8 JSON, sorted keys: config, step, rng state,
                           optimizer scalars, tensor index, payload sha256
    payload                float64 LE row-major tensors, back to back

Serialization is canonical, so save -> load -> save reproduces the file
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .diffusion import MixtureReward, ToyTask
from .errors import CheckpointCorruptError, CheckpointFormatError
from .trainer import TrainState, build_state

MAGIC = b"EDGEFLOW"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _collect(state: TrainState) -> dict[str, np.ndarray]:
    tensors = {name: p.data for name, p in state.named_parameters().items()}
    tensors.update(state.buffers())
    opt = state.optimizer.state
    for name in sorted(opt.first):
        tensors[f"adam/m/{name}"] = opt.first[name]
        tensors[f"adam/v/{name}"] = opt.second[name]
    return tensors


def to_bytes(state: TrainState) -> bytes:
    tensors = _collect(state)
    index, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "dtype": "f8", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    opt = state.optimizer.state
    header = {
        "config": state.config.to_dict(),
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step},
        "tensors": index,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + payload


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_bytes(state)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def from_bytes(data: bytes) -> TrainState:
    if len(data) < _PREFIX.size:
        raise CheckpointCorruptError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError("not an edgeflow checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointFormatError(f"checkpoint format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointCorruptError("truncated header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"unreadable header: {exc}") from exc
    payload = data[start + hlen :]
    expected = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) != expected:
        raise CheckpointCorruptError(f"payload holds {len(payload)} bytes, index expects {expected}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointCorruptError("payload checksum mismatch")

    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)

    config = TrainConfig.from_dict(header["config"])
    state = build_state(config, pretrain=False)
    params = state.named_parameters()
    missing = set(params) - set(tensors)
    if missing:
        raise CheckpointCorruptError(f"checkpoint lacks parameters {sorted(missing)}")
    for name, p in params.items():
        if tensors[name].shape != p.data.shape:
            raise CheckpointCorruptError(f"{name}: shape {tensors[name].shape} != {p.data.shape}")
        p.data[...] = tensors[name]
    state.condition = tensors["buffer/condition"]
    state.task = ToyTask(tensors["buffer/task_centers"], tensors["buffer/task_conditions"], config.diffusion.spread)
    if "buffer/reward_centers" in tensors:
        state.oracle = MixtureReward(
            tensors["buffer/reward_centers"], tensors["buffer/reward_widths"], tensors["buffer/reward_weights"]
        )
    opt = state.optimizer.state
    o = header["optimizer"]
    opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step = o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"]
    for name in state.optimizer.params:
        if f"adam/m/{name}" in tensors:
            opt.first[name] = tensors[f"adam/m/{name}"]
            opt.second[name] = tensors[f"adam/v/{name}"]
    state.rng.bit_generator.state = header["rng"]
    state.step = header["step"]
    return state


def load_checkpoint(path) -> TrainState:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(data)
