"""Binary checkpoint container.

Layout (little-endian): b"MNAVCKPT", u32 version, u32 record count, then per record
u16 name length, UTF-8 name, u8 rank, u32 dims[rank], float32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import Conv, Dense, DuelingHead, LinearHead, NetworkParams, NetworkSpec, ReLU
from .optim import AdamState

MAGIC = b"MNAVCKPT"
VERSION = 1

_LAYER_CODES = {Conv: 0, Dense: 1, ReLU: 2, DuelingHead: 3, LinearHead: 4}


class CheckpointError(ValueError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def decode_text(arr: np.ndarray) -> str:
    return bytes(arr.astype(np.uint8).tolist()).decode("utf-8")


def spec_records(spec: NetworkSpec) -> dict[str, np.ndarray]:
    rows = []
    for layer in spec.layers:
        code = _LAYER_CODES[type(layer)]
        if isinstance(layer, Conv):
            rows.append([code, layer.out_channels, layer.kernel, layer.stride])
        elif isinstance(layer, Dense):
            rows.append([code, layer.out_units, 0, 0])
        elif isinstance(layer, ReLU):
            rows.append([code, 0, 0, 0])
        else:
            rows.append([code, layer.n_actions, 0, 0])
    return {
        "spec.input_shape": np.array(spec.input_shape, dtype=np.float32),
        "spec.layers": np.array(rows, dtype=np.float32).reshape(-1, 4),
    }


def spec_from_records(records: dict[str, np.ndarray]) -> NetworkSpec:
    layers = []
    for code, a, b, c in records["spec.layers"].astype(int).tolist():
        if code == 0:
            layers.append(Conv(a, b, c))
        elif code == 1:
            layers.append(Dense(a))
        elif code == 2:
            layers.append(ReLU())
        elif code == 3:
            layers.append(DuelingHead(a))
        elif code == 4:
            layers.append(LinearHead(a))
        else:
            raise CheckpointError(f"unknown layer code {code}")
    return NetworkSpec(tuple(int(d) for d in records["spec.input_shape"]), tuple(layers))


def write_records(path, records: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_records(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:8] != MAGIC:
        raise NotACheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedCheckpointError(f"{path}: truncated record at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    records = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        records[name] = arr
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes after last record")
    return records


def _scalar(arr: np.ndarray) -> float:
    # shortest float32 repr recovers decimal hyperparameters such as 0.00025 exactly
    return float(str(np.float32(arr)))


def save_checkpoint(params: NetworkParams, state: AdamState | None, path, extra: dict | None = None) -> None:
    records = dict(spec_records(params.spec))
    records.update(params.tensors)
    if state is not None:
        for k in params.names():
            records[f"adam.m.{k}"] = state.m[k]
        for k in params.names():
            records[f"adam.v.{k}"] = state.v[k]
        records["adam.step"] = np.array(state.step, dtype=np.float32)
        for key in ("lr", "beta1", "beta2", "epsilon"):
            records[f"adam.{key}"] = np.array(getattr(state, key), dtype=np.float32)
    records.update(extra or {})
    write_records(path, records)


def load_checkpoint(path, with_extra: bool = False):
    """Returns (params, adam_state_or_None), plus the leftover records if with_extra."""
    records = read_records(path)
    if "spec.layers" not in records:
        raise CheckpointError(f"{path}: missing network spec records")
    spec = spec_from_records(records)
    names = list(spec.param_shapes())
    missing = [n for n in names if n not in records]
    if missing:
        raise CheckpointError(f"{path}: missing parameter records {missing}")
    params = NetworkParams(spec, {n: records[n] for n in names})
    state = None
    if "adam.step" in records:
        state = AdamState(
            {n: records[f"adam.m.{n}"] for n in names},
            {n: records[f"adam.v.{n}"] for n in names},
            int(records["adam.step"]),
            _scalar(records["adam.lr"]),
            _scalar(records["adam.beta1"]),
            _scalar(records["adam.beta2"]),
            _scalar(records["adam.epsilon"]),
        )
    if not with_extra:
        return params, state
    used = set(names) | {"spec.layers", "spec.input_shape"}
    extra = {k: v for k, v in records.items() if k not in used and not k.startswith("adam.")}
    return params, state, extra
