"""The "RNO1" binary container.

Layout (all integers little-endian u32)::

    b"RNO1" | version=1 | record type | metadata length | metadata (UTF-8 JSON) | f64 LE payload

Complex payloads are interleaved (re, im) pairs.  Metadata is written with
sorted keys so identical objects produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .frames import AmbientSpace, Frame, PeriodicFunction
from .models import CnnModel, ConvLayer, FnoLayer, FnoModel, MlpParams, SnoModel
from .spaces import SampleGrid, SampleVector

MAGIC = b"RNO1"
VERSION = 1

FRAME = 1
SAMPLES = 2
FUNCTION = 3
MODEL = 4
DATASET = 5

RECORD_NAMES = {FRAME: "frame", SAMPLES: "samples", FUNCTION: "function", MODEL: "model", DATASET: "dataset"}


class ContainerError(ValueError):
    pass


def encode(record_type: int, meta: dict, payload: np.ndarray) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<III", VERSION, record_type, len(meta_bytes)) + meta_bytes + body


def decode(data: bytes) -> tuple[int, dict, np.ndarray]:
    if data[:4] != MAGIC:
        raise ContainerError("not an RNO1 file (bad magic)")
    if len(data) < 16:
        raise ContainerError("truncated header")
    version, record_type, meta_len = struct.unpack("<III", data[4:16])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    meta = json.loads(data[16:16 + meta_len].decode("utf-8"))
    body = data[16 + meta_len:]
    if len(body) % 8:
        raise ContainerError("payload length is not a multiple of 8 bytes")
    return record_type, meta, np.frombuffer(body, dtype="<f8").astype(float)


def write(path, record_type: int, meta: dict, payload: np.ndarray) -> None:
    Path(path).write_bytes(encode(record_type, meta, payload))


def read(path, expected: int | None = None) -> tuple[int, dict, np.ndarray]:
    record_type, meta, payload = decode(Path(path).read_bytes())
    if expected is not None and record_type != expected:
        raise ContainerError(
            f"{path}: expected a {RECORD_NAMES.get(expected, expected)} record, "
            f"found {RECORD_NAMES.get(record_type, record_type)}"
        )
    return record_type, meta, payload


def _interleave(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    return np.stack([c.real, c.imag], axis=-1).reshape(-1)


def _deinterleave(p: np.ndarray, shape) -> np.ndarray:
    return (p[0::2] + 1j * p[1::2]).reshape(shape)


# -- typed records ---------------------------------------------------------------------

def frame_to_bytes(frame: Frame) -> bytes:
    meta = {"k_max": frame.space.k_max, "count": len(frame), "svd_rtol": frame.svd_rtol, "name": frame.name}
    # element-major: all coefficients of v_0, then v_1, ...
    return encode(FRAME, meta, _interleave(frame.synthesis_matrix.T))


def frame_from_bytes(data: bytes) -> Frame:
    kind, meta, p = decode(data)
    if kind != FRAME:
        raise ContainerError("not a frame record")
    amb = AmbientSpace(meta["k_max"])
    m = _deinterleave(p, (meta["count"], amb.dim)).T
    return Frame(m, amb, meta["svd_rtol"], meta.get("name", ""))


def function_to_bytes(f: PeriodicFunction) -> bytes:
    return encode(FUNCTION, {"k_max": f.space.k_max}, _interleave(f.coeffs))


def function_from_bytes(data: bytes) -> PeriodicFunction:
    kind, meta, p = decode(data)
    if kind != FUNCTION:
        raise ContainerError("not a function record")
    amb = AmbientSpace(meta["k_max"])
    return PeriodicFunction(_deinterleave(p, (amb.dim,)), amb)


def samples_to_bytes(s: SampleVector) -> bytes:
    meta = {"M": s.grid.M, "uniform": s.grid.is_uniform, "complex": bool(np.iscomplexobj(s.values))}
    payload = _interleave(s.values) if meta["complex"] else np.asarray(s.values, dtype=float)
    if not s.grid.is_uniform:
        payload = np.concatenate([s.grid.nodes, payload])
    return encode(SAMPLES, meta, payload)


def samples_from_bytes(data: bytes) -> SampleVector:
    kind, meta, p = decode(data)
    if kind != SAMPLES:
        raise ContainerError("not a samples record")
    M = meta["M"]
    grid = SampleGrid(M)
    if not meta["uniform"]:
        grid, p = SampleGrid(M, p[:M]), p[M:]
    values = _deinterleave(p, (M,)) if meta["complex"] else p
    return SampleVector(grid, values)


def save_dataset(path, ds) -> None:
    meta = {"K": ds.K, "n": ds.n, "d": ds.d, "seed": ds.seed, "generator": ds.generator,
            "variance": "1/3", "layout": "inputs then targets, (n, 2K+1) complex, k=-K..K"}
    write(path, DATASET, meta, np.concatenate([_interleave(ds.inputs), _interleave(ds.targets)]))


def load_dataset(path):
    from .train import Dataset

    _, meta, p = read(path, DATASET)
    n, K = meta["n"], meta["K"]
    half = p.size // 2
    shape = (n, 2 * K + 1)
    return Dataset(K, meta["seed"], _deinterleave(p[:half], shape), _deinterleave(p[half:], shape),
                   meta["d"], meta["generator"])


def save_model(path, model, extra: dict | None = None) -> None:
    params = model.params()
    names = list(params)
    meta = {"kind": model.kind, "shape": model.shape_meta(),
            "params": [[k, list(params[k].shape)] for k in names]}
    if extra:
        meta["extra"] = extra
    payload = np.concatenate([params[k].reshape(-1) for k in names]) if names else np.zeros(0)
    write(path, MODEL, meta, payload)


def load_model(path):
    _, meta, p = read(path, MODEL)
    params, offset = {}, 0
    for name, shape in meta["params"]:
        size = int(np.prod(shape)) if shape else 1
        params[name] = p[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != p.size:
        raise ContainerError("payload size does not match parameter metadata")
    shape = meta["shape"]
    kind = meta["kind"]
    if kind == "cnn":
        layers = tuple(ConvLayer(params[f"conv{i}.taps"], act) for i, act in enumerate(shape["activations"]))
        return CnnModel(layers)
    if kind == "fno":
        from .spaces import unpack_real

        layers = tuple(
            FnoLayer(k_in, k_out, unpack_real(params[f"fno{i}.R"]), float(params[f"fno{i}.A"][0]),
                     unpack_real(params[f"fno{i}.bias"]), act)
            for i, ((k_in, k_out), act) in enumerate(zip(shape["modes"], shape["activations"]))
        )
        return FnoModel(layers)
    if kind == "sno":
        n = len(shape["sizes"]) - 1
        mlp = MlpParams(tuple(params[f"mlp{i}.W"] for i in range(n)),
                        tuple(params[f"mlp{i}.b"] for i in range(n)), shape["activation"])
        return SnoModel(shape["K_in"], shape["K_out"], mlp)
    raise ContainerError(f"unknown model kind {kind!r}")


def read_model_extra(path) -> dict:
    _, meta, _ = read(path, MODEL)
    return meta.get("extra", {})
