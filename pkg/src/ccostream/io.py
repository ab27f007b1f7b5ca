"""Weights/input file formats, synthetic data and CSV emission.

Weights file layout::

    {"format": "cco-weights", "version": 1, ...}\\n   <- one line of JSON
    <little-endian payload, tensors in manifest order>

The header carries d_model, n_heads, n_layers, d_ff, precision, a tensor
manifest (name + shape) and a SHA-256 of the payload.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .attention import WEIGHT_NAMES, EncoderLayerParams, EncoderStack, random_stack
from .config import dtype_for
from .errors import FormatError

FORMAT_NAME = "cco-weights"
FORMAT_VERSION = 1
MAX_HEADER_BYTES = 1 << 20


def _manifest(stack: EncoderStack) -> list[dict]:
    return [{"name": f"layers.{i}.{name}", "shape": list(tensor.shape)}
            for i, layer in enumerate(stack.layers)
            for name, tensor in layer.tensors().items()]


def encode_weights(stack: EncoderStack) -> bytes:
    le = np.dtype(stack.dtype).newbyteorder("<")
    payload = b"".join(np.ascontiguousarray(t, dtype=le).tobytes()
                       for layer in stack.layers for t in layer.tensors().values())
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "d_model": stack.d_model,
        "n_heads": stack.n_heads,
        "n_layers": stack.n_layers,
        "d_ff": stack.layers[0].d_ff,
        "precision": stack.precision,
        "tensors": _manifest(stack),
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    return json.dumps(header, sort_keys=True).encode() + b"\n" + payload


def decode_weights(blob: bytes) -> EncoderStack:
    newline = blob.find(b"\n", 0, MAX_HEADER_BYTES)
    if newline < 0:
        raise FormatError("byte 0: no header line terminator found")
    try:
        header = json.loads(blob[:newline].decode())
    except UnicodeDecodeError as exc:
        raise FormatError(f"byte {exc.start}: header is not UTF-8") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"byte {exc.pos}: malformed header JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise FormatError("byte 0: not a cco-weights file")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"byte 0: unsupported format version {header.get('version')!r}")
    try:
        dtype = np.dtype(dtype_for(header["precision"])).newbyteorder("<")
        n_layers, n_heads = int(header["n_layers"]), int(header["n_heads"])
        manifest = header["tensors"]
        expected_sha = header["sha256"]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"byte 0: incomplete header ({exc})") from None

    start = newline + 1
    payload = blob[start:]
    offset = 0
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if offset + nbytes > len(payload):
            raise FormatError(
                f"byte {start + len(payload)}: payload truncated inside tensor "
                f"{entry['name']!r} (needs bytes {start + offset}..{start + offset + nbytes})")
        tensors[entry["name"]] = np.frombuffer(payload, dtype, int(np.prod(shape)), offset).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"byte {start + offset}: {len(payload) - offset} unexpected trailing payload bytes")
    if hashlib.sha256(payload).hexdigest() != expected_sha:
        raise FormatError(f"byte {start}: payload checksum mismatch")

    native = dtype.newbyteorder("=")
    layers = []
    for i in range(n_layers):
        try:
            w = {n: tensors[f"layers.{i}.{n}"].astype(native) for n in WEIGHT_NAMES}
        except KeyError as exc:
            raise FormatError(f"byte 0: manifest lacks tensor {exc.args[0]!r}") from None
        layers.append(EncoderLayerParams(**w, n_heads=n_heads))
    return EncoderStack(tuple(layers))


def save_weights(stack: EncoderStack, path) -> None:
    Path(path).write_bytes(encode_weights(stack))


def load_weights(path) -> EncoderStack:
    return decode_weights(Path(path).read_bytes())


def load_frames(path) -> np.ndarray:
    """Read a T x d_model frame matrix from ``.npy`` or comma-separated text."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            frames = np.load(path, allow_pickle=False)
        else:
            frames = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if frames.ndim != 2 or frames.size == 0:
        raise FormatError(f"{path}: expected a non-empty 2-D matrix, got shape {frames.shape}")
    return np.asarray(frames, dtype=np.float64)


@dataclass(frozen=True)
class SyntheticSpec:
    total_frames: int = 64
    d_model: int = 16
    n_heads: int = 2
    n_layers: int = 2
    d_ff: Optional[int] = None
    seed: int = 0
    precision: str = "double"


def gen_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, EncoderStack]:
    """Standard-normal frames and a small random stack, both from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    frames = rng.standard_normal((spec.total_frames, spec.d_model))
    stack = random_stack(spec.d_model, spec.n_heads, spec.n_layers, spec.d_ff, rng, spec.precision)
    return frames.astype(dtype_for(spec.precision)), stack


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], config: dict) -> None:
    """CSV with a ``# config:`` echo line followed by a header row."""
    echo = " ".join(f"{k}={v}" for k, v in config.items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# config: {echo}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_fmt(v) for v in row] for row in rows)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
