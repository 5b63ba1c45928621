"""On-disk formats.

``MIEG`` dataset files (all little-endian)::

    offset  size            field
    0       4               magic b"MIEG"
    4       4   u32         version (1)
    8       4   u32         n_trials
    12      4   u32         n_channels
    16      4   u32         n_samples
    20      4   f32         sample_rate
    24      4   u32         n_classes
    28      2*n_trials u16  labels
    ...     4*T*C*S f32     data, trial-major, then channel, then sample

Everything else (CSP models, normalizers, feature tensors, network
checkpoints) goes into an ``.npz`` artifact whose ``__meta__`` entry is a JSON
document carrying the format name, version and kind.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..dsp import EpochSet
from ..errors import FormatError, InvalidParameterError

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "dataset_nbytes",
    "encode_dataset",
    "decode_dataset",
    "save_dataset",
    "load_dataset",
    "save_artifact",
    "load_artifact",
    "ARTIFACT_VERSION",
]

MAGIC = b"MIEG"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIfI")
HEADER_SIZE = _HEADER.size  # 28
_U32_MAX = 2 ** 32 - 1

ARTIFACT_FORMAT = "eegdqn-artifact"
ARTIFACT_VERSION = 1


def dataset_nbytes(n_trials, n_channels, n_samples):
    """Total file size implied by a header."""
    return HEADER_SIZE + 2 * n_trials + 4 * n_trials * n_channels * n_samples


def encode_dataset(epochs):
    """Serialize an :class:`EpochSet`; samples and rate are stored as float32."""
    n, c, s = epochs.data.shape
    k = int(epochs.n_classes)
    if max(n, c, s, k) > _U32_MAX:
        raise InvalidParameterError("dimension does not fit in u32")
    if k > 2 ** 16:
        raise InvalidParameterError("labels must fit in u16")
    header = _HEADER.pack(MAGIC, VERSION, n, c, s, float(epochs.sample_rate_hz), k)
    labels = np.asarray(epochs.labels, dtype="<u2").tobytes()
    data = np.asarray(epochs.data, dtype="<f4").tobytes(order="C")
    return header + labels + data


def decode_dataset(buf):
    """Parse bytes produced by :func:`encode_dataset`, validating every field."""
    buf = bytes(buf)
    if len(buf) < HEADER_SIZE:
        raise FormatError(
            f"size mismatch: file has {len(buf)} bytes, header alone needs {HEADER_SIZE}",
            offset=len(buf))
    magic, version, n, c, s, fs, k = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}", offset=4)
    for off, val, name in ((12, c, "n_channels"), (16, s, "n_samples"), (24, k, "n_classes")):
        if val == 0:
            raise FormatError(f"{name} must be positive", offset=off)
    if not (np.isfinite(fs) and fs > 0):
        raise FormatError(f"sample rate {fs} is not finite and positive", offset=20)
    expected = dataset_nbytes(n, c, s)
    if len(buf) != expected:
        raise FormatError(
            f"size mismatch: expected {expected} bytes from header, got {len(buf)}",
            offset=min(len(buf), expected))
    labels = np.frombuffer(buf, dtype="<u2", count=n, offset=HEADER_SIZE).astype(np.int64)
    bad = np.flatnonzero(labels >= k)
    if len(bad):
        raise FormatError(f"label {labels[bad[0]]} of trial {bad[0]} >= n_classes {k}",
                          offset=HEADER_SIZE + 2 * int(bad[0]))
    data = np.frombuffer(buf, dtype="<f4", count=n * c * s, offset=HEADER_SIZE + 2 * n)
    if not np.all(np.isfinite(data)):
        first = int(np.flatnonzero(~np.isfinite(data))[0])
        raise FormatError("non-finite sample value", offset=HEADER_SIZE + 2 * n + 4 * first)
    return EpochSet(data.reshape(n, c, s).astype(np.float64), labels, float(fs),
                    (0.0, s / float(fs)), [f"ch{i}" for i in range(c)], int(k))


def save_dataset(path, epochs):
    Path(path).write_bytes(encode_dataset(epochs))


def load_dataset(path):
    return decode_dataset(Path(path).read_bytes())


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def save_artifact(path, kind, arrays, meta=None):
    """Write named arrays plus JSON metadata to an ``.npz`` file."""
    header = {"format": ARTIFACT_FORMAT, "version": ARTIFACT_VERSION, "kind": kind,
              "meta": _jsonable(meta or {})}
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    if "__meta__" in payload:
        raise InvalidParameterError("'__meta__' is reserved")
    payload["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    bio = io.BytesIO()
    np.savez(bio, **payload)
    Path(path).write_bytes(bio.getvalue())


def load_artifact(path, kind=None):
    """Return ``(arrays, meta)``; checks format, version and (optionally) kind."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a readable artifact ({exc})") from exc
    raw = arrays.pop("__meta__", None)
    if raw is None:
        raise FormatError(f"{path}: missing artifact header")
    header = json.loads(raw.tobytes().decode())
    if header.get("format") != ARTIFACT_FORMAT:
        raise FormatError(f"{path}: unknown artifact format {header.get('format')!r}")
    if header.get("version") != ARTIFACT_VERSION:
        raise FormatError(f"{path}: unsupported artifact version {header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} artifact, found {header.get('kind')!r}")
    return arrays, header["meta"]
