"""Checkpoint I/O: readable key/value header followed by raw weight blobs.

Layout:

    shiftattn-checkpoint v1\n
    byteorder=little\n
    dtype=float32\n
    config.<field>=<value>\n            (one line per config entry)
    param=<name> shape=<d0,d1,...> offset=<bytes>\n
    end-header\n
    <raw little-endian blobs, declaration order>

Offsets are relative to the end of the header. The loader validates
every declared shape against the blob it reads.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

_MAGIC = "shiftattn-checkpoint v1"


def save_checkpoint(path, config: dict, named_arrays) -> None:
    """Write ``named_arrays`` (ordered (name, ndarray) pairs) with ``config``."""
    named_arrays = [(name, np.asarray(arr)) for name, arr in named_arrays]
    dtypes = {arr.dtype for _, arr in named_arrays}
    if len(dtypes) > 1:
        raise ContractError(f"mixed dtypes in checkpoint: {sorted(map(str, dtypes))}")
    dtype = named_arrays[0][1].dtype if named_arrays else np.dtype("float32")

    lines = [_MAGIC, "byteorder=little", f"dtype={dtype.name}"]
    for key in sorted(config):
        lines.append(f"config.{key}={config[key]}")
    offset = 0
    blobs = []
    for name, arr in named_arrays:
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"param={name} shape={shape} offset={offset}")
        blob = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        blobs.append(blob)
        offset += len(blob)
    lines.append("end-header")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Return (config: dict[str, str], params: dict[str, ndarray])."""
    with open(path, "rb") as f:
        raw = f.read()
    header_end = raw.find(b"end-header\n")
    if header_end < 0:
        raise ContractError(f"{path}: missing checkpoint header terminator")
    header = raw[:header_end].decode("utf-8").splitlines()
    body = raw[header_end + len(b"end-header\n"):]
    if not header or header[0] != _MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")

    config: dict[str, str] = {}
    declared = []
    dtype = np.dtype("float32")
    for line in header[1:]:
        if line.startswith("dtype="):
            dtype = np.dtype(line.split("=", 1)[1])
        elif line.startswith("config."):
            key, value = line[len("config."):].split("=", 1)
            config[key] = value
        elif line.startswith("param="):
            fields = dict(part.split("=", 1) for part in line.split(" "))
            shape = tuple(int(s) for s in fields["shape"].split(",") if s)
            declared.append((fields["param"], shape, int(fields["offset"])))

    params: dict[str, np.ndarray] = {}
    le = dtype.newbyteorder("<")
    for name, shape, offset in declared:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        blob = body[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise ContractError(f"{path}: truncated blob for parameter {name!r}")
        arr = np.frombuffer(blob, dtype=le).astype(dtype).reshape(shape)
        params[name] = arr
    return config, params
