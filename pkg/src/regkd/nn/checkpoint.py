"""Flat key -> tensor checkpoint files.

Layout::

    b"RKDCKPT\\0"                  8-byte magic
    uint64 little-endian          length of the JSON header in bytes
    JSON header (utf-8)           {"format", "version", "metadata", "tensors"}
    tensor payloads               little-endian float64, C order, back to back

Each ``tensors`` entry is ``{"name", "shape", "offset", "count"}`` where
``offset`` counts float64 elements from the start of the payload block.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RKDCKPT\0"
FORMAT_TAG = "regkd-flat-tensor"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    payload = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        payload.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps(
        {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "metadata": metadata or {},
            "tensors": entries,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)
    return path


def load_checkpoint(path):
    """Return ``(tensors, metadata)`` from a file written by ``save_checkpoint``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a regkd checkpoint (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: unknown format tag {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    data = np.frombuffer(blob, dtype="<f8", offset=pos)
    tensors = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        stop = start + entry["count"]
        if stop > data.size:
            raise ValueError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = data[start:stop].astype(np.float64).reshape(entry["shape"])
    return tensors, header["metadata"]
