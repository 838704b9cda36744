"""EMB1 archive writer/reader: the byte contract shared with the audio pipeline.

Layout, all little-endian: 4-byte magic "EMB1", u32 dim, u32 count, then per
record a u16 id byte-length, the UTF-8 id, and dim float32 values.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"EMB1"


class Emb1Error(Exception):
    pass


def write_emb1(path: str, records: "list[tuple[str, np.ndarray]]") -> None:
    if not records:
        raise Emb1Error("refusing to write an empty archive")
    dim = int(np.asarray(records[0][1]).size)
    parts = [MAGIC, struct.pack("<II", dim, len(records))]
    for utt_id, vec in records:
        vec = np.asarray(vec, dtype="<f4").ravel()
        if vec.size != dim:
            raise Emb1Error(f"{utt_id!r}: dim {vec.size} != archive dim {dim}")
        raw = utt_id.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(vec.tobytes())
    payload = b"".join(parts)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_emb1(path: str) -> "dict[str, np.ndarray]":
    out: "dict[str, np.ndarray]" = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise Emb1Error(f"{path}: bad magic {magic!r}")
        dim, count = struct.unpack("<II", f.read(8))
        for _ in range(count):
            (id_len,) = struct.unpack("<H", f.read(2))
            utt_id = f.read(id_len).decode("utf-8")
            vec = np.frombuffer(f.read(4 * dim), dtype="<f4")
            if vec.size != dim:
                raise Emb1Error(f"{path}: truncated record {utt_id!r}")
            out[utt_id] = vec.copy()
    return out
