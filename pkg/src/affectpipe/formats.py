"""Binary and text file formats shared across pipeline stages.

Four little-endian binary containers, each starting with a 4-byte ASCII magic:

  FEA1  per-utterance feature matrix: magic, u32 dim, u32 frames, row-major f32
  EMB1  embedding archive: magic, u32 dim, u32 count, then records of
        (u16 id byte-length, UTF-8 id, dim x f32)
  TDN1  TDNN model: magic, u32 header length, JSON header, f32 parameter blob
  PLD1  LDA/pLDA backend: magic, u32 header length, JSON header, f32 blobs
        for lda mean, projection, plda mean, between- and within-covariances

plus the plain-text trials (`<id1> <id2> target|nontarget`) and scores
(`<id1> <id2> <score:%.6f>`) files.

All writers go through ``write_atomic`` (temp file + rename in the target
directory), so a crashed run never leaves a truncated artifact behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import BinaryIO, Iterable, Iterator

import numpy as np

FEA_MAGIC = b"FEA1"
EMB_MAGIC = b"EMB1"
TDN_MAGIC = b"TDN1"
PLD_MAGIC = b"PLD1"


class FormatError(Exception):
    """A file does not conform to its declared binary or text format."""


def write_atomic(path: str, data: bytes) -> None:
    """Write bytes to path via a temp file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str) -> None:
    write_atomic(path, text.encode("utf-8"))


def _check_magic(f: BinaryIO, expected: bytes, path: str, base_offset: int = 0) -> None:
    got = f.read(4)
    if got != expected:
        raise FormatError(
            f"{path}: bad magic at offset {base_offset}: expected {expected!r}, got {got!r}"
        )


def _read_exact(f: BinaryIO, n: int, path: str, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated while reading {what} at offset {f.tell() - len(data)}")
    return data


# ---------------------------------------------------------------------------
# FEA1: feature matrices
# ---------------------------------------------------------------------------

def encode_features(feats: np.ndarray) -> bytes:
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {feats.shape}")
    frames, dim = feats.shape
    header = FEA_MAGIC + struct.pack("<II", dim, frames)
    return header + np.ascontiguousarray(feats, dtype="<f4").tobytes()


def write_features(path: str, feats: np.ndarray) -> None:
    write_atomic(path, encode_features(feats))


def read_features(path: str, offset: int = 0) -> np.ndarray:
    with open(path, "rb") as f:
        if offset:
            f.seek(offset)
        _check_magic(f, FEA_MAGIC, path, offset)
        dim, frames = struct.unpack("<II", _read_exact(f, 8, path, "FEA1 header"))
        raw = _read_exact(f, 4 * dim * frames, path, "FEA1 data")
    return np.frombuffer(raw, dtype="<f4").reshape(frames, dim)


def write_feature_index(path: str, entries: Iterable[dict]) -> None:
    """JSONL index of {id, path, offset} rows pointing at FEA1 records."""
    lines = []
    for e in entries:
        lines.append(json.dumps({"id": e["id"], "path": e["path"], "offset": e.get("offset", 0)}))
    write_text_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def read_feature_index(path: str) -> dict[str, tuple[str, int]]:
    index: dict[str, tuple[str, int]] = {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            for key in ("id", "path"):
                if key not in row:
                    raise FormatError(f"{path}:{lineno}: missing key {key!r}")
            if row["id"] in index:
                raise FormatError(f"{path}:{lineno}: duplicate id {row['id']!r}")
            fpath = row["path"]
            if not os.path.isabs(fpath):
                fpath = os.path.join(base, fpath)
            index[row["id"]] = (fpath, int(row.get("offset", 0)))
    return index


# ---------------------------------------------------------------------------
# EMB1: embedding archives
# ---------------------------------------------------------------------------

def encode_embeddings(records: "Iterable[tuple[str, np.ndarray]]") -> bytes:
    items = [(utt_id, np.asarray(vec, dtype="<f4").ravel()) for utt_id, vec in records]
    if not items:
        raise ValueError("cannot encode an empty embedding archive")
    dim = items[0][1].shape[0]
    out = [EMB_MAGIC, struct.pack("<II", dim, len(items))]
    for utt_id, vec in items:
        if vec.shape[0] != dim:
            raise ValueError(f"embedding {utt_id!r} has dim {vec.shape[0]}, archive dim is {dim}")
        raw_id = utt_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ValueError(f"utterance id too long: {utt_id!r}")
        out.append(struct.pack("<H", len(raw_id)))
        out.append(raw_id)
        out.append(vec.tobytes())
    return b"".join(out)


def write_embeddings(path: str, records: "Iterable[tuple[str, np.ndarray]]") -> None:
    write_atomic(path, encode_embeddings(records))


def read_embeddings(path: str) -> "dict[str, np.ndarray]":
    """Read an EMB1 archive into an ordered id -> f32 vector mapping."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        _check_magic(f, EMB_MAGIC, path)
        dim, count = struct.unpack("<II", _read_exact(f, 8, path, "EMB1 header"))
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(f, 2, path, f"record {i} id length"))
            utt_id = _read_exact(f, id_len, path, f"record {i} id").decode("utf-8")
            vec = np.frombuffer(_read_exact(f, 4 * dim, path, f"record {i} data"), dtype="<f4")
            if utt_id in out:
                raise FormatError(f"{path}: duplicate id {utt_id!r} in record {i}")
            out[utt_id] = vec.copy()
    return out


# ---------------------------------------------------------------------------
# Headered blob containers (TDN1, PLD1)
# ---------------------------------------------------------------------------

def encode_header_blob(magic: bytes, header: dict, arrays: "list[np.ndarray]") -> bytes:
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<I", len(raw_header)), raw_header]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def read_header_blob(path: str, magic: bytes) -> "tuple[dict, np.ndarray]":
    """Return (header dict, flat f32 array of everything after the header)."""
    with open(path, "rb") as f:
        _check_magic(f, magic, path)
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, path, "header length"))
        raw_header = _read_exact(f, hlen, path, "JSON header")
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable JSON header: {exc}") from exc
        blob = f.read()
    if len(blob) % 4 != 0:
        raise FormatError(f"{path}: parameter blob length {len(blob)} is not a multiple of 4")
    return header, np.frombuffer(blob, dtype="<f4")


def take(flat: np.ndarray, shape: "tuple[int, ...]", cursor: int, path: str) -> "tuple[np.ndarray, int]":
    """Slice `shape` worth of values out of a flat blob, advancing the cursor."""
    n = int(np.prod(shape)) if shape else 1
    if cursor + n > flat.size:
        raise FormatError(f"{path}: parameter blob too short (needed {cursor + n}, have {flat.size})")
    return flat[cursor:cursor + n].reshape(shape).copy(), cursor + n


# ---------------------------------------------------------------------------
# Trials and scores text files
# ---------------------------------------------------------------------------

def write_trials(path: str, trials: "Iterable[tuple[str, str, bool]]") -> None:
    lines = [f"{a} {b} {'target' if t else 'nontarget'}" for a, b, t in trials]
    write_text_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def read_trials(path: str) -> "list[tuple[str, str, bool]]":
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
                raise FormatError(f"{path}:{lineno}: expected '<id1> <id2> target|nontarget'")
            out.append((parts[0], parts[1], parts[2] == "target"))
    return out


def write_scores(path: str, scored: "Iterable[tuple[str, str, float]]") -> None:
    lines = [f"{a} {b} {s:.6f}" for a, b, s in scored]
    write_text_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def read_scores(path: str) -> "list[tuple[str, str, float]]":
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected '<id1> <id2> <score>'")
            try:
                score = float(parts[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad score {parts[2]!r}") from exc
            out.append((parts[0], parts[1], score))
    return out


def iter_jsonl(path: str) -> "Iterator[tuple[int, dict]]":
    """Yield (line number, parsed object) for every non-empty line."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
