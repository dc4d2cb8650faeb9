"""Self-describing binary container: one JSON header line + raw float64 payload.

Layout: a single UTF-8 JSON object terminated by ``\\n``, followed by the
arrays named in ``header["arrays"]``, each serialized as little-endian
float64 in document order. The header records shapes and a sha256 checksum
per array, so any truncation or byte-level tampering is detected at load
time. ``head -1 file`` shows the full header, which keeps the format
auditable.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import FormatError, IoError

MAGIC = "stratcal-container"


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def write_container(path, kind: str, version: int, meta: dict, arrays: dict) -> None:
    """Write ``arrays`` (name -> ndarray) with a self-describing header.

    The write is atomic: a temp file in the target directory is renamed
    over ``path`` only after a successful flush.
    """
    entries = []
    payloads = []
    for name, arr in arrays.items():
        raw = _array_bytes(np.asarray(arr))
        entries.append(
            {
                "name": name,
                "shape": list(np.asarray(arr).shape),
                "dtype": "<f8",
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        payloads.append(raw)
    header = {
        "magic": MAGIC,
        "kind": kind,
        "version": version,
        "meta": meta,
        "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(payloads)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-container-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_container(path, kind: str, expected_version: int):
    """Read a container, returning ``(meta, arrays)``.

    Raises FormatError on corruption, truncation, wrong kind, or a version
    other than ``expected_version``.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    newline = blob.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing header terminator")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc

    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise FormatError(f"{path}: not a {MAGIC} file")
    if header.get("kind") != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    if header.get("version") != expected_version:
        raise FormatError(
            f"{path}: unsupported version {header.get('version')!r} "
            f"(this build reads version {expected_version})"
        )

    payload = blob[newline + 1 :]
    arrays = {}
    offset = 0
    for entry in header.get("arrays", []):
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        raw = payload[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise FormatError(f"{path}: truncated payload for array {entry['name']!r}")
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise FormatError(f"{path}: checksum mismatch for array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing bytes after payload")
    return header.get("meta", {}), arrays
