"""Checkpoint serialization: a JSON manifest plus a float32 binary blob.

The manifest records, for every parameter in order: name, shape, and byte
offset into the blob.  Values are stored little-endian float32 regardless
of the in-memory dtype, so a save -> load -> save cycle is bit-identical.
The blob lives next to the manifest with a ``.bin`` suffix.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError
from .params import ParamStore

FORMAT_NAME = "ratext-checkpoint"
FORMAT_VERSION = 1


def blob_path(manifest_path: str | Path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def save_checkpoint(
    store: ParamStore,
    path: str | Path,
    tag: str,
    meta: dict | None = None,
    group_names: tuple[str, ...] | None = None,
) -> None:
    """Write ``<path>`` (JSON manifest) and ``<path stem>.bin`` (weights)."""
    path = Path(path)
    names = (
        store.names()
        if group_names is None
        else [n for g in group_names for n in store.groups[g]]
    )
    entries = []
    chunks = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(store[name].data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "tag": tag,
        "dtype": "<f4",
        "total_bytes": offset,
        "params": entries,
        "groups": {g: list(ns) for g, ns in store.groups.items() if set(ns) & set(names)},
        "meta": meta or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(blob_path(path), "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path: str | Path, expect_tag: str | None = None):
    """Read a manifest + blob pair; returns (values, manifest).

    ``values`` maps parameter name to a float32 array shaped per the
    manifest.  Integrity problems (missing files, size mismatch, bad
    format) raise DataError; a tag mismatch raises ContractViolation.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint manifest not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable checkpoint manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT_NAME:
        raise DataError(f"{path} is not a {FORMAT_NAME} manifest")
    if expect_tag is not None and manifest.get("tag") != expect_tag:
        raise ContractViolation(
            f"checkpoint tag mismatch: wanted {expect_tag!r}, found {manifest.get('tag')!r}"
        )
    bpath = blob_path(path)
    if not bpath.exists():
        raise DataError(f"checkpoint blob not found: {bpath}")
    blob = bpath.read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise DataError(
            f"checkpoint blob size mismatch: manifest says {manifest['total_bytes']} "
            f"bytes, file has {len(blob)}"
        )
    values: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise DataError(f"checkpoint entry {entry['name']!r} overruns the blob")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape)
        values[entry["name"]] = arr.copy()
    return values, manifest
