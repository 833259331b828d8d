"""Portable on-disk container for paired datasets and tensor blobs.

A dataset container is a directory holding ``manifest.json`` plus one blob
file per tensor. The blob layout is:

    bytes  0..15   magic: b"NFORGE01" padded with zeros to 16 bytes
    byte   16      dtype code: 1 = float32, 2 = float64
    bytes  17..20  little-endian u32 rank
    then           rank * little-endian u64 dims
    then           row-major little-endian payload

The checkpoint format (see :mod:`neuroforge.model.checkpoint`) reuses the
same blob primitive. Manifests are serialized deterministically (sorted keys,
compact separators) so identical datasets produce byte-identical containers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError, SchemaVersionError
from .signal import MultichannelTimeSeries, PairedDataset, PairedSample

MAGIC = b"NFORGE01" + b"\x00" * 8
SCHEMA_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype(np.float32), 2: np.dtype(np.float64)}


def write_blob(path, array) -> None:
    """Write one tensor in the NFORGE01 blob format."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float64)
    code = _DTYPE_CODES[arr.dtype]
    header = MAGIC + struct.pack("<BI", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_blob(path) -> np.ndarray:
    """Read one tensor, verifying magic, dtype, and exact byte count."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 5:
        raise DataIntegrityError(f"{path}: blob shorter than its fixed header")
    magic = raw[: len(MAGIC)]
    if magic != MAGIC:
        if magic[:6] == b"NFORGE":
            raise SchemaVersionError(
                f"{path}: blob magic {magic[:8]!r} is not the supported NFORGE01"
            )
        raise DataIntegrityError(f"{path}: bad blob magic {magic[:8]!r}")
    off = len(MAGIC)
    code, rank = struct.unpack_from("<BI", raw, off)
    off += 5
    if code not in _CODE_DTYPES:
        raise DataIntegrityError(f"{path}: unknown dtype code {code}")
    if len(raw) < off + 8 * rank:
        raise DataIntegrityError(f"{path}: truncated dims header (rank {rank})")
    dims = struct.unpack_from(f"<{rank}Q", raw, off)
    off += 8 * rank
    dtype = _CODE_DTYPES[code]
    expected = off + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise DataIntegrityError(
            f"{path}: payload length mismatch, expected {expected} bytes, got {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), offset=off)
    return flat.astype(dtype, copy=True).reshape(dims)


def dump_json(obj) -> bytes:
    """Deterministic JSON serialization used for all manifests."""
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _modality_schema(epoch: MultichannelTimeSeries) -> dict:
    return {
        "channel_ids": list(epoch.channel_ids),
        "sample_rate_hz": epoch.sample_rate_hz,
        "n_samples": epoch.n_samples,
    }


def save_container(dataset: PairedDataset, path) -> None:
    """Write a paired dataset to ``path`` (a directory, created if missing)."""
    root = Path(path)
    (root / "blobs").mkdir(parents=True, exist_ok=True)
    index = []
    for i, s in enumerate(dataset.samples):
        src_name = f"blobs/s{i:05d}_source.blob"
        tgt_name = f"blobs/s{i:05d}_target.blob"
        write_blob(root / src_name, s.source_epoch.data)
        write_blob(root / tgt_name, s.target_epoch.data)
        index.append(
            {
                "source_blob": src_name,
                "target_blob": tgt_name,
                "source_start_s": s.source_epoch.start_time_s,
                "target_start_s": s.target_epoch.start_time_s,
                "condition": s.condition_label,
                "subject": s.subject_id,
                "group": s.group_id,
                "synthetic": bool(s.synthetic),
            }
        )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "paired_dataset",
        "n_samples": dataset.n_samples,
        "modalities": {},
        "metadata": dataset.manifest,
        "samples": index,
    }
    if dataset.samples:
        manifest["modalities"] = {
            "source": _modality_schema(dataset.samples[0].source_epoch),
            "target": _modality_schema(dataset.samples[0].target_epoch),
        }
    (root / "manifest.json").write_bytes(dump_json(manifest))


def load_container(path) -> PairedDataset:
    """Load a paired dataset; validates schema version before touching blobs."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataIntegrityError(f"{root}: missing manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise DataIntegrityError(f"{manifest_path}: manifest is not valid JSON: {e}") from e
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{root}: container schema version {version!r} is not supported "
            f"(this build reads version {SCHEMA_VERSION}); refusing partial load"
        )
    if manifest.get("kind") != "paired_dataset":
        raise DataIntegrityError(f"{root}: manifest kind {manifest.get('kind')!r} unexpected")
    mods = manifest.get("modalities", {})
    samples = []
    for rec in manifest.get("samples", []):
        src = read_blob(root / rec["source_blob"])
        tgt = read_blob(root / rec["target_blob"])
        samples.append(
            PairedSample(
                source_epoch=MultichannelTimeSeries(
                    channel_ids=tuple(mods["source"]["channel_ids"]),
                    sample_rate_hz=float(mods["source"]["sample_rate_hz"]),
                    start_time_s=float(rec["source_start_s"]),
                    data=src,
                ),
                target_epoch=MultichannelTimeSeries(
                    channel_ids=tuple(mods["target"]["channel_ids"]),
                    sample_rate_hz=float(mods["target"]["sample_rate_hz"]),
                    start_time_s=float(rec["target_start_s"]),
                    data=tgt,
                ),
                condition_label=rec["condition"],
                subject_id=rec["subject"],
                group_id=rec["group"],
                synthetic=bool(rec.get("synthetic", False)),
            )
        )
    return PairedDataset(samples=tuple(samples), manifest=manifest.get("metadata", {}))
