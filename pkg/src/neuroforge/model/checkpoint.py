"""Checkpoint container: manifest plus one blob per named tensor.

Shares the blob primitive with the dataset container. Loading validates
every tensor's shape against the manifest before constructing the network,
and rejects unknown schema versions without partial loads.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .. import container
from ..errors import DataIntegrityError, SchemaVersionError
from .network import DenoiserNetwork, ModalitySchema, ModelParams, NetworkConfig
from .schedule import NoiseSchedule


def save_checkpoint(
    params: ModelParams,
    schedule: NoiseSchedule,
    path,
    loss_curve=None,
    training_config=None,
) -> None:
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    tensors = params.named_tensors()
    tensor_index = {}
    for name, value in sorted(tensors.items()):
        fname = f"tensors/{name.replace('.', '_')}.blob"
        container.write_blob(root / fname, value)
        tensor_index[name] = {
            "file": fname,
            "shape": list(value.shape),
            "dtype": str(value.dtype),
        }
    manifest = {
        "schema_version": container.SCHEMA_VERSION,
        "kind": "checkpoint",
        "network": params.network.config.to_jsonable(),
        "source_schema": params.source_schema.to_jsonable(),
        "target_schema": params.target_schema.to_jsonable(),
        "schedule": schedule.to_jsonable(),
        "assets": params.assets,
        "loss_curve": loss_curve or [],
        "training_config": training_config or {},
        "parameter_count": params.parameter_count(),
        "tensors": tensor_index,
    }
    (root / "manifest.json").write_bytes(container.dump_json(manifest))


def load_checkpoint(path):
    """Load ``(ModelParams, NoiseSchedule, manifest)`` from a directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataIntegrityError(f"{root}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    version = manifest.get("schema_version")
    if version != container.SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{root}: checkpoint schema version {version!r} unsupported "
            f"(this build reads {container.SCHEMA_VERSION})"
        )
    if manifest.get("kind") != "checkpoint":
        raise DataIntegrityError(f"{root}: manifest kind {manifest.get('kind')!r} unexpected")
    source_schema = ModalitySchema.from_jsonable(manifest["source_schema"])
    target_schema = ModalitySchema.from_jsonable(manifest["target_schema"])
    net_config = NetworkConfig.from_jsonable(manifest["network"])
    schedule = NoiseSchedule.from_jsonable(manifest["schedule"])
    net = DenoiserNetwork(source_schema, target_schema, net_config)
    expected = {k: tuple(v.shape) for k, v in net.state_dict().items()}
    loaded = {}
    for name, entry in manifest["tensors"].items():
        if name not in expected:
            raise DataIntegrityError(f"{root}: unexpected tensor {name!r} in checkpoint")
        value = container.read_blob(root / entry["file"])
        if tuple(value.shape) != tuple(entry["shape"]):
            raise DataIntegrityError(
                f"{root}: tensor {name!r} blob shape {value.shape} != manifest "
                f"{tuple(entry['shape'])}"
            )
        if tuple(value.shape) != expected[name]:
            raise DataIntegrityError(
                f"{root}: tensor {name!r} shape {value.shape} does not fit the "
                f"declared architecture {expected[name]}"
            )
        loaded[name] = value
    missing = set(expected) - set(loaded)
    if missing:
        raise DataIntegrityError(f"{root}: checkpoint missing tensors {sorted(missing)}")
    state = {
        k: torch.as_tensor(v, dtype=net.state_dict()[k].dtype) for k, v in loaded.items()
    }
    net.load_state_dict(state)
    params = ModelParams(
        network=net,
        source_schema=source_schema,
        target_schema=target_schema,
        assets=manifest.get("assets", {}),
    )
    params.validate_finite()
    return params, schedule, manifest
