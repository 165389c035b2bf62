"""Dataset and checkpoint files: named-tensor containers with JSON sidecars.

A dataset is an .npz holding float32 arrays "H_real"/"H_imag" of shape
[N, P, N_BS] plus a sidecar <path>.json recording scenario label, seed, config
hash, split and a content hash. Checkpoints reuse the same container for the
model state_dict with a manifest sidecar. Loads verify the content hash and
fail loudly on mismatch; a dataset without a sidecar is importable and comes
back labeled "external".
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .channel import ChannelSample
from .errors import IntegrityError


def _array_hash(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for key in sorted(arrays):
        arr = np.ascontiguousarray(arrays[key])
        digest.update(key.encode())
        digest.update(str(arr.dtype).encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def _write_sidecar(path: Path, meta: dict) -> None:
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_sidecar(path: Path) -> dict | None:
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        return None
    return json.loads(sidecar.read_text())


def save_dataset(samples: list[ChannelSample], path: str | Path, *,
                 seed: int = 0, config_hash: str = "", split: str = "") -> dict:
    """Write samples plus sidecar; returns the sidecar metadata."""
    if not samples:
        raise ValueError("refusing to save an empty dataset")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stack = np.stack([s.h_a for s in samples])
    arrays = {
        "H_real": stack.real.astype(np.float32),
        "H_imag": stack.imag.astype(np.float32),
    }
    np.savez(path, **arrays)
    meta = {
        "scenario_label": samples[0].scenario_label,
        "seed": seed,
        "config_hash": config_hash,
        "split": split,
        "n_samples": len(samples),
        "shape": list(stack.shape),
        "sha256": _array_hash(arrays),
    }
    _write_sidecar(path, meta)
    return meta


def load_dataset(path: str | Path) -> tuple[list[ChannelSample], dict]:
    """Read a dataset, verifying the sidecar hash when one exists.

    Files without a sidecar (foreign imports) load with label/split
    "external" as long as the named arrays have the expected layout.
    """
    path = Path(path)
    try:
        with np.load(path) as data:
            if "H_real" not in data or "H_imag" not in data:
                raise IntegrityError(f"{path}: missing H_real/H_imag arrays")
            arrays = {"H_real": data["H_real"], "H_imag": data["H_imag"]}
    except (zipfile.BadZipFile, OSError, ValueError, EOFError) as exc:
        raise IntegrityError(f"{path}: unreadable container ({exc})") from exc

    real, imag = arrays["H_real"], arrays["H_imag"]
    if real.shape != imag.shape or real.ndim != 3:
        raise IntegrityError(f"{path}: bad array shapes {real.shape} / {imag.shape}")

    meta = _read_sidecar(path)
    if meta is None:
        meta = {"scenario_label": "external", "split": "external",
                "n_samples": real.shape[0], "shape": list(real.shape)}
    else:
        if meta.get("sha256") != _array_hash(arrays):
            raise IntegrityError(f"{path}: content hash does not match sidecar")
        if tuple(meta.get("shape", ())) != real.shape:
            raise IntegrityError(f"{path}: sidecar shape {meta.get('shape')} != {real.shape}")

    label = meta["scenario_label"]
    h = real.astype(np.float32) + 1j * imag.astype(np.float32)
    samples = [ChannelSample(h_a=h[i], scenario_label=label) for i in range(h.shape[0])]
    return samples, meta


def save_checkpoint(model: torch.nn.Module, path: str | Path, *,
                    config_hash: str = "", epoch: int = 0,
                    val_nmse_db: float = float("nan"),
                    partition_spec: str = "") -> dict:
    """Write the model state_dict as named arrays plus a manifest sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(path, **arrays)
    manifest = {
        "config_hash": config_hash,
        "epoch": epoch,
        "val_nmse_db": val_nmse_db,
        "partition_spec": partition_spec,
        "keys": sorted(arrays),
        "sha256": _array_hash(arrays),
    }
    _write_sidecar(path, manifest)
    return manifest


def load_checkpoint(model: torch.nn.Module, path: str | Path) -> dict:
    """Load arrays into the model's state_dict (strict); returns the manifest."""
    path = Path(path)
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (zipfile.BadZipFile, OSError, ValueError, EOFError) as exc:
        raise IntegrityError(f"{path}: unreadable container ({exc})") from exc

    manifest = _read_sidecar(path)
    if manifest is not None and manifest.get("sha256") != _array_hash(arrays):
        raise IntegrityError(f"{path}: content hash does not match manifest")

    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state, strict=True)
    if manifest is None:
        manifest = {"config_hash": "", "keys": sorted(arrays)}
    return manifest
