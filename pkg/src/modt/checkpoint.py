"""Checkpoint container: a JSON manifest plus a little-endian float blob.

The manifest records configs, the dataset header (and its digest), the
training step, and one (name, shape, byte offset) entry per array in the
blob; model parameters come first, then optimizer moments prefixed with
"opt.m." / "opt.v.". Loading rebuilds a model whose forward outputs are
bitwise identical to the saved one.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .data import DatasetHeader
from .errors import DataFormatError
from .model import DecisionModel, ModelConfig

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


def header_digest(header: DatasetHeader) -> str:
    blob = json.dumps(header.to_json_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(ckpt_dir, model: DecisionModel, train_config_dict, header,
                    step, opt_state=None, metrics_tail=None):
    os.makedirs(ckpt_dir, exist_ok=True)
    dtype = np.dtype("<f4") if model.dtype == np.float32 else np.dtype("<f8")
    entries = []
    arrays = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        a = np.ascontiguousarray(arr, dtype=dtype)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        arrays.append(a)
        offset += a.nbytes

    for name, p in model.params.items():
        push(name, p.values)
    if opt_state is not None:
        for name in model.params:
            push("opt.m." + name, opt_state.m[name])
        for name in model.params:
            push("opt.v." + name, opt_state.v[name])
    manifest = {
        "format": "modt-checkpoint",
        "version": 1,
        "step": int(step),
        "dtype": dtype.str,
        "opt_step": int(opt_state.step) if opt_state is not None else 0,
        "model_config": model.config.to_dict(),
        "train_config": train_config_dict,
        "dataset_header": header.to_json_dict(),
        "dataset_header_digest": header_digest(header),
        "metrics_tail": metrics_tail or [],
        "entries": entries,
    }
    with open(os.path.join(ckpt_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(ckpt_dir, BLOB_NAME), "wb") as fh:
        for a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(ckpt_dir):
    """Returns (model, manifest dict, header, opt moments dict or None)."""
    man_path = os.path.join(ckpt_dir, MANIFEST_NAME)
    blob_path = os.path.join(ckpt_dir, BLOB_NAME)
    try:
        with open(man_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"no checkpoint manifest at {man_path}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest is not valid JSON ({exc.msg})") from None
    if manifest.get("format") != "modt-checkpoint" or manifest.get("version") != 1:
        raise DataFormatError("unrecognized checkpoint format")
    dtype = np.dtype(manifest["dtype"])
    try:
        blob = open(blob_path, "rb").read()
    except FileNotFoundError:
        raise DataFormatError(f"no checkpoint blob at {blob_path}") from None
    arrays = {}
    for ent in manifest["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        end = start + count * dtype.itemsize
        if end > len(blob):
            raise DataFormatError(f"blob truncated at entry {ent['name']}")
        arrays[ent["name"]] = np.frombuffer(
            blob[start:end], dtype=dtype).reshape(shape).copy()
    config = ModelConfig.from_dict(manifest["model_config"])
    model = DecisionModel(config, seed=0,
                          dtype=np.float32 if dtype.itemsize == 4 else np.float64)
    for name, p in model.params.items():
        if name not in arrays:
            raise DataFormatError(f"checkpoint missing parameter {name}")
        if tuple(arrays[name].shape) != p.values.shape:
            raise DataFormatError(
                f"parameter {name} has shape {arrays[name].shape}, "
                f"expected {p.values.shape}")
        p.values = arrays[name].astype(model.dtype, copy=False)
    header = DatasetHeader.from_json_dict(manifest["dataset_header"])
    moments = None
    if any(k.startswith("opt.m.") for k in arrays):
        moments = {
            "m": {n: arrays["opt.m." + n] for n in model.params},
            "v": {n: arrays["opt.v." + n] for n in model.params},
            "step": manifest.get("opt_step", 0),
        }
    return model, manifest, header, moments
