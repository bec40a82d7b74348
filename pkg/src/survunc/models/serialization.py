"""Versioned JSON model files with base64-encoded array blobs."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

FORMAT = "survunc-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def encode_array(a):
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(blob):
    raw = base64.b64decode(blob["data"].encode("ascii"), validate=True)
    a = np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).copy()
    return a.reshape(blob["shape"])


def dump_state(kind, params, arrays, fmt=FORMAT):
    return {
        "format": fmt,
        "version": VERSION,
        "kind": kind,
        "params": params,
        "arrays": {k: encode_array(v) for k, v in arrays.items()},
    }


def load_state(doc, fmt=FORMAT):
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise ModelFormatError(f"not a {fmt} file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported {fmt} version {doc.get('version')!r} (expected {VERSION})")
    try:
        arrays = {k: decode_array(v) for k, v in doc["arrays"].items()}
        return doc["kind"], doc["params"], arrays
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt {fmt} file: {exc}") from exc


def read_json(path, fmt=FORMAT):
    try:
        with Path(path).open(encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: truncated or invalid JSON ({exc})") from exc


def write_json(doc, path):
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    return path


def _registry():
    from .cox import CoxPH
    from .deepsurv import DeepSurv
    from .forest import RandomSurvivalForest

    return {cls.kind: cls for cls in (CoxPH, DeepSurv, RandomSurvivalForest)}


def model_to_dict(model):
    params, arrays = model.get_state()
    return dump_state(model.kind, params, arrays)


def model_from_dict(doc):
    kind, params, arrays = load_state(doc)
    reg = _registry()
    if kind not in reg:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    return reg[kind].from_state(params, arrays)


def save_model(model, path):
    return write_json(model_to_dict(model), path)


def load_model(path):
    return model_from_dict(read_json(path))
