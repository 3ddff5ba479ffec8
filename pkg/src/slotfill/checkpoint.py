"""Deterministic binary checkpoints.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header
(kind, configs, vocab lists, parameter names+shapes in order), then each
parameter's raw float64 bytes (C order, little-endian) concatenated in
the listed order.  No timestamps or environment data anywhere, so equal
models serialize to equal bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .data import Vocabulary
from .errors import ConfigError, DataError
from .models import JointModel, ModelConfig, SlotModel

MAGIC = b"SFCKPT01"
FORMAT_VERSION = 1


def _vocab_dict(vocab):
    return {"words": vocab.words, "labels": vocab.labels, "domains": vocab.domains}


def _vocab_from(d):
    return Vocabulary(d["words"], d["labels"], d["domains"])


def _header_and_params(model):
    if isinstance(model, JointModel):
        params = {}
        for prefix, sub in (("specific", model.specific), ("general", model.general)):
            for k, v in sub.params.items():
                params[f"{prefix}.{k}"] = v
        params.update(model.params)
        header = {
            "format_version": FORMAT_VERSION,
            "kind": "joint",
            "config": {
                "specific": asdict(model.specific.config),
                "general": asdict(model.general.config),
                "specific_kind": model.specific.kind,
                "general_kind": model.general.kind,
                "mlp_hidden_dim": model.mlp_hidden_dim,
                "dropout_rate": model.dropout_rate,
            },
            "vocab": {
                "specific": _vocab_dict(model.specific.vocab),
                "general": _vocab_dict(model.general.vocab),
            },
        }
    else:
        params = model.params
        header = {
            "format_version": FORMAT_VERSION,
            "kind": model.kind,
            "config": asdict(model.config),
            "vocab": _vocab_dict(model.vocab),
        }
    header["params"] = [
        {"name": k, "shape": list(v.data.shape)} for k, v in params.items()
    ]
    return header, params


def serialize(model):
    """The checkpoint as bytes."""
    header, params = _header_and_params(model)
    hj = json.dumps(header, ensure_ascii=True).encode("utf-8")
    blob = b"".join(
        np.ascontiguousarray(v.data, dtype="<f8").tobytes() for v in params.values()
    )
    return MAGIC + struct.pack("<Q", len(hj)) + hj + blob


def save_checkpoint(path, model):
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def params_digest(model):
    """sha256 over the parameter payload; cheap frozen-encoder check."""
    header, params = _header_and_params(model)
    h = hashlib.sha256()
    for k, v in params.items():
        h.update(k.encode("utf-8"))
        h.update(np.ascontiguousarray(v.data, dtype="<f8").tobytes())
    return h.hexdigest()


def _fill_params(params, entries, blob, offset):
    for entry in entries:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in params:
            raise DataError(f"checkpoint names unknown parameter {name!r}")
        want = params[name].data.shape
        if shape != want:
            raise DataError(f"checkpoint shape {shape} for {name!r}, expected {want}")
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        raw = blob[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise DataError("checkpoint truncated")
        params[name].data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    return offset


def load_checkpoint(path):
    """Rebuild a SlotModel or JointModel; round-trips bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {header.get('format_version')!r}")
    blob = raw[start + hlen :]
    kind = header["kind"]
    if kind == "joint":
        cfg = header["config"]
        specific = SlotModel(
            ModelConfig(**cfg["specific"]),
            _vocab_from(header["vocab"]["specific"]),
            cfg["specific_kind"],
            rng=None,
        )
        general = SlotModel(
            ModelConfig(**cfg["general"]),
            _vocab_from(header["vocab"]["general"]),
            cfg["general_kind"],
            rng=None,
        )
        model = JointModel(
            specific, general, rng=None,
            mlp_hidden_dim=cfg["mlp_hidden_dim"], dropout_rate=cfg["dropout_rate"],
        )
        params = {}
        for prefix, sub in (("specific", specific), ("general", general)):
            for k, v in sub.params.items():
                params[f"{prefix}.{k}"] = v
        params.update(model.params)
    elif kind in ("specific", "general", "general-adv"):
        model = SlotModel(
            ModelConfig(**header["config"]), _vocab_from(header["vocab"]), kind, rng=None
        )
        params = model.params
    else:
        raise DataError(f"{path}: unknown checkpoint kind {kind!r}")
    end = _fill_params(params, header["params"], blob, 0)
    if end != len(blob):
        raise DataError(f"{path}: {len(blob) - end} trailing bytes")
    return model
