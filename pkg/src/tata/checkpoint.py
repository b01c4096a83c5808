"""Checkpoint containers: a one-line UTF-8 JSON header (config, kind,
parameter manifest, format version) followed by the raw little-endian
float64 parameter payload.  Loading verifies the manifest against the
payload length, so truncated files fail loudly."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, TransformerEncoder, Vocabulary
from .model import ModelKind, TataModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or mismatched checkpoint."""


def _write_container(path, header: dict, params: dict) -> None:
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].values, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["manifest"] = manifest
    header["total_values"] = offset
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        for chunk in chunks:
            fh.write(chunk)


def _read_container(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} unsupported (expected {FORMAT_VERSION})"
        )
    payload = blob[newline + 1 :]
    total = header["total_values"]
    if len(payload) != total * 8:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes but manifest totals {total * 8}"
        )
    values = np.frombuffer(payload, dtype="<f8")
    params = {}
    consumed = 0
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if entry["offset"] != consumed:
            raise CheckpointError(f"{path}: manifest offsets are not contiguous at {entry['name']}")
        params[entry["name"]] = values[consumed : consumed + size].reshape(shape).copy()
        consumed += size
    if consumed != total:
        raise CheckpointError(f"{path}: manifest covers {consumed} values, header says {total}")
    return header, params


def save_encoder(encoder: TransformerEncoder, vocab: Vocabulary, path, role: str = "encoder") -> None:
    header = {
        "payload_kind": "encoder",
        "role": role,
        "frozen": encoder.frozen,
        "config": encoder.config.to_json(),
        "vocab": vocab.id_to_token,
    }
    _write_container(path, header, encoder.parameters())


def load_encoder(path, expect_role: str | None = None) -> tuple[TransformerEncoder, Vocabulary]:
    header, params = _read_container(path)
    if header.get("payload_kind") != "encoder":
        raise CheckpointError(f"{path}: holds a {header.get('payload_kind')!r} payload, not an encoder")
    if expect_role is not None and header.get("role") != expect_role:
        raise CheckpointError(
            f"{path}: role mismatch: checkpoint holds {header.get('role')!r}, expected {expect_role!r}"
        )
    config = EncoderConfig.from_json(header["config"])
    encoder = TransformerEncoder(config, seed=0)
    for name, tensor in encoder.parameters().items():
        if name not in params:
            raise CheckpointError(f"{path}: parameter {name} missing from manifest")
        if params[name].shape != tensor.values.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: {params[name].shape} vs {tensor.values.shape}"
            )
        tensor.values = params[name]
    if header.get("frozen"):
        encoder.freeze()
    return encoder, Vocabulary(header["vocab"])


def save_model(model: TataModel, path) -> None:
    header = {
        "payload_kind": "model",
        "kind": model.kind.value,
        "head_dropout": model.head_dropout,
        "config": {
            "joint": model.joint_encoder.config.to_json(),
            "taw": model.taw_encoder.config.to_json() if model.taw_encoder else None,
            "tag": model.tag_encoder.config.to_json() if model.tag_encoder else None,
        },
        "vocab": model.vocab.id_to_token,
    }
    params = dict(model.trainable_parameters())
    params.update(model.frozen_parameters())
    _write_container(path, header, params)


def load_model(path, expect_kind: ModelKind | str | None = None) -> TataModel:
    header, params = _read_container(path)
    if header.get("payload_kind") != "model":
        raise CheckpointError(f"{path}: holds a {header.get('payload_kind')!r} payload, not a model")
    kind = ModelKind(header["kind"])
    if expect_kind is not None and kind != ModelKind(expect_kind):
        raise CheckpointError(
            f"{path}: kind mismatch: checkpoint holds {kind.value!r}, expected {ModelKind(expect_kind).value!r}"
        )
    vocab = Vocabulary(header["vocab"])
    cfg = header["config"]

    def rebuild(prefix: str, config_json) -> TransformerEncoder | None:
        if config_json is None:
            return None
        enc = TransformerEncoder(EncoderConfig.from_json(config_json), seed=0)
        for name, tensor in enc.parameters().items():
            key = f"{prefix}.{name}"
            if key not in params:
                raise CheckpointError(f"{path}: parameter {key} missing from manifest")
            tensor.values = params[key]
        return enc

    joint = rebuild("joint", cfg["joint"])
    taw = rebuild("taw", cfg["taw"])
    tag = rebuild("tag", cfg["tag"])
    if taw is not None:
        taw.freeze()
    if tag is not None:
        tag.freeze()
    model = TataModel(
        kind,
        vocab,
        joint,
        taw_encoder=taw,
        tag_encoder=tag,
        head_dropout=header["head_dropout"],
        seed=0,
    )
    for name, tensor in model.trainable_parameters().items():
        if name.startswith("joint."):
            continue  # already loaded above
        if name not in params:
            raise CheckpointError(f"{path}: parameter {name} missing from manifest")
        tensor.values = params[name]
    return model
