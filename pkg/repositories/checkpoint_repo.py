"""
repositories/checkpoint_repo.py
-------------------------------
Binary checkpoint persistence.

Layout:
    8 bytes   magic b"PROPCKPT"
    4 bytes   little-endian uint32 header length
    header    UTF-8 JSON: version, kind, key_len, layer shapes and activations,
              modulated indices, config hash, seed
    payload   little-endian float64 parameters: base (W0, b0, W1, ...), then
              every encoder in ascending layer index, then the optional
              frozen reference network
"""

import json
import os
import struct
from typing import Optional

import numpy as np

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from models.checkpoint import CHECKPOINT_KINDS, Checkpoint
from models.network import DenseNet, Layer
from models.policy import KeyEncoder, PropPolicy
from utils.errors import StorageError
from utils.logger import get_logger

logger = get_logger(__name__)

_DTYPE = np.dtype("<f8")


def _describe(net: DenseNet) -> dict:
    return {"shapes": [list(s) for s in net.shapes()], "activations": net.activations()}


def _pack(net: DenseNet) -> list[bytes]:
    return [np.ascontiguousarray(p, dtype=_DTYPE).tobytes() for _, p in net.iter_params()]


def _unpack(spec: dict, payload: np.ndarray, offset: int) -> tuple[DenseNet, int]:
    layers = []
    for (out_dim, in_dim), act in zip(spec["shapes"], spec["activations"]):
        w_size, b_size = out_dim * in_dim, out_dim
        if offset + w_size + b_size > payload.size:
            raise StorageError("checkpoint payload is truncated")
        w = payload[offset:offset + w_size].reshape(out_dim, in_dim).copy()
        offset += w_size
        b = payload[offset:offset + b_size].copy()
        offset += b_size
        layers.append(Layer(weight=w, bias=b, activation=act))
    return DenseNet(layers=layers), offset


class CheckpointRepository:
    """Reads and writes versioned checkpoints."""

    def save(
        self,
        path: str,
        model,
        kind: str,
        key_len: int = 0,
        config_hash: str = "",
        seed: int = 0,
    ) -> str:
        """
        Persist a DenseNet ('dense', 'baseline') or a PropPolicy ('policy').

        Raises:
            StorageError: If the file cannot be written.
        """
        if kind not in CHECKPOINT_KINDS:
            raise ValueError(f"unknown checkpoint kind '{kind}'")
        header = {
            "version": CHECKPOINT_VERSION,
            "kind": kind,
            "key_len": int(key_len),
            "config_hash": config_hash,
            "seed": int(seed),
        }
        if isinstance(model, PropPolicy):
            header["key_len"] = model.key_len
            header["base"] = _describe(model.base)
            header["modulated"] = model.modulated_indices
            header["encoders"] = [_describe(model.encoders[i].net) for i in model.modulated_indices]
            header["reference"] = _describe(model.frozen_reference) if model.frozen_reference is not None else None
            chunks = _pack(model.base)
            for i in model.modulated_indices:
                chunks += _pack(model.encoders[i].net)
            if model.frozen_reference is not None:
                chunks += _pack(model.frozen_reference)
        else:
            header["base"] = _describe(model)
            header["modulated"] = []
            header["encoders"] = []
            header["reference"] = None
            chunks = _pack(model)

        raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
        try:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(CHECKPOINT_MAGIC)
                fh.write(struct.pack("<I", len(raw_header)))
                fh.write(raw_header)
                for chunk in chunks:
                    fh.write(chunk)
        except OSError as e:
            logger.error(f"Failed to write checkpoint {path}: {e}")
            raise StorageError(f"cannot write checkpoint '{path}': {e}") from e
        logger.info(f"Checkpoint written: {path} ({kind}, hash {config_hash or '-'})")
        return path

    def load(self, path: str, expect_kind: Optional[str] = None) -> Checkpoint:
        """
        Raises:
            StorageError: Missing/unreadable file, bad magic, version mismatch,
                truncated payload or an unexpected kind.
        """
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as e:
            raise StorageError(f"cannot read checkpoint '{path}': {e}") from e

        magic_len = len(CHECKPOINT_MAGIC)
        if data[:magic_len] != CHECKPOINT_MAGIC or len(data) < magic_len + 4:
            raise StorageError(f"'{path}' is not a checkpoint")
        (header_len,) = struct.unpack("<I", data[magic_len:magic_len + 4])
        start = magic_len + 4
        try:
            header = json.loads(data[start:start + header_len].decode("utf-8"))
        except ValueError as e:
            raise StorageError(f"corrupt checkpoint header in '{path}'") from e
        if header.get("version") != CHECKPOINT_VERSION:
            raise StorageError(
                f"checkpoint '{path}' has version {header.get('version')}, expected {CHECKPOINT_VERSION}"
            )
        kind = header.get("kind")
        if expect_kind is not None and kind != expect_kind:
            raise StorageError(f"checkpoint '{path}' holds a '{kind}', expected '{expect_kind}'")

        payload_bytes = data[start + header_len:]
        if len(payload_bytes) % _DTYPE.itemsize:
            raise StorageError(f"checkpoint '{path}' payload is misaligned")
        payload = np.frombuffer(payload_bytes, dtype=_DTYPE)

        base, offset = _unpack(header["base"], payload, 0)
        model = base
        if kind == "policy":
            encoders = {}
            for index, spec in zip(header["modulated"], header["encoders"]):
                net, offset = _unpack(spec, payload, offset)
                encoders[int(index)] = KeyEncoder(net=net, layer_index=int(index))
            reference = None
            if header.get("reference"):
                reference, offset = _unpack(header["reference"], payload, offset)
            model = PropPolicy(base=base, encoders=encoders, key_len=int(header["key_len"]), frozen_reference=reference)
        if offset != payload.size:
            raise StorageError(f"checkpoint '{path}' has {payload.size - offset} trailing values")

        logger.info(f"Checkpoint loaded: {path} ({kind})")
        return Checkpoint(
            kind=kind,
            model=model,
            key_len=int(header.get("key_len", 0)),
            config_hash=header.get("config_hash", ""),
            seed=int(header.get("seed", 0)),
            header=header,
        )
