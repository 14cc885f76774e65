"""File formats: JSON matrix documents, channel sets, weights, CSV tables.

Complex matrices are stored as row-major flat lists of [real, imag] pairs.
CSV floats are written with repr(), which round-trips exactly and keeps
reruns byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from typing import Any

import numpy as np

from .channel import ChannelSet
from .errors import InvalidArgument

CHSET_FORMAT = "chset-v1"
WMAT_FORMAT = "wmat-v1"


def matrix_to_json(matrix: np.ndarray) -> dict:
    """Encode a complex matrix as shape plus row-major [re, im] pairs."""
    arr = np.atleast_2d(np.asarray(matrix, dtype=complex))
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("cannot serialize non-finite matrix entries")
    flat = arr.reshape(-1)
    return {"shape": [int(arr.shape[0]), int(arr.shape[1])],
            "data": [[float(v.real), float(v.imag)] for v in flat]}


def matrix_from_json(doc: dict) -> np.ndarray:
    try:
        rows, cols = (int(v) for v in doc["shape"])
        data = doc["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"malformed matrix document: {exc}") from exc
    if len(data) != rows * cols:
        raise InvalidArgument(
            f"matrix document claims {rows}x{cols} but carries "
            f"{len(data)} entries")
    flat = np.array([complex(re, im) for re, im in data], dtype=complex)
    return flat.reshape(rows, cols)


def save_channel_set(channels: ChannelSet, path: str) -> None:
    """Write one channel realization as a .chset.json document."""
    channels.validate()
    doc = {
        "format": CHSET_FORMAT,
        "carrier_frequency_hz": float(channels.carrier_frequency),
        "realization_seed": channels.realization_seed,
        "n_tx": channels.n_tx,
        "n_rx": channels.n_rx,
        "group_sizes": list(channels.group_sizes),
        "hops": [matrix_to_json(h) for h in channels.h_hops],
        "direct": (matrix_to_json(channels.h_direct)
                   if channels.h_direct is not None else None),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_channel_set(path: str) -> ChannelSet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHSET_FORMAT:
        raise InvalidArgument(
            f"{path} is not a {CHSET_FORMAT} document")
    channels = ChannelSet(
        h_hops=[matrix_from_json(h) for h in doc["hops"]],
        h_direct=(matrix_from_json(doc["direct"])
                  if doc.get("direct") is not None else None),
        carrier_frequency=float(doc["carrier_frequency_hz"]),
        realization_seed=doc.get("realization_seed"),
    )
    channels.validate()
    return channels


def save_weights(w: np.ndarray, b: np.ndarray, path: str,
                 reported_accuracy: float | None = None) -> None:
    """Write a target layer (matrix plus bias) as a .wmat.json document."""
    doc = {
        "format": WMAT_FORMAT,
        "w": matrix_to_json(w),
        "b": matrix_to_json(np.asarray(b, dtype=complex).reshape(-1, 1)),
    }
    if reported_accuracy is not None:
        doc["reported_accuracy"] = float(reported_accuracy)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_weights(path: str) -> tuple[np.ndarray, np.ndarray, float | None]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != WMAT_FORMAT:
        raise InvalidArgument(f"{path} is not a {WMAT_FORMAT} document")
    w = matrix_from_json(doc["w"])
    b = matrix_from_json(doc["b"]).reshape(-1)
    if b.shape[0] != w.shape[0]:
        raise InvalidArgument("bias length does not match the weight rows")
    acc = doc.get("reported_accuracy")
    return w, b, (float(acc) if acc is not None else None)


def format_cell(value: Any) -> str:
    """Deterministic CSV cell formatting.

    Floats go through repr() (exact round-trip, stable across runs); bools
    become true/false; None becomes the empty string.
    """
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def canonical_json(obj: Any) -> str:
    """Key-sorted compact JSON used for hashing semantic content."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def stable_int_hash(text: str) -> int:
    """64-bit integer from a string, stable across runs and platforms."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8],
                          "big")
