"""Checkpoint container and CSV training log.

Layout: 8 magic bytes, an unsigned 64-bit little-endian header length, a
UTF-8 JSON header, then raw little-endian float64 tensor data. Offsets in
the manifest are relative to the start of the data block.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .model import RegressorConfig, RegressorParams
from .train import AdamState, Normalizer, StepRecord

MAGIC = b"VOKITCK\x00"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def save_checkpoint(path, params: RegressorParams, normalizer: Normalizer, optimizer: AdamState = None, extra=None):
    blocks = [("param", params.tensors)]
    if optimizer is not None:
        blocks += [("adam_m", optimizer.m), ("adam_v", optimizer.v)]
    manifest = []
    chunks = []
    offset = 0
    for group, tensors in blocks:
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()
            manifest.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "normalizer": normalizer.to_dict(),
        "optimizer_step": None if optimizer is None else optimizer.step,
        "tensors": manifest,
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hdr)))
        f.write(hdr)
        for c in chunks:
            f.write(c)


class Checkpoint:
    """Loaded checkpoint: ``params``, ``normalizer``, ``optimizer`` (or None), ``extra``."""

    def __init__(self, params, normalizer, optimizer, extra):
        self.params = params
        self.normalizer = normalizer
        self.optimizer = optimizer
        self.extra = extra


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC or len(data) < 16:
        raise ParseError("not a vokit checkpoint", path=str(path))
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"corrupt checkpoint header: {e}", path=str(path)) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {header.get('format_version')}", path=str(path))
    body = memoryview(data)[16 + n :]
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        end = start + 8 * count
        if end > len(body):
            raise ParseError(f"tensor {entry['name']} runs past end of file", path=str(path))
        arr = np.frombuffer(body[start:end], dtype=_LE_F64).astype(np.float64).reshape(shape)
        groups[entry["group"]][entry["name"]] = arr
    config = RegressorConfig(**header["config"])
    params = RegressorParams(config, groups["param"])
    optimizer = None
    if header.get("optimizer_step") is not None:
        optimizer = AdamState(int(header["optimizer_step"]), groups["adam_m"], groups["adam_v"])
    return Checkpoint(params, Normalizer.from_dict(header["normalizer"]), optimizer, header.get("extra", {}))


LOG_FIELDS = ("step", "total_loss", "l_trans", "l_rot")


def write_log(path, records, append=False):
    """Write step records as CSV ``step,total_loss,l_trans,l_rot``."""
    mode = "a" if append and Path(path).exists() else "w"
    with open(path, mode, newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if mode == "w":
            w.writerow(LOG_FIELDS)
        for r in records:
            w.writerow([r.step, repr(float(r.total_loss)), repr(float(r.l_trans)), repr(float(r.l_rot))])


def read_log(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [StepRecord(int(r["step"]), float(r["total_loss"]), float(r["l_trans"]), float(r["l_rot"])) for r in rows]
