"""SPRC checkpoint files.

Layout::

    b"SPRC"                       magic
    uint32 LE                     format version (1)
    uint32 LE                     header length in bytes
    UTF-8 JSON header             layers, shapes, payload_offset, optional
                                  partition / mask / penalty settings
    float32 LE * n_params         parameters in global-index order

Parameters are computed in float64 and rounded to float32 on save
(round-to-nearest-even), so a reload differs by at most half a float32 ulp.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .groups import EntityPartition, PruneMask, empty_mask
from .nnet import Network, layer_from_spec

MAGIC = b"SPRC"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net: Network
    partition: EntityPartition | None = None
    pruned_entities: list[int] = field(default_factory=list)
    prune_bias: bool = True
    meta: dict = field(default_factory=dict)

    def mask(self) -> PruneMask | None:
        """Rebuild the prune mask recorded in the header (None without a partition)."""
        if self.partition is None:
            return None
        mask = empty_mask(self.partition)
        for eid in self.pruned_entities:
            ent = self.partition.entities[eid]
            mask.entity_pruned[eid] = True
            mask.frozen[ent.indices] = True
            if self.prune_bias and ent.bias_index is not None:
                mask.frozen[ent.bias_index] = True
        return mask


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(ckpt: Checkpoint) -> bytes:
    net = ckpt.net
    header = {
        "input_shape": list(net.input_shape),
        "layers": net.describe(),
        "n_params": net.n_params,
        "dtype": "float32-le",
        "meta": ckpt.meta,
        "payload_offset": 0,
    }
    if ckpt.partition is not None:
        header["partition"] = ckpt.partition.to_dict()
        header["pruned_entities"] = [int(i) for i in ckpt.pruned_entities]
        header["prune_bias"] = bool(ckpt.prune_bias)
    # the offset's own digits change the header length; iterate to a fixed point
    for _ in range(4):
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        offset = _PREFIX.size + len(blob)
        if header["payload_offset"] == offset:
            break
        header["payload_offset"] = offset
    with np.errstate(over="ignore"):  # a diverged net may exceed float32
        payload = net.params.astype("<f4").tobytes()
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + payload


def loads(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("bad magic")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    offset = header["payload_offset"]
    n = header["n_params"]
    if len(data) != offset + 4 * n:
        raise CheckpointError("payload size does not match header")
    net = Network([layer_from_spec(s) for s in header["layers"]], header["input_shape"], seed=None)
    if net.n_params != n:
        raise CheckpointError("parameter count does not match the declared layers")
    net.params[:] = np.frombuffer(data, dtype="<f4", count=n, offset=offset).astype(np.float64)
    partition = None
    if "partition" in header:
        partition = EntityPartition.from_dict(header["partition"])
    return Checkpoint(
        net,
        partition,
        header.get("pruned_entities", []),
        header.get("prune_bias", True),
        header.get("meta", {}),
    )


def save(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, dumps(ckpt))


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
