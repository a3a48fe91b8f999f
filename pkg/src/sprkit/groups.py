"""Prunable entities: partitions, big-M bounds, pruning verdicts and reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .nnet import Network

__all__ = [
    "Entity",
    "EntityPartition",
    "PruneMask",
    "PruneReport",
    "build_filter_partition",
    "estimate_layer_bounds",
    "decide_pruning",
    "apply_mask",
    "empty_mask",
    "report",
    "DegenerateReferenceError",
]

WEIGHT_TOL = 1e-4
ENTITY_FRAC = 0.99
SCHEMA_VERSION = 1


class DegenerateReferenceError(ValueError):
    pass


@dataclass
class Entity:
    id: int
    layer_id: int
    indices: np.ndarray
    M: float = 1.0
    bias_index: int | None = None

    @property
    def u(self) -> int:
        return int(self.indices.size)


@dataclass
class _Block:
    """Entities of one layer sharing the same size, stacked for vectorized math."""

    entity_ids: np.ndarray
    index: np.ndarray  # (k, u) global indices
    M: np.ndarray  # (k,)

    @property
    def u(self) -> int:
        return self.index.shape[1]


class EntityPartition:
    def __init__(self, entities: list[Entity], n_params: int, arch: list[dict] | None = None):
        self.entities = list(entities)
        self.n_params = int(n_params)
        self.arch = arch
        seen = np.zeros(self.n_params, dtype=bool)
        for i, ent in enumerate(self.entities):
            if ent.id != i:
                raise ValueError("entity ids must be 0..N-1 in order")
            if ent.u == 0:
                raise ValueError(f"entity {i} is empty")
            if ent.M <= 0:
                raise ValueError(f"entity {i} has non-positive M")
            if np.any(seen[ent.indices]) or np.unique(ent.indices).size != ent.u:
                raise ValueError(f"entity {i} overlaps another entity")
            seen[ent.indices] = True
        self._prunable = seen
        self.blocks = self._make_blocks()

    def _make_blocks(self) -> list[_Block]:
        groups: dict[tuple[int, int], list[Entity]] = {}
        for ent in self.entities:
            groups.setdefault((ent.layer_id, ent.u), []).append(ent)
        return [
            _Block(
                np.array([e.id for e in ents]),
                np.stack([e.indices for e in ents]),
                np.array([e.M for e in ents], dtype=np.float64),
            )
            for ents in groups.values()
        ]

    def __len__(self):
        return len(self.entities)

    @property
    def total_u(self) -> int:
        return int(sum(e.u for e in self.entities))

    @property
    def prunable_mask(self) -> np.ndarray:
        return self._prunable.copy()

    def nonprunable_mask(self, n: int | None = None) -> np.ndarray:
        if n is not None and n != self.n_params:
            raise ValueError(f"partition built for {self.n_params} parameters, got {n}")
        return ~self._prunable

    def layer_ids(self) -> list[int]:
        return sorted({e.layer_id for e in self.entities})

    def with_bounds(self, bounds: dict[int, float]) -> "EntityPartition":
        """Copy with every entity's M taken from its layer's bound."""
        missing = set(self.layer_ids()) - set(bounds)
        if missing:
            raise KeyError(f"no bound for layers {sorted(missing)}")
        ents = [replace(e, M=float(bounds[e.layer_id])) for e in self.entities]
        return EntityPartition(ents, self.n_params, self.arch)

    def check_network(self, net: Network) -> None:
        if net.n_params != self.n_params or (self.arch is not None and net.describe() != self.arch):
            raise ValueError("partition does not match the network architecture")

    def to_dict(self) -> dict:
        ents = []
        for e in self.entities:
            idx = e.indices
            d = {"id": e.id, "layer": e.layer_id, "M": e.M, "bias": e.bias_index}
            if np.array_equal(idx, np.arange(idx[0], idx[0] + idx.size)):
                d["start"], d["stop"] = int(idx[0]), int(idx[0] + idx.size)
            else:
                d["indices"] = idx.tolist()
            ents.append(d)
        return {"n_params": self.n_params, "arch": self.arch, "entities": ents}

    @classmethod
    def from_dict(cls, d: dict) -> "EntityPartition":
        ents = []
        for e in d["entities"]:
            if "indices" in e:
                idx = np.asarray(e["indices"], dtype=np.int64)
            else:
                idx = np.arange(e["start"], e["stop"], dtype=np.int64)
            ents.append(Entity(e["id"], e["layer"], idx, float(e["M"]), e.get("bias")))
        return cls(ents, d["n_params"], d.get("arch"))


def build_filter_partition(net: Network, include_dense: bool = False, M: float = 1.0) -> EntityPartition:
    """One entity per conv output channel (and per dense output row if asked).

    The last layer with weights is the classifier head and is never
    partitioned; biases are never part of an entity.
    """
    weighted = [lid for lid, sl in enumerate(net.slices) if "weight" in sl]
    head = weighted[-1] if weighted else None
    ents: list[Entity] = []
    for lid in weighted:
        layer = net.layers[lid]
        if lid == head:
            continue
        if layer.kind == "conv2d" or (layer.kind == "dense" and include_dense):
            a, b = net.slices[lid]["weight"]
            ba, _ = net.slices[lid]["bias"]
            n_out = layer.weight_shape[0]
            per = (b - a) // n_out
            for f in range(n_out):
                start = a + f * per
                ents.append(Entity(len(ents), lid, np.arange(start, start + per), M, ba + f))
    if not ents:
        raise ValueError("network has no prunable layers")
    return EntityPartition(ents, net.n_params, net.describe())


def estimate_layer_bounds(reference: Network, partition: EntityPartition) -> dict[int, float]:
    """Per-layer M: the largest |w| over the layer's prunable weights in ``reference``."""
    partition.check_network(reference)
    bounds: dict[int, float] = {}
    for e in partition.entities:
        m = float(np.abs(reference.params[e.indices]).max())
        bounds[e.layer_id] = max(bounds.get(e.layer_id, 0.0), m)
    for lid, m in bounds.items():
        if m == 0.0:
            raise DegenerateReferenceError(f"degenerate reference: layer {lid} has all-zero weights")
    return bounds


@dataclass
class PruneMask:
    entity_pruned: np.ndarray  # (N,) bool
    weight_below: np.ndarray  # (n_params,) bool, |w| < tol
    frozen: np.ndarray  # (n_params,) bool, forced to exactly 0
    frac_below: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_pruned(self) -> int:
        return int(self.entity_pruned.sum())


def empty_mask(partition: EntityPartition) -> PruneMask:
    n = partition.n_params
    return PruneMask(
        np.zeros(len(partition), dtype=bool),
        np.zeros(n, dtype=bool),
        np.zeros(n, dtype=bool),
        np.zeros(len(partition)),
    )


def decide_pruning(
    net: Network,
    part: EntityPartition,
    weight_tol: float = WEIGHT_TOL,
    entity_frac: float = ENTITY_FRAC,
    policy: str = "fraction",
    prune_bias: bool = True,
) -> PruneMask:
    """Per-entity verdicts.

    ``policy="fraction"``: a weight counts as pruned when ``|w| < weight_tol``;
    the entity is pruned when the pruned share is *strictly* above
    ``entity_frac``.  ``policy="linf"``: pruned when ``||w||_inf < weight_tol``.
    """
    if weight_tol <= 0:
        raise ValueError("weight_tol must be positive")
    if not 0 < entity_frac <= 1:
        raise ValueError("entity_frac must lie in (0, 1]")
    if policy not in ("fraction", "linf"):
        raise ValueError(f"unknown pruning policy {policy!r}")
    part.check_network(net)
    w = net.params
    below = np.abs(w) < weight_tol
    n = len(part)
    pruned = np.zeros(n, dtype=bool)
    frac = np.zeros(n)
    frozen = np.zeros(w.size, dtype=bool)
    for e in part.entities:
        frac[e.id] = below[e.indices].sum() / e.u
        if policy == "fraction":
            pruned[e.id] = frac[e.id] > entity_frac
        else:
            pruned[e.id] = np.abs(w[e.indices]).max() < weight_tol
        if pruned[e.id]:
            frozen[e.indices] = True
            if prune_bias and e.bias_index is not None:
                frozen[e.bias_index] = True
    return PruneMask(pruned, below & part.prunable_mask, frozen, frac)


def apply_mask(net: Network, mask: PruneMask) -> Network:
    """Zero every frozen index in place (idempotent)."""
    if mask.frozen.shape != net.params.shape:
        raise ValueError("mask does not match the network's parameter space")
    net.params[mask.frozen] = 0.0
    return net


@dataclass
class PruneReport:
    rows: list[dict]
    pruned_params: int
    total_params: int
    accuracy_before: float | None = None
    accuracy_after: float | None = None

    @property
    def percentage(self) -> float:
        return 100.0 * self.pruned_params / self.total_params if self.total_params else 0.0

    @property
    def n_pruned_entities(self) -> int:
        return sum(r["verdict"] == "pruned" for r in self.rows)

    def per_layer(self) -> dict[int, dict]:
        out: dict[int, dict] = {}
        for r in self.rows:
            d = out.setdefault(r["layer"], {"entities": 0, "pruned_entities": 0, "params": 0, "pruned_params": 0})
            d["entities"] += 1
            d["params"] += r["u"]
            if r["verdict"] == "pruned":
                d["pruned_entities"] += 1
                d["pruned_params"] += r["u"]
        return out

    def summary_line(self) -> str:
        return f"{self.pruned_params} ({self.percentage:.2f})"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["entity_id", "layer", "u", "max_abs", "frac_below", "verdict"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in cols})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "pruned_params": self.pruned_params,
            "total_params": self.total_params,
            "percentage": self.percentage,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "per_layer": {str(k): v for k, v in self.per_layer().items()},
            "entities": self.rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def report(
    net: Network,
    part: EntityPartition,
    mask: PruneMask,
    metrics: dict | None = None,
) -> PruneReport:
    metrics = metrics or {}
    w = net.params
    rows = []
    pruned = 0
    for e in part.entities:
        verdict = "pruned" if mask.entity_pruned[e.id] else "kept"
        if verdict == "pruned":
            pruned += e.u
        frac = float(mask.frac_below[e.id]) if mask.frac_below.size else 0.0
        rows.append(
            {
                "entity_id": e.id,
                "layer": e.layer_id,
                "u": e.u,
                "max_abs": float(np.abs(w[e.indices]).max()),
                "frac_below": frac,
                "verdict": verdict,
            }
        )
    return PruneReport(
        rows,
        pruned,
        part.total_u,
        metrics.get("accuracy_before"),
        metrics.get("accuracy_after"),
    )
