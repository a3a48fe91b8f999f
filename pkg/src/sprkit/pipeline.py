"""Two-phase training: SPR-regularized training, pruning, l2 fine-tuning."""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import groups
from .dataio import Dataset, augment
from .groups import EntityPartition, PruneMask, PruneReport
from .nnet import Network, NonFiniteError, SGDMomentum, convnet_s, mlp
from .spr import (
    PenaltyResult,
    SprParams,
    aggregate_penalty,
    baseline_penalty,
    kept_l2_coefficients,
    l2_penalty,
    weighted_l2,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# full-length schedule: 300 epochs + 200 fine-tune, decays at these global epochs
FULL_MILESTONES = (120, 200, 230, 250, 350, 400, 450)
FULL_EPOCHS = (300, 200)


class DivergenceError(RuntimeError):
    """Training produced a non-finite value; ``net`` holds the state at that point."""

    def __init__(self, msg: str, net: Network | None = None):
        super().__init__(msg)
        self.net = net


class DegeneratePruningError(RuntimeError):
    pass


def derive_seed(seed: int, purpose: str) -> int:
    """Stable sub-seed for one consumer of randomness."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def scale_milestones(milestones, from_epochs: int, to_epochs: int, offset: int = 0) -> tuple[int, ...]:
    """Map global milestones inside ``[offset, offset + from_epochs)`` to a shorter run."""
    out = []
    for m in milestones:
        local = m - offset
        if 0 < local < from_epochs:
            out.append(max(1, round(local * to_epochs / from_epochs)))
    return tuple(sorted(set(out)))


def desk_milestones(phase1_epochs: int = 60, finetune_epochs: int = 30):
    p1, p2 = FULL_EPOCHS
    return (
        scale_milestones(FULL_MILESTONES, p1, phase1_epochs),
        scale_milestones(FULL_MILESTONES, p2, finetune_epochs, offset=p1),
    )


_P1_MILESTONES, _FT_MILESTONES = desk_milestones()


@dataclass
class TrainConfig:
    phase: str = "spr"  # spr | finetune | baseline
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.05
    lr_milestones: tuple[int, ...] = _P1_MILESTONES
    lr_factor: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    regularizer: str = "spr"  # spr | l2 | l1 | group_lasso | none
    lam: float = 0.0
    alpha: float = 0.0
    variant: str = "consistent"
    nonprunable: str = "mean-entity"  # l2 scale outside entities: mean-entity | plain | none
    finetune_l2: str = "entity-weighted"  # entity-weighted | plain
    augment: str = "none"
    pad: int = 1

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        if self.phase not in ("spr", "finetune", "baseline"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ValueError("lr milestones must be strictly increasing")
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size <= 0 or self.lr0 <= 0:
            raise ValueError("epochs >= 0, batch_size > 0 and lr0 > 0 are required")
        if self.regularizer not in ("spr", "l2", "l1", "group_lasso", "none"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.finetune_l2 not in ("entity-weighted", "plain"):
            raise ValueError(f"unknown finetune_l2 {self.finetune_l2!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.lr_factor ** sum(epoch >= m for m in self.lr_milestones)


@dataclass
class RunRecord:
    phase: str
    config: dict
    epochs: list[dict] = field(default_factory=list)
    report: dict | None = None
    checkpoints: dict = field(default_factory=dict)

    def numeric(self) -> list[dict]:
        """Per-epoch fields without wall times (what reproducibility compares)."""
        return [{k: v for k, v in e.items() if k != "time"} for e in self.epochs]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def predict_scores(net: Network, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    return np.concatenate([net.forward(inputs[i : i + batch_size]) for i in range(0, len(inputs), batch_size)])


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int = 1) -> float:
    """Percent of rows whose label is among the k best scores; ties favour lower class ids."""
    if len(labels) == 0:
        return 0.0
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hits = (order == labels[:, None]).any(axis=1)
    return 100.0 * float(hits.sum()) / len(labels)


def evaluate(net: Network, data: Dataset, k: int = 1) -> float:
    return topk_accuracy(predict_scores(net, data.inputs), data.labels, k)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _penalty_fn(cfg: TrainConfig, partition: EntityPartition | None, frozen: np.ndarray | None):
    if cfg.lam == 0.0 or cfg.regularizer == "none":
        return None
    if cfg.phase == "finetune":
        if cfg.finetune_l2 == "plain" or partition is None:
            keep = None if frozen is None else ~frozen
            return lambda net: l2_penalty(net, cfg.lam * cfg.alpha, keep)
        coef = kept_l2_coefficients(partition, cfg.lam, cfg.alpha, frozen, cfg.nonprunable)
        return lambda net: weighted_l2(net, coef)
    if cfg.regularizer == "spr":
        params = SprParams(cfg.lam, cfg.alpha, cfg.variant, cfg.nonprunable)
        return lambda net: aggregate_penalty(net, partition, params)
    return lambda net: baseline_penalty(cfg.regularizer, net, partition, cfg.lam)


def _train(
    net: Network,
    train: Dataset,
    test: Dataset | None,
    cfg: TrainConfig,
    penalty,
    frozen: np.ndarray | None = None,
    evaluate_each_epoch: bool = True,
) -> RunRecord:
    record = RunRecord(cfg.phase, asdict(cfg))
    opt = SGDMomentum(net.n_params, cfg.lr0, cfg.momentum)
    shuffle_seed = derive_seed(cfg.seed, "shuffle")
    aug_seed = derive_seed(cfg.seed, "augment")
    n = len(train)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(n)
        t0 = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        try:
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                x = train.inputs[idx]
                if cfg.augment != "none":
                    x = augment(x, cfg.augment, cfg.pad, aug_seed, epoch, b)
                bundle = net.loss_and_grad(x, train.labels[idx])
                grad = bundle.grad
                if penalty is not None:
                    grad = grad + penalty(net).grad
                opt.step(net, grad, frozen)
                loss_sum += bundle.loss * idx.size
                correct += int((bundle.logits.argmax(axis=1) == train.labels[idx]).sum())
        except NonFiniteError as exc:
            raise DivergenceError(f"{cfg.phase} diverged in epoch {epoch}: {exc}", net) from exc
        elapsed = time.perf_counter() - t0
        pen = penalty(net).value if penalty is not None else 0.0
        row = {
            "epoch": epoch,
            "lr": opt.lr,
            "train_loss": loss_sum / n,
            "train_acc": 100.0 * correct / n,
            "test_acc": evaluate(net, test) if (test is not None and evaluate_each_epoch) else None,
            "penalty": pen,
            "time": elapsed,
        }
        if not np.isfinite(row["train_loss"]):
            raise DivergenceError(f"{cfg.phase} loss became non-finite in epoch {epoch}", net)
        record.epochs.append(row)
        log.debug("%s epoch %d: %s", cfg.phase, epoch, row)
    return record


def train_baseline(net: Network, train: Dataset, test: Dataset | None, cfg: TrainConfig, partition=None):
    cfg = replace(cfg, phase="baseline")
    return net, _train(net, train, test, cfg, _penalty_fn(cfg, partition, None))


def train_phase1(net: Network, partition: EntityPartition, train: Dataset, test: Dataset | None, cfg: TrainConfig):
    """Minibatch SGD on cross-entropy plus the weighted SPR penalty (in place)."""
    if cfg.phase != "spr":
        raise ValueError("train_phase1 needs a config with phase='spr'")
    partition.check_network(net)
    return net, _train(net, train, test, cfg, _penalty_fn(cfg, partition, None))


def prune_step(
    net: Network,
    partition: EntityPartition,
    weight_tol: float = groups.WEIGHT_TOL,
    entity_frac: float = groups.ENTITY_FRAC,
    policy: str = "fraction",
    prune_bias: bool = True,
    on_degenerate: str = "error",
) -> tuple[Network, PruneMask, PruneReport]:
    mask = groups.decide_pruning(net, partition, weight_tol, entity_frac, policy, prune_bias)
    if mask.entity_pruned.all():
        msg = "degenerate pruning: every entity was pruned"
        if on_degenerate == "error":
            raise DegeneratePruningError(msg)
        log.warning(msg)
    groups.apply_mask(net, mask)
    return net, mask, groups.report(net, partition, mask)


def train_phase2(
    net: Network,
    mask: PruneMask,
    train: Dataset,
    test: Dataset | None,
    cfg: TrainConfig,
    partition: EntityPartition | None = None,
):
    """Fine-tune the survivors with l2 only; pruned weights stay exactly 0.

    With ``cfg.finetune_l2 == "entity-weighted"`` (needs ``partition``) the l2
    term is the phase-1 objective with every indicator fixed: kept entity i
    costs ``lam*alpha*(u_i/U)*||w_i||^2``.  ``"plain"`` uses
    ``lam*alpha*||w||^2`` over all surviving weights.
    """
    if cfg.phase != "finetune":
        raise ValueError("train_phase2 needs a config with phase='finetune'")
    if np.any(net.params[mask.frozen] != 0.0):
        raise ValueError("mask must be applied before fine-tuning")
    penalty = _penalty_fn(cfg, partition, mask.frozen)
    return net, _train(net, train, test, cfg, penalty, frozen=mask.frozen)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    arch: str = "convnet-s"  # convnet-s | mlp
    c1: int = 8
    c2: int = 16
    hidden: tuple[int, ...] = (32,)


@dataclass
class PruneConfig:
    weight_tol: float = groups.WEIGHT_TOL
    entity_frac: float = groups.ENTITY_FRAC
    policy: str = "fraction"
    prune_bias: bool = True
    include_dense: bool = False
    on_degenerate: str = "error"


@dataclass
class PipelineConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    baseline: TrainConfig = field(default_factory=lambda: TrainConfig(phase="baseline", regularizer="none"))
    phase1: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(
        default_factory=lambda: TrainConfig(phase="finetune", epochs=30, lr0=0.005, lr_milestones=_FT_MILESTONES)
    )
    prune: PruneConfig = field(default_factory=PruneConfig)
    seed: int = 0

    def with_spr(self, lam: float, alpha: float) -> "PipelineConfig":
        """Same pipeline with another (lambda, alpha); fine-tune uses the same pair."""
        return replace(
            self,
            phase1=replace(self.phase1, lam=lam, alpha=alpha),
            finetune=replace(self.finetune, lam=lam, alpha=alpha),
        )


def build_network(model: ModelConfig, sample_shape, n_classes: int, seed: int) -> Network:
    if model.arch == "convnet-s":
        c, h, w = sample_shape
        if h != w:
            raise ValueError("convnet-s needs square images")
        return convnet_s(c, h, model.c1, model.c2, n_classes, seed=seed)
    if model.arch == "mlp":
        return mlp([int(np.prod(sample_shape)), *model.hidden, n_classes], seed=seed)
    raise ValueError(f"unknown architecture {model.arch!r}")


@dataclass
class Reference:
    """The unregularized network that supplies per-layer M and the baseline accuracy."""

    net: Network
    record: RunRecord
    accuracy: float
    bounds: dict[int, float]


@dataclass
class PipelineResult:
    phase1: RunRecord
    phase2: RunRecord
    report: PruneReport
    mask: PruneMask
    partition: EntityPartition
    net: Network
    phase1_net: Network
    accuracy_phase1: float
    accuracy_pruned: float
    accuracy_final: float


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)


def fresh_network(cfg: PipelineConfig, train: Dataset) -> Network:
    return build_network(cfg.model, train.sample_shape, train.n_classes, derive_seed(cfg.seed, "init"))


def train_reference(cfg: PipelineConfig, train: Dataset, test: Dataset) -> Reference:
    net = fresh_network(cfg, train)
    partition = groups.build_filter_partition(net, cfg.prune.include_dense)
    _, rec = train_baseline(net, train, test, _seeded(cfg.baseline, cfg.seed), partition)
    return Reference(net, rec, evaluate(net, test), groups.estimate_layer_bounds(net, partition))


def run_pipeline(cfg: PipelineConfig, train: Dataset, test: Dataset, reference: Reference | None = None) -> PipelineResult:
    """Reference -> per-layer M -> phase 1 -> prune -> phase 2."""
    if reference is None:
        reference = train_reference(cfg, train, test)
    net = fresh_network(cfg, train)
    partition = groups.build_filter_partition(net, cfg.prune.include_dense).with_bounds(reference.bounds)
    _, rec1 = train_phase1(net, partition, train, test, _seeded(cfg.phase1, cfg.seed))
    acc1 = evaluate(net, test)
    phase1_net = net.copy()
    p = cfg.prune
    _, mask, rep = prune_step(net, partition, p.weight_tol, p.entity_frac, p.policy, p.prune_bias, p.on_degenerate)
    acc_pruned = evaluate(net, test)
    _, rec2 = train_phase2(net, mask, train, test, _seeded(cfg.finetune, cfg.seed), partition)
    acc_final = evaluate(net, test)
    rep.accuracy_before = acc_pruned
    rep.accuracy_after = acc_final
    rec1.report = rec2.report = rep.to_dict()
    return PipelineResult(rec1, rec2, rep, mask, partition, net, phase1_net, acc1, acc_pruned, acc_final)


GRID_COLUMNS = (
    "lr",
    "lambda",
    "alpha",
    "accuracy",
    "accuracy_pruned",
    "pruned_params",
    "percentage",
    "status",
)


def _grid_cell(args):
    cfg, train, test, reference = args
    try:
        res = run_pipeline(cfg, train, test, reference)
    except Exception as exc:  # one bad cell must not stop the grid
        return {"status": f"error: {type(exc).__name__}: {exc}"}, None
    row = {
        "accuracy": res.accuracy_final,
        "accuracy_pruned": res.accuracy_pruned,
        "pruned_params": res.report.pruned_params,
        "percentage": res.report.percentage,
        "status": "ok",
    }
    return row, res


@dataclass
class GridResult:
    rows: list[dict]
    reference: Reference
    results: dict = field(default_factory=dict)  # (lam, alpha) -> PipelineResult

    def to_csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=GRID_COLUMNS, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: r.get(k) for k in GRID_COLUMNS})
        return buf.getvalue()


def grid_search(
    lambdas,
    alphas,
    base: PipelineConfig,
    train: Dataset,
    test: Dataset,
    reference: Reference | None = None,
    workers: int = 1,
) -> GridResult:
    """Full pipeline for every (lambda, alpha); rows sorted by pruned share, largest first."""
    lambdas, alphas = list(lambdas), list(alphas)
    if not lambdas or not alphas:
        raise ValueError("grid axes must be non-empty")
    if reference is None:
        reference = train_reference(base, train, test)
    cells = [(lam, a) for lam in lambdas for a in alphas]
    jobs = [(base.with_spr(lam, a), train, test, reference) for lam, a in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_grid_cell, jobs))
    else:
        outs = [_grid_cell(j) for j in jobs]
    rows, results = [], {}
    for (lam, a), (row, res) in zip(cells, outs):
        row = {"lr": base.phase1.lr0, "lambda": lam, "alpha": a, **row}
        rows.append(row)
        if res is not None:
            results[(lam, a)] = res
    rows.sort(key=lambda r: -r.get("percentage", -1.0))
    return GridResult(rows, reference, results)


def benchmark(cfg: PipelineConfig, train: Dataset, epochs: int = 3, lam: float | None = None) -> dict:
    """Mean wall time per epoch with and without the SPR term, same data and seed."""
    net = fresh_network(cfg, train)
    partition = groups.build_filter_partition(net, cfg.prune.include_dense)
    lam = cfg.phase1.lam if lam is None else lam
    spr_cfg = replace(cfg.phase1, epochs=epochs, lam=lam, seed=cfg.seed)
    plain_cfg = replace(spr_cfg, phase="baseline", regularizer="none")
    times = {}
    curves = {}
    # interleave repeats so slow drift in machine load hits both sides
    spr_times, plain_times = [], []
    for _ in range(2):
        n1 = net.copy()
        r1 = _train(n1, train, None, spr_cfg, _penalty_fn(spr_cfg, partition, None), evaluate_each_epoch=False)
        n2 = net.copy()
        r2 = _train(n2, train, None, plain_cfg, _penalty_fn(plain_cfg, partition, None), evaluate_each_epoch=False)
        spr_times += [e["time"] for e in r1.epochs]
        plain_times += [e["time"] for e in r2.epochs]
        curves = {"spr": [e["train_loss"] for e in r1.epochs], "plain": [e["train_loss"] for e in r2.epochs]}
    times["spr"] = float(np.median(spr_times))
    times["plain"] = float(np.median(plain_times))
    return {
        "schema_version": SCHEMA_VERSION,
        "epochs": epochs,
        "lambda": lam,
        "alpha": spr_cfg.alpha,
        "time_spr": times["spr"],
        "time_plain": times["plain"],
        "ratio": times["spr"] / times["plain"],
        "loss_spr": curves["spr"],
        "loss_plain": curves["plain"],
    }


def penalty_value(net: Network, partition: EntityPartition, lam: float, alpha: float) -> PenaltyResult:
    return aggregate_penalty(net, partition, SprParams(lam, alpha))
