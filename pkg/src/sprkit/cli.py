"""``sprkit`` command line: train, relax, grid, bench, inspect.

Exit codes: 0 ok, 1 config or I/O error, 2 divergence, 3 degenerate
pruning, 4 relaxation ordering violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import config as cfgmod
from . import dataio, groups, relax
from . import pipeline as pl
from .spr import diagnostics_csv, entity_diagnostics

log = logging.getLogger("sprkit")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DEGENERATE, EXIT_ORDERING = range(5)
SCHEMA_VERSION = 1


class _Exit(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    ck.atomic_write_bytes(path, text.encode("utf-8"))


def _write_json(path: Path, obj: dict) -> None:
    _write_text(path, json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _out_dir(cfg: cfgmod.Config) -> Path:
    out = Path(cfg["run"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.resolved.ini", cfg.to_ini())
    return out


def load_data(cfg: cfgmod.Config) -> tuple[dataio.Dataset, dataio.Dataset]:
    d = cfg["data"]
    seed = pl.derive_seed(cfg["run"]["seed"], "data")
    if d["source"] == "synthetic":
        kw = {"channels": d["channels"], "size": d["size"]} if d["kind"] == "tiny-images" else {}
        train, test = dataio.train_test(d["kind"], d["n_train"], d["n_test"], d["classes"], d["noise"], seed, **kw)
    elif d["source"] == "idx":
        paths = [d[k] for k in ("train_images", "train_labels", "test_images", "test_labels")]
        if not all(paths):
            raise cfgmod.ConfigError("[data] source=idx needs train/test image and label paths")
        train = dataio.load_idx(paths[0], paths[1], d["classes"], "train")
        test = dataio.load_idx(paths[2], paths[3], d["classes"], "test")
    else:
        if not d["train_file"] or not d["test_file"]:
            raise cfgmod.ConfigError("[data] source=sprd needs train_file and test_file")
        train = dataio.load_dataset(d["train_file"], "train")
        test = dataio.load_dataset(d["test_file"], "test")
    if d["normalize"]:
        train, stats = dataio.normalize(train)
        test = dataio.apply_stats(test, stats)
    return train, test


def _save_ckpt(path: Path, net, partition=None, mask=None, prune_bias=True, meta=None) -> str:
    pruned = [] if mask is None else [int(i) for i in np.nonzero(mask.entity_pruned)[0]]
    ck.save(path, ck.Checkpoint(net, partition, pruned, prune_bias, meta or {}))
    return str(path)


def _meta(cfg: cfgmod.Config, stage: str) -> dict:
    return {"stage": stage, "lam": cfg["spr"]["lam"], "alpha": cfg["spr"]["alpha"], "variant": cfg["spr"]["variant"]}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: cfgmod.Config) -> int:
    out = _out_dir(cfg)
    pc = cfg.pipeline_config()
    train, test = load_data(cfg)
    mode = cfg["run"]["mode"]
    try:
        ref = pl.train_reference(pc, train, test)
        ref.record.checkpoints["baseline"] = _save_ckpt(out / "baseline.sprc", ref.net, meta=_meta(cfg, "baseline"))
        records = {"baseline": ref.record.to_dict()}
        summary = {"mode": mode, "accuracy_baseline": ref.accuracy, "bounds": {str(k): v for k, v in ref.bounds.items()}}
        if mode == "phase1":
            net = pl.fresh_network(pc, train)
            part = groups.build_filter_partition(net, pc.prune.include_dense).with_bounds(ref.bounds)
            _, rec = pl.train_phase1(net, part, train, test, pc.phase1)
            rec.checkpoints["phase1"] = _save_ckpt(out / "phase1.sprc", net, part, meta=_meta(cfg, "phase1"))
            p = pc.prune
            mask = groups.decide_pruning(net, part, p.weight_tol, p.entity_frac, p.policy, p.prune_bias)
            rep = groups.report(net, part, mask)
            rec.report = rep.to_dict()
            records["phase1"] = rec.to_dict()
            summary["accuracy_phase1"] = pl.evaluate(net, test)
            summary["would_prune"] = rep.summary_line()
            _write_text(out / "report.csv", rep.to_csv())
        elif mode == "full":
            res = pl.run_pipeline(pc, train, test, ref)
            res.phase1.checkpoints["phase1"] = _save_ckpt(
                out / "phase1.sprc", res.phase1_net, res.partition, meta=_meta(cfg, "phase1")
            )
            res.phase2.checkpoints["final"] = _save_ckpt(
                out / "final.sprc", res.net, res.partition, res.mask, pc.prune.prune_bias, _meta(cfg, "final")
            )
            records["phase1"] = res.phase1.to_dict()
            records["finetune"] = res.phase2.to_dict()
            summary.update(
                accuracy_phase1=res.accuracy_phase1,
                accuracy_pruned=res.accuracy_pruned,
                accuracy_final=res.accuracy_final,
                pruned=res.report.summary_line(),
                pruned_params=res.report.pruned_params,
                percentage=res.report.percentage,
            )
            _write_text(out / "report.csv", res.report.to_csv())
            _write_json(out / "report.json", res.report.to_dict())
    except pl.DivergenceError as exc:
        if exc.net is not None:
            _save_ckpt(out / "diverged.sprc", exc.net, meta=_meta(cfg, "diverged"))
        raise _Exit(EXIT_DIVERGED, str(exc)) from None
    except pl.DegeneratePruningError as exc:
        raise _Exit(EXIT_DEGENERATE, str(exc)) from None
    _write_json(out / "run.json", {"summary": summary, "records": records})
    for k, v in summary.items():
        if k != "bounds":
            print(f"{k}: {v:.2f}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


def cmd_relax(cfg: cfgmod.Config) -> int:
    r = cfg["relax"]
    out = _out_dir(cfg)
    if r["worked"] or r["instance"]:
        if r["instance"]:
            try:
                inst = relax.MipInstance.load(r["instance"])
            except (OSError, ValueError, KeyError) as exc:
                raise cfgmod.ConfigError(f"cannot read instance {r['instance']}: {exc}") from None
        else:
            inst = relax.worked_instance()
        results = [relax.verify_ordering(inst, tol=r["tol"], joint=r["joint"])]
    else:
        if r["n_instances"] < 1:
            raise cfgmod.ConfigError("[relax] n_instances must be >= 1")
        seeds = range(r["first_seed"], r["first_seed"] + r["n_instances"])
        gen = {"m": r["m"], "n_max": r["n_max"], "N_max": r["N_max"], "loss": r["loss"], "noise": r["noise"]}
        results = relax.run_batch(seeds, threads=cfg["run"]["threads"], joint=r["joint"], **gen)
    for res in results:
        res.tol = r["tol"]
    _write_text(out / "relax.csv", relax.batch_csv(results))
    bad = [res.seed for res in results if not res.ordering_ok]
    unconverged = [res.seed for res in results if not all(v for k, v in res.diagnostics.items() if k.endswith("converged"))]
    joint_gaps = [res.joint_gap for res in results if res.joint_gap is not None]
    summary = {
        "instances": len(results),
        "ordering_ok": len(results) - len(bad),
        "violations": bad,
        "pr_tighter": sum(res.pr_tighter for res in results),
        "unconverged": unconverged,
        "max_joint_gap": max(joint_gaps) if joint_gaps else None,
    }
    _write_json(out / "relax.json", summary)
    print(f"instances: {summary['instances']}")
    print(f"ordering holds: {summary['ordering_ok']}/{summary['instances']}")
    print(f"pr tighter: {summary['pr_tighter']}/{summary['instances']}")
    if len(results) == 1:
        res = results[0]
        print(f"v_bigm={res.v_bigm:.6f} v_pr={res.v_pr:.6f} v_int={res.v_int:.6f}")
    if unconverged:
        log.warning("solver iteration cap reached on instances %s", unconverged)
    if bad:
        raise _Exit(EXIT_ORDERING, f"ordering violated on instances {bad}")
    return EXIT_OK


def cmd_grid(cfg: cfgmod.Config) -> int:
    out = _out_dir(cfg)
    pc = cfg.pipeline_config()
    train, test = load_data(cfg)
    try:
        ref = pl.train_reference(pc, train, test)
    except pl.DivergenceError as exc:
        raise _Exit(EXIT_DIVERGED, str(exc)) from None
    g = cfg["grid"]
    res = pl.grid_search(g["lambdas"], g["alphas"], pc, train, test, ref, workers=cfg["run"]["threads"])
    _write_text(out / "grid.csv", res.to_csv())
    _write_json(out / "grid.json", {"baseline_accuracy": ref.accuracy, "rows": res.rows})
    print(f"baseline accuracy: {ref.accuracy:.2f}")
    print(res.to_csv(), end="")
    failed = [r for r in res.rows if r["status"] != "ok"]
    for r in failed:
        log.warning("cell lambda=%s alpha=%s failed: %s", r["lambda"], r["alpha"], r["status"])
    if len(failed) == len(res.rows):
        if all("DegeneratePruningError" in r["status"] for r in failed):
            raise _Exit(EXIT_DEGENERATE, "every grid cell pruned everything")
        if all("DivergenceError" in r["status"] for r in failed):
            raise _Exit(EXIT_DIVERGED, "every grid cell diverged")
        raise _Exit(EXIT_CONFIG, "every grid cell failed")
    return EXIT_OK


def cmd_bench(cfg: cfgmod.Config) -> int:
    out = _out_dir(cfg)
    pc = cfg.pipeline_config()
    train, _ = load_data(cfg)
    try:
        res = pl.benchmark(pc, train, epochs=cfg["bench"]["epochs"])
    except pl.DivergenceError as exc:
        raise _Exit(EXIT_DIVERGED, str(exc)) from None
    _write_json(out / "bench.json", {k: v for k, v in res.items() if k != "schema_version"})
    print(f"epoch time with SPR:    {res['time_spr']:.4f} s")
    print(f"epoch time without SPR: {res['time_plain']:.4f} s")
    print(f"ratio: {res['ratio']:.3f}")
    return EXIT_OK


def inspect_text(path, alpha: float | None = None) -> str:
    """Per-layer table, a blank line, then per-entity diagnostics, all CSV."""
    try:
        c = ck.load(path)
    except (OSError, ck.CheckpointError, KeyError, ValueError) as exc:
        raise _Exit(EXIT_CONFIG, f"{path}: {exc}") from None
    if c.partition is None:
        part = groups.build_filter_partition(c.net)
    else:
        part = c.partition
    alpha = c.meta.get("alpha", 0.5) if alpha is None else alpha
    mask = c.mask() or groups.empty_mask(part)
    rep = groups.report(c.net, part, mask)
    lines = ["layer,entities,pruned_entities,params,pruned_params"]
    for lid, d in sorted(rep.per_layer().items()):
        lines.append(f"{lid},{d['entities']},{d['pruned_entities']},{d['params']},{d['pruned_params']}")
    lines.append(f"total,{len(part)},{rep.n_pruned_entities},{rep.total_params},{rep.pruned_params}")
    rows = entity_diagnostics(c.net, part, alpha, c.meta.get("variant", "consistent"))
    for row, r in zip(rows, rep.rows):
        row["verdict"] = r["verdict"]
    return "\n".join(lines) + "\n\n" + diagnostics_csv(rows, extra=("verdict",))


def cmd_inspect(path, alpha: float | None = None) -> int:
    sys.stdout.write(inspect_text(path, alpha))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sprkit", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("train", "baseline, phase-1 or full train/prune/fine-tune run"),
        ("relax", "relaxation ordering check on a batch of tiny MIPs"),
        ("grid", "lambda x alpha grid of full pipeline runs"),
        ("bench", "epoch time with and without the SPR term"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", nargs="?", help="INI config (defaults are used for missing keys)")
        sp.add_argument("-o", "--out-dir", help="override [run] out_dir")
    sp = sub.add_parser("inspect", help="per-layer and per-entity statistics of a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--alpha", type=float, help="alpha for the z/y~ columns (default: from the checkpoint)")
    sub.add_parser("defaults", help="print the default config")
    return p


COMMANDS = {"train": cmd_train, "relax": cmd_relax, "grid": cmd_grid, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "defaults":
            sys.stdout.write(cfgmod.defaults().to_ini())
            return EXIT_OK
        if args.command == "inspect":
            return cmd_inspect(args.checkpoint, args.alpha)
        cfg = cfgmod.load(args.config)
        if args.out_dir:
            cfg = cfgmod.with_overrides(cfg, run={"out_dir": args.out_dir})
        return COMMANDS[args.command](cfg)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, dataio.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
