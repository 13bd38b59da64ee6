"""Command-line driver: ``deepf {train,evaluate,sweep,gradcheck,synth,report}``.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or arguments.
Errors are printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .config import RunConfig, load_config
from .data import PRESETS, save_dataset, split, synth_imbalanced
from .errors import ConfigurationError, DataError
from .metrics import MetricsReport
from .nn import load_checkpoint
from .trainer import (
    RUN_FILES,
    build_dataset,
    evaluate,
    read_run,
    sweep_beta,
    train,
    write_series,
)

log = logging.getLogger("deepf")

REPORT_COLUMNS = ("run", "loss", "beta", "seed", "avg_precision", "avg_recall", "micro_f1_paper",
                  "avg_fbeta", "accuracy", "coverage")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


def _load(args) -> RunConfig:
    return load_config(args.config, args.set or [])


def _print_config(config: RunConfig) -> int:
    sys.stdout.write(config.to_ini())
    return 0


def cmd_train(args) -> int:
    config = _load(args)
    if args.print_config:
        return _print_config(config)
    out = Path(args.out or config.run.out_dir)
    seeds = _ints(args.seeds) if args.seeds else [config.run.seed]
    dataset = build_dataset(config)
    status = 0
    for seed in seeds:
        cfg = config.replace(**{"run.seed": seed})
        run_dir = out if len(seeds) == 1 else out / f"seed{seed}"
        record = train(cfg, dataset, run_dir)
        if record.status != "ok":
            status = 1
            _error(f"run failed: {record.error}", run_dir=str(run_dir), seed=seed)
            continue
        rep = record.test_report()
        print(f"{run_dir}: loss={record.loss} beta={record.beta:g} seed={seed} "
              f"micro_f1={rep.micro_f1_paper:.4f} avg_fbeta={rep.avg_fbeta:.4f} "
              f"acc={rep.accuracy:.4f} coverage={rep.coverage}")
    return status


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    ckpt = run_dir / RUN_FILES["checkpoint"]
    if not ckpt.exists():
        raise ConfigurationError(f"no checkpoint in {run_dir}")
    config = load_config(run_dir / RUN_FILES["config"], args.set or [])
    net, _ = load_checkpoint(ckpt)
    dataset = build_dataset(config)
    betas = _floats(args.betas) if args.betas else config.run.betas
    reports = evaluate(net, dataset.part(args.split), betas)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"eval_{args.split}.json"
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=1))
    for r in reports:
        print(json.dumps({"split": args.split, **r.flat()}))
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    if args.print_config:
        return _print_config(config)
    betas = _floats(args.betas)
    if not betas:
        raise UsageError("--betas must list at least one value")
    seeds = _ints(args.seeds) if args.seeds else [config.run.seed]
    out = Path(args.out or config.run.out_dir)
    result = sweep_beta(config, betas, seeds=seeds, out_dir=out, workers=args.workers)
    failed = [r for r in result.rows if r["status"] != "ok"]
    for row in result.rows:
        if row["status"] == "ok":
            print(f"{row['loss']:>5} beta={row['beta']:<4g} seed={row['seed']} micro_f1={row['micro_f1_paper']:.4f} "
                  f"avg_fbeta={row['avg_fbeta']:.4f} coverage={row['coverage']}"
                  + ("  [degenerate]" if row.get("degenerate") else ""))
        else:
            print(f"{row['loss']:>5} beta={row['beta']:<4g} seed={row['seed']} FAILED: {row.get('error')}")
    print(f"sweep table: {out / 'sweep.csv'}")
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.instances, seed=args.seed, flip_sign=args.inject_sign_flip)
    worst = max(results, key=lambda r: r.max_rel_error)
    for act in ("relu", "leaky_relu"):
        for loss in ("xent", "deepf"):
            errs = [r.max_rel_error for r in results if r.activation == act and r.loss == loss]
            print(f"{act:>10} {loss:>5}: max rel. error {max(errs):.3e} over {len(errs)} instances")
    if worst.passed:
        print(f"PASS max rel. error {worst.max_rel_error:.3e} < {gradcheck.TOLERANCE:g}")
        return 0
    print(f"FAIL max rel. error {worst.max_rel_error:.3e} (instance seed {worst.seed}, "
          f"{worst.activation}, {worst.loss}, beta={worst.beta})")
    return 1


def cmd_synth(args) -> int:
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[args.preset](n_samples=args.n, dim=args.dim, separation=args.separation,
                                cluster_std=args.cluster_std, seed=args.seed)
    ds = split(synth_imbalanced(spec), {"train": 0.6, "dev": 0.2, "test": 0.2}, args.split_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = save_dataset(ds, out)
    counts = ds.part("train").class_counts
    print(json.dumps({"path": str(out), "checksum": digest, "n": len(ds), "n_classes": ds.n_classes,
                      "train_head_frequency": float(counts.max() / counts.sum())}))
    return 0


def _collect(path: Path) -> tuple[list[dict], list[dict]]:
    """Rows for every run found under ``path`` plus any sweep rows."""
    rows, sweep_rows = [], []
    if (path / "sweep.json").exists():
        sweep_rows = json.loads((path / "sweep.json").read_text())
    records = [path] if (path / RUN_FILES["record"]).exists() else sorted(
        p.parent for p in path.glob(f"*/{RUN_FILES['record']}"))
    for run_dir in records:
        rec = read_run(run_dir)
        if rec.status != "ok":
            rows.append({"run": str(run_dir), "loss": rec.loss, "beta": rec.beta, "seed": rec.seed, "status": "failed"})
            continue
        for r in rec.test_reports:
            if sweep_rows or np.isclose(r["beta"], rec.beta) or rec.loss == "xent":
                # recomputed from stored confusion counts
                m = MetricsReport.from_dict(r)
                rows.append({"run": str(run_dir), "loss": rec.loss, "seed": rec.seed, "status": "ok", **m.flat()})
    return rows, sweep_rows


def cmd_report(args) -> int:
    out = Path(args.out)
    rows, sweep_rows, absent = [], [], []
    for d in args.runs:
        p = Path(d)
        if not p.exists():
            absent.append(str(p))
            continue
        r, s = _collect(p)
        rows.extend(r)
        sweep_rows.extend(s)
    if not args.runs or not rows:
        log.warning("no runs found; writing an empty table")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(r for r in rows if r["status"] == "ok")
    (out / "report.json").write_text(json.dumps({"rows": rows, "absent": absent}, indent=1))
    if sweep_rows:
        write_series(sweep_rows, out / "series.csv")
    print(f"{'run':<40} {'loss':>5} {'beta':>5} {'Prec':>7} {'Rec':>7} {'MicF1':>7} {'AvgF':>7} {'Accu':>7} {'C':>4}")
    for r in rows:
        if r["status"] != "ok":
            print(f"{r['run'][-40:]:<40} {r['loss']:>5} {r['beta']:>5g}  FAILED")
            continue
        print(f"{r['run'][-40:]:<40} {r['loss']:>5} {r['beta']:>5g} {r['avg_precision']:7.4f} {r['avg_recall']:7.4f} "
              f"{r['micro_f1_paper']:7.4f} {r['avg_fbeta']:7.4f} {r['accuracy']:7.4f} {r['coverage']:4d}")
    for a in absent:
        print(f"{a}: absent")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("-s", "--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        sp.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        sp.add_argument("--out", help="output directory (default: run.out_dir)")
        sp.add_argument("--seeds", help="comma-separated seeds (default: run.seed)")

    sp = sub.add_parser("train", help="train one model per seed")
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a trained run on a split")
    sp.add_argument("run", help="run directory")
    sp.add_argument("--split", default="test", choices=("train", "dev", "test"))
    sp.add_argument("--betas")
    sp.add_argument("-s", "--set", action="append", metavar="SECTION.KEY=VALUE")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="deep-F run per beta plus one shared cross-entropy baseline")
    with_config(sp)
    sp.add_argument("--betas", default="0.5,1,2,4")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference check of both losses")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("synth", help="write a synthetic imbalanced dataset container")
    sp.add_argument("--preset", default="atis")
    sp.add_argument("--n", type=int, default=20000)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--separation", type=float, default=1.0)
    sp.add_argument("--cluster-std", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("report", help="side-by-side table of run directories")
    sp.add_argument("runs", nargs="*")
    sp.add_argument("--out", default="report")
    sp.set_defaults(func=cmd_report)
    return p


def _error(message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": message, **extra}) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        _error(str(exc), kind="configuration")
        return 2
    except DataError as exc:
        _error(str(exc), kind="data")
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable record
        _error(f"{type(exc).__name__}: {exc}", kind="runtime")
        return 1


if __name__ == "__main__":
    sys.exit(main())
