"""Experiment orchestration: cross-entropy and two-phase deep-F runs, beta sweeps.

A deep-F run trains ``warmup_epochs`` with cross-entropy and then
``finetune_epochs`` with the soft F-beta loss. After every epoch the dev split
is scored; the selected model is the best epoch under ``schedule.select``,
restricted to the last phase that has any epochs. Runs never raise on
numerical failure: they return a record with ``status == "failed"``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .data import Dataset, ImbalanceSpec, PRESETS, load_dataset, load_tabular, split, synth_imbalanced
from .errors import ConfigurationError, NonFiniteError
from .losses import DeepFSpec, deepf_loss, xent_loss
from .metrics import MetricsReport, confusion
from .nn import AdamState, Network, adam_step, init_network, save_checkpoint
from .schemas import schema_path

log = logging.getLogger(__name__)

DEFAULT_ADULT_DIR = Path("data/adult")


# ---------------------------------------------------------------------------
# datasets


def build_dataset(config: RunConfig) -> Dataset:
    """Materialize the tagged dataset named by ``config.data``."""
    d = config.data
    fractions = {"train": d.train_fraction, "dev": d.dev_fraction, "test": d.test_fraction}
    if d.source == "synthetic":
        if d.preset not in PRESETS:
            raise ConfigurationError(f"unknown synthetic preset {d.preset!r}; choose from {sorted(PRESETS)}")
        spec = PRESETS[d.preset](
            n_samples=d.n_samples, dim=d.dim, separation=d.separation, cluster_std=d.cluster_std, seed=d.data_seed
        )
        return split(synth_imbalanced(spec), fractions, d.split_seed)
    if d.source == "adult":
        root = Path(d.path) if d.path else DEFAULT_ADULT_DIR
        train_file, test_file = root / "adult.data", Path(d.test_path) if d.test_path else root / "adult.test"
        for f in (train_file, test_file):
            if not f.exists():
                raise ConfigurationError(f"Adult file {f} not found")
        dev = d.dev_fraction / (d.train_fraction + d.dev_fraction)
        return load_tabular(
            train_file, d.schema or schema_path("adult"), test_path=test_file,
            fractions={"train": 1.0 - dev, "dev": dev}, seed=d.split_seed,
        )
    if d.source == "communities":
        return load_tabular(d.path, d.schema or schema_path("communities"), fractions=fractions, seed=d.split_seed)
    if d.source == "tabular":
        if not d.schema:
            raise ConfigurationError("data.source=tabular needs data.schema")
        return load_tabular(
            d.path, d.schema, test_path=d.test_path or None,
            fractions=fractions if not d.test_path else {"train": 1 - d.dev_fraction, "dev": d.dev_fraction},
            seed=d.split_seed,
        )
    return load_dataset(d.path)


def is_degenerate(report: MetricsReport) -> bool:
    """True when only one class is ever predicted correctly."""
    return report.coverage == 1


# ---------------------------------------------------------------------------
# records


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    dev: dict


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    dataset_checksum: str
    loss: str
    beta: float
    seed: int
    status: str = "ok"
    error: str = ""
    epochs: list[EpochRecord] = field(default_factory=list)
    phase_boundary: int = 0
    selected_epoch: int = -1
    select: str = "micro_f1"
    phase2_initial_loss: float | None = None
    dev_reports: list[dict] = field(default_factory=list)
    test_reports: list[dict] = field(default_factory=list)
    degenerate: bool = False
    wall_clock: float = 0.0
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["epochs"] = [EpochRecord(**e) for e in d.get("epochs", [])]
        return cls(**d)

    def test_report(self, beta: float | None = None) -> MetricsReport:
        beta = self.beta if beta is None else beta
        for r in self.test_reports:
            if np.isclose(r["beta"], beta):
                return MetricsReport.from_dict(r)
        raise KeyError(f"no test report at beta={beta}")

    def dev_report(self, beta: float | None = None) -> MetricsReport:
        beta = self.beta if beta is None else beta
        for r in self.dev_reports:
            if np.isclose(r["beta"], beta):
                return MetricsReport.from_dict(r)
        raise KeyError(f"no dev report at beta={beta}")


# ---------------------------------------------------------------------------
# training


def evaluate(net: Network, dataset: Dataset, betas: Iterable[float] = (1.0,)) -> list[MetricsReport]:
    """Hard argmax decisions on ``dataset`` scored at every beta."""
    if net.output_dim != dataset.n_classes:
        raise ConfigurationError(f"model has {net.output_dim} outputs but the dataset has {dataset.n_classes} classes")
    if net.input_dim != dataset.dim:
        raise ConfigurationError(f"model expects {net.input_dim} features, dataset has {dataset.dim}")
    preds = [np.argmax(net.forward(dataset.features[i : i + 4096]), axis=1) for i in range(0, len(dataset), 4096)]
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    stats = confusion(preds, dataset.labels, dataset.n_classes)
    return [MetricsReport.from_confusion(stats, b) for b in betas]


def _criterion(report: MetricsReport, select: str) -> float:
    return {"micro_f1": report.micro_f1_paper, "accuracy": report.accuracy, "avg_fbeta": report.avg_fbeta}[select]


def _deepf_spec(config: RunConfig, train: Dataset) -> DeepFSpec:
    l = config.loss
    return DeepFSpec(
        beta=l.beta,
        class_counts=tuple(int(c) for c in train.class_counts) if l.count_scope == "global" else None,
        epsilon=l.epsilon,
        count_scope=l.count_scope,
        normalization=l.normalization,
        temperature=l.temperature,
    )


def _phases(config: RunConfig) -> list[tuple[str, int]]:
    s = config.schedule
    if config.loss.kind == "xent":
        return [("xent", s.epochs)]
    return [("xent", s.warmup_epochs), ("deepf", s.finetune_epochs)]


def _step(net: Network, x: np.ndarray, y: np.ndarray, phase: str, spec: DeepFSpec | None) -> tuple[float, list]:
    q = net.forward(x)
    if phase == "xent":
        loss, grad_z = xent_loss(q, y)
        grads = net.backward_logits(grad_z)
    else:
        loss, grad_q = deepf_loss(q, y, spec)
        grads = net.backward(grad_q)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite {phase} loss")
    return loss, grads


def _run(config: RunConfig, dataset: Dataset) -> tuple[RunRecord, Network | None]:
    t0 = time.perf_counter()
    train, dev, test = (dataset.part(t) for t in ("train", "dev", "test"))
    betas = config.run.betas
    if config.loss.beta not in betas:
        betas = [config.loss.beta] + betas
    record = RunRecord(
        config=config.to_dict(),
        config_hash=config.hash(),
        dataset_checksum=dataset.checksum(),
        loss=config.loss.kind,
        beta=config.loss.beta,
        seed=config.run.seed,
        select=config.schedule.select,
    )
    phases = _phases(config)
    record.phase_boundary = phases[0][1] if len(phases) > 1 else 0
    eligible_from = sum(n for _, n in phases[:-1]) if phases[-1][1] > 0 else 0

    net = init_network(
        [dataset.dim, *config.model.hidden_sizes, dataset.n_classes],
        config.model.activation,
        seed=config.run.seed,
        slope=config.model.slope,
    )
    o = config.optim
    adam = AdamState.for_params(net.parameters(), lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    spec = _deepf_spec(config, train) if config.loss.kind == "deepf" else None
    shuffle_rng = np.random.default_rng([config.run.seed, 1])

    best_score, best_params, epoch = -np.inf, net.get_flat(), 0
    try:
        for phase, n_epochs in phases:
            if phase == "deepf" and n_epochs > 0:
                q = net.forward(train.features)
                full = DeepFSpec(config.loss.beta, epsilon=config.loss.epsilon, count_scope="batch",
                                 normalization=config.loss.normalization, temperature=config.loss.temperature)
                record.phase2_initial_loss = deepf_loss(q, train.labels, full)[0]
            for _ in range(n_epochs):
                epoch += 1
                order = shuffle_rng.permutation(len(train))
                losses = []
                for i in range(0, len(order), o.batch_size):
                    idx = order[i : i + o.batch_size]
                    loss, grads = _step(net, train.features[idx], train.labels[idx], phase, spec)
                    adam_step(net.parameters(), grads, adam)
                    losses.append(loss)
                report = evaluate(net, dev, [config.loss.beta])[0]
                record.epochs.append(EpochRecord(epoch, phase, float(np.mean(losses)), report.flat()))
                score = _criterion(report, config.schedule.select)
                if epoch > eligible_from and score > best_score:
                    best_score, best_params, record.selected_epoch = score, net.get_flat(), epoch
    except (NonFiniteError, FloatingPointError) as exc:
        record.status, record.error = "failed", f"epoch {epoch}: {exc}"
        record.wall_clock = time.perf_counter() - t0
        log.warning("run %s failed: %s", record.config_hash, record.error)
        return record, None

    net.set_flat(best_params)
    record.dev_reports = [r.to_dict() for r in evaluate(net, dev, betas)]
    record.test_reports = [r.to_dict() for r in evaluate(net, test, betas)]
    record.degenerate = is_degenerate(record.dev_report())
    record.wall_clock = time.perf_counter() - t0
    return record, net


def train(config: RunConfig, dataset: Dataset | None = None, out_dir: str | Path | None = None) -> RunRecord:
    dataset = build_dataset(config) if dataset is None else dataset
    record, net = _run(config, dataset)
    if out_dir is not None:
        write_run(record, net, out_dir, config, dataset.meta.get("sources"))
    return record


def train_xent(config: RunConfig, dataset: Dataset | None = None, out_dir=None) -> RunRecord:
    if config.loss.kind != "xent":
        raise ConfigurationError("train_xent needs loss.kind = xent")
    return train(config, dataset, out_dir)


def train_deepf(config: RunConfig, dataset: Dataset | None = None, out_dir=None) -> RunRecord:
    if config.loss.kind != "deepf":
        raise ConfigurationError("train_deepf needs loss.kind = deepf")
    return train(config, dataset, out_dir)


# ---------------------------------------------------------------------------
# run directories

RUN_FILES = {
    "config": "config.ini",
    "manifest": "manifest.json",
    "epochs": "epochs.csv",
    "checkpoint": "checkpoint.npz",
    "record": "record.json",
    "report": "report.csv",
}


def write_run(record: RunRecord, net: Network | None, out_dir: str | Path, config: RunConfig,
              sources: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_FILES["config"]).write_text(config.to_ini())
    manifest = {
        "config_hash": record.config_hash,
        "dataset_checksum": record.dataset_checksum,
        "seed": record.seed,
        "version": __version__,
        "status": record.status,
        "sources": sources or {},
    }
    (out / RUN_FILES["manifest"]).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    with open(out / RUN_FILES["epochs"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "phase", "train_loss", *MetricsReport.COLUMNS])
        for e in record.epochs:
            w.writerow([e.epoch, e.phase, repr(e.train_loss), *(e.dev[c] for c in MetricsReport.COLUMNS)])
    (out / RUN_FILES["record"]).write_text(json.dumps(record.to_dict(), indent=1, sort_keys=True))
    with open(out / RUN_FILES["report"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "loss", *MetricsReport.COLUMNS])
        for split_name, reports in (("dev", record.dev_reports), ("test", record.test_reports)):
            for r in reports:
                w.writerow([split_name, record.loss, *(r[c] for c in MetricsReport.COLUMNS)])
    if net is not None:
        save_checkpoint(net, out / RUN_FILES["checkpoint"], seed=record.seed, extra={"config_hash": record.config_hash, "selected_epoch": record.selected_epoch})
    return out


def read_run(run_dir: str | Path) -> RunRecord:
    return RunRecord.from_dict(json.loads((Path(run_dir) / RUN_FILES["record"]).read_text()))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    baselines: list[RunRecord]
    deepf: dict[float, list[RunRecord]]
    rows: list[dict]

    def mean(self, loss: str, beta: float, metric: str) -> float:
        vals = [r[metric] for r in self.rows if r["loss"] == loss and np.isclose(r["beta"], beta) and r["status"] == "ok"]
        return float(np.mean(vals)) if vals else float("nan")


def _safe_run(args) -> tuple[RunRecord, Network | None]:
    config, dataset = args
    try:
        return _run(config, dataset)
    except Exception as exc:  # sweeps keep going and keep the failure on record
        record = RunRecord(
            config=config.to_dict(), config_hash=config.hash(), dataset_checksum=dataset.checksum(),
            loss=config.loss.kind, beta=config.loss.beta, seed=config.run.seed,
            status="failed", error=f"{type(exc).__name__}: {exc}",
        )
        return record, None


def run_many(jobs: Sequence[tuple[RunConfig, Dataset]], workers: int = 1) -> list[tuple[RunRecord, Network | None]]:
    """Independent runs, optionally in worker processes; order is preserved."""
    if workers <= 1 or len(jobs) <= 1:
        return [_safe_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_safe_run, jobs))


def sweep_beta(
    config: RunConfig,
    betas: Sequence[float],
    seeds: Sequence[int] | None = None,
    dataset: Dataset | None = None,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> SweepResult:
    """One deep-F run per (beta, seed) plus one shared cross-entropy run per seed.

    The baseline is trained once per seed (``warmup + finetune`` epochs) and
    re-scored at every beta, so every xent row of a seed comes from the same
    model.
    """
    betas = [float(b) for b in betas]
    if not betas:
        raise ConfigurationError("sweep needs at least one beta")
    seeds = [config.run.seed] if seeds is None else list(seeds)
    dataset = build_dataset(config) if dataset is None else dataset
    eval_betas = ",".join(repr(b) for b in betas)
    s = config.schedule
    jobs, keys = [], []
    for seed in seeds:
        base = config.replace(**{
            "loss.kind": "xent", "loss.beta": 1.0, "schedule.epochs": s.warmup_epochs + s.finetune_epochs,
            "run.seed": seed, "run.eval_betas": eval_betas,
        })
        jobs.append((base, dataset))
        keys.append(("xent", None, seed))
        for b in betas:
            jobs.append((config.replace(**{"loss.kind": "deepf", "loss.beta": b, "run.seed": seed,
                                           "run.eval_betas": eval_betas}), dataset))
            keys.append(("deepf", b, seed))
    results = run_many(jobs, workers)

    baselines, deepf, rows = [], {b: [] for b in betas}, []
    for (kind, b, seed), (record, net), (cfg, _) in zip(keys, results, jobs):
        if out_dir is not None:
            name = f"xent_seed{seed}" if kind == "xent" else f"deepf_beta{b:g}_seed{seed}"
            write_run(record, net, Path(out_dir) / name, cfg, dataset.meta.get("sources"))
        if kind == "xent":
            baselines.append(record)
            for beta in betas:
                rows.append(_sweep_row(record, beta))
        else:
            deepf[b].append(record)
            rows.append(_sweep_row(record, b))
    result = SweepResult(baselines, deepf, rows)
    if out_dir is not None:
        write_sweep(result, out_dir)
    return result


def _sweep_row(record: RunRecord, beta: float) -> dict:
    row = {"loss": record.loss, "beta": beta, "seed": record.seed, "status": record.status,
           "config_hash": record.config_hash}
    if record.status == "ok":
        rep = record.test_report(beta)
        row.update(rep.flat())
        row["degenerate"] = record.degenerate
        row["dev_coverage"] = record.dev_report(record.beta).coverage
    else:
        row["error"] = record.error
    return row


SWEEP_COLUMNS = ("loss", "beta", "seed", "status", "config_hash", "avg_precision", "avg_recall",
                 "micro_f1_paper", "avg_fbeta", "accuracy", "coverage", "dev_coverage", "degenerate", "error")


def write_sweep(result: SweepResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in result.rows:
            w.writerow(row)
    (out / "sweep.json").write_text(json.dumps(result.rows, indent=1, sort_keys=True))
    write_series(result.rows, out / "series.csv")


def write_series(rows: Sequence[dict], path: str | Path) -> list[dict]:
    """Per (loss, beta): mean/min/max of test micro-F1 and average F-beta over seeds."""
    groups: dict[tuple[str, float], list[dict]] = {}
    for r in rows:
        if r.get("status", "ok") == "ok":
            groups.setdefault((r["loss"], float(r["beta"])), []).append(r)
    series = []
    for (loss, beta), rs in sorted(groups.items()):
        entry = {"loss": loss, "beta": beta, "n_seeds": len(rs)}
        for metric in ("micro_f1_paper", "avg_fbeta", "coverage"):
            vals = np.array([float(r[metric]) for r in rs])
            entry.update({f"{metric}_mean": vals.mean(), f"{metric}_min": vals.min(), f"{metric}_max": vals.max()})
        series.append(entry)
    with open(path, "w", newline="") as fh:
        fields = list(series[0]) if series else ["loss", "beta", "n_seeds"]
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(series)
    return series
