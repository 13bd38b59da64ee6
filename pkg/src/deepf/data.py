"""Datasets: delimited-text ingestion, preprocessing, splits, synthetic data.

A :class:`Dataset` holds every token of a task plus an optional per-row split
tag (``"train"``, ``"dev"``, ``"test"``). Preprocessing statistics are always
fitted on the train rows only.

Schema files are INI documents::

    [format]
    delimiter = ,
    header = false        ; true: first non-skipped row holds column names
    skip_rows = 0         ; leading lines to drop before parsing
    missing = ?           ; comma-separated tokens treated as missing
    comment = |           ; lines starting with this prefix are skipped

    [columns]             ; one entry per file column, in file order
    age = numeric
    workclass = categorical
    fnlwgt = ignored
    income = target

Headerless files may instead key columns by 0-based position and give a
``* = <role>`` default for every column not listed::

    [columns]
    0 = ignored
    127 = target
    * = numeric

    [target]
    type = binary         ; binary | percentile | categorical
    positive = >50K, >50K.
    ; percentile = 70     (type = percentile: label 1 iff value > train percentile)
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

SPLITS = ("train", "dev", "test")
ROLES = ("numeric", "categorical", "target", "ignored")
MISSING_CATEGORY = "__missing__"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    tags: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DataError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if self.tags is not None:
            self.tags = np.asarray(self.tags, dtype="<U8")
            if self.tags.shape != self.labels.shape:
                raise DataError("one split tag per row is required")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        """Label histogram N_k over all K classes."""
        return np.bincount(self.labels, minlength=self.n_classes)

    def part(self, tag: str) -> "Dataset":
        if self.tags is None:
            raise DataError("dataset has no split tags")
        mask = self.tags == tag
        return replace(self, features=self.features[mask], labels=self.labels[mask], tags=None)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.n_classes).encode())
        h.update(self.features.astype("<f8").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        if self.tags is not None:
            h.update("\n".join(self.tags.tolist()).encode())
        return h.hexdigest()


def save_dataset(ds: Dataset, path: str | Path) -> str:
    """Write a cached dataset container; returns its checksum."""
    digest = ds.checksum()
    meta = {"n_classes": ds.n_classes, "feature_names": ds.feature_names, "meta": ds.meta, "checksum": digest}
    tags = ds.tags if ds.tags is not None else np.zeros(0, dtype="<U8")
    with open(path, "wb") as fh:
        np.savez(fh, features=ds.features, labels=ds.labels, tags=tags, info=np.array(json.dumps(meta)))
    return digest


def load_dataset(path: str | Path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        info = json.loads(str(z["info"]))
        tags = z["tags"] if z["tags"].size else None
        ds = Dataset(z["features"], z["labels"], info["n_classes"], tags, info["feature_names"], info["meta"])
    if ds.checksum() != info["checksum"]:
        raise DataError(f"checksum mismatch in {path}")
    return ds


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# schema + tabular loading


@dataclass
class TabularSchema:
    columns: list[tuple[str, str]]
    delimiter: str = ","
    header: bool = False
    skip_rows: int = 0
    missing: tuple[str, ...] = ("?", "")
    target_type: str = "binary"
    positive: tuple[str, ...] = ()
    percentile: float = 70.0
    comment: str | None = None

    def __post_init__(self):
        roles = [r for _, r in self.columns]
        bad = [r for r in roles if r not in ROLES]
        if bad:
            raise ConfigurationError(f"unknown column roles {bad}; expected one of {ROLES}")
        if roles.count("target") != 1:
            raise ConfigurationError("schema must declare exactly one target column")
        keys = [n for n, _ in self.columns if n != "*"]
        self.positional = bool(keys) and all(n.isdigit() for n in keys)
        if "*" in dict(self.columns) and not self.positional:
            raise ConfigurationError("a '*' default role needs position-keyed columns")
        if self.target_type not in ("binary", "percentile", "categorical"):
            raise ConfigurationError(f"unknown target type {self.target_type!r}")
        if self.target_type == "binary" and not self.positive:
            raise ConfigurationError("binary targets need a 'positive' value list")

    @property
    def target(self) -> str:
        return next(n for n, r in self.columns if r == "target")

    def resolve(self, n_fields: int) -> list[tuple[str, str]]:
        """Concrete ``(name, role)`` list for a row with ``n_fields`` fields."""
        if not self.positional:
            return list(self.columns)
        listed = {int(n): r for n, r in self.columns if n != "*"}
        default = dict(self.columns).get("*")
        if max(listed) >= n_fields:
            raise DataError(f"schema refers to column {max(listed)} but rows have {n_fields} fields")
        if default is None and len(listed) != n_fields:
            raise DataError(f"schema lists {len(listed)} columns but rows have {n_fields} fields")
        return [(str(i), listed.get(i, default)) for i in range(n_fields)]

    @classmethod
    def from_file(cls, path: str | Path) -> "TabularSchema":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        cp.optionxform = str
        if not cp.read(path):
            raise ConfigurationError(f"cannot read schema {path}")
        return cls.from_parser(cp)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "TabularSchema":
        if not cp.has_section("columns"):
            raise ConfigurationError("schema needs a [columns] section")
        fmt = cp["format"] if cp.has_section("format") else {}
        tgt = cp["target"] if cp.has_section("target") else {}

        def split_list(s):
            return tuple(v.strip() for v in s.split(",")) if s is not None else None

        delim = fmt.get("delimiter", ",")
        return cls(
            columns=[(k, v.strip()) for k, v in cp["columns"].items()],
            delimiter="\t" if delim in ("\\t", "tab") else delim,
            header=str(fmt.get("header", "false")).lower() in ("1", "true", "yes"),
            skip_rows=int(fmt.get("skip_rows", 0)),
            missing=split_list(fmt.get("missing")) or ("?", ""),
            target_type=tgt.get("type", "binary"),
            positive=split_list(tgt.get("positive")) or (),
            percentile=float(tgt.get("percentile", 70.0)),
            comment=fmt.get("comment") or None,
        )


def _read_rows(path: str | Path, schema: TabularSchema) -> tuple[list[tuple[str, str]], list]:
    """Return the resolved column layout and ``(line_number, fields)`` rows."""
    columns = None if schema.positional else list(schema.columns)
    header_seen = not schema.header
    remap = None
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter, skipinitialspace=True)
        for row in reader:
            lineno = reader.line_num
            if lineno <= schema.skip_rows or not any(c.strip() for c in row):
                continue
            if schema.comment and row[0].lstrip().startswith(schema.comment):
                continue
            row = [c.strip() for c in row]
            if columns is None:
                columns = schema.resolve(len(row))
            names = [n for n, _ in columns]
            if not header_seen:
                header_seen = True
                if not schema.positional:
                    missing = [n for n in names if n not in row]
                    if missing:
                        raise DataError(f"{path}: header lacks schema columns {missing}")
                    remap = (len(row), [row.index(n) for n in names])
                continue
            width = remap[0] if remap else len(names)
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            if remap:
                row = [row[i] for i in remap[1]]
            rows.append((lineno, row))
    return columns or [], rows


def _parse_numeric(rows, col: int, schema: TabularSchema, path) -> np.ndarray:
    out = np.empty(len(rows))
    for i, (lineno, row) in enumerate(rows):
        v = row[col]
        if v in schema.missing:
            out[i] = np.nan
            continue
        try:
            out[i] = float(v)
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse {v!r} as a number") from None
        if not np.isfinite(out[i]):
            raise DataError(f"{path}:{lineno}: non-finite value {v!r}")
    return out


class Preprocessor:
    """Standardize numeric columns and one-hot encode categorical ones.

    Numeric missing values become the train mean (so 0 after scaling);
    categorical missing values get their own category. Categories first seen
    outside the train rows encode as all zeros.
    """

    def __init__(self):
        self.means: np.ndarray | None = None
        self.stds: np.ndarray | None = None
        self.categories: list[list[str]] = []

    def fit(self, numeric: np.ndarray, categorical: list[list[str]]) -> "Preprocessor":
        if len(numeric) == 0:
            raise DataError("cannot fit preprocessing on an empty train split")
        if numeric.shape[1]:
            self.means = np.nanmean(numeric, axis=0)
            filled = np.where(np.isnan(numeric), self.means, numeric)
            std = filled.std(axis=0)
            self.stds = np.where(std > 0, std, 1.0)
        else:
            self.means = self.stds = np.zeros(0)
        self.categories = [sorted(set(col)) for col in categorical]
        return self

    def transform(self, numeric: np.ndarray, categorical: list[list[str]]) -> np.ndarray:
        if self.means is None:
            raise DataError("preprocessor used before fit")
        blocks = []
        if numeric.shape[1]:
            filled = np.where(np.isnan(numeric), self.means, numeric)
            blocks.append((filled - self.means) / self.stds)
        n = numeric.shape[0]
        for cats, col in zip(self.categories, categorical):
            index = {c: j for j, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            for i, v in enumerate(col):
                j = index.get(v)
                if j is not None:
                    block[i, j] = 1.0
            blocks.append(block)
        return np.hstack(blocks) if blocks else np.zeros((n, 0))

    def feature_names(self, numeric_names: Sequence[str], categorical_names: Sequence[str]) -> list[str]:
        names = list(numeric_names)
        for col, cats in zip(categorical_names, self.categories):
            names.extend(f"{col}={c}" for c in cats)
        return names


def binarize_crime(rates: Sequence[float], train_indices: Sequence[int], percentile: float = 70.0) -> np.ndarray:
    """Label 1 iff the rate exceeds the given percentile of the train rates.

    The percentile uses linear interpolation; values equal to the threshold
    are labelled 0.
    """
    rates = np.asarray(rates, dtype=np.float64)
    train_indices = np.asarray(train_indices, dtype=np.int64)
    if train_indices.size == 0:
        raise DataError("percentile threshold needs a non-empty train split")
    if not np.all(np.isfinite(rates)):
        raise DataError("rates must be finite")
    threshold = np.percentile(rates[train_indices], percentile)
    return (rates > threshold).astype(np.int64)


def load_tabular(
    path: str | Path,
    schema: TabularSchema | str | Path,
    test_path: str | Path | None = None,
    fractions: Mapping[str, float] | None = None,
    seed: int = 0,
) -> Dataset:
    """Parse, split and preprocess a delimited-text table.

    With ``test_path`` the second file becomes the test split and ``fractions``
    (default train 0.75 / dev 0.25) divides the first file. Without it,
    ``fractions`` (default 0.6/0.2/0.2) divides the single file. Splits are
    stratified by label (for percentile targets, by target decile).
    """
    if not isinstance(schema, TabularSchema):
        schema = TabularSchema.from_file(schema)
    columns, rows = _read_rows(path, schema)
    names = [n for n, _ in columns]
    n_first = len(rows)
    if test_path is not None:
        test_columns, test_rows = _read_rows(test_path, schema)
        if test_rows and test_columns != columns:
            raise DataError(f"{test_path}: column layout differs from {path}")
        rows = rows + test_rows
        fractions = dict(fractions or {"train": 0.75, "dev": 0.25})
    else:
        fractions = dict(fractions or {"train": 0.6, "dev": 0.2, "test": 0.2})
    if not rows:
        raise DataError(f"{path}: no data rows")

    roles = dict(columns)
    t_col = next(i for i, (_, r) in enumerate(columns) if r == "target")
    raw_target = [row[t_col] for _, row in rows]

    # provisional stratification key, independent of train statistics
    if schema.target_type == "binary":
        positive = {p.rstrip(".") for p in schema.positive}
        strat = np.array([v.rstrip(".") in positive for v in raw_target], dtype=np.int64)
    elif schema.target_type == "categorical":
        classes = sorted(set(raw_target))
        strat = np.array([classes.index(v) for v in raw_target], dtype=np.int64)
    else:
        rates = _parse_numeric(rows, t_col, schema, path)
        if np.isnan(rates).any():
            bad = rows[int(np.flatnonzero(np.isnan(rates))[0])][0]
            raise DataError(f"{path}:{bad}: missing target value")
        edges = np.quantile(rates, np.linspace(0, 1, 11)[1:-1])
        strat = np.searchsorted(edges, rates, side="right")

    tags = np.empty(len(rows), dtype="<U8")
    first = np.arange(n_first)
    tags[first] = _stratified_tags(strat[:n_first], fractions, seed)
    if test_path is not None:
        tags[n_first:] = "test"
    train_idx = np.flatnonzero(tags == "train")

    if schema.target_type == "percentile":
        labels = binarize_crime(rates, train_idx, schema.percentile)
        n_classes = 2
    else:
        labels = strat
        n_classes = 2 if schema.target_type == "binary" else len(classes)

    num_names = [n for n in names if roles[n] == "numeric"]
    cat_names = [n for n in names if roles[n] == "categorical"]
    numeric = np.column_stack(
        [_parse_numeric(rows, names.index(n), schema, path) for n in num_names]
    ) if num_names else np.zeros((len(rows), 0))
    categorical = []
    for n in cat_names:
        c = names.index(n)
        categorical.append([MISSING_CATEGORY if row[c] in schema.missing else row[c] for _, row in rows])

    pre = Preprocessor().fit(numeric[train_idx], [[col[i] for i in train_idx] for col in categorical])
    features = pre.transform(numeric, categorical)
    sources = [str(path)] + ([str(test_path)] if test_path is not None else [])
    meta = {
        "sources": {s: file_checksum(s) for s in sources},
        "split_seed": seed,
        "fractions": fractions,
        "preprocessing": "standardize numeric (train stats), one-hot categorical, mean/missing-category impute",
    }
    return Dataset(features, labels, n_classes, tags, pre.feature_names(num_names, cat_names), meta)


# ---------------------------------------------------------------------------
# splitting


def _stratified_tags(labels: np.ndarray, fractions: Mapping[str, float], seed: int) -> np.ndarray:
    names = list(fractions)
    fr = np.array([fractions[k] for k in names], dtype=np.float64)
    if np.any(fr < 0) or np.any(fr > 1) or fr.sum() > 1 + 1e-12:
        raise ConfigurationError(f"split fractions must lie in [0, 1] and sum to <= 1, got {dict(fractions)}")
    n = len(labels)
    rng = np.random.default_rng(seed)
    # spread each class evenly along [0, 1), then cut the sorted order by size
    pos = np.empty(n)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        perm = rng.permutation(len(idx))
        pos[idx[perm]] = (np.arange(len(idx)) + rng.random(len(idx))) / len(idx)
    order = np.argsort(pos, kind="stable")
    sizes = np.round(fr * n).astype(int)
    if sizes.sum() > n:
        sizes[np.argmax(sizes)] -= sizes.sum() - n
    tags = np.full(n, "", dtype="<U8")
    start = 0
    for name, size in zip(names, sizes):
        tags[order[start : start + size]] = name
        start += size

    active = [k for k, s in zip(names, sizes) if s > 0]
    for c in np.unique(labels):
        members = labels == c
        if members.sum() < len(active):
            continue
        for k in active:
            if np.any(members & (tags == k)):
                continue
            counts = {j: int(np.sum(members & (tags == j))) for j in active}
            donor = max(counts, key=counts.get)
            give = rng.choice(np.flatnonzero(members & (tags == donor)))
            others = np.flatnonzero(~members & (tags == k))
            # only take from classes that keep another member in split k
            in_k = np.bincount(labels[tags == k], minlength=labels.max() + 1)
            others = others[in_k[labels[others]] > 1]
            if others.size == 0:
                tags[give] = k
                continue
            take = rng.choice(others)
            tags[give], tags[take] = k, donor
    return tags


def split(dataset: Dataset, fractions: Mapping[str, float], seed: int = 0) -> Dataset:
    """Tag rows with split names, stratified by label and deterministic per seed.

    Rows left over when the fractions sum to less than one are dropped.
    """
    tags = _stratified_tags(dataset.labels, fractions, seed)
    keep = tags != ""
    return replace(
        dataset,
        features=dataset.features[keep],
        labels=dataset.labels[keep],
        tags=tags[keep],
        meta={**dataset.meta, "split_seed": seed, "fractions": dict(fractions)},
    )


# ---------------------------------------------------------------------------
# synthetic imbalanced data


@dataclass
class ImbalanceSpec:
    """Gaussian-cluster generator settings.

    Class means are drawn from N(0, separation^2 I) in ``dim`` dimensions and
    tokens scatter around them with standard deviation ``cluster_std``.
    """

    probs: tuple[float, ...]
    n_samples: int = 10_000
    dim: int = 16
    separation: float = 1.0
    cluster_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ConfigurationError("need at least two class probabilities")
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-9):
            raise ConfigurationError("class probabilities must be non-negative and sum to 1")
        if not (np.isfinite(self.cluster_std) and self.cluster_std > 0):
            raise ConfigurationError(f"degenerate covariance: cluster_std={self.cluster_std}")
        if self.n_samples < 1 or self.dim < 1:
            raise ConfigurationError("n_samples and dim must be positive")
        self.probs = tuple(float(v) for v in p / p.sum())

    @property
    def n_classes(self) -> int:
        return len(self.probs)


def head_tail_probs(n_classes: int, head: Sequence[float], n_zero: int = 0, decay: float = 0.85) -> tuple[float, ...]:
    """Class marginals with fixed head frequencies and a geometric tail.

    The last ``n_zero`` classes get probability zero (classes that never occur
    in training).
    """
    head = list(head)
    n_tail = n_classes - len(head) - n_zero
    if n_tail < 0 or sum(head) > 1:
        raise ConfigurationError("head frequencies do not fit the class count")
    rest = 1.0 - sum(head)
    tail = decay ** np.arange(n_tail) if n_tail else np.zeros(0)
    if n_tail:
        tail = rest * tail / tail.sum()
    elif rest > 1e-12:
        raise ConfigurationError("head frequencies must sum to 1 when there is no tail")
    return tuple(head) + tuple(tail.tolist()) + (0.0,) * n_zero


def atis_like(**kw) -> ImbalanceSpec:
    """29 intents, top-3 at 73.7 / 8.5 / 5.1 %, 8 never seen in training."""
    return ImbalanceSpec(probs=head_tail_probs(29, (0.737, 0.085, 0.051), n_zero=8, decay=0.85), **kw)


def coco_like(**kw) -> ImbalanceSpec:
    """80 concepts, top-3 at 22.6 / 3.5 / 3.1 %."""
    return ImbalanceSpec(probs=head_tail_probs(80, (0.226, 0.035, 0.031), decay=0.97), **kw)


PRESETS = {"atis": atis_like, "coco": coco_like}


def synth_imbalanced(spec: ImbalanceSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.n_classes, spec.dim)) * spec.separation
    labels = rng.choice(spec.n_classes, size=spec.n_samples, p=np.asarray(spec.probs))
    features = centers[labels] + rng.standard_normal((spec.n_samples, spec.dim)) * spec.cluster_std
    meta = {
        "generator": "gaussian-clusters",
        "probs": list(spec.probs),
        "separation": spec.separation,
        "cluster_std": spec.cluster_std,
        "seed": spec.seed,
    }
    return Dataset(features, labels, spec.n_classes, meta=meta)
