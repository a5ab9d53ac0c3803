"""Tabular data handling: field schemas, per-field statistics, min-max
normalization, batching, and synthetic dataset generation.

Datasets are stored columnar: an integer matrix for categorical ids, a
float64 matrix for numerical values, and a label vector. All objects are
immutable after construction; batch iterators never share mutable state.
"""

from __future__ import annotations

import dataclasses
import math
import zlib

import numpy as np

# Number of evenly spaced value points at which the empirical CDF is
# sampled. The per-field statistics vector therefore has
# CDF_GRID_POINTS + 1 entries (CDF samples + mean).
CDF_GRID_POINTS = 10

CATEGORICAL = "categorical"
NUMERICAL = "numerical"


class DataError(ValueError):
    """Malformed input data or a degenerate dataset specification."""


@dataclasses.dataclass(frozen=True)
class FieldSchema:
    """Declares one column: its position, kind, and (categorical) vocab."""

    field_id: int
    kind: str
    vocab_size: int | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERICAL):
            raise DataError(f"unknown field kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.vocab_size is None or self.vocab_size < 1:
                raise DataError(
                    f"field {self.field_id}: categorical fields need vocab_size >= 1"
                )


def cat_fields(schema):
    return [f for f in schema if f.kind == CATEGORICAL]


def num_fields(schema):
    return [f for f in schema if f.kind == NUMERICAL]


def schema_to_string(schema):
    """Compact declaration, e.g. ``cat:5,cat:5,num,num``."""
    parts = []
    for f in schema:
        parts.append(f"cat:{f.vocab_size}" if f.kind == CATEGORICAL else "num")
    return ",".join(parts)


def schema_from_string(text):
    """Inverse of schema_to_string."""
    schema = []
    for i, tok in enumerate(t.strip() for t in text.split(",") if t.strip()):
        if tok == "num":
            schema.append(FieldSchema(i, NUMERICAL))
        elif tok.startswith("cat:"):
            try:
                vocab = int(tok[4:])
            except ValueError:
                raise DataError(f"bad schema token {tok!r}") from None
            schema.append(FieldSchema(i, CATEGORICAL, vocab_size=vocab))
        else:
            raise DataError(f"bad schema token {tok!r}")
    if not schema:
        raise DataError("empty schema")
    return schema


def validate_schema(schema):
    ids = [f.field_id for f in schema]
    if ids != list(range(len(schema))):
        raise DataError("field_ids must be contiguous starting at 0")


@dataclasses.dataclass(frozen=True)
class FieldStats:
    """Summary statistics of one numerical field over the training split.

    ``cdf_samples`` holds the empirical CDF evaluated at CDF_GRID_POINTS
    evenly spaced value points between x_min and x_max.
    """

    x_min: float
    x_max: float
    mean: float
    cdf_samples: tuple
    count: int

    def stats_vector(self):
        """CDF samples plus min-max-normalized mean, as float64 array.

        This is the fixed-size global statistics input of the adaptive
        temperature network; the mean is normalized so every entry lies
        in [0, 1] regardless of the raw field scale.
        """
        return np.array(
            list(self.cdf_samples) + [normalize_value(self.mean, self)],
            dtype=np.float64,
        )


class Dataset:
    """Immutable columnar dataset: categorical ids, numerical values, labels."""

    def __init__(self, schema, cat, num, labels):
        validate_schema(schema)
        self.schema = list(schema)
        self.cat = np.ascontiguousarray(cat, dtype=np.int64)
        self.num = np.ascontiguousarray(num, dtype=np.float64)
        self.labels = np.ascontiguousarray(labels, dtype=np.float64)
        self.n = len(self.labels)
        m, k = len(cat_fields(schema)), len(num_fields(schema))
        if self.cat.shape != (self.n, m) or self.num.shape != (self.n, k):
            raise DataError("column block shapes do not match schema")
        for i, f in enumerate(cat_fields(schema)):
            col = self.cat[:, i]
            if self.n and (col.min() < 0 or col.max() >= f.vocab_size):
                raise DataError(f"field {f.field_id}: categorical id out of range")

    def numeric_values(self, field_id):
        """Raw values of one numerical field (NaN marks missing cells)."""
        idx = self._num_index(field_id)
        return self.num[:, idx]

    def _num_index(self, field_id):
        for i, f in enumerate(num_fields(self.schema)):
            if f.field_id == field_id:
                return i
        raise DataError(f"field {field_id} is not numerical")

    def with_numeric_subset(self, keep_field_ids):
        """New dataset keeping only the listed numerical fields (used by
        the cumulative-field ablation runner); fields are re-numbered
        contiguously, categorical fields first."""
        nf = num_fields(self.schema)
        keep = [i for i, f in enumerate(nf) if f.field_id in keep_field_ids]
        unknown = set(keep_field_ids) - {f.field_id for f in nf}
        if unknown:
            raise DataError(f"unknown numerical field ids {sorted(unknown)}")
        schema = []
        for f in cat_fields(self.schema):
            schema.append(
                FieldSchema(len(schema), CATEGORICAL, vocab_size=f.vocab_size)
            )
        for _ in keep:
            schema.append(FieldSchema(len(schema), NUMERICAL))
        return Dataset(schema, self.cat, self.num[:, keep], self.labels)


@dataclasses.dataclass(frozen=True)
class Batch:
    """Columnar slice of a dataset; all instances share one schema."""

    cat: np.ndarray
    num: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    @property
    def size(self):
        return len(self.labels)


def _hash_mod(token, vocab_size):
    return zlib.crc32(token.encode("utf-8")) % vocab_size


def load_tabular(path, schema, delimiter="\t", cat_mode="dict", cat_maps=None):
    """Parse a delimited text file into a Dataset.

    Layout: label first, then the schema's fields in field_id order.
    Categorical strings are mapped into [0, vocab_size) either via a
    dictionary (index 0 reserved for unknowns) or via hash-then-mod.
    Missing numerical cells become NaN; impute with
    :func:`impute_missing` after a stats pass.

    When ``cat_maps`` is None in dictionary mode, dictionaries are built
    from this file (training); pass the built maps back in to map an
    evaluation split, where unseen values fall to the reserved index 0.
    """
    validate_schema(schema)
    if cat_mode not in ("dict", "hash", "raw"):
        raise DataError(f"unknown categorical mapping mode {cat_mode!r}")
    cfs, nfs = cat_fields(schema), num_fields(schema)
    ncols = len(schema) + 1
    building = cat_mode == "dict" and cat_maps is None
    if building:
        cat_maps = [{} for _ in cfs]

    cat_rows, num_rows, labels = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(delimiter)
            if len(cells) != ncols:
                raise DataError(
                    f"row {lineno}: expected {ncols} columns, got {len(cells)}"
                )
            try:
                y = int(cells[0])
            except ValueError:
                raise DataError(f"row {lineno}: bad label {cells[0]!r}") from None
            if y not in (0, 1):
                raise DataError(f"row {lineno}: label must be 0 or 1")
            crow, nrow = [], []
            ci = 0
            for f in schema:
                cell = cells[f.field_id + 1]
                if f.kind == CATEGORICAL:
                    if cat_mode == "hash":
                        crow.append(_hash_mod(cell, f.vocab_size))
                    elif cat_mode == "raw":
                        try:
                            cid = int(cell)
                        except ValueError:
                            raise DataError(
                                f"row {lineno}: bad categorical id {cell!r} "
                                f"in field {f.field_id}"
                            ) from None
                        if not 0 <= cid < f.vocab_size:
                            raise DataError(
                                f"row {lineno}: categorical id {cid} out of "
                                f"range for field {f.field_id}"
                            )
                        crow.append(cid)
                    else:
                        mapping = cat_maps[ci]
                        if (
                            building
                            and cell not in mapping
                            and len(mapping) < f.vocab_size - 1
                        ):
                            mapping[cell] = len(mapping) + 1
                        crow.append(mapping.get(cell, 0))
                    ci += 1
                else:
                    if cell == "":
                        nrow.append(math.nan)
                    else:
                        try:
                            nrow.append(float(cell))
                        except ValueError:
                            raise DataError(
                                f"row {lineno}: non-numeric value {cell!r} "
                                f"in numerical field {f.field_id}"
                            ) from None
            cat_rows.append(crow)
            num_rows.append(nrow)
            labels.append(y)
    if not labels:
        raise DataError("no instances")
    ds = Dataset(
        schema,
        np.array(cat_rows, dtype=np.int64).reshape(len(labels), len(cfs)),
        np.array(num_rows, dtype=np.float64).reshape(len(labels), len(nfs)),
        np.array(labels, dtype=np.float64),
    )
    return (ds, cat_maps) if cat_mode == "dict" else (ds, None)


def write_dataset(dataset, path, delimiter="\t"):
    """Write a dataset in the load_tabular layout (round-trippable)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(dataset.n):
            cells = [str(int(dataset.labels[i]))]
            ci = ni = 0
            for f in dataset.schema:
                if f.kind == CATEGORICAL:
                    cells.append(str(int(dataset.cat[i, ci])))
                    ci += 1
                else:
                    cells.append(repr(float(dataset.num[i, ni])))
                    ni += 1
            fh.write(delimiter.join(cells) + "\n")


def compute_stats(dataset, field_id):
    """Exact min/max/mean plus the sampled empirical CDF of one field.

    NaN cells (missing values) are excluded from every statistic.
    """
    values = dataset.numeric_values(field_id)
    values = values[~np.isnan(values)]
    if len(values) == 0:
        raise DataError(f"field {field_id}: no observed values")
    x_min = float(values.min())
    x_max = float(values.max())
    mean = float(values.mean())
    grid = np.linspace(x_min, x_max, CDF_GRID_POINTS)
    sorted_v = np.sort(values)
    cdf = np.searchsorted(sorted_v, grid, side="right") / len(values)
    return FieldStats(x_min, x_max, mean, tuple(float(c) for c in cdf), len(values))


def compute_all_stats(dataset):
    """Stats for every numerical field, keyed by field_id."""
    return {f.field_id: compute_stats(dataset, f.field_id) for f in num_fields(dataset.schema)}


def normalize_value(x, stats):
    """Min-max scale into [0, 1], clamped; degenerate fields map to 0.5."""
    if stats.x_max == stats.x_min:
        return 0.5
    return min(1.0, max(0.0, (x - stats.x_min) / (stats.x_max - stats.x_min)))


def normalize_column(values, stats):
    """Vectorized normalize_value over a float64 array."""
    if stats.x_max == stats.x_min:
        return np.full_like(values, 0.5)
    return np.clip((values - stats.x_min) / (stats.x_max - stats.x_min), 0.0, 1.0)


def impute_missing(dataset, stats_by_field):
    """Replace NaN numerical cells with the field mean from the training
    stats; returns a new Dataset."""
    num = dataset.num.copy()
    for i, f in enumerate(num_fields(dataset.schema)):
        mask = np.isnan(num[:, i])
        if mask.any():
            num[mask, i] = stats_by_field[f.field_id].mean
    return Dataset(dataset.schema, dataset.cat, num, dataset.labels)


def make_batches(dataset, batch_size, shuffle_seed=None):
    """Yield columnar batches covering every instance exactly once.

    The last batch may be smaller. A seed gives a reproducible shuffle;
    None preserves insertion order.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.arange(dataset.n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(dataset.n)
    for start in range(0, dataset.n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(dataset.cat[idx], dataset.num[idx], dataset.labels[idx], idx)


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic CTR dataset: numerical features uniform on [0, 1], the
    label drawn from Bernoulli(sigmoid(a*sin(b*x0) + c)) where x0 is the
    informative field; remaining numerical fields are pure noise, and
    categorical fields (if any) are uniform and uninformative.
    """

    n: int
    n_numerical: int = 1
    cat_vocabs: tuple = ()
    a: float = 4.0
    b: float = 6.0
    c: float = -1.0

    def logit(self, x0):
        return self.a * np.sin(self.b * np.asarray(x0, dtype=np.float64)) + self.c


def gen_synthetic(spec, seed):
    """Deterministic synthetic dataset from a SyntheticSpec."""
    if spec.n < 1:
        raise DataError("degenerate spec: zero samples")
    if spec.n_numerical < 1:
        raise DataError("degenerate spec: need at least one numerical field")
    rng = np.random.default_rng(seed)
    num = rng.uniform(0.0, 1.0, size=(spec.n, spec.n_numerical))
    cat = np.empty((spec.n, len(spec.cat_vocabs)), dtype=np.int64)
    for i, v in enumerate(spec.cat_vocabs):
        cat[:, i] = rng.integers(0, v, size=spec.n)
    p = 1.0 / (1.0 + np.exp(-spec.logit(num[:, 0])))
    labels = (rng.uniform(size=spec.n) < p).astype(np.float64)
    ratio = labels.mean()
    if not (0.05 <= ratio <= 0.95):
        raise DataError(f"degenerate labels: positive ratio {ratio:.3f}")
    schema = [
        FieldSchema(i, CATEGORICAL, vocab_size=v)
        for i, v in enumerate(spec.cat_vocabs)
    ]
    base = len(schema)
    schema += [FieldSchema(base + j, NUMERICAL) for j in range(spec.n_numerical)]
    return Dataset(schema, cat, num, labels)


def save_cat_maps(path, cat_maps):
    """Persist dictionary-mode categorical mappings (one per categorical
    field, in field order) for reuse at evaluation time."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, mapping in enumerate(cat_maps):
            for token, idx in mapping.items():
                fh.write(f"{i}\t{idx}\t{token}\n")


def load_cat_maps(path, n_cat_fields):
    cat_maps = [{} for _ in range(n_cat_fields)]
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            pos, idx, token = line.split("\t", 2)
            cat_maps[int(pos)][token] = int(idx)
    return cat_maps


def save_stats_file(path, stats_by_field, extra=None):
    """Persist stats (and optional extra per-field entries such as fitted
    quantile boundaries) as flat ``field_id key value`` lines."""
    extra = extra or {}
    with open(path, "w", encoding="utf-8") as fh:
        for fid in sorted(stats_by_field):
            s = stats_by_field[fid]
            fh.write(f"{fid} min {s.x_min!r}\n")
            fh.write(f"{fid} max {s.x_max!r}\n")
            fh.write(f"{fid} mean {s.mean!r}\n")
            fh.write(f"{fid} count {s.count}\n")
            for i, c in enumerate(s.cdf_samples):
                fh.write(f"{fid} cdf{i} {c!r}\n")
        for fid in sorted(extra):
            for key, val in extra[fid].items():
                fh.write(f"{fid} {key} {val!r}\n")


def load_stats_file(path):
    """Inverse of save_stats_file: (stats_by_field, extra_by_field)."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fid_s, key, val = line.split(" ", 2)
            raw.setdefault(int(fid_s), {})[key] = val
    stats, extra = {}, {}
    for fid, kv in raw.items():
        known = {"min", "max", "mean", "count"} | {
            f"cdf{i}" for i in range(CDF_GRID_POINTS)
        }
        if "min" in kv:
            stats[fid] = FieldStats(
                float(kv["min"]),
                float(kv["max"]),
                float(kv["mean"]),
                tuple(float(kv[f"cdf{i}"]) for i in range(CDF_GRID_POINTS)),
                int(kv["count"]),
            )
        rest = {k: float(v) for k, v in kv.items() if k not in known}
        if rest:
            extra[fid] = rest
    return stats, extra
