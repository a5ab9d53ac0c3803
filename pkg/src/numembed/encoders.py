"""Baseline numerical-feature encoders: parameter-free transforms, a
shared numeric MLP, single field embeddings, and the three hard
discretizers (equal-width, equal-frequency, logarithmic) feeding
conventional embedding tables.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import nn

EDD = "edd"  # equal-width buckets
EFD = "efd"  # equal-frequency (quantile) buckets
LD = "ld"  # log-squared buckets
HARD_KINDS = (EDD, EFD, LD)


def init_embedding(rows, dim, rng):
    """Uniform init in [-1/sqrt(dim), +1/sqrt(dim)] for scale-stable dots."""
    bound = 1.0 / math.sqrt(dim)
    return rng.uniform(-bound, bound, size=(rows, dim))


def lookup(table, index):
    """Row of an embedding table; gradient flows only to that row."""
    if not 0 <= index < table.shape[0]:
        raise IndexError(f"embedding index {index} out of range [0, {table.shape[0]})")
    return table[index]


def edd_bucket(x, stats, H):
    """Equal-width bucket floor((x - x_min)/w) with w = range/H, clamped
    into [0, H-1]; a degenerate field maps everything to bucket 0."""
    if stats.x_max == stats.x_min:
        return np.zeros_like(np.asarray(x, dtype=np.float64), dtype=np.int64) if np.ndim(x) else 0
    w = (stats.x_max - stats.x_min) / H
    b = np.floor((np.asarray(x, dtype=np.float64) - stats.x_min) / w)
    b = np.clip(b, 0, H - 1).astype(np.int64)
    return b if np.ndim(x) else int(b)


@dataclasses.dataclass(frozen=True)
class HardDiscretizer:
    """A fitted bucketing rule: kind, requested bucket count, and (for
    the quantile kind) sorted boundaries. ``n_buckets`` is the effective
    table size after collapsing duplicates / observing the training max."""

    kind: str
    H: int
    stats: object
    boundaries: tuple = ()
    n_buckets: int = 1

    def bucket(self, x):
        """Vectorized bucket assignment, clamped into [0, n_buckets-1]."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == EDD:
            b = edd_bucket(x, self.stats, self.H)
            return np.asarray(b, dtype=np.int64)
        if self.kind == EFD:
            bnd = np.asarray(self.boundaries, dtype=np.float64)
            return np.searchsorted(bnd, x, side="left").astype(np.int64)
        # LD: shift so the log argument is >= 1, then floor(ln(x')^2)
        shifted = np.maximum(x - self.stats.x_min + 1.0, 1.0)
        b = np.floor(np.log(shifted) ** 2).astype(np.int64)
        return np.clip(b, 0, self.n_buckets - 1)


def efd_fit(values, H, stats=None):
    """Quantile discretizer: boundaries at the k/H empirical quantiles
    (linear interpolation), k = 1..H-1; duplicates collapse and the
    effective bucket count is reported via ``n_buckets``."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("efd_fit needs a non-empty value set")
    if H < 1:
        raise ValueError("H must be >= 1")
    if H == 1:
        boundaries = ()
    else:
        qs = np.quantile(values, np.arange(1, H) / H, method="linear")
        boundaries = tuple(sorted(set(float(q) for q in qs)))
    return HardDiscretizer(
        EFD, H, stats, boundaries=boundaries, n_buckets=len(boundaries) + 1
    )


def fit_hard(kind, values, stats, H):
    """Fit a discretizer of the given kind on training values."""
    if kind == EDD:
        return HardDiscretizer(EDD, H, stats, n_buckets=H if stats.x_max > stats.x_min else 1)
    if kind == EFD:
        return efd_fit(values, H, stats)
    if kind == LD:
        values = np.asarray(values, dtype=np.float64)
        shifted = np.maximum(values - stats.x_min + 1.0, 1.0)
        top = int(np.floor(np.log(shifted.max()) ** 2)) if len(values) else 0
        return HardDiscretizer(LD, H, stats, n_buckets=top + 1)
    raise ValueError(f"unknown discretizer kind {kind!r}")


def ld_bucket(x, x_min=0.0):
    """Log-squared bucket of the shifted value x' = x - x_min + 1."""
    shifted = max(float(x) - x_min + 1.0, 1.0)
    return int(math.floor(math.log(shifted) ** 2))


def youtube_encode(x_norm):
    """[x^2, x, sqrt(x)] of one normalized value; no parameters."""
    x = float(x_norm)
    return np.array([x * x, x, math.sqrt(x)], dtype=np.float64)


def youtube_encode_batch(xn):
    """(B, N) normalized values -> (B, 3N) with per-field triples."""
    B, N = xn.shape
    out = np.empty((B, 3 * N), dtype=np.float64)
    out[:, 0::3] = xn**2
    out[:, 1::3] = xn
    out[:, 2::3] = np.sqrt(xn)
    return out


def field_embed(x_norm, e_field):
    """Scale the single field embedding by the feature value."""
    return float(x_norm) * np.asarray(e_field, dtype=np.float64)


def dlrm_encode(x_all, layers, slope=0.01):
    """Shared numeric MLP: all normalized values in, one vector out.

    ``layers`` is a list of (W, b) pairs; hidden layers use Leaky-ReLU,
    the last layer is linear.
    """
    h = np.asarray(x_all, dtype=np.float64)
    for k, (W, b) in enumerate(layers):
        h = nn.affine(W, h, b)
        if k < len(layers) - 1:
            h = nn.leaky_relu(h, slope)
    return h
