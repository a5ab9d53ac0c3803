"""Baseline encoder properties: bucket monotonicity, quantile balance,
intra-bucket identity, boundary discontinuity, homogeneity."""

import numpy as np
import pytest

from numembed import data, encoders


def _stats(x_min, x_max):
    return data.FieldStats(x_min, x_max, (x_min + x_max) / 2.0,
                           tuple(np.linspace(0.1, 1.0, 10)), 100)


def test_edd_monotone_and_boundaries():
    s = _stats(0.0, 10.0)
    H = 5
    xs = np.linspace(-2.0, 12.0, 400)
    buckets = [encoders.edd_bucket(x, s, H) for x in xs]
    assert all(a <= b for a, b in zip(buckets, buckets[1:]))
    w = (s.x_max - s.x_min) / H
    for k in range(1, H):
        boundary = s.x_min + k * w
        below = encoders.edd_bucket(boundary - 1e-9, s, H)
        above = encoders.edd_bucket(boundary + 1e-9, s, H)
        assert above == below + 1  # straddling a boundary switches bucket
    # Out-of-range values clamp to edge buckets.
    assert encoders.edd_bucket(-100.0, s, H) == 0
    assert encoders.edd_bucket(100.0, s, H) == H - 1
    # Degenerate field: everything in bucket 0.
    assert encoders.edd_bucket(7.0, _stats(2.0, 2.0), H) == 0


def test_efd_balanced_counts():
    rng = np.random.default_rng(0)
    for H in (2, 4, 7):
        values = rng.permutation(np.linspace(0.0, 1.0, 697))  # distinct
        disc = encoders.efd_fit(values, H)
        counts = np.bincount(disc.bucket(values), minlength=H)
        n = len(values)
        assert np.all(np.abs(counts - n / H) <= 1.0)


def test_efd_boundaries_sorted_and_clamped():
    rng = np.random.default_rng(1)
    values = rng.normal(size=500)
    disc = encoders.efd_fit(values, 6)
    bnd = np.asarray(disc.boundaries)
    assert np.all(np.diff(bnd) > 0)
    assert disc.bucket(-1e9) == 0
    assert disc.bucket(1e9) == disc.n_buckets - 1
    with pytest.raises(ValueError):
        encoders.efd_fit(np.array([]), 3)
    with pytest.raises(ValueError):
        encoders.efd_fit(values, 0)


def test_intra_bucket_identical_embeddings():
    # Distant values in one bucket share the exact same lookup row.
    s = _stats(0.0, 10.0)
    disc = encoders.fit_hard(encoders.EDD, np.linspace(0, 10, 50), s, 5)
    table = encoders.init_embedding(disc.n_buckets, 4, np.random.default_rng(0))
    e1 = encoders.lookup(table, int(disc.bucket(0.1)))
    e2 = encoders.lookup(table, int(disc.bucket(1.9)))
    assert np.array_equal(e1, e2)
    # While boundary-adjacent values land in different rows.
    e3 = encoders.lookup(table, int(disc.bucket(2.0 - 1e-9)))
    e4 = encoders.lookup(table, int(disc.bucket(2.0 + 1e-9)))
    assert not np.array_equal(e3, e4)


def test_ld_fit_table_and_clamp():
    s = _stats(0.0, 100.0)
    values = np.linspace(0.0, 100.0, 200)
    disc = encoders.fit_hard(encoders.LD, values, s, 20)
    top = int(np.floor(np.log(101.0) ** 2))
    assert disc.n_buckets == top + 1
    assert int(disc.bucket(1e6)) == top  # clamped above the training max
    assert int(disc.bucket(-50.0)) == 0  # shifted floor at x'=1
    b = disc.bucket(values)
    assert np.all(np.diff(b) >= 0)


def test_field_embed_homogeneous():
    rng = np.random.default_rng(2)
    e = rng.normal(size=8)
    # Power-of-two scale factors keep float multiplication exact, so
    # degree-1 homogeneity holds bitwise, not just approximately.
    for c in (0.0, 0.5, 2.0, 4.0):
        assert np.array_equal(encoders.field_embed(c * 0.75, e),
                              c * encoders.field_embed(0.75, e))
    assert np.allclose(encoders.field_embed(3.0 * 0.7, e),
                       3.0 * encoders.field_embed(0.7, e), atol=1e-12)


def test_youtube_batch_matches_scalar():
    rng = np.random.default_rng(3)
    xn = rng.uniform(0.0, 1.0, size=(5, 3))
    out = encoders.youtube_encode_batch(xn)
    assert out.shape == (5, 9)
    for b in range(5):
        for j in range(3):
            assert np.array_equal(out[b, 3 * j:3 * j + 3],
                                  encoders.youtube_encode(xn[b, j]))


def test_init_embedding_range():
    table = encoders.init_embedding(50, 16, np.random.default_rng(4))
    assert table.shape == (50, 16)
    assert np.max(np.abs(table)) <= 1.0 / np.sqrt(16)


def test_fit_hard_unknown_kind():
    with pytest.raises(ValueError):
        encoders.fit_hard("quantum", np.ones(3), _stats(0, 1), 4)
