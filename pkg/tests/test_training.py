"""Training-loop and metric properties: AUC vs brute force, transform
invariance, Adam behavior, reproducibility, early stopping, exporters,
and the ablation runner."""

import numpy as np
import pytest

from numembed import data, model as model_mod, training


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auc_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 51))
        # Coarse quantization forces plenty of tied scores.
        scores = np.round(rng.uniform(0, 1, size=n), 1)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert training.auc(scores, labels) == pytest.approx(
            brute_force_auc(scores, labels), abs=1e-12)


def test_auc_transform_invariance_and_complement():
    rng = np.random.default_rng(1)
    scores = rng.uniform(size=40)  # continuous: ties have measure zero
    labels = rng.integers(0, 2, size=40)
    labels[0], labels[1] = 0, 1
    assert training.auc(scores, labels) == training.auc(2 * scores + 1, labels)
    assert training.auc(scores, labels) + \
        training.auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= training.auc(scores, labels) <= 1.0


def test_adam_state_shapes_and_counter():
    params = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
    grads = {k: np.ones_like(v) for k, v in params.items()}
    state = training.AdamState(lr=0.1)
    for t in range(1, 4):
        training.adam_step(params, grads, state)
        assert state.t == t
    assert state.m["a"].shape == (2, 3) and state.v["b"].shape == (4,)
    with pytest.raises(training.TrainingError):
        training.adam_step(params, {"a": np.full((2, 3), np.nan),
                                    "b": np.ones(4)}, state)


def _setup(seed=0, n=400, **kw):
    ds = data.gen_synthetic(data.SyntheticSpec(n=n), seed)
    kw.setdefault("embed_dim", 4)
    kw.setdefault("hidden_dims", (6,))
    kw.setdefault("buckets", 5)
    kw.setdefault("tau", 1.0)
    kw.setdefault("tnet_hidden", 4)
    kw.setdefault("use_fm", False)
    cfg = model_mod.ModelConfig(**kw)
    stats = data.compute_all_stats(ds)
    m = model_mod.Model(ds.schema, cfg, stats,
                        rng=np.random.default_rng(seed), train_dataset=ds)
    return ds, m


def test_training_bit_reproducible():
    tc = training.TrainConfig(epochs=2, batch_size=64, lr=1e-3, seed=7)
    finals = []
    for _ in range(2):
        ds, m = _setup(seed=7)
        training.train(m, ds, ds, tc)
        finals.append({n: p.copy() for n, p in m.params.items()})
    for name in finals[0]:
        assert np.array_equal(finals[0][name], finals[1][name])


def test_lr_zero_leaves_parameters_unchanged():
    ds, m = _setup()
    before = {n: p.copy() for n, p in m.params.items()}
    training.train(m, ds, ds,
                   training.TrainConfig(epochs=2, batch_size=64, lr=0.0))
    # With lr=0 nothing moves, so every epoch ties the best validation
    # AUC and the kept checkpoint equals the initial parameters.
    for name in before:
        assert np.array_equal(m.params[name], before[name])


def test_early_stopping_keeps_best_auc():
    ds, m = _setup(seed=2)
    tc = training.TrainConfig(epochs=6, batch_size=64, lr=5e-3, seed=2,
                              patience=2)
    history, diverged = training.train(m, ds, ds, tc)
    assert not diverged
    best_seen = max(h["valid_auc"] for h in history)
    final = training.evaluate(m, ds)
    assert final.auc == pytest.approx(best_seen, abs=1e-12)


def test_train_empty_split_rejected():
    ds, m = _setup()
    empty = data.Dataset(ds.schema, ds.cat[:0], ds.num[:0], ds.labels[:0])
    with pytest.raises(training.TrainingError):
        training.train(m, empty, ds, training.TrainConfig())


def test_run_seeds_stats():
    values, mean, std = training.run_seeds(lambda s: float(s), [1, 2, 3])
    assert list(values) == [1.0, 2.0, 3.0]
    assert mean == 2.0 and std == pytest.approx(np.std([1, 2, 3]))


def test_predict_order_independent_of_batching():
    ds, m = _setup(seed=3)
    s1 = training.predict(m, ds, batch_size=32)
    s2 = training.predict(m, ds, batch_size=4096)
    assert np.array_equal(s1, s2)


def test_history_file(tmp_path):
    ds, m = _setup(seed=4)
    history, _ = training.train(
        m, ds, ds, training.TrainConfig(epochs=2, batch_size=64))
    path = tmp_path / "history.txt"
    training.write_history(history, str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 3 * len(history)
    assert lines[0].startswith("0 train loss ")
    assert lines[1].startswith("0 valid auc ")


def test_export_for_every_per_field_encoder(tmp_path):
    grid = np.linspace(0, 1, 17)
    for enc in ("autodis", "field", "youtube", "edd", "efd", "ld"):
        ds, m = _setup(seed=5, encoder=enc)
        rows = training.export_embeddings(m, 0, grid,
                                          str(tmp_path / f"{enc}.tsv"))
        assert rows.shape[0] == 17 and np.array_equal(rows[:, 0], grid)
    ds, m = _setup(seed=5, encoder="dlrm", dlrm_hidden=(5,))
    with pytest.raises(training.MetricError):
        training.embedding_grid(m, 0, grid)
    ds, m = _setup(seed=5)
    with pytest.raises(training.MetricError):
        training.embedding_grid(m, 99, grid)


def test_soft_distribution_requires_autodis():
    ds, m = _setup(seed=6, encoder="edd")
    with pytest.raises(training.MetricError):
        training.soft_distribution_grid(m, 0, np.linspace(0, 1, 5))


def test_export_hard_aggregation_grid(tmp_path):
    for agg in ("max_pooling", "top_k_sum"):
        ds, m = _setup(seed=7, aggregation=agg, topk=2)
        rows = training.embedding_grid(m, 0, np.linspace(0, 1, 9))
        assert rows.shape == (9, 1 + 4)


def test_write_table(tmp_path):
    path = tmp_path / "t.tsv"
    training.write_table(str(path), ["a", "b"], [(1.0, 2.5), (3.0, 4.0)])
    lines = path.read_text().splitlines()
    assert lines[0] == "a\tb"
    assert lines[1] == "1.0\t2.5"


def test_ablation_order_control():
    ds = data.gen_synthetic(
        data.SyntheticSpec(n=300, n_numerical=2, cat_vocabs=(4,)), 1)
    cfg = model_mod.ModelConfig(embed_dim=4, hidden_dims=(4,), buckets=4,
                                tau=1.0, tnet_hidden=4, use_fm=False)
    tc = training.TrainConfig(epochs=1, batch_size=64)
    r_fwd = training.ablation_fields(ds, ds, cfg, tc, order=[1, 2])
    r_rev = training.ablation_fields(ds, ds, cfg, tc, order=[2, 1])
    assert len(r_fwd) == len(r_rev) == 3
    # Step 0 ignores the order entirely.
    assert r_fwd[0].auc == r_rev[0].auc
    # The full set is the same in both orders; only the path differs.
    assert {r.n_eval for r in r_fwd} == {ds.n}
