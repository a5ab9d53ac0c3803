"""Adam optimization, the training loop, ranking metrics, analysis
exporters, the cumulative-field ablation runner, and complexity
measurement."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import data, model as model_mod


class TrainingError(RuntimeError):
    pass


class MetricError(ValueError):
    pass


@dataclasses.dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_adam)


def auc(scores, labels):
    """Mann-Whitney AUC with half credit for ties, via tied rank sums."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    P = int(pos.sum())
    N = len(labels) - P
    if P == 0 or N == 0:
        raise MetricError("AUC undefined: need both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - P * (P + 1) / 2.0) / (P * N))


def logloss_metric(scores, labels):
    """Mean LogLoss with the same clipping rule as the training loss."""
    p = np.clip(np.asarray(scores, dtype=np.float64),
                model_mod.PROB_CLIP, 1.0 - model_mod.PROB_CLIP)
    y = np.asarray(labels, dtype=np.float64)
    if len(y) == 0:
        raise MetricError("empty evaluation set")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    auc: float
    logloss: float
    n_eval: int
    param_count: int = 0
    batch_inference_ms: float = 0.0


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    patience: int = 3


def predict(model, dataset, batch_size=4096):
    """Scores for a whole dataset, batch by batch, in stored order."""
    out = np.empty(dataset.n, dtype=np.float64)
    for batch in data.make_batches(dataset, batch_size):
        probs, _ = model.forward(batch)
        out[batch.indices] = probs
    return out


def evaluate(model, dataset, batch_size=4096):
    scores = predict(model, dataset, batch_size)
    return MetricsReport(
        auc=auc(scores, dataset.labels),
        logloss=logloss_metric(scores, dataset.labels),
        n_eval=dataset.n,
        param_count=model.param_count(),
    )


def train(model, train_ds, valid_ds, tcfg):
    """Mini-batch Adam with validation-AUC early stopping.

    Returns (history, diverged). The model is left holding the
    best-validation-AUC parameters. Fully deterministic under the seed:
    epoch shuffles use seeds derived from ``tcfg.seed``.
    """
    if train_ds.n == 0 or valid_ds.n == 0:
        raise TrainingError("empty split")
    state = AdamState(lr=tcfg.lr)
    history = []
    best_auc = -1.0
    best_params = {n: p.copy() for n, p in model.params.items()}
    bad_epochs = 0
    diverged = False
    for epoch in range(tcfg.epochs):
        shuffle_seed = tcfg.seed * 100003 + epoch
        epoch_loss = 0.0
        n_batches = 0
        for batch in data.make_batches(train_ds, tcfg.batch_size, shuffle_seed):
            probs, cache = model.forward(batch)
            step_loss = model.loss(probs, batch.labels)
            if not np.isfinite(step_loss):
                diverged = True
                break
            grads = model.backward(cache, batch.labels)
            adam_step(model.params, grads, state)
            epoch_loss += step_loss
            n_batches += 1
        if diverged:
            break
        rep = evaluate(model, valid_ds)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_batches, 1),
            "valid_auc": rep.auc,
            "valid_logloss": rep.logloss,
        })
        if rep.auc > best_auc:
            best_auc = rep.auc
            best_params = {n: p.copy() for n, p in model.params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                break
    model.params = best_params
    return history, diverged


def run_seeds(run_fn, seeds):
    """Repeat an experiment over seeds; returns (values, mean, std)."""
    values = np.array([run_fn(seed) for seed in seeds], dtype=np.float64)
    return values, float(values.mean()), float(values.std())


# ----------------------------------------------------------------------
# Analysis exporters (delimited tables with a one-line header).
# ----------------------------------------------------------------------


def write_table(path, header, rows, delimiter="\t"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(header) + "\n")
        for row in rows:
            fh.write(delimiter.join(repr(float(v)) for v in row) + "\n")


def embedding_grid(model, field_id, grid):
    """Embedding vectors of one numerical field over a grid of
    normalized values; rows of (x, e_0..e_{d-1})."""
    nf = [f.field_id for f in model.num_fields]
    if field_id not in nf:
        raise MetricError(f"field {field_id} is not a numerical field")
    grid = np.asarray(grid, dtype=np.float64)
    i = nf.index(field_id)
    # Build batches holding the grid in this field and field means elsewhere.
    num = np.empty((len(grid), len(nf)), dtype=np.float64)
    for k, fid in enumerate(nf):
        s = model.stats[fid]
        num[:, k] = s.x_min + grid * (s.x_max - s.x_min) if k == i else s.mean
    cat = np.zeros((len(grid), len(model.cat_fields)), dtype=np.int64)
    batch = data.Batch(cat, num, np.zeros(len(grid)), np.arange(len(grid)))
    _, cache = model.forward(batch)
    enc = model.config.encoder
    if enc == model_mod.AUTODIS:
        c = cache["num"][field_id]
        me = model.params[f"num{field_id}.me"]
        if model.config.aggregation == "weighted_average":
            emb = c["probs"] @ me
        elif model.config.aggregation == "max_pooling":
            emb = me[c["sel"]]
        else:
            emb = me[c["sel"]].sum(axis=1)
    elif enc == model_mod.FIELD:
        emb = cache["xn"][:, i][:, None] * model.params[f"num{field_id}.fe"][None, :]
    elif enc in ("edd", "efd", "ld"):
        emb = model.params[f"num{field_id}.table"][cache["num"][field_id]]
    elif enc == model_mod.YOUTUBE:
        x = cache["xn"][:, i]
        emb = np.stack([x**2, x, np.sqrt(x)], axis=1)
    else:
        raise MetricError(f"encoder {enc!r} has no per-field embedding")
    return np.concatenate([grid[:, None], emb], axis=1)


def export_embeddings(model, field_id, grid, path, delimiter="\t"):
    rows = embedding_grid(model, field_id, grid)
    d = rows.shape[1] - 1
    write_table(path, ["x"] + [f"e{k}" for k in range(d)], rows, delimiter)
    return rows


def soft_distribution_grid(model, field_id, x_values):
    """Per-value adaptive temperature and bucket probabilities; rows of
    (x, tau_x, p_1..p_H). Requires the soft-discretization encoder."""
    if model.config.encoder != model_mod.AUTODIS:
        raise MetricError("soft-distribution export needs the autodis encoder")
    nf = [f.field_id for f in model.num_fields]
    if field_id not in nf:
        raise MetricError(f"field {field_id} is not a numerical field")
    x_values = np.asarray(x_values, dtype=np.float64)
    i = nf.index(field_id)
    num = np.empty((len(x_values), len(nf)), dtype=np.float64)
    for k, fid in enumerate(nf):
        s = model.stats[fid]
        num[:, k] = (s.x_min + x_values * (s.x_max - s.x_min)) if k == i else s.mean
    cat = np.zeros((len(x_values), len(model.cat_fields)), dtype=np.int64)
    batch = data.Batch(cat, num, np.zeros(len(x_values)), np.arange(len(x_values)))
    _, cache = model.forward(batch)
    c = cache["num"][field_id]
    return np.concatenate(
        [x_values[:, None], c["tau_x"][:, None], c["probs"]], axis=1)


def export_soft_distribution(model, field_id, x_values, path, delimiter="\t"):
    rows = soft_distribution_grid(model, field_id, x_values)
    H = rows.shape[1] - 2
    write_table(path, ["x", "tau"] + [f"p{h}" for h in range(H)], rows, delimiter)
    return rows


# ----------------------------------------------------------------------
# Ablation and complexity.
# ----------------------------------------------------------------------


def ablation_fields(train_ds, valid_ds, config, tcfg, order=None):
    """Cumulative numerical-field ablation: a categorical-only baseline,
    then one extra numerical field per step in the given order. Returns
    one MetricsReport per step (len = #numerical fields + 1)."""
    nf = [f.field_id for f in data.num_fields(train_ds.schema)]
    if order is None:
        order = nf
    unknown = set(order) - set(nf)
    if unknown:
        raise MetricError(f"ablation order names unknown fields {sorted(unknown)}")
    reports = []
    for k in range(len(order) + 1):
        keep = order[:k]
        tr = train_ds.with_numeric_subset(keep)
        va = valid_ds.with_numeric_subset(keep)
        stats = data.compute_all_stats(tr) if keep else {}
        m = model_mod.Model(tr.schema, config, stats,
                            rng=np.random.default_rng(tcfg.seed),
                            train_dataset=tr)
        train(m, tr, va, tcfg)
        reports.append(evaluate(m, va))
    return reports


def measure_complexity(model, batch, repeats=30):
    """Exact parameter count and the median wall-clock of repeated
    forward passes (milliseconds), after a warm-up pass."""
    model.forward(batch)
    times = []
    for _ in range(max(repeats, 30)):
        t0 = time.perf_counter()
        model.forward(batch)
        times.append((time.perf_counter() - t0) * 1000.0)
    return model.param_count(), float(np.median(times))


def write_history(history, path):
    """Line-oriented metrics history: epoch, split, metric, value."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            e = rec["epoch"]
            fh.write(f"{e} train loss {rec['train_loss']!r}\n")
            fh.write(f"{e} valid auc {rec['valid_auc']!r}\n")
            fh.write(f"{e} valid logloss {rec['valid_logloss']!r}\n")
