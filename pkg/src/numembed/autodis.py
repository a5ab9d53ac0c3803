"""Soft discretization embeddings for numerical fields.

Per field: a set of H meta-embeddings shared by every value in the
field, a two-layer bucketing network with skip connection producing H
logits, an adaptive temperature network conditioned on the field's
statistics vector and the input value, a temperature softmax turning
logits into bucket probabilities, and an aggregation of the
meta-embeddings under those probabilities.

Scalar entry points mirror the per-value contracts; the model's hot
path uses the batched forward/backward pair at the bottom.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import nn

MAX_POOLING = "max_pooling"
TOP_K_SUM = "top_k_sum"
WEIGHTED_AVERAGE = "weighted_average"
AGGREGATIONS = (MAX_POOLING, TOP_K_SUM, WEIGHTED_AVERAGE)


@dataclasses.dataclass(frozen=True)
class AutoDisParams:
    """One numerical field's parameter bundle.

    me:  (H, d) meta-embeddings
    w:   (H,)   first projection of the bucketing network
    W:   (H, H) second projection
    w1:  (hidden, S+1) temperature net first layer (S = stats length)
    w2:  (hidden,)     temperature net output layer
    """

    me: np.ndarray
    w: np.ndarray
    W: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    # Optional bucketing-net biases; the faithful default is bias-free.
    bw: np.ndarray | None = None
    bW: np.ndarray | None = None


def init_field_params(H, dim, stats_len, hidden, rng, use_bias=False):
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] everywhere; the scalar
    input of w gives it range [-1, 1]. Biases start at zero."""
    def u(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    return AutoDisParams(
        me=u((H, dim), dim),
        w=u((H,), 1),
        W=u((H, H), H),
        w1=u((hidden, stats_len + 1), stats_len + 1),
        w2=u((hidden,), hidden),
        bw=np.zeros(H) if use_bias else None,
        bW=np.zeros(H) if use_bias else None,
    )


def project(x_norm, w, W, alpha, slope=0.01):
    """Bucketing logits for one value: h = LeakyReLU(w*x);
    logits = W h + alpha*h."""
    pre = np.asarray(w, dtype=np.float64) * float(x_norm)
    h = nn.leaky_relu(pre, slope)
    return np.asarray(W, dtype=np.float64) @ h + alpha * h


def adaptive_tau(x_norm, stats_vec, w1, w2, tau, epsilon, slope=0.01):
    """Per-value temperature in (tau - epsilon, tau + epsilon).

    s = sigmoid(w2 . LeakyReLU(w1 [stats_vec || x])); the sigmoid output
    is rescaled affinely from (0, 1) onto the target interval.
    """
    inp = np.concatenate([np.asarray(stats_vec, dtype=np.float64), [float(x_norm)]])
    hidden = nn.leaky_relu(np.asarray(w1) @ inp, slope)
    s = nn.sigmoid(float(np.asarray(w2) @ hidden))
    return (tau - epsilon) + 2.0 * epsilon * s


def soft_discretize(logits, tau_x):
    """Bucket probability vector via temperature softmax."""
    return nn.softmax_temperature(logits, tau_x)


def aggregate(probs, me, kind, K=1):
    """Combine meta-embeddings under the bucket probabilities.

    max_pooling: the argmax row (ties to the lowest index).
    top_k_sum:   sum of the rows with the K largest probabilities.
    weighted_average: probs^T me, a point in the rows' convex hull.
    """
    probs = np.asarray(probs, dtype=np.float64)
    me = np.asarray(me, dtype=np.float64)
    H = me.shape[0]
    if kind == WEIGHTED_AVERAGE:
        return probs @ me
    if kind == MAX_POOLING:
        return me[int(np.argmax(probs))].copy()
    if kind == TOP_K_SUM:
        if K > H:
            raise ValueError(f"K={K} exceeds H={H}")
        idx = top_k_indices(probs, K)
        return me[idx].sum(axis=0)
    raise ValueError(f"unknown aggregation {kind!r}")


def top_k_indices(probs, K):
    """Indices of the K largest entries, ties broken by lowest index."""
    # Sort by (-prob, index); stable sort on negated values does exactly that.
    order = np.argsort(-probs, kind="stable")
    return np.sort(order[:K])


def embed_numeric(x_norm, params, stats_vec, kind, alpha, tau, epsilon,
                  slope=0.01, K=1):
    """Full per-value composition: project -> adaptive temperature ->
    soft discretize -> aggregate."""
    logits = project(x_norm, params.w, params.W, alpha, slope)
    tau_x = adaptive_tau(x_norm, stats_vec, params.w1, params.w2, tau, epsilon, slope)
    probs = soft_discretize(logits, tau_x)
    return aggregate(probs, params.me, kind, K)


# ----------------------------------------------------------------------
# Batched forward/backward used by the CTR model.
# ----------------------------------------------------------------------


def forward_batch(xb, params, stats_vec, kind, alpha, tau, epsilon,
                  slope=0.01, K=1):
    """Embeddings for a batch of normalized values of one field.

    Returns (emb (B, d), cache) where the cache carries everything the
    backward pass needs.
    """
    B = len(xb)
    H = params.me.shape[0]
    pre = xb[:, None] * params.w[None, :]  # (B, H)
    if params.bw is not None:
        pre = pre + params.bw[None, :]
    h = nn.leaky_relu(pre, slope)
    logits = h @ params.W.T + alpha * h
    if params.bW is not None:
        logits = logits + params.bW[None, :]

    inp = np.empty((B, len(stats_vec) + 1), dtype=np.float64)
    inp[:, :-1] = stats_vec[None, :]
    inp[:, -1] = xb
    z1 = inp @ params.w1.T  # (B, hidden)
    a1 = nn.leaky_relu(z1, slope)
    s = nn.sigmoid(a1 @ params.w2)  # (B,)
    tau_x = (tau - epsilon) + 2.0 * epsilon * s

    probs = nn.softmax_rows(logits, tau_x)

    if kind == WEIGHTED_AVERAGE:
        emb = probs @ params.me
        sel = None
    elif kind == MAX_POOLING:
        sel = np.argmax(probs, axis=1)
        emb = params.me[sel]
    elif kind == TOP_K_SUM:
        if K > H:
            raise ValueError(f"K={K} exceeds H={H}")
        sel = np.stack([top_k_indices(probs[b], K) for b in range(B)])
        emb = params.me[sel].sum(axis=1)
    else:
        raise ValueError(f"unknown aggregation {kind!r}")

    cache = dict(
        xb=xb, pre=pre, h=h, logits=logits, inp=inp, z1=z1, a1=a1, s=s,
        tau_x=tau_x, probs=probs, sel=sel, epsilon=epsilon,
    )
    return emb, cache


def backward_batch(upstream, cache, params, grads, kind, alpha, slope=0.01):
    """Accumulate gradients of one field's embedding into ``grads``
    (an AutoDisParams-shaped dict with keys me/w/W/w1/w2).

    Hard aggregations route gradient to the selected rows only; the
    probability path (and hence the bucketing/temperature nets) receives
    gradient only under weighted averaging.
    """
    probs, tau_x, logits = cache["probs"], cache["tau_x"], cache["logits"]

    if kind == MAX_POOLING:
        np.add.at(grads["me"], cache["sel"], upstream)
        return
    if kind == TOP_K_SUM:
        sel = cache["sel"]  # (B, K)
        for k in range(sel.shape[1]):
            np.add.at(grads["me"], sel[:, k], upstream)
        return

    # Weighted average: full differentiable path.
    grads["me"] += probs.T @ upstream
    d_probs = upstream @ params.me.T
    d_logits, d_tau = nn.softmax_rows_backward(probs, logits, tau_x, d_probs)

    # Temperature net.
    ds = d_tau * 2.0 * cache["epsilon"]
    s = cache["s"]
    dz2 = ds * s * (1.0 - s)  # (B,)
    grads["w2"] += dz2 @ cache["a1"]
    da1 = dz2[:, None] * params.w2[None, :]
    dz1 = da1 * nn.leaky_relu_grad(cache["z1"], slope)
    grads["w1"] += dz1.T @ cache["inp"]

    # Bucketing net.
    dh = d_logits @ params.W + alpha * d_logits
    grads["W"] += d_logits.T @ cache["h"]
    if params.bW is not None:
        grads["bW"] += d_logits.sum(axis=0)
    dpre = dh * nn.leaky_relu_grad(cache["pre"], slope)
    grads["w"] += dpre.T @ cache["xb"]
    if params.bw is not None:
        grads["bw"] += dpre.sum(axis=0)
