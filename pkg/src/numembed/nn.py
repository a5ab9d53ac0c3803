"""Dense numeric kernels and their gradients, all float64.

Everything here is a pure function; gradient buffers are owned by the
caller. The finite-difference checker at the bottom is the independent
oracle for every analytic gradient in the package.
"""

from __future__ import annotations

import dataclasses

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


def affine(W, x, b=None):
    """out[r] = sum_c W[r,c] x[c] (+ b[r])."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"affine: W {W.shape} incompatible with x {x.shape}")
    out = W @ x
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"affine: b {b.shape} incompatible with W {W.shape}")
        out = out + b
    return out


def leaky_relu(x, slope=0.01):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope=0.01):
    """Derivative; at exactly 0 the negative-side slope is used."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, slope)


def softmax_temperature(logits, tau):
    """Softmax of logits/tau with max-subtraction for stability.

    Gradient contracts: the usual softmax Jacobian scaled by 1/tau, and
    d out_h / d tau = out_h * (<out, logits> - logits_h) / tau^2.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits, tau):
    """Row-wise temperature softmax; tau is a (B,) vector of per-row
    temperatures (all positive)."""
    z = logits / tau[:, None]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(probs, logits, tau, upstream):
    """Gradients of row-wise temperature softmax.

    Returns (d_logits, d_tau) where d_tau is per row. Derivation: with
    u = logits/tau and q = p*(up - <p, up>), dL/du = q, dL/dlogits =
    q/tau, dL/dtau = -<q, logits>/tau^2.
    """
    inner = (probs * upstream).sum(axis=1, keepdims=True)
    q = probs * (upstream - inner)
    d_logits = q / tau[:, None]
    d_tau = -(q * logits).sum(axis=1) / tau**2
    return d_logits, d_tau


def sigmoid(x):
    """Numerically stable logistic function; works on scalars and arrays."""
    arr = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(arr).copy()
    pos = flat >= 0
    flat[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    flat[~pos] = ex / (1.0 + ex)
    if arr.ndim == 0:
        return float(flat[0])
    return flat.reshape(arr.shape)


@dataclasses.dataclass(frozen=True)
class GradCheckReport:
    parameter_name: str
    max_rel_error: float
    worst_index: int


def finite_diff_check(f, params, grads, step=1e-4):
    """Central-difference check of analytic gradients.

    ``f`` is a scalar function of the (mutable) parameter set; it is
    re-evaluated with single entries perturbed in place. ``grads`` maps
    each parameter name to its analytic gradient array. Relative error
    per entry is |a - n| / max(1e-8, |a| + |n|).
    """
    if not (1e-6 <= step <= 1e-3):
        raise ValueError(f"step {step} outside [1e-6, 1e-3]")
    reports = []
    for name in sorted(grads):
        theta = params[name]
        analytic = np.asarray(grads[name], dtype=np.float64)
        flat = theta.reshape(-1)
        worst = 0.0
        worst_idx = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f()
            flat[i] = orig - step
            f_minus = f()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(f"non-finite objective probing parameter {name!r}")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst, worst_idx = rel, i
        reports.append(GradCheckReport(name, worst, worst_idx))
    return reports
