"""Reverse-mode gradients for the sparse forward ops, plus SGD.

Gradients follow the transposed data flow of the forward pass:

* conv:  dW = Q^T d_out,  dB = column sums,  dQ = d_out W^T scattered back
  to the active input rows (contributions that would land on ground-filled
  positions are discarded);
* pool:  each output component's gradient routes to the input row recorded
  as its argmax, ties already resolved toward the lowest offset index;
* relu:  gradient masked by the forward sign.

Dropping the ground-path contributions makes training cheap and matches
how sparse CNNs are normally trained; gradients are exact whenever no
gather position reads a ground vector that depends on parameters (e.g.
fully active inputs, or zero biases with a zero input ground and only the
weights in question perturbed).  The finite-difference checker below is
the ground truth the test-suite holds the analytic path against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import ConvLayer, GatherPlan, PoolPlan


@dataclass
class ParamState:
    """One learnable tensor with its gradient and momentum buffer."""

    values: np.ndarray
    grad: np.ndarray = None
    velocity: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.values)
        assert self.grad.shape == self.values.shape
        assert self.velocity.shape == self.values.shape


def conv_backward(d_out: np.ndarray, plan: GatherPlan, layer: ConvLayer):
    """Returns (dW, dB, d_in_rows) for one convolution."""
    if d_out.shape != (plan.a_out, layer.n_out):
        raise ValueError(
            f"d_out must be ({plan.a_out}, {layer.n_out}), got {d_out.shape}"
        )
    dW = plan.Q.T @ d_out
    dB = d_out.sum(axis=0)
    d_in = np.zeros((plan.a_in, layer.n_in), dtype=d_out.dtype)
    if plan.a_out:
        dQ = (d_out @ layer.W.T).reshape(plan.a_out, -1, layer.n_in)
        valid = plan.src >= 0
        np.add.at(d_in, plan.src[valid], dQ[valid])
    return dW, dB, d_in


def pool_backward(d_out: np.ndarray, plan: PoolPlan, n_in_rows: int | None = None):
    """Route each output gradient component to its recorded argmax row."""
    a_in = plan.a_in if n_in_rows is None else n_in_rows
    n = d_out.shape[1]
    d_in = np.zeros((a_in, n), dtype=d_out.dtype)
    if d_out.shape[0]:
        src = plan.argmax_src
        cols = np.broadcast_to(np.arange(n), src.shape)
        valid = src >= 0  # ground winners take no gradient
        np.add.at(d_in, (src[valid], cols[valid]), d_out[valid])
    return d_in


def relu_backward(d_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return d_out * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_nll(logits: np.ndarray, label: int):
    """Negative log likelihood of ``label`` plus the logits gradient."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    p = softmax(logits)
    loss = -np.log(p[label])
    d = p.copy()
    d[label] -= 1.0
    return loss, d


def sgd_step(params: list[ParamState], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0):
    """velocity <- mu*velocity - lr*(grad + wd*values); values += velocity."""
    for p in params:
        g = p.grad + weight_decay * p.values
        p.velocity *= momentum
        p.velocity -= lr * g
        p.values += p.velocity
        p.grad[...] = 0.0


def finite_diff_check(loss_fn, params: list[ParamState], eps: float = 1e-3) -> float:
    """Max relative error between analytic grads and central differences.

    ``loss_fn()`` must recompute the loss from the current parameter values
    and must already have populated ``p.grad`` (analytic) for each param.
    Relative error uses denominator ``max(|a|, |b|, 1e-8)``.
    """
    total = sum(p.values.size for p in params)
    if total > 50_000:
        raise ValueError(f"{total} parameters is too many to perturb one by one")
    worst = 0.0
    for p in params:
        flat = p.values.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn()
            flat[i] = orig - eps
            lm = loss_fn()
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            a, b = float(gflat[i]), float(fd)
            err = abs(a - b) / max(abs(a), abs(b), 1e-8)
            worst = max(worst, err)
    return worst
