"""Reconstruction operators and the training loss.

The trainable reconstructor is a per-voxel MLP (sparse-direction vector in,
full-direction vector out) with hand-written reverse-mode gradients, so the
chain from the loss through the network into the sampling angles is fully
explicit.  A closed-form regularized SH fit serves as a zero-parameter
linear baseline.  The loss is mean absolute error plus weighted anisotropic
total variation of the reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qspace import fit_matrix
from .shbasis import BasisSpec, basis_matrix
from .sphere import Protocol

DEFAULT_HIDDEN = 256


@dataclass
class MlpParams:
    """Weights/biases for n -> H -> H -> N, ReLU hidden, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[1] != b.shape[0]:
                raise ValueError(f"layer {k}: bias length {b.shape[0]} != fan-out {W.shape[1]}")
            if k > 0 and self.weights[k - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {k}: fan-in does not chain")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite MLP parameters")

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def flat(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights],
                         [b.copy() for b in self.biases])


def mlp_init(n_in: int, n_out: int, hidden: int, rng: np.random.Generator,
             n_hidden_layers: int = 2) -> MlpParams:
    """Glorot-uniform initialization, biases zero."""
    dims = [n_in] + [hidden] * n_hidden_layers + [n_out]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        biases.append(np.zeros(b))
    return MlpParams(weights, biases)


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass; x is (n,) or (batch, n)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != p.n_in:
        raise ValueError(f"input length {h.shape[1]} != expected {p.n_in}")
    last = len(p.weights) - 1
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ W + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def mlp_forward_cached(p: MlpParams, x: np.ndarray):
    """Forward pass keeping pre-ReLU activations for the backward pass."""
    h = np.asarray(x, dtype=float)
    acts = [h]
    last = len(p.weights) - 1
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ W + b
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    return h, acts


def mlp_backward(p: MlpParams, x: np.ndarray, upstream: np.ndarray):
    """Reverse-mode gradients of the forward map at input batch x.

    Returns (weight grads, bias grads, input grads); upstream has the shape
    of the output, (batch, N).
    """
    _, acts = mlp_forward_cached(p, x)
    return mlp_backward_cached(p, acts, upstream)


def mlp_backward_cached(p: MlpParams, acts: list[np.ndarray], upstream: np.ndarray):
    """Backward pass reusing activations from mlp_forward_cached."""
    g = np.asarray(upstream, dtype=float)
    if g.shape != (acts[0].shape[0], p.n_out):
        raise ValueError("upstream gradient shape mismatch")
    dW = [None] * len(p.weights)
    db = [None] * len(p.biases)
    last = len(p.weights) - 1
    for k in range(last, -1, -1):
        if k < last:
            g = g * (acts[k + 1] > 0.0)
        dW[k] = acts[k].T @ g
        db[k] = g.sum(axis=0)
        g = g @ p.weights[k].T
    return dW, db, g


def linear_recon(s: np.ndarray, q: Protocol, full: Protocol, spec: BasisSpec,
                 ridge: float = 1e-3) -> np.ndarray:
    """Zero-parameter baseline: ridge-fit SH from sparse samples, evaluate at
    the full protocol.  Ridge damps only l > 0 terms (Laplace-Beltrami
    weighting), so constants pass through untouched."""
    Bq = basis_matrix(q, spec)
    if len(q) < spec.R and ridge <= 0:
        raise ValueError("underdetermined sparse fit requires ridge > 0")
    F = fit_matrix(Bq, ridge=ridge) if ridge > 0 else fit_matrix(Bq)
    Bfull = basis_matrix(full, spec)
    return np.asarray(s, dtype=float) @ F.T @ Bfull.values.T


def tv(image: np.ndarray) -> float:
    """Anisotropic total variation, summed over channels, no wrap-around."""
    x = np.asarray(image, dtype=float)
    dv = np.abs(np.diff(x, axis=0)).sum()
    dh = np.abs(np.diff(x, axis=1)).sum()
    return float(dv + dh)


def tv_grad(image: np.ndarray) -> np.ndarray:
    """Subgradient of tv with sign(0) = 0."""
    x = np.asarray(image, dtype=float)
    g = np.zeros_like(x)
    sv = np.sign(np.diff(x, axis=0))
    g[1:] += sv
    g[:-1] -= sv
    sh = np.sign(np.diff(x, axis=1))
    g[:, 1:] += sh
    g[:, :-1] -= sh
    return g


@dataclass(frozen=True)
class LossConfig:
    lambda_tv: float = 2e-7

    def __post_init__(self):
        if self.lambda_tv < 0:
            raise ValueError("lambda_tv must be nonnegative")


def loss(xhat: np.ndarray, x: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Mean-L1 data term plus weighted TV; returns (value, d/dxhat)."""
    xhat = np.asarray(xhat, dtype=float)
    x = np.asarray(x, dtype=float)
    if xhat.shape != x.shape:
        raise ValueError("loss shape mismatch")
    resid = xhat - x
    value = float(np.mean(np.abs(resid))) + cfg.lambda_tv * tv(xhat)
    grad = np.sign(resid) / resid.size + cfg.lambda_tv * tv_grad(xhat)
    return value, grad
