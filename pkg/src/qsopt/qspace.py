"""SH coefficient fitting and the differentiable q-space subsampling operator.

Fitting uses the Moore-Penrose pseudo-inverse of the full-protocol design
matrix; subsampling evaluates the fitted expansion at a (possibly learnable)
sparse set of directions.  The sparse signal is linear in the input signal
and differentiable in the sparse angles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shbasis import BasisMatrix, BasisSpec, basis_matrix, basis_matrix_grad
from .sphere import Protocol

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class SHCoefficients:
    values: np.ndarray
    spec: BasisSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.spec.R,):
            raise ValueError(f"expected {self.spec.R} coefficients, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite SH coefficients")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SignalVector:
    values: np.ndarray
    protocol: Protocol

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.protocol),):
            raise ValueError("signal length does not match protocol size")
        object.__setattr__(self, "values", v)


def fit_matrix(B: BasisMatrix, ridge: float = 0.0) -> np.ndarray:
    """R x N map from signals to coefficients.

    ridge > 0 adds Laplace-Beltrami-weighted Tikhonov damping on l > 0 terms;
    ridge = 0 is the plain SVD pseudo-inverse with relative cutoff 1e-10.
    """
    if ridge == 0.0:
        return np.linalg.pinv(B.values, rcond=PINV_RCOND)
    from .shbasis import index_to_lm

    R = B.spec.R
    lb = np.array([(l * (l + 1)) ** 2 for l, _ in (index_to_lm(j) for j in range(1, R + 1))],
                  dtype=float)
    A = B.values.T @ B.values + ridge * np.diag(lb)
    return np.linalg.solve(A, B.values.T)


def fit_sh(s: SignalVector, B: BasisMatrix, ridge: float = 0.0) -> SHCoefficients:
    """Least-squares SH coefficients of one signal (pinv(B) @ s)."""
    if s.protocol is not B.protocol and s.protocol != B.protocol:
        raise ValueError("signal and basis matrix built on different protocols")
    return SHCoefficients(fit_matrix(B, ridge) @ s.values, B.spec)


def resample(C: SHCoefficients, q: Protocol) -> SignalVector:
    """Evaluate the fitted expansion at the directions of q."""
    Bq = basis_matrix(q, C.spec)
    return SignalVector(Bq.values @ C.values, q)


def resample_grad(C: SHCoefficients, q: Protocol) -> tuple[np.ndarray, np.ndarray]:
    """Per-direction (dS_i/dtheta_i, dS_i/dphi_i); cross terms are zero."""
    dBt, dBp = basis_matrix_grad(q, C.spec)
    return dBt @ C.values, dBp @ C.values


def subsample_batch(x: np.ndarray, full_B: BasisMatrix, q: Protocol,
                    ridge: float = 0.0) -> np.ndarray:
    """Apply the n x N linear map B_q @ pinv(B_full) to each row of x.

    x has shape (batch, N); returns (batch, n).
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return np.zeros((0, len(q)))
    if x.shape[1] != full_B.values.shape[0]:
        raise ValueError("batch signal length does not match full protocol")
    F = fit_matrix(full_B, ridge)
    Bq = basis_matrix(q, full_B.spec)
    return x @ F.T @ Bq.values.T
