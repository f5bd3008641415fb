"""Real symmetric spherical-harmonic basis of even order.

Convention (normative for everything downstream): for basis index j decoding
to degree l and order m,

    m < 0:  sqrt(2) * N(l,|m|) * P_l^{|m|}(cos t) * cos(|m| p)
    m = 0:  N(l,0) * P_l^0(cos t)
    m > 0:  sqrt(2) * N(l,m) * P_l^m(cos t) * sin(m p)

with N(l,m) = sqrt((2l+1)(l-m)! / (4 pi (l+m)!)) and associated Legendre
functions WITHOUT the Condon-Shortley phase.  Only even degrees appear, so
every basis function is antipodally symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sphere import Protocol

# sin(theta) below this is treated as a pole for theta-derivatives
POLE_EPS = 1e-8


@dataclass(frozen=True)
class BasisSpec:
    """Even-order real SH basis with R = (L+1)(L+2)/2 terms."""

    order: int

    def __post_init__(self):
        if self.order < 0 or self.order % 2 != 0:
            raise ValueError("order must be even and nonnegative")

    @property
    def R(self) -> int:
        return (self.order + 1) * (self.order + 2) // 2


def lm_to_index(l: int, m: int) -> int:
    """1-based linear index j = (l^2 + l + 2)/2 + m."""
    if l < 0 or l % 2 != 0 or abs(m) > l:
        raise ValueError(f"invalid (l, m) = ({l}, {m})")
    return (l * l + l + 2) // 2 + m


def index_to_lm(j: int) -> tuple[int, int]:
    if j < 1:
        raise ValueError("basis index must be >= 1")
    l = 0
    while (l + 1) * (l + 2) // 2 < j:
        l += 2
    m = j - (l * l + l + 2) // 2
    if abs(m) > l:
        raise ValueError(f"basis index {j} out of range")
    return l, m


def assoc_legendre(l: int, m: int, x: float) -> float:
    """P_l^m(x) without Condon-Shortley phase, by upward recurrence in l."""
    if m < 0 or m > l:
        raise ValueError("need 0 <= m <= l")
    if abs(x) > 1.0:
        raise ValueError("|x| must be <= 1")
    # P_m^m = (2m-1)!! (1-x^2)^{m/2}
    pmm = 1.0
    if m > 0:
        somx2 = math.sqrt(max(0.0, (1.0 - x) * (1.0 + x)))
        fact = 1.0
        for _ in range(m):
            pmm *= fact * somx2
            fact += 2.0
    if l == m:
        return pmm
    pmmp1 = x * (2.0 * m + 1.0) * pmm
    if l == m + 1:
        return pmmp1
    pll = 0.0
    for ll in range(m + 2, l + 1):
        pll = ((2.0 * ll - 1.0) * x * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m)
        pmm, pmmp1 = pmmp1, pll
    return pll


def _sh_norm(l: int, m: int) -> float:
    """sqrt((2l+1)(l-|m|)! / (4 pi (l+|m|)!)), factorials in log space."""
    m = abs(m)
    logn = 0.5 * (
        math.log(2.0 * l + 1.0)
        - math.log(4.0 * math.pi)
        + math.lgamma(l - m + 1.0)
        - math.lgamma(l + m + 1.0)
    )
    return math.exp(logn)


def real_sh(j: int, theta: float, phi: float, spec: BasisSpec | None = None) -> float:
    if spec is not None and not (1 <= j <= spec.R):
        raise ValueError(f"basis index {j} out of range 1..{spec.R}")
    l, m = index_to_lm(j)
    am = abs(m)
    plm = assoc_legendre(l, am, math.cos(theta))
    norm = _sh_norm(l, am)
    if m < 0:
        return math.sqrt(2.0) * norm * plm * math.cos(am * phi)
    if m == 0:
        return norm * plm
    return math.sqrt(2.0) * norm * plm * math.sin(m * phi)


def _legendre_table(L: int, x: np.ndarray) -> np.ndarray:
    """P_l^m(x) for all 0 <= m <= l <= L, vectorized over x.

    Returns array of shape (L+1, L+1, len(x)) indexed [l, m].
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros((L + 1, L + 1) + x.shape)
    somx2 = np.sqrt(np.clip((1.0 - x) * (1.0 + x), 0.0, None))
    pmm = np.ones_like(x)
    for m in range(L + 1):
        if m > 0:
            pmm = pmm * (2.0 * m - 1.0) * somx2
        out[m, m] = pmm
        if m < L:
            out[m + 1, m] = x * (2.0 * m + 1.0) * pmm
            for ll in range(m + 2, L + 1):
                out[ll, m] = (
                    (2.0 * ll - 1.0) * x * out[ll - 1, m] - (ll + m - 1.0) * out[ll - 2, m]
                ) / (ll - m)
    return out


def _basis_arrays(thetas: np.ndarray, phis: np.ndarray, spec: BasisSpec, grad: bool):
    """Evaluate all R basis functions (and optionally d/dtheta, d/dphi) at once."""
    thetas = np.asarray(thetas, dtype=float)
    phis = np.asarray(phis, dtype=float)
    L, R = spec.order, spec.R
    x = np.cos(thetas)
    P = _legendre_table(L, x)
    B = np.zeros((len(thetas), R))
    if grad:
        sin_t = np.sin(thetas)
        # clamp toward the interior so dP/dtheta stays finite at the poles
        near_pole = np.abs(sin_t) < POLE_EPS
        theta_safe = np.where(near_pole,
                              np.where(x >= 0.0, POLE_EPS, math.pi - POLE_EPS),
                              thetas)
        safe = np.sin(theta_safe)
        x_safe = np.cos(theta_safe)
        Ps = _legendre_table(L, x_safe)
        dBt = np.zeros((len(thetas), R))
        dBp = np.zeros((len(thetas), R))
    for j in range(1, R + 1):
        l, m = index_to_lm(j)
        am = abs(m)
        norm = _sh_norm(l, am)
        scale = norm * (math.sqrt(2.0) if m != 0 else 1.0)
        if m < 0:
            ang = np.cos(am * phis)
            dang = -am * np.sin(am * phis)
        elif m == 0:
            ang = np.ones_like(phis)
            dang = np.zeros_like(phis)
        else:
            ang = np.sin(m * phis)
            dang = m * np.cos(m * phis)
        B[:, j - 1] = scale * P[l, am] * ang
        if grad:
            # dP_l^m/dtheta = (l cos t P_l^m - (l+m) P_{l-1}^m) / sin t
            plm = Ps[l, am]
            plm1 = Ps[l - 1, am] if l >= 1 and am <= l - 1 else np.zeros_like(plm)
            dP = (l * x_safe * plm - (l + am) * plm1) / safe
            dBt[:, j - 1] = scale * dP * ang
            dBp[:, j - 1] = scale * Ps[l, am] * dang
    if grad:
        return B, dBt, dBp
    return B


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    spec: BasisSpec
    protocol: Protocol

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("basis matrix has non-finite entries")


def basis_matrix(p: Protocol, spec: BasisSpec) -> BasisMatrix:
    """N x R design matrix, row i = [Y_1 .. Y_R] at direction i."""
    B = _basis_arrays(p.thetas(), p.phis(), spec, grad=False)
    return BasisMatrix(B, spec, p)


def basis_matrix_grad(p: Protocol, spec: BasisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise (dB/dtheta, dB/dphi), each N x R."""
    _, dBt, dBp = _basis_arrays(p.thetas(), p.phis(), spec, grad=True)
    return dBt, dBp


def basis_arrays_at(thetas: np.ndarray, phis: np.ndarray, spec: BasisSpec,
                    grad: bool = False):
    """Raw-angle evaluation used by the training loop (no Protocol object)."""
    return _basis_arrays(thetas, phis, spec, grad=grad)
