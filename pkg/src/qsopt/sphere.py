"""Directions on the unit sphere and q-space sampling protocols.

Protocols are ordered lists of (theta, phi) directions.  Diffusion signals
are antipodally symmetric, so generated protocols are canonicalized to the
upper hemisphere; arbitrary angles are still accepted everywhere and
normalized on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# identical/antipodal directions make the SH design matrix rank-deficient
DEGENERATE_TOL = 1e-9


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float

    def unit(self) -> np.ndarray:
        return angles_to_unit(self.theta, self.phi)


def angles_to_unit(theta: float, phi: float) -> np.ndarray:
    """Spherical angles to a unit 3-vector (sin t cos p, sin t sin p, cos t)."""
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def normalize_direction(theta: float, phi: float) -> Direction:
    """Canonical representative with theta in [0, pi], phi in [0, 2*pi)."""
    if not (math.isfinite(theta) and math.isfinite(phi)):
        raise ValueError("invalid angle: non-finite input")
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta < 0.0:
        theta += 2.0 * math.pi
    if theta > math.pi:
        theta = 2.0 * math.pi - theta
        phi += math.pi
    phi = math.fmod(phi, 2.0 * math.pi)
    if phi < 0.0:
        phi += 2.0 * math.pi
    if phi >= 2.0 * math.pi:  # rounding of tiny negatives
        phi = 0.0
    return Direction(theta, phi)


def unit_to_angles(v: np.ndarray) -> Direction:
    """Inverse of angles_to_unit for a (near-)unit vector."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    theta = math.acos(max(-1.0, min(1.0, z / math.sqrt(x * x + y * y + z * z))))
    phi = math.atan2(y, x)
    return normalize_direction(theta, phi)


def to_hemisphere(d: Direction) -> Direction:
    """Antipodal representative with z >= 0 (theta <= pi/2)."""
    d = normalize_direction(d.theta, d.phi)
    if d.theta > math.pi / 2.0:
        d = normalize_direction(math.pi - d.theta, d.phi + math.pi)
    return d


@dataclass(frozen=True)
class Protocol:
    directions: tuple[Direction, ...]
    label: str = ""

    def __post_init__(self):
        if len(self.directions) == 0:
            raise ProtocolError("protocol must be nonempty")
        object.__setattr__(self, "directions", tuple(self.directions))
        self._check_degenerate()

    def _check_degenerate(self):
        units = self.units()
        dots = np.clip(np.abs(units @ units.T), -1.0, 1.0)
        np.fill_diagonal(dots, 0.0)
        # |dot| close to 1 means identical or antipodal axes
        if len(units) > 1 and np.max(dots) >= math.cos(DEGENERATE_TOL):
            raise ProtocolError("degenerate protocol: identical or antipodal directions")

    def __len__(self) -> int:
        return len(self.directions)

    def thetas(self) -> np.ndarray:
        return np.array([d.theta for d in self.directions])

    def phis(self) -> np.ndarray:
        return np.array([d.phi for d in self.directions])

    def units(self) -> np.ndarray:
        """n x 3 matrix of unit vectors."""
        return np.array([d.unit() for d in self.directions])


def protocol_from_angles(thetas, phis, label: str = "") -> Protocol:
    dirs = tuple(normalize_direction(t, p) for t, p in zip(thetas, phis, strict=True))
    return Protocol(dirs, label)


def random_protocol(n: int, seed: int) -> Protocol:
    """n directions i.i.d. uniform on the upper hemisphere."""
    if n < 1:
        raise ProtocolError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    # uniform on the hemisphere: cos(theta) ~ U[0,1], phi ~ U[0, 2*pi)
    cos_t = rng.uniform(0.0, 1.0, size=n)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return protocol_from_angles(np.arccos(cos_t), phi, label=f"random-{n}")


def coulomb_energy(units: np.ndarray) -> float:
    """Antipodally symmetric electrostatic energy sum_{i<j} 1/|pi-pj| + 1/|pi+pj|."""
    n = len(units)
    iu = np.triu_indices(n, k=1)
    diff = np.linalg.norm(units[iu[0]] - units[iu[1]], axis=1)
    summ = np.linalg.norm(units[iu[0]] + units[iu[1]], axis=1)
    return float(np.sum(1.0 / diff) + np.sum(1.0 / summ))


def _coulomb_grad(units: np.ndarray) -> np.ndarray:
    d = units[:, None, :] - units[None, :, :]
    s = units[:, None, :] + units[None, :, :]
    dn = np.linalg.norm(d, axis=2)
    sn = np.linalg.norm(s, axis=2)
    np.fill_diagonal(dn, np.inf)
    np.fill_diagonal(sn, np.inf)
    # d/dp_i of 1/|p_i - p_j| and 1/|p_i + p_j|
    g = -(d / dn[:, :, None] ** 3).sum(axis=1) - (s / sn[:, :, None] ** 3).sum(axis=1)
    return g


def electrostatic_protocol(n: int, iterations: int = 10_000, seed: int = 0) -> Protocol:
    """Spread n directions by minimizing antipodal Coulomb repulsion.

    Projected gradient descent on the sphere with a fixed step, halved
    whenever a step would increase the energy.
    """
    if n < 2:
        raise ProtocolError("n must be >= 2")
    start = random_protocol(n, seed)
    p = start.units()
    energy = coulomb_energy(p)
    step = 0.1
    for _ in range(iterations):
        g = _coulomb_grad(p)
        # tangent-plane projection keeps the move on the sphere
        g -= (np.sum(g * p, axis=1, keepdims=True)) * p
        trial = p - step * g
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        e_trial = coulomb_energy(trial)
        if e_trial <= energy:
            p, energy = trial, e_trial
        else:
            step *= 0.5
            if step < 1e-12:
                break
    dirs = tuple(to_hemisphere(unit_to_angles(v)) for v in p)
    return Protocol(dirs, label=f"uniform-{n}")


def min_pairwise_angle(p: Protocol) -> float:
    """Smallest angle (radians) between any two sampling axes, antipodal-aware."""
    u = p.units()
    dots = np.clip(np.abs(u @ u.T), 0.0, 1.0)
    np.fill_diagonal(dots, 0.0)
    return float(np.arccos(np.max(dots)))


def protocol_write(p: Protocol, path) -> None:
    """bvec-style text file: 3 lines (x, y, z), one column per direction."""
    u = p.units()
    with open(path, "w") as f:
        for k in range(3):
            f.write(" ".join(f"{v:.17g}" for v in u[:, k]) + "\n")


def protocol_read(path, label: str = "") -> Protocol:
    try:
        with open(path) as f:
            rows = [line.split() for line in f if line.strip()]
    except OSError as e:
        raise ProtocolError(f"unreadable protocol file: {e}") from e
    if len(rows) != 3:
        raise ProtocolError(f"ragged bvec: expected 3 lines, got {len(rows)}")
    if not (len(rows[0]) == len(rows[1]) == len(rows[2])):
        raise ProtocolError("ragged bvec: rows have differing lengths")
    try:
        u = np.array(rows, dtype=float).T
    except ValueError as e:
        raise ProtocolError(f"malformed bvec: {e}") from e
    norms = np.linalg.norm(u, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ProtocolError("non-unit direction in bvec file")
    return Protocol(tuple(unit_to_angles(v) for v in u), label or str(path))
