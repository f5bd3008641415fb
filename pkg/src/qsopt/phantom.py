"""Synthetic multi-tensor diffusion phantoms.

2-D single-slice phantoms with three region types: zero-signal background,
single-fiber bands whose orientation rotates smoothly down the image, and a
crossing region mixing two fiber tensors 50/50.  Signals follow the standard
multi-tensor model S = S0 * sum_i f_i exp(-b g^T D_i g); Rician noise is
applied per measurement.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .qspace import fit_matrix
from .seeding import derive_rng, derive_seed
from .shbasis import BasisSpec, basis_matrix
from .sphere import Protocol, protocol_read

# typical white-matter diffusivities, mm^2/s
LAMBDA_PAR = 1.7e-3
LAMBDA_PERP = 0.2e-3
CROSSING_ANGLE = math.radians(60.0)

LABEL_BACKGROUND = 0
LABEL_FIBER = 1
LABEL_CROSSING = 2


def cylinder_tensor(axis: np.ndarray, lam_par: float = LAMBDA_PAR,
                    lam_perp: float = LAMBDA_PERP) -> np.ndarray:
    """Axially symmetric diffusion tensor with principal axis `axis`."""
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    return lam_perp * np.eye(3) + (lam_par - lam_perp) * np.outer(e, e)


def tensor_signal(g_unit: np.ndarray, b: float, components, S0: float = 1.0) -> float:
    """Multi-tensor signal S0 * sum f_i exp(-b g^T D_i g)."""
    fracs = np.array([f for f, _ in components], dtype=float)
    if np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-12:
        raise ValueError("tensor fractions must be nonnegative and sum to 1")
    g = np.asarray(g_unit, dtype=float)
    s = 0.0
    for f, D in components:
        s += f * math.exp(-b * float(g @ D @ g))
    return S0 * s


@dataclass(frozen=True)
class PhantomImage:
    width: int
    height: int
    signals: np.ndarray   # (height, width, N)
    labels: np.ndarray    # (height, width) int
    bvalue: float
    protocol: Protocol

    def __post_init__(self):
        if self.signals.shape != (self.height, self.width, len(self.protocol)):
            raise ValueError("signal array shape mismatch")
        if self.bvalue < 0:
            raise ValueError("b-value must be nonnegative")
        if not np.all(np.isfinite(self.signals)):
            raise ValueError("non-finite phantom signals")


def _multi_tensor_signals(units: np.ndarray, b: float, components) -> np.ndarray:
    """Vectorized tensor_signal over an (N, 3) direction set."""
    s = np.zeros(len(units))
    for f, D in components:
        s += f * np.exp(-b * np.einsum("ij,jk,ik->i", units, D, units))
    return s


def layout_params(seed: int) -> tuple[float, float]:
    """(fiber rotation phase, crossing base angle) drawn for a phantom seed."""
    rng = derive_rng(seed, "layout")
    return rng.uniform(0.0, math.pi), rng.uniform(0.0, math.pi)


def fiber_axis(row: int, height: int, phase: float, border: int = 2) -> np.ndarray:
    """In-plane fiber axis for a single-fiber row."""
    alpha = phase + math.pi * (row - border) / max(1, height - 2 * border)
    return np.array([math.cos(alpha), math.sin(alpha), 0.0])


def make_phantom(width: int, height: int, protocol: Protocol, b: float,
                 seed: int, band_limit: BasisSpec | None = None) -> PhantomImage:
    """Deterministic piecewise-constant phantom.

    Layout: 2-pixel zero background border; left interior holds single-fiber
    rows with in-plane orientation rotating smoothly with row index (random
    phase per seed); right interior is a 50/50 two-fiber crossing at 60 deg.
    band_limit, when given, projects every signal onto the even-order SH
    space of that spec so the phantom is exactly band-limited.
    """
    if width < 8 or height < 8:
        raise ValueError("phantom must be at least 8x8")
    units = protocol.units()
    n_dir = len(protocol)
    signals = np.zeros((height, width, n_dir))
    labels = np.full((height, width), LABEL_BACKGROUND, dtype=np.int64)

    border = 2
    split_col = width // 2
    phase, cross_base = layout_params(seed)

    c1 = cross_base
    c2 = cross_base + CROSSING_ANGLE
    cross_components = [
        (0.5, cylinder_tensor([math.cos(c1), math.sin(c1), 0.0])),
        (0.5, cylinder_tensor([math.cos(c2), math.sin(c2), 0.0])),
    ]
    cross_sig = _multi_tensor_signals(units, b, cross_components)

    for row in range(border, height - border):
        fiber = [(1.0, cylinder_tensor(fiber_axis(row, height, phase, border)))]
        fiber_sig = _multi_tensor_signals(units, b, fiber)
        signals[row, border:split_col] = fiber_sig
        labels[row, border:split_col] = LABEL_FIBER
        signals[row, split_col:width - border] = cross_sig
        labels[row, split_col:width - border] = LABEL_CROSSING

    if band_limit is not None:
        B = basis_matrix(protocol, band_limit)
        proj = B.values @ fit_matrix(B)
        signals = signals @ proj.T
    return PhantomImage(width, height, signals, labels, float(b), protocol)


def add_noise(img: PhantomImage, sigma: float, seed: int) -> PhantomImage:
    """Rician noise: sqrt((S + e1)^2 + e2^2), e1, e2 ~ N(0, sigma^2)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return img
    rng = derive_rng(seed, "rician")
    e1 = rng.normal(0.0, sigma, size=img.signals.shape)
    e2 = rng.normal(0.0, sigma, size=img.signals.shape)
    noisy = np.sqrt((img.signals + e1) ** 2 + e2 ** 2)
    return replace(img, signals=noisy)


@dataclass(frozen=True)
class PhantomSample:
    """Clean ground truth paired with its (possibly identical) noisy copy."""
    clean: PhantomImage
    noisy: PhantomImage
    seed: int


def split_sizes(count: int, ratios) -> list[int]:
    ratios = list(ratios)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    sizes = [int(round(count * r)) for r in ratios]
    sizes[0] += count - sum(sizes)
    return sizes


def make_dataset(count: int, ratios, protocol: Protocol, bvalues, sigma: float,
                 seed: int, width: int = 32, height: int = 32,
                 band_limit: BasisSpec | None = None):
    """Deterministic train/val/test phantom collections, one per b-value.

    Returns {b: {"train": [...], "val": [...], "test": [...]}} of
    PhantomSample; phantom geometry at a given index is identical across
    b-values so out-of-distribution evaluation sees the same structures.
    """
    sizes = split_sizes(count, ratios)
    names = ["train", "val", "test"]
    out = {}
    for b in bvalues:
        splits = {name: [] for name in names}
        idx = 0
        for name, size in zip(names, sizes):
            for _ in range(size):
                pseed = derive_seed(seed, "phantom", idx)
                img = make_phantom(width, height, protocol, b, pseed,
                                  band_limit=band_limit)
                nseed = derive_seed(seed, "noise", idx, int(round(b)))
                noisy = add_noise(img, sigma, nseed)
                splits[name].append(PhantomSample(img, noisy, pseed))
                idx += 1
        out[b] = splits
    return out


# --- serialization: text header + little-endian float64 blob -----------------

_MAGIC = "QSOPT-PHANTOM 1"


def save_phantom(img: PhantomImage, path, protocol_ref: str = "") -> None:
    """Container: header lines "key value" closed by "end", then signals as
    little-endian f8 in row-major voxel order (direction fastest), then
    labels as little-endian i8."""
    header = (
        f"{_MAGIC}\n"
        f"width {img.width}\n"
        f"height {img.height}\n"
        f"ndirections {len(img.protocol)}\n"
        f"bvalue {img.bvalue:.17g}\n"
        f"protocol {protocol_ref}\n"
        "end\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(np.ascontiguousarray(img.signals, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(img.labels, dtype="<i8").tobytes())


def load_phantom(path, protocol: Protocol | None = None) -> PhantomImage:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    first = buf.readline().decode().rstrip("\n")
    if first != _MAGIC:
        raise ValueError(f"not a phantom container: {path}")
    fields = {}
    while True:
        line = buf.readline().decode().rstrip("\n")
        if line == "end":
            break
        if not line:
            raise ValueError("truncated phantom header")
        key, _, value = line.partition(" ")
        fields[key] = value
    width = int(fields["width"])
    height = int(fields["height"])
    n_dir = int(fields["ndirections"])
    bvalue = float(fields["bvalue"])
    if protocol is None:
        ref = fields.get("protocol", "")
        if not ref:
            raise ValueError("phantom container has no protocol reference")
        from pathlib import Path
        protocol = protocol_read(Path(path).parent / ref)
    if len(protocol) != n_dir:
        raise ValueError("protocol size does not match phantom container")
    n_sig = height * width * n_dir
    raw = buf.read()
    signals = np.frombuffer(raw[: 8 * n_sig], dtype="<f8").reshape(height, width, n_dir)
    labels = np.frombuffer(raw[8 * n_sig: 8 * n_sig + 8 * height * width],
                           dtype="<i8").reshape(height, width)
    return PhantomImage(width, height, signals.copy(), labels.copy(), bvalue, protocol)
