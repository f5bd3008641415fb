"""Joint optimization of sampling angles and reconstructor parameters.

Each step subsamples a batch of phantoms at the current angles, runs the
per-voxel MLP, evaluates the L1+TV loss, and backpropagates through the MLP
and through the SH resampling into the angles.  Two Adam groups update the
angles and the network simultaneously at their own learning rates.  Angles
are optimized unconstrained and only canonicalized for reporting.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import recon
from .qspace import fit_matrix
from .recon import LossConfig, MlpParams, mlp_backward_cached, mlp_forward, \
    mlp_forward_cached, mlp_init
from .seeding import derive_rng, derive_seed
from .shbasis import BasisSpec, basis_arrays_at, basis_matrix
from .sphere import Protocol, electrostatic_protocol, protocol_from_angles, \
    random_protocol

MODES = ("learned", "random-frozen", "uniform-frozen")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_model=None):
        super().__init__(message)
        self.last_model = last_model


@dataclass(frozen=True)
class TrainConfig:
    n: int
    epochs: int = 50
    lr_sampling: float = 1e-3
    lr_recon: float = 1e-4
    lambda_tv: float = 2e-7
    batch_size: int = 4
    seed: int = 0
    mode: str = "learned"
    hidden: int = recon.DEFAULT_HIDDEN
    sh_order: int = 4

    def __post_init__(self):
        if self.n < 1 or self.epochs < 1:
            raise ValueError("n and epochs must be >= 1")
        if self.lr_sampling < 0 or self.lr_recon < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray],
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[AdamState, list[np.ndarray]]:
    """One in-place Adam update with bias correction."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("diverged: non-finite gradient")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state, params


@dataclass
class TrainedModel:
    thetas: np.ndarray
    phis: np.ndarray
    mlp: MlpParams
    config: TrainConfig
    full_protocol: Protocol
    curve: list[tuple[float, float]] = field(default_factory=list)
    best_epoch: int | None = None
    _best_state: tuple | None = None

    def best_model(self) -> "TrainedModel":
        """Snapshot at the best-validation epoch (self when none recorded)."""
        if self._best_state is None:
            return self
        thetas, phis, mlp = self._best_state
        return TrainedModel(thetas, phis, mlp, self.config, self.full_protocol,
                            curve=self.curve, best_epoch=self.best_epoch)

    @property
    def spec(self) -> BasisSpec:
        return BasisSpec(self.config.sh_order)

    def protocol(self, label: str = "") -> Protocol:
        return protocol_from_angles(self.thetas, self.phis,
                                    label or f"{self.config.mode}-n{self.config.n}")

    def subsample(self, coeffs: np.ndarray) -> np.ndarray:
        """(R, V) coefficient batch -> (V, n) sparse signals at the model angles."""
        B = basis_arrays_at(self.thetas, self.phis, self.spec)
        return (B @ coeffs).T

    def reconstruct(self, signals: np.ndarray, fit: np.ndarray) -> np.ndarray:
        """(H, W, N) measured signals -> (H, W, N) reconstruction."""
        h, w, nd = signals.shape
        coeffs = fit @ signals.reshape(-1, nd).T
        out = mlp_forward(self.mlp, self.subsample(coeffs))
        return out.reshape(h, w, -1)


def init_angles(cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    seed = derive_seed(cfg.seed, "init", cfg.mode, cfg.n)
    if cfg.mode == "random-frozen":
        p = random_protocol(cfg.n, seed)
    elif cfg.n == 1:
        p = random_protocol(1, seed)
    else:
        p = electrostatic_protocol(cfg.n, iterations=2000, seed=seed)
    return p.thetas().copy(), p.phis().copy()


def train_joint(cfg: TrainConfig, splits: dict, full_protocol: Protocol) -> TrainedModel:
    """Train on splits["train"], tracking loss on splits["val"] each epoch."""
    train_set = splits["train"]
    val_set = splits.get("val", [])
    if not train_set:
        raise ValueError("empty training set")
    n_full = len(full_protocol)
    if cfg.n > n_full:
        raise ValueError("sparse count exceeds full protocol size")

    spec = BasisSpec(cfg.sh_order)
    fit = fit_matrix(basis_matrix(full_protocol, spec))
    # pinv(B_full) @ S is constant w.r.t. the learnable angles: cache it
    coeffs = [fit @ s.noisy.signals.reshape(-1, n_full).T for s in train_set]
    val_coeffs = [fit @ s.noisy.signals.reshape(-1, n_full).T for s in val_set]

    thetas, phis = init_angles(cfg)
    mlp = mlp_init(cfg.n, n_full, cfg.hidden, derive_rng(cfg.seed, "mlp"))
    loss_cfg = LossConfig(cfg.lambda_tv)
    learn_angles = cfg.mode == "learned"

    angle_params = [thetas, phis]
    angle_state = AdamState.like(angle_params)
    mlp_params = mlp.flat()
    mlp_state = AdamState.like(mlp_params)

    model = TrainedModel(thetas, phis, mlp, cfg, full_protocol)
    order_rng = derive_rng(cfg.seed, "shuffle")
    curve = model.curve

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            Bn, dBt, dBp = basis_arrays_at(thetas, phis, spec, grad=True)
            g_theta = np.zeros_like(thetas)
            g_phi = np.zeros_like(phis)
            g_W = [np.zeros_like(W) for W in mlp.weights]
            g_b = [np.zeros_like(b) for b in mlp.biases]
            batch_loss = 0.0
            for idx in batch:
                sample = train_set[idx]
                C = coeffs[idx]
                h, w = sample.noisy.height, sample.noisy.width
                sparse = (Bn @ C).T
                out, acts = mlp_forward_cached(mlp, sparse)
                xhat = out.reshape(h, w, n_full)
                value, g_img = recon.loss(xhat, sample.noisy.signals, loss_cfg)
                if not math.isfinite(value):
                    raise TrainingDiverged("diverged: non-finite loss", model)
                batch_loss += value
                dW, db, g_in = mlp_backward_cached(mlp, acts, g_img.reshape(-1, n_full))
                for acc, g in zip(g_W, dW):
                    acc += g
                for acc, g in zip(g_b, db):
                    acc += g
                if learn_angles:
                    g_theta += np.sum(g_in.T * (dBt @ C), axis=1)
                    g_phi += np.sum(g_in.T * (dBp @ C), axis=1)
            scale = 1.0 / len(batch)
            epoch_losses.append(batch_loss * scale)
            adam_step(mlp_state, mlp_params,
                      [g * scale for g in _interleave(g_W, g_b)], cfg.lr_recon)
            if learn_angles:
                adam_step(angle_state, angle_params,
                          [g_theta * scale, g_phi * scale], cfg.lr_sampling)
        train_loss = float(np.mean(epoch_losses))
        val_loss = _eval_loss(mlp, thetas, phis, spec, val_set, val_coeffs,
                              loss_cfg, n_full) if val_set else float("nan")
        curve.append((train_loss, val_loss))
        track = val_loss if val_set else train_loss
        if model.best_epoch is None or track < min(
                (v if val_set else t) for t, v in curve[:-1]):
            model.best_epoch = epoch + 1
            model._best_state = (thetas.copy(), phis.copy(), mlp.copy())
    return model


def _interleave(g_W, g_b):
    out = []
    for W, b in zip(g_W, g_b):
        out.extend([W, b])
    return out


def _eval_loss(mlp, thetas, phis, spec, samples, coeffs, loss_cfg, n_full) -> float:
    B = basis_arrays_at(thetas, phis, spec)
    total = 0.0
    for sample, C in zip(samples, coeffs):
        h, w = sample.noisy.height, sample.noisy.width
        xhat = mlp_forward(mlp, (B @ C).T).reshape(h, w, n_full)
        value, _ = recon.loss(xhat, sample.noisy.signals, loss_cfg)
        total += value
    return total / len(samples)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    n: int
    bvalue: float
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


def evaluate(model: TrainedModel, dataset: dict, split: str = "test",
             method: str | None = None) -> list[MetricsRecord]:
    """PSNR/SSIM of the learned operator against clean ground truth, per b."""
    from .metrics import psnr, ssim

    spec = model.spec
    fit = fit_matrix(basis_matrix(model.full_protocol, spec))
    records = []
    for b, splits in sorted(dataset.items()):
        psnrs, ssims = [], []
        for sample in splits[split]:
            if sample.noisy.protocol != model.full_protocol:
                raise ValueError("dataset protocol does not match model")
            xhat = model.reconstruct(sample.noisy.signals, fit)
            psnrs.append(psnr(xhat, sample.clean.signals))
            ssims.append(ssim(xhat, sample.clean.signals))
        records.append(MetricsRecord(
            method or model.config.mode, model.config.n, float(b),
            float(np.mean(psnrs)), float(np.std(psnrs)),
            float(np.mean(ssims)), float(np.std(ssims))))
    return records


# --- checkpoint: text header + little-endian float64 parameter blob ----------

_CKPT_MAGIC = "QSOPT-CHECKPOINT 1"


def save_checkpoint(model: TrainedModel, path) -> None:
    cfg = model.config
    header = (
        f"{_CKPT_MAGIC}\n"
        f"n {cfg.n}\n"
        f"nfull {len(model.full_protocol)}\n"
        f"order {cfg.sh_order}\n"
        f"hidden {cfg.hidden}\n"
        f"mode {cfg.mode}\n"
        f"epochs {cfg.epochs}\n"
        f"seed {cfg.seed}\n"
        f"lr_sampling {cfg.lr_sampling:.17g}\n"
        f"lr_recon {cfg.lr_recon:.17g}\n"
        f"lambda_tv {cfg.lambda_tv:.17g}\n"
        f"batch_size {cfg.batch_size}\n"
        "end\n"
    )
    blob = io.BytesIO()
    blob.write(np.ascontiguousarray(model.thetas, dtype="<f8").tobytes())
    blob.write(np.ascontiguousarray(model.phis, dtype="<f8").tobytes())
    for arr in model.mlp.flat():
        blob.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header.encode())
        f.write(blob.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path, full_protocol: Protocol) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    if buf.readline().decode().rstrip("\n") != _CKPT_MAGIC:
        raise ValueError(f"not a checkpoint: {path}")
    fields = {}
    while True:
        line = buf.readline().decode().rstrip("\n")
        if line == "end":
            break
        key, _, value = line.partition(" ")
        fields[key] = value
    cfg = TrainConfig(
        n=int(fields["n"]), epochs=int(fields["epochs"]),
        lr_sampling=float(fields["lr_sampling"]), lr_recon=float(fields["lr_recon"]),
        lambda_tv=float(fields["lambda_tv"]), batch_size=int(fields["batch_size"]),
        seed=int(fields["seed"]), mode=fields["mode"],
        hidden=int(fields["hidden"]), sh_order=int(fields["order"]))
    n_full = int(fields["nfull"])
    if n_full != len(full_protocol):
        raise ValueError("checkpoint full-protocol size mismatch")

    def take(count):
        raw = buf.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError("truncated checkpoint blob")
        return np.frombuffer(raw, dtype="<f8").copy()

    thetas = take(cfg.n)
    phis = take(cfg.n)
    dims = [cfg.n, cfg.hidden, cfg.hidden, n_full]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(take(a * b).reshape(a, b))
        biases.append(take(b))
    mlp = MlpParams(weights, biases)
    return TrainedModel(thetas, phis, mlp, cfg, full_protocol)


def write_curve_csv(model: TrainedModel, path) -> None:
    cfg = model.config
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr_sampling", "lr_recon"])
        for epoch, (tr, va) in enumerate(model.curve, start=1):
            writer.writerow([epoch, f"{tr:.17g}", f"{va:.17g}",
                             f"{cfg.lr_sampling:.17g}", f"{cfg.lr_recon:.17g}"])
