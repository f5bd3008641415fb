import numpy as np
import pytest

from qsopt.phantom import make_dataset
from qsopt.qspace import fit_matrix
from qsopt.recon import LossConfig, mlp_forward, mlp_init
from qsopt.shbasis import BasisSpec, basis_arrays_at, basis_matrix
from qsopt.train import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    evaluate,
    init_angles,
    load_checkpoint,
    save_checkpoint,
    train_joint,
    write_curve_csv,
)
from qsopt import recon


def test_adam_first_step_magnitude():
    p = [np.array([1.0])]
    state = AdamState.like(p)
    g = [np.array([0.37])]
    lr = 1e-3
    adam_step(state, p, g, lr)
    # bias-corrected first step moves by ~lr against the gradient
    assert p[0][0] == pytest.approx(1.0 - lr, abs=1e-6 * lr)


def test_adam_zero_gradient_no_motion():
    p = [np.array([2.0, -1.0])]
    state = AdamState.like(p)
    for _ in range(10):
        adam_step(state, p, [np.zeros(2)], 1e-3)
    assert np.array_equal(p[0], [2.0, -1.0])


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(5)
        p = [rng.normal(size=4)]
        state = AdamState.like(p)
        for _ in range(20):
            adam_step(state, p, [rng.normal(size=4)], 1e-2)
        return p[0].copy()

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite():
    p = [np.zeros(2)]
    with pytest.raises(TrainingDiverged):
        adam_step(AdamState.like(p), p, [np.array([np.nan, 0.0])], 1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(n=0)
    with pytest.raises(ValueError):
        TrainConfig(n=3, mode="bogus")
    with pytest.raises(ValueError):
        TrainConfig(n=3, lr_recon=-1.0)


@pytest.fixture(scope="module")
def tiny_setup(full_protocol):
    ds = make_dataset(6, (4 / 6, 1 / 6, 1 / 6), full_protocol, [1000.0],
                      0.02, seed=2, width=8, height=8)
    return ds[1000.0], full_protocol


def _tiny_cfg(**kw):
    defaults = dict(n=3, epochs=2, seed=0, hidden=8)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_random_frozen_keeps_protocol(tiny_setup):
    splits, full = tiny_setup
    cfg = _tiny_cfg(mode="random-frozen")
    th0, ph0 = init_angles(cfg)
    model = train_joint(cfg, splits, full)
    assert np.array_equal(model.thetas, th0)
    assert np.array_equal(model.phis, ph0)


def test_zero_learning_rates_freeze_everything(tiny_setup):
    splits, full = tiny_setup
    cfg = _tiny_cfg(lr_sampling=0.0, lr_recon=0.0)
    th0, ph0 = init_angles(cfg)
    from qsopt.seeding import derive_rng
    mlp0 = mlp_init(cfg.n, len(full), cfg.hidden, derive_rng(cfg.seed, "mlp"))
    model = train_joint(cfg, splits, full)
    assert np.array_equal(model.thetas, th0)
    assert np.array_equal(model.phis, ph0)
    for a, b in zip(model.mlp.flat(), mlp0.flat()):
        assert np.array_equal(a, b)


def test_training_bit_reproducible(tiny_setup):
    splits, full = tiny_setup
    a = train_joint(_tiny_cfg(), splits, full)
    b = train_joint(_tiny_cfg(), splits, full)
    assert np.array_equal(a.thetas, b.thetas)
    assert np.array_equal(a.phis, b.phis)
    for x, y in zip(a.mlp.flat(), b.mlp.flat()):
        assert np.array_equal(x, y)
    assert a.curve == b.curve


def test_curve_length_and_finiteness(tiny_setup):
    splits, full = tiny_setup
    model = train_joint(_tiny_cfg(epochs=3), splits, full)
    assert len(model.curve) == 3
    assert all(np.isfinite(t) and np.isfinite(v) for t, v in model.curve)


def test_learned_angles_stay_finite(tiny_setup):
    splits, full = tiny_setup
    model = train_joint(_tiny_cfg(epochs=4), splits, full)
    assert np.all(np.isfinite(model.thetas))
    assert np.all(np.isfinite(model.phis))
    p = model.protocol()
    assert all(0 <= d.theta <= np.pi and 0 <= d.phi < 2 * np.pi
               for d in p.directions)


def test_angle_gradient_matches_end_to_end_probe(full_protocol, rng):
    """Frozen reconstructor, band-limited phantom: analytic dL/dangle vs FD."""
    spec = BasisSpec(4)
    ds = make_dataset(1, (1.0, 0.0, 0.0), full_protocol, [1000.0], 0.0,
                      seed=5, width=8, height=8, band_limit=spec)
    sample = ds[1000.0]["train"][0]
    n_full = len(full_protocol)
    fit = fit_matrix(basis_matrix(full_protocol, spec))
    C = fit @ sample.noisy.signals.reshape(-1, n_full).T
    mlp = mlp_init(3, n_full, 16, np.random.default_rng(1))
    target = sample.noisy.signals
    cfg = LossConfig(lambda_tv=2e-7)
    thetas = np.array([0.9, 1.4, 2.0])
    phis = np.array([0.3, 2.1, 4.4])

    def end_to_end(th, ph):
        B = basis_arrays_at(th, ph, spec)
        xhat = mlp_forward(mlp, (B @ C).T).reshape(8, 8, n_full)
        value, g_img = recon.loss(xhat, target, cfg)
        return value, g_img

    _, g_img = end_to_end(thetas, phis)
    from qsopt.recon import mlp_backward
    B = basis_arrays_at(thetas, phis, spec)
    _, _, g_in = mlp_backward(mlp, (B @ C).T, g_img.reshape(-1, n_full))
    _, dBt, dBp = basis_arrays_at(thetas, phis, spec, grad=True)
    g_theta = np.sum(g_in.T * (dBt @ C), axis=1)
    g_phi = np.sum(g_in.T * (dBp @ C), axis=1)

    h = 1e-6
    for i in range(3):
        fp, _ = end_to_end(thetas + h * np.eye(3)[i], phis)
        fm, _ = end_to_end(thetas - h * np.eye(3)[i], phis)
        fd = (fp - fm) / (2 * h)
        assert abs(g_theta[i] - fd) / max(abs(fd), 1e-8) < 1e-3
        fp, _ = end_to_end(thetas, phis + h * np.eye(3)[i])
        fm, _ = end_to_end(thetas, phis - h * np.eye(3)[i])
        fd = (fp - fm) / (2 * h)
        assert abs(g_phi[i] - fd) / max(abs(fd), 1e-8) < 1e-3


def test_divergence_aborts(tiny_setup):
    splits, full = tiny_setup
    # absurd learning rate overflows the activations to inf
    cfg = _tiny_cfg(lr_recon=1e120, lr_sampling=1e120, epochs=5)
    with pytest.raises(TrainingDiverged):
        train_joint(cfg, splits, full)


def test_evaluate_table_structure(tiny_setup):
    splits, full = tiny_setup
    ds = {1000.0: splits}
    model = train_joint(_tiny_cfg(), splits, full)
    records = evaluate(model, ds)
    assert len(records) == 1
    r = records[0]
    assert r.method == "learned"
    assert r.n == 3
    assert r.bvalue == 1000.0
    assert np.isfinite(r.psnr_mean) and np.isfinite(r.ssim_mean)


def test_evaluate_single_phantom_mean(tiny_setup):
    splits, full = tiny_setup
    model = train_joint(_tiny_cfg(), splits, full)
    one = {1000.0: {"test": splits["test"][:1]}}
    dup = {1000.0: {"test": splits["test"][:1] * 3}}
    a = evaluate(model, one)[0]
    b = evaluate(model, dup)[0]
    assert a.psnr_mean == pytest.approx(b.psnr_mean)
    assert b.psnr_std == pytest.approx(0.0, abs=1e-12)


def test_checkpoint_roundtrip(tmp_path, tiny_setup):
    splits, full = tiny_setup
    model = train_joint(_tiny_cfg(), splits, full)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path, full)
    assert np.array_equal(back.thetas, model.thetas)
    assert np.array_equal(back.phis, model.phis)
    for a, b in zip(back.mlp.flat(), model.mlp.flat()):
        assert np.array_equal(a, b)
    assert back.config == model.config


def test_checkpoint_byte_identical(tmp_path, tiny_setup):
    splits, full = tiny_setup
    model = train_joint(_tiny_cfg(), splits, full)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    save_checkpoint(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_curve_csv_format(tmp_path, tiny_setup):
    splits, full = tiny_setup
    model = train_joint(_tiny_cfg(epochs=2), splits, full)
    path = tmp_path / "curve.csv"
    write_curve_csv(model, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr_sampling,lr_recon"
    assert len(lines) == 3
