import numpy as np
import pytest

from bitdiff.diffusion import (
    UNet,
    UNetSpec,
    ddim_sample,
    ddim_sigma,
    ddim_step,
    ddim_timesteps,
    dm_loss,
    generate,
    load_checkpoint,
    load_samples,
    make_schedule,
    q_sample,
    save_checkpoint,
    save_samples,
    schedule_from_betas,
)
from bitdiff.diffusion.checkpoint import CheckpointError
from bitdiff.diffusion.data import write_pgm
from bitdiff.tensor import ShapeError, Tensor


def test_single_step_schedule():
    np.testing.assert_array_equal(schedule_from_betas([0.5]).alpha_bar, [0.5])


def test_linear_schedule_decreasing_and_small_at_end():
    s = make_schedule(1000, "linear", 1e-4, 2e-2)
    assert s.alpha_bar[999] < 1e-3
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_constant_beta_geometric():
    b = 0.03
    s = schedule_from_betas(np.full(50, b))
    np.testing.assert_allclose(s.alpha_bar, (1 - b) ** np.arange(1, 51), rtol=1e-12)


def test_cosine_schedule_valid():
    s = make_schedule(100, "cosine")
    assert np.all((s.beta > 0) & (s.beta < 1)) and np.all(np.diff(s.alpha_bar) < 0)


@pytest.mark.parametrize("bad", [[], [0.0], [1.0], [0.2, -0.1]])
def test_invalid_betas(bad):
    with pytest.raises(ValueError):
        schedule_from_betas(bad)


def test_q_sample_zero_noise_and_near_identity():
    s = make_schedule(1000)
    x0 = np.random.default_rng(0).standard_normal((3, 1, 4, 4))
    np.testing.assert_allclose(q_sample(x0, 500, np.zeros_like(x0), s).data, np.sqrt(s.alpha_bar[500]) * x0)
    tiny = schedule_from_betas([1e-10, 0.1])
    np.testing.assert_allclose(q_sample(x0, 0, np.ones_like(x0), tiny).data, x0, atol=1e-4)


def test_q_sample_unit_variance_monte_carlo():
    s = make_schedule(1000)
    rng = np.random.default_rng(1)
    x0, eps = rng.standard_normal(10**5), rng.standard_normal(10**5)
    assert abs(q_sample(x0, 321, eps, s).data.var() - 1.0) < 0.02


def test_q_sample_errors():
    s = make_schedule(10)
    with pytest.raises(IndexError):
        q_sample(np.ones(3), 10, np.ones(3), s)
    with pytest.raises(ShapeError):
        q_sample(np.ones(3), 1, np.ones(4), s)


def test_ddim_inverts_with_true_eps():
    s = make_schedule(1000)
    rng = np.random.default_rng(2)
    x0, eps = rng.standard_normal((2, 1, 4, 4)), rng.standard_normal((2, 1, 4, 4))
    xt = q_sample(x0, 700, eps, s)
    np.testing.assert_allclose(ddim_step(xt, eps, 700, -1, s).data, x0, atol=1e-5)


def test_ddim_same_step_is_identity():
    s = make_schedule(100)
    x = np.random.default_rng(3).standard_normal((4,))
    np.testing.assert_allclose(ddim_step(x, np.ones(4), 40, 40, s).data, x, atol=1e-12)


def test_eta_one_matches_posterior_variance():
    s = make_schedule(1000)
    for t in (1, 10, 500, 999):
        beta_tilde = (1 - s.alpha_bar[t - 1]) / (1 - s.alpha_bar[t]) * s.beta[t]
        assert abs(float(ddim_sigma(s, t, t - 1, 1.0)) ** 2 - beta_tilde) < 1e-10


def test_ddim_step_argument_errors():
    s = make_schedule(10)
    with pytest.raises(ValueError):
        ddim_step(np.ones(2), np.ones(2), 3, 5, s)
    with pytest.raises(ValueError):
        ddim_step(np.ones(2), np.ones(2), 3, 1, s, eta=0.5)


def test_ddim_timesteps():
    assert ddim_timesteps(1000, 50)[:3] == [980, 960, 940]
    assert ddim_timesteps(1000, 50)[-1] == 0
    assert ddim_timesteps(10, 10) == list(range(9, -1, -1))
    with pytest.raises(ValueError):
        ddim_timesteps(10, 11)


def test_dm_loss_examples():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((3, 2, 4)), rng.standard_normal((3, 2, 4))
    assert float(dm_loss(a, a).data) == 0.0
    assert float(dm_loss(a, a + 1.0).data) == pytest.approx(1.0, abs=1e-12)
    total = 0.0
    for i in range(3):
        for j in range(2):
            for k in range(4):
                total += (a[i, j, k] - b[i, j, k]) ** 2
    assert abs(float(dm_loss(a, b).data) - total / 24) < 1e-7
    with pytest.raises(ShapeError):
        dm_loss(a, b[:2])


def test_unet_feature_shapes():
    spec = UNetSpec()
    model = UNet(spec)
    eps, feats = model(np.zeros((2, 1, 16, 16), np.float32), 5)
    assert eps.shape == (2, 1, 16, 16)
    assert [f.shape for f in feats] == spec.feature_shapes(2, 16)
    assert [f.shape for f in feats] == [(2, 16, 16, 16), (2, 32, 8, 8), (2, 32, 4, 4), (2, 32, 8, 8), (2, 16, 16, 16)]


def test_unet_zero_weights_outputs_bias():
    model = UNet(UNetSpec(), seed=1)
    for name, t in model.named_tensors().items():
        if name != "conv_out.bias" and not name.endswith(("gamma", "beta")):
            t.data = np.zeros_like(t.data)
    model.conv_out.bias.data = np.array([0.7], np.float32)
    eps, _ = model(np.random.default_rng(0).standard_normal((2, 1, 8, 8)).astype(np.float32), 3)
    np.testing.assert_allclose(eps.data, 0.7, rtol=1e-6)


def test_binary_unet_positive_latent_weights_give_constant_sigma():
    model = UNet(UNetSpec(mode="binary"))
    for conv in model.binary_convs():
        conv.weight.data = np.abs(conv.weight.data) + 0.01
    model.reset_sigmas()
    for conv in model.binary_convs():
        w = conv.effective_weight().data
        assert np.all(w == w.flat[0]) and w.flat[0] > 0


def test_unet_rejects_bad_sizes():
    with pytest.raises(ShapeError):
        UNet(UNetSpec())(np.zeros((1, 1, 6, 6), np.float32), 0)
    with pytest.raises(ValueError):
        UNetSpec(depth=2, widths=(8, 8))


def test_unet_depth_zero_points():
    spec = UNetSpec(depth=0, widths=(16,), in_channels=2)
    eps, feats = UNet(spec)(np.zeros((5, 2, 1, 1), np.float32), np.arange(5))
    assert eps.shape == (5, 2, 1, 1) and len(feats) == 1


def test_unet_backward_reaches_all_parameters():
    model = UNet(UNetSpec(mode="binary", act_mode="bidm_learnable_k"))
    x = np.random.default_rng(5).standard_normal((2, 1, 8, 8)).astype(np.float32)
    eps, _ = model(x, np.array([3, 900]))
    (eps * eps).mean().backward()
    missing = [k for k, p in model.named_parameters().items() if p.grad is None]
    assert not missing


def test_checkpoint_roundtrip(tmp_path):
    model = UNet(UNetSpec(mode="binary"), seed=3)
    extra = {"train.iter": np.array([7], np.int64), "flags": np.arange(3, dtype=np.uint8)}
    path = tmp_path / "m.bin"
    save_checkpoint(path, model.spec, {**model.state_dict(), **extra})
    spec, tensors = load_checkpoint(path)
    assert spec == model.spec
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(tensors[k], v)
        assert tensors[k].dtype == v.dtype
    assert tensors["train.iter"][0] == 7 and tensors["flags"].dtype == np.uint8
    restored = UNet(spec, seed=99)
    restored.load_state_dict(tensors)
    x = np.ones((1, 1, 8, 8), np.float32)
    np.testing.assert_array_equal(restored(x, 4)[0].data, model(x, 4)[0].data)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_samples_roundtrip(tmp_path):
    x = np.random.default_rng(6).standard_normal((5, 1, 4, 4)).astype(np.float32)
    save_samples(tmp_path / "s.bin", x)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:4] == b"BDSM"
    np.testing.assert_array_equal(load_samples(tmp_path / "s.bin"), x)


def test_datasets():
    rng = np.random.default_rng(7)
    s = generate("sprites16", 20, rng)
    assert s.shape == (20, 1, 16, 16) and set(np.unique(s)) <= {-1.0, 1.0}
    assert np.all((s == 1).sum(axis=(1, 2, 3)) > 0)
    p = generate("points2d", 1000, rng)
    r = np.linalg.norm(p.reshape(-1, 2), axis=1)
    assert p.shape == (1000, 2, 1, 1) and abs(r.mean() - 1.5) < 0.05
    with pytest.raises(ValueError):
        generate("cifar", 1, rng)


def test_write_pgm(tmp_path):
    write_pgm(tmp_path / "a.pgm", -np.ones((3, 1, 4, 4)), cols=2)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5 10 10 255\n")


class ZeroModel:
    def __call__(self, x, t, tbs=None):
        return Tensor(np.zeros_like(np.asarray(x.data if isinstance(x, Tensor) else x))), []


def test_sampler_degenerate_zero_eps():
    s = make_schedule(1000)
    rng = np.random.default_rng(8)
    x_T = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    out = ddim_sample(ZeroModel(), s, x_T.shape, 1, rng, x_T=x_T)
    np.testing.assert_allclose(out, x_T / np.sqrt(s.alpha_bar[0]), rtol=1e-5)
    assert np.all(np.isfinite(out))


def test_sampler_deterministic():
    s = make_schedule(100)
    model = UNet(UNetSpec(depth=1, widths=(8, 8)), seed=0)
    a = ddim_sample(model, s, (3, 1, 8, 8), 5, np.random.default_rng(9))
    b = ddim_sample(model, s, (3, 1, 8, 8), 5, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
