import numpy as np
import pytest

from resolvent_pnp.data import make_toy_images
from resolvent_pnp.metrics import psnr
from resolvent_pnp.net import Activation, DenseLayer, Network, build_dense_network
from resolvent_pnp.tensor import make_rng
from resolvent_pnp.train import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    interpolate_sample,
    loss_and_grad,
    make_noisy,
    train,
)


def scalar_affine(c):
    """``J(x) = x + c x`` on R^1, so ``Q = (1 + 2c) x`` has constant Jacobian."""
    return Network([DenseLayer(np.array([[c]]), np.zeros(1), Activation("identity"))], True)


def small_dense(seed=0):
    net = build_dense_network([3, 6, 3], rng=seed)
    rng = make_rng(seed + 1)
    return Network([l.replace(l.weight, 0.1 * rng.standard_normal(l.bias.shape)) for l in net.layers], True)


# --- noise and interpolation ---------------------------------------------------


def test_make_noisy():
    x = np.linspace(0, 1, 10)
    np.testing.assert_array_equal(make_noisy(x, 0.0, 1), x)
    x = np.zeros(10**6)
    y = make_noisy(x, 0.3, 5)
    assert np.var(y) == pytest.approx(0.09, rel=0.01)
    np.testing.assert_array_equal(make_noisy(x, 0.3, 5), y)
    with pytest.raises(ValueError):
        make_noisy(x, -1.0, 0)


def test_interpolate_sample():
    assert interpolate_sample(2.0, 4.0, 1.0) == 2.0
    assert interpolate_sample(2.0, 4.0, 0.0) == 4.0
    assert interpolate_sample(2.0, 4.0, 0.5) == 3.0
    out = interpolate_sample(np.zeros((2, 3)), np.ones((2, 3)), np.array([0.25, 1.0]))
    np.testing.assert_allclose(out, [[0.75] * 3, [0.0] * 3])
    for bad in (-0.1, 1.5):
        with pytest.raises(ValueError):
            interpolate_sample(1.0, 2.0, bad)


# --- loss ------------------------------------------------------------------------


def test_perfect_net_on_clean_data_has_zero_loss():
    net = scalar_affine(0.0)
    cfg = TrainConfig(sigma=0.0)
    value, grad, _ = loss_and_grad(net, np.ones((4, 1)), cfg, 0)
    assert value == 0.0 and np.all(grad == 0)


def test_hinge_inactive_penalty_is_constant():
    # (1 + 2c)^2 = 0.3
    c = (np.sqrt(0.3) - 1) / 2
    net = scalar_affine(c)
    lam = 0.1
    base = TrainConfig(sigma=0.0, lam=0.0, eps=0.05)
    X = make_rng(0).standard_normal((5, 1))
    v0, g0, _ = loss_and_grad(net, X, base, 3)
    v1, g1, diag = loss_and_grad(net, X, base.replace(lam=lam), 3)
    np.testing.assert_allclose(diag["sigma2"], 0.3, rtol=1e-12)
    assert np.all(diag["penalty"] == lam * 0.95)
    assert v1 == pytest.approx(v0 + lam * 0.95, rel=1e-14)
    assert np.array_equal(g0, g1)


def test_hinge_active_gradient_for_scalar_affine():
    c = 0.5
    net = scalar_affine(c)
    cfg = TrainConfig(sigma=0.0, lam=0.2, eps=0.05)
    X = make_rng(1).standard_normal((3, 1))
    _, g, diag = loss_and_grad(net, X, cfg, 0)
    # data term: d/dc mean (c x)^2 = 2 c mean x^2; penalty: lam * 4 (1 + 2c)
    expected = 2 * c * np.mean(X**2) + 0.2 * 4 * (1 + 2 * c)
    assert g[0] == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(diag["sigma2"], (1 + 2 * c) ** 2)


def test_data_term_gradient_matches_finite_differences():
    net = small_dense(2)
    cfg = TrainConfig(sigma=0.1, lam=0.0)
    X = make_rng(3).standard_normal((4, 3))
    _, g, _ = loss_and_grad(net, X, cfg, 7)
    theta = net.get_params()
    fd = np.zeros_like(theta)
    h = 1e-6
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (loss_and_grad(net.with_params(theta + e), X, cfg, 7)[0]
                 - loss_and_grad(net.with_params(theta - e), X, cfg, 7)[0]) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("net_fn,lam", [(lambda: small_dense(4), 0.0), (lambda: scalar_affine(0.4), 0.1)])
def test_batch_gradient_is_mean_of_item_gradients(net_fn, lam):
    net = net_fn()
    cfg = TrainConfig(sigma=0.0, lam=lam)
    X = make_rng(5).standard_normal((6, net.channels_in))
    _, g, _ = loss_and_grad(net, X, cfg, 0)
    items = [loss_and_grad(net, X[i : i + 1], cfg, 0)[1] for i in range(6)]
    np.testing.assert_allclose(g, np.mean(items, axis=0), atol=1e-12)


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError):
        loss_and_grad(small_dense(), np.zeros((0, 3)), TrainConfig(), 0)


# --- Adam -----------------------------------------------------------------------


def test_adam_zero_gradient():
    st = AdamState(np.full(3, 0.5), np.full(3, 0.2), 4)
    theta = np.array([1.0, 2.0, 3.0])
    new, th = adam_step(st, np.zeros(3), theta, lr=0.1)
    np.testing.assert_array_equal(th, theta - 0.1 * (0.45 / (1 - 0.9**5)) / (np.sqrt(0.1998 / (1 - 0.999**5)) + 1e-8))
    np.testing.assert_allclose(new.m, 0.45)
    np.testing.assert_allclose(new.v, 0.2 * 0.999)
    _, th = adam_step(AdamState.zeros(3), np.zeros(3), theta)
    np.testing.assert_array_equal(th, theta)


def test_adam_constant_gradient_limit():
    g = np.array([0.3, -2.0, 1e-3])
    st, theta = AdamState.zeros(3), np.zeros(3)
    lr = 1e-3
    for _ in range(10_000):
        prev = theta
        st, theta = adam_step(st, g, theta, lr)
    step = theta - prev
    np.testing.assert_allclose(np.abs(step), lr, rtol=0.01)
    assert np.all(np.sign(step) == -np.sign(g))


def test_adam_clipping():
    g = np.array([0.6, 0.8])
    st, th = adam_step(AdamState.zeros(2), g, np.zeros(2), clip_norm=0.01)
    np.testing.assert_allclose(st.m / (1 - 0.9), [0.006, 0.008])
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(2))


# --- config ------------------------------------------------------------------------


def test_config_validation_and_mapping():
    with pytest.raises(ValueError):
        TrainConfig(eps=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"nope": "1"})
    cfg = TrainConfig.from_mapping({"lam": "0.01", "iterations": "7", "flips": "false"})
    assert cfg.lam == 0.01 and cfg.iterations == 7 and cfg.flips is False
    assert TrainConfig.from_mapping({k: str(v) for k, v in cfg.to_mapping().items()}) == cfg


# --- training loop ------------------------------------------------------------------


def test_zero_iterations_returns_initial_net():
    net = small_dense(0)
    out, log = train(make_rng(0).standard_normal((4, 3)), TrainConfig(iterations=0), init_net=net)
    assert np.array_equal(out.get_params(), net.get_params())
    assert len(log) == 0


def test_training_is_deterministic():
    X = make_toy_images(6, 8, 1)
    cfg = TrainConfig(iterations=6, pretrain_iterations=3, lam=0.01, batch_size=2, depth=3, width=4, seed=3)
    a, la = train(X, cfg)
    b, lb = train(X, cfg)
    assert np.array_equal(a.get_params(), b.get_params())
    for u, v in zip(la.numeric(), lb.numeric()):
        np.testing.assert_array_equal(u, v)
    assert la.phase == ["pretrain"] * 3 + ["train"] * 6
    assert len(la.wall_time) == len(la) == 9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_aborts():
    X = make_toy_images(2, 8, 0)
    X[0, 0, 0, 0] = np.inf
    with pytest.raises(TrainingError):
        train(X, TrainConfig(iterations=3, batch_size=2, depth=2, width=2, flips=False))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(np.zeros((0, 1, 8, 8)), TrainConfig(iterations=1))


def test_log_csv(tmp_path):
    _, log = train(make_toy_images(2, 8, 0), TrainConfig(iterations=2, batch_size=1, depth=2, width=2))
    log.to_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0].startswith("iteration,phase,loss")


def test_toy_denoising_beats_identity_by_one_db():
    X = make_toy_images(48, 32, 0)
    val = make_toy_images(8, 32, 1000)
    cfg = TrainConfig(iterations=200, sigma=0.1, lam=0.0, epoch_length=200, seed=0)
    net, log = train(X, cfg, validation=val)
    Y = val + 0.1 * make_rng(11).standard_normal(val.shape)
    before = np.mean([psnr(y, x) for y, x in zip(Y, val)])
    after = np.mean([psnr(d, x) for d, x in zip(net.forward(Y), val)])
    assert after >= before + 1.0
    assert log.val_psnr and log.val_psnr[-1][0] == 200
