import numpy as np
import pytest

from resolvent_pnp.inverse import (
    BlurProblem,
    datafit,
    effective_noise,
    grad_datafit,
    load_problem,
    make_blur_problem,
    recommend_params,
    save_problem,
)
from resolvent_pnp.tensor import STANDARD_KERNELS, CircularConvolution, make_rng, op_norm

DELTA = np.array([[1.0]])


def test_delta_kernel_without_noise():
    x = make_rng(0).uniform(size=(8, 8))
    prob = make_blur_problem(DELTA, x, 0.0)
    np.testing.assert_array_equal(prob.observation, x)
    assert prob.mu == pytest.approx(1.0, abs=1e-12)


def test_noise_level_matches():
    x = make_rng(1).uniform(size=(64, 64))
    prob = make_blur_problem(STANDARD_KERNELS["gaussian"](), x, 0.01, rng=2)
    e = prob.observation - prob.H.apply(x)
    assert np.std(e) == pytest.approx(0.01, rel=0.05)


@pytest.mark.parametrize("name", sorted(STANDARD_KERNELS))
def test_normalization_gives_unit_mu(name):
    prob = make_blur_problem(STANDARD_KERNELS[name]() * 3.0, np.zeros((16, 16)), 0.0)
    assert op_norm(prob.H, iters=500, rng=0) ** 2 == pytest.approx(1.0, abs=1e-6)
    assert abs(prob.mu - 1.0) <= 1e-6
    raw = make_blur_problem(STANDARD_KERNELS[name]() * 3.0, np.zeros((16, 16)), 0.0, normalize=False)
    assert raw.mu == pytest.approx(9.0 * CircularConvolution(STANDARD_KERNELS[name](), (16, 16)).exact_norm() ** 2)


def test_problem_errors():
    with pytest.raises(ValueError):
        make_blur_problem(np.zeros((3, 3)), np.zeros((4, 4)), 0.0)
    with pytest.raises(ValueError):
        make_blur_problem(DELTA, np.zeros((4, 4)), -1.0)
    prob = make_blur_problem(DELTA, np.zeros((4, 4)), 0.0)
    with pytest.raises(ValueError):
        grad_datafit(prob, np.zeros((5, 4)))


def test_gradient_examples():
    rng = make_rng(3)
    x = rng.uniform(size=(8, 8))
    prob = make_blur_problem(STANDARD_KERNELS["motion"](), x, 0.0)
    np.testing.assert_allclose(grad_datafit(prob, x), 0.0, atol=1e-14)
    ident = BlurProblem(DELTA, np.zeros((4, 4)), 0.0)
    np.testing.assert_allclose(grad_datafit(ident, x[:4, :4]), x[:4, :4], atol=1e-15)


def test_gradient_is_mu_lipschitz_and_true_gradient():
    rng = make_rng(4)
    prob = make_blur_problem(STANDARD_KERNELS["uniform"](), rng.uniform(size=(8, 8)), 0.05, rng=5, normalize=False)
    mu = op_norm(prob.H, iters=500, rng=0) ** 2
    for _ in range(1000):
        x, y = rng.standard_normal((2, 8, 8))
        d = np.linalg.norm(grad_datafit(prob, x) - grad_datafit(prob, y))
        assert d <= mu * np.linalg.norm(x - y) + 1e-10
    x = rng.standard_normal((8, 8))
    g = grad_datafit(prob, x)
    h = 1e-6
    fd = np.zeros(64)
    for i in range(64):
        e = np.zeros(64)
        e[i] = h
        e = e.reshape(8, 8)
        fd[i] = (datafit(prob, x + e) - datafit(prob, x - e)) / (2 * h)
    assert np.linalg.norm(g.ravel() - fd) <= 1e-6 * np.linalg.norm(fd)


def test_effective_noise_anchor():
    assert effective_noise(noise_std=0.0, kernel_norm=0.225) == 0.0
    assert effective_noise(noise_std=0.01, kernel_norm=0.225) == pytest.approx(0.0045, abs=1e-15)
    assert effective_noise(noise_std=0.02, kernel_norm=0.225) == 2 * effective_noise(noise_std=0.01, kernel_norm=0.225)


def test_recommended_parameters_anchor():
    gamma, sigma = recommend_params(mu=1.0, nu_eff=0.0045)
    assert gamma == 1.99
    assert sigma == pytest.approx(0.009, abs=1e-4)
    assert sigma / (gamma * 0.0045) == pytest.approx(1.0, abs=1e-15)
    assert recommend_params(mu=4.0, nu_eff=0.0)[0] == 0.4975
    with pytest.raises(ValueError):
        recommend_params(mu=0.0, nu_eff=0.1)


@pytest.mark.parametrize("name", sorted(STANDARD_KERNELS))
def test_recommended_step_below_bound(name):
    prob = make_blur_problem(STANDARD_KERNELS[name](), np.zeros((16, 16)), 0.01, normalize=False)
    gamma, sigma = recommend_params(prob)
    assert gamma < 2.0 / prob.mu
    assert sigma == pytest.approx(gamma * effective_noise(prob), rel=1e-15)


def test_normalization_scale_covariance():
    k = STANDARD_KERNELS["motion"]()
    x = np.zeros((16, 16))
    raw = make_blur_problem(k, x, 0.01, normalize=False)
    norm = make_blur_problem(k, x, 0.01, normalize=True)
    factor = CircularConvolution(k, x.shape).exact_norm()
    assert effective_noise(norm) == pytest.approx(effective_noise(raw) / factor, rel=1e-12)


def test_problem_round_trip(tmp_path):
    prob = make_blur_problem(STANDARD_KERNELS["gaussian"](), make_rng(0).uniform(size=(8, 8)), 0.02, rng=9)
    save_problem(tmp_path / "p", prob)
    back = load_problem(tmp_path / "p")
    for a, b in [(back.kernel, prob.kernel), (back.observation, prob.observation), (back.truth, prob.truth)]:
        assert np.array_equal(a, b)
    assert back.noise_std == prob.noise_std and back.seed == 9
