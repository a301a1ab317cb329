import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from resolvent_pnp import PnPFBRestorer, ResolventDenoiser
from resolvent_pnp._validation import check_array, check_images, check_scalar, restore_rank
from resolvent_pnp.data import make_toy_images
from resolvent_pnp.net import Network, build_conv_network
from resolvent_pnp.tensor import gaussian_kernel, make_rng


def zero_net():
    net = build_conv_network(depth=2, width=2, rng=0)
    return Network([l.replace(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers], True)


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_array([[1.0, np.nan]])
    with pytest.raises(ValueError):
        check_array(np.zeros(3), ndim=2)
    X, rank = check_images(np.zeros((2, 5, 5)))
    assert X.shape == (2, 1, 5, 5) and rank == 3
    assert restore_rank(X, rank).shape == (2, 5, 5)
    X, rank = check_images(np.zeros((5, 5)))
    assert X.shape == (1, 1, 5, 5) and restore_rank(X, rank).shape == (5, 5)
    with pytest.raises(ValueError):
        check_images(np.zeros(5))
    assert check_scalar(3, "n", low=1, integer=True) == 3
    for bad, kw in [(0, dict(low=0, low_open=True)), (np.inf, {}), (2, dict(high=1))]:
        with pytest.raises(ValueError):
            check_scalar(bad, "x", **kw)
    for bad in (True, "1", None):
        with pytest.raises(TypeError):
            check_scalar(bad, "x")
    with pytest.raises(TypeError):
        check_scalar(1.5, "x", integer=True)


def test_denoiser_params_and_clone():
    est = ResolventDenoiser(lam=0.1, iterations=3)
    params = est.get_params()
    assert params["lam"] == 0.1 and params["iterations"] == 3
    c = clone(est)
    assert c.get_params() == params and c is not est
    est.set_params(width=7)
    assert est.width == 7


def test_denoiser_fit_transform_certify_score():
    X = make_toy_images(4, 8, 0)[:, 0]
    est = ResolventDenoiser(iterations=5, batch_size=2, depth=2, width=3, lam=0.01)
    with pytest.raises(NotFittedError):
        est.transform(X)
    est.fit(X)
    assert est.n_channels_ == 1 and len(est.log_) == 5
    Y = X + 0.05 * make_rng(1).standard_normal(X.shape)
    out = est.transform(Y)
    assert out.shape == Y.shape
    assert est.transform(Y[0]).shape == (8, 8)
    s2 = est.certify(Y, iters=5)
    assert s2.shape == (4,) and np.all(s2 > 0)
    assert np.isfinite(est.score(Y, X))
    with pytest.raises(ValueError):
        est.transform(np.zeros((1, 3, 8, 8)))
    again = ResolventDenoiser(iterations=5, batch_size=2, depth=2, width=3, lam=0.01).fit(X)
    assert np.array_equal(again.net_.get_params(), est.net_.get_params())
    warm = ResolventDenoiser(iterations=0, warm_start=est).fit(X)
    assert np.array_equal(warm.net_.get_params(), est.net_.get_params())
    with pytest.raises(TypeError):
        ResolventDenoiser(iterations=0, warm_start="nope").fit(X)


def test_restorer_with_identity_denoiser_and_baselines():
    k = gaussian_kernel(5, 1.0)
    x = make_toy_images(1, 16, 3)[0, 0]
    from resolvent_pnp.tensor import CircularConvolution

    H = CircularConvolution(k / CircularConvolution(k, x.shape).exact_norm(), x.shape)
    kn = H.kernel
    z = H.apply(x)
    est = PnPFBRestorer(kn, denoiser=zero_net(), max_iter=30).fit(z)
    assert est.gamma_ == pytest.approx(1.99 / est.mu_)
    rep = est.restore(z)
    assert rep.iterations == 30 and rep.status == "max_iter"
    # with J = Id the iteration is Landweber, which lowers the data misfit
    assert np.linalg.norm(H.apply(rep.x) - z) <= np.linalg.norm(H.apply(z) - z)
    stack = est.transform(np.stack([z, z]))
    assert stack.shape == (2, 16, 16) and np.array_equal(stack[0], rep.x)
    for base in ("l1", "tv"):
        out = PnPFBRestorer(kn, baseline=base, reg=0.01, max_iter=5).fit(z).transform(z)
        assert out.shape == z.shape


def test_restorer_errors():
    k = np.ones((3, 3)) / 9
    with pytest.raises(ValueError):
        PnPFBRestorer(k, denoiser=zero_net(), gamma=2.5).fit(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        PnPFBRestorer(np.zeros((3, 3)), denoiser=zero_net()).fit()
    with pytest.raises(ValueError):
        PnPFBRestorer(k, baseline="bm3d").fit()
    with pytest.raises(TypeError):
        PnPFBRestorer(k).fit()
    with pytest.raises(NotFittedError):
        PnPFBRestorer(k, denoiser=zero_net()).restore(np.zeros((8, 8)))
    assert clone(PnPFBRestorer(k, baseline="tv", reg=0.1)).reg == 0.1
