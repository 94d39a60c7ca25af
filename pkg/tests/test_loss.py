import numpy as np
import pytest

from mimnet.fields import network_bundle
from mimnet.loss import (
    PointSet,
    bilinear_form,
    empirical_loss,
    expected_loss,
    loss_and_gradient,
)
from mimnet.network import ShallowNetwork
from mimnet.problem import ProblemSpec, SpectralFunction, exact_bundle, single_mode_spec
from mimnet.quadrature import cube_rule, sample_set
from mimnet.train import init_network

RULE1 = cube_rule(1, 16)
RULE2 = cube_rule(2, 8)


def random_bundle(spec, system, m=6, seed=0):
    k = 2 if system == "first" else 3
    width = spec.n * (spec.d + 1) if system == "first" else spec.n
    net = init_network(m, spec.d, width, k, 1.0, seed)
    net = net.with_params(net.get_params() + 0.1 * np.random.default_rng(seed).normal(size=net.n_params))
    return network_bundle(net, spec.n, system)


@pytest.mark.parametrize("system", ["first", "second"])
@pytest.mark.parametrize("kind", ["D", "N", "R"])
def test_exact_bundle_zero_loss(system, kind):
    spec = single_mode_spec(2, 2, kind, k=(1, 2))
    assert expected_loss(exact_bundle(spec, system), spec, cube_rule(2, 16)).total <= 1e-8
    emp = empirical_loss(exact_bundle(spec, system), spec, sample_set(2, 64, seed=3))
    assert emp.interior + emp.boundary <= 1e-12
    if kind == "N":
        # square of the sample mean of phi_0: biased, decays like 1/N
        big = empirical_loss(exact_bundle(spec, system), spec, sample_set(2, 4096, seed=3))
        assert big.mean_penalty < emp.mean_penalty
    else:
        assert emp.mean_penalty == 0.0


def test_single_sample_interior():
    spec = single_mode_spec(1, 1, "D")
    zero = network_bundle(ShallowNetwork.empty(2, 1, 2), 1, "first")
    s = sample_set(1, 1, 2, seed=0)
    x = s.interior[0, 0]
    assert empirical_loss(zero, spec, s).interior == pytest.approx((np.pi**2 * np.cos(np.pi * x)) ** 2)


def test_boundary_gradient_linear_in_lambda():
    pts = PointSet.from_samples(sample_set(1, 20, seed=0))
    u = SpectralFunction.from_terms([((1,), 1.0)], 1)
    grads, bnds = [], []
    for lam in (1.0, 3.0, 5.0):
        spec = ProblemSpec(1, 1, "R", u, lam=lam)
        loss, g = loss_and_gradient(random_bundle(spec, "first"), spec, pts)
        grads.append(g)
        bnds.append(loss.boundary)
    assert np.allclose(grads[2] - grads[0], 2 * (grads[1] - grads[0]), rtol=1e-10, atol=1e-12)
    assert bnds[1] == pytest.approx(3 * bnds[0])


def test_permutation_invariance():
    spec = single_mode_spec(1, 2, "D")
    b = random_bundle(spec, "first")
    s = sample_set(2, 30, seed=5)
    perm = sample_set(2, 30, seed=5)
    perm.interior = perm.interior[::-1].copy()
    assert empirical_loss(b, spec, s).total == pytest.approx(empirical_loss(b, spec, perm).total, rel=1e-13)


def test_zero_bundle_loss_is_data_norm():
    spec = single_mode_spec(1, 1, "D")
    zero = network_bundle(ShallowNetwork.empty(2, 1, 2), 1, "first")
    loss = expected_loss(zero, spec, cube_rule(1, 64))
    # ||f||^2 = pi^4 / 2 and |g|^2 = 1 at each endpoint
    assert loss.interior == pytest.approx(np.pi**4 / 2)
    assert loss.boundary == pytest.approx(2.0)
    assert loss.mean_penalty == 0.0


def test_neumann_mean_penalty():
    spec = single_mode_spec(1, 1, "N")
    zero = network_bundle(ShallowNetwork.empty(2, 1, 2), 1, "first")
    assert expected_loss(zero, spec, RULE1).mean_penalty == 0.0
    shifted = network_bundle(ShallowNetwork.empty(2, 1, 2, c=[0.5, 0.0]), 1, "first")
    assert expected_loss(shifted, spec, RULE1).mean_penalty == pytest.approx(0.25)


def test_mismatched_bundle_rejected():
    spec = single_mode_spec(1, 2, "D")
    with pytest.raises(ValueError):
        expected_loss(exact_bundle(single_mode_spec(1, 1, "D"), "first"), spec, RULE2)


@pytest.mark.parametrize("system", ["first", "second"])
@pytest.mark.parametrize("kind", ["D", "N", "R"])
def test_gradient_matches_fd(system, kind):
    spec = single_mode_spec(2, 2, kind, k=(1, 1))
    bundle = random_bundle(spec, system)
    pts = PointSet.from_samples(sample_set(2, 40, seed=1))
    loss, grad = loss_and_gradient(bundle, spec, pts)
    net = bundle.network
    theta = net.get_params()
    rng = np.random.default_rng(2)
    for i in rng.choice(theta.size, 12, replace=False):
        e = np.zeros_like(theta)
        e[i] = 1e-6
        lp = empirical_loss(network_bundle(net.with_params(theta + e), 2, system), spec, pts).total
        lm = empirical_loss(network_bundle(net.with_params(theta - e), 2, system), spec, pts).total
        fd = (lp - lm) / 2e-6
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-7 * max(1.0, loss.total))


def test_cached_pointset_matches():
    spec = single_mode_spec(1, 2, "R")
    b = random_bundle(spec, "first")
    pts = PointSet.from_samples(sample_set(2, 50, seed=4))
    assert empirical_loss(b, spec, pts.with_data(spec)).total == pytest.approx(empirical_loss(b, spec, pts).total, rel=1e-13)


def test_duplicate_boundary_points_merged():
    s = sample_set(1, 10, 500, seed=0)
    pts = PointSet.from_samples(s)
    assert pts.xb.shape[0] == 2
    assert pts.wb.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("kind", ["D", "N", "R"])
def test_bilinear_form(kind):
    spec = ProblemSpec(1, 2, kind, SpectralFunction.from_terms([((1, 1), 1.0)], 2))
    u = random_bundle(spec, "first", seed=1)
    w = random_bundle(spec, "first", seed=2)
    assert bilinear_form(u, w, spec, RULE2) == pytest.approx(bilinear_form(w, u, spec, RULE2))
    assert bilinear_form(u, u, spec, RULE2) >= 0
    # B(e, e) is the expected loss of u when e = u - u*
    e = u - exact_bundle(spec, "first")
    assert bilinear_form(e, e, spec, RULE2) == pytest.approx(expected_loss(u, spec, RULE2).total, rel=1e-10)
