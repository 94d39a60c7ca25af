import numpy as np
import pytest

from mimnet.problem import (
    ProblemSpec,
    SpectralFunction,
    barron_norm,
    data_f,
    data_g,
    exact_bundle,
    laplacian_power,
    single_mode_spec,
)
from mimnet.quadrature import boundary_grid


def mode(k, c=1.0):
    return SpectralFunction.from_terms([(tuple(k), c)], len(k))


def test_laplacian_power_examples():
    u = mode((1, 2), 0.7)
    assert laplacian_power(u, 0).terms() == u.terms()
    (_, c), = laplacian_power(u, 1).terms()
    assert c == pytest.approx(0.7 * -5 * np.pi**2)
    cst = laplacian_power(mode((0, 0), 3.0), 2)
    assert all(c == 0 for _, c in cst.terms())


def test_derivatives_match_fd():
    u = SpectralFunction.from_terms([((1, 2), 0.5), ((3, 0), -0.2)], 2)
    x = np.array([[0.31, 0.72]])
    h = 1e-6
    fd = [(u.evaluate(x + h * e) - u.evaluate(x - h * e))[0] / (2 * h) for e in np.eye(2)]
    assert u.gradient(x)[0] == pytest.approx(fd, rel=1e-7)
    lap = sum((u.evaluate(x + 1e-4 * e) - 2 * u.evaluate(x) + u.evaluate(x - 1e-4 * e))[0] / 1e-8 for e in np.eye(2))
    assert u.laplacian(x)[0] == pytest.approx(lap, rel=1e-5)


def test_exact_bundle_zero():
    spec = ProblemSpec(1, 2, "D", SpectralFunction.zero(2))
    x = np.random.default_rng(0).random((4, 2))
    b = exact_bundle(spec, "second")
    assert np.all(b.source.values(x) == 0)


def test_data_examples():
    spec = single_mode_spec(2, 1, "D")
    x = np.linspace(0, 1, 7)[:, None]
    assert data_f(spec).evaluate(x) == pytest.approx(np.pi**4 * np.cos(np.pi * x[:, 0]))
    neu = ProblemSpec(1, 2, "N", SpectralFunction.from_terms([((1, 2), 1.0), ((0, 3), 0.5)], 2))
    bg = boundary_grid(2, 6)
    assert np.max(np.abs(data_g(neu)(bg.nodes, bg.normals))) <= 1e-12
    dir2 = single_mode_spec(1, 1, "D", k=(2,))
    assert data_g(dir2)(np.array([[0.0]]), np.array([[-1.0]]))[0] == pytest.approx([1.0])


def test_barron_norm_examples():
    assert barron_norm(mode((1, 0)), 4) == pytest.approx(1 + np.pi**4)
    assert barron_norm(SpectralFunction.zero(2), 4) == 0.0
    u = SpectralFunction.from_terms([((1,), 2.0), ((2,), 1.0)], 1)
    assert barron_norm(u, 2) == pytest.approx(3 + 6 * np.pi**2)


def test_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(0, 1, "D", mode((1,)))
    with pytest.raises(ValueError):
        ProblemSpec(1, 2, "D", mode((1,)))
    with pytest.raises(ValueError):
        ProblemSpec(1, 1, "N", SpectralFunction.from_terms([((0,), 1.0), ((1,), 1.0)], 1))
    with pytest.raises(ValueError):
        ProblemSpec(1, 1, "D", mode((1,)), lam=0.0)


def test_spec_roundtrip():
    spec = ProblemSpec(2, 2, "R", SpectralFunction.from_terms([((1, 0), 0.5), ((1, 1), -0.25)], 2), lam=2.0)
    back = ProblemSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()
