import numpy as np
import pytest

from mimnet.fields import FirstOrderBundle
from mimnet.problem import SpectralFunction, SpectralSource, exact_bundle, single_mode_spec
from mimnet.quadrature import (
    QuadGrid,
    boundary_grid,
    error_norms,
    mc_integrate,
    sample_boundary,
    sample_interior,
    sample_set,
    tensor_grid,
)
from mimnet.analysis import loglog_slope


def test_interior_deterministic_and_mean():
    assert np.array_equal(sample_interior(1, 3, 7), sample_interior(1, 3, 7))
    x = sample_interior(2, 100_000, 1)
    assert np.all((x > 0) & (x < 1))
    assert np.allclose(x.mean(axis=0), 0.5, atol=0.01)


def test_boundary_d1():
    b = sample_boundary(1, 200, 3)
    pts = b.points[:, 0]
    assert set(np.unique(pts)) <= {0.0, 1.0}
    assert np.all(b.normals[:, 0] == np.where(pts == 1.0, 1.0, -1.0))


def test_boundary_face_frequencies():
    b = sample_boundary(2, 100_000, 5)
    freq = np.bincount(b.faces, minlength=4) / len(b)
    assert np.allclose(freq, 0.25, atol=0.01)
    axis = b.faces // 2
    side = b.faces % 2
    assert np.all(b.points[np.arange(len(b)), axis] == side)


def test_sample_set_shapes():
    s = sample_set(3, 50, 20, seed=0)
    assert s.interior.shape == (50, 3)
    assert s.d == 3


def test_tensor_grid_examples():
    g = tensor_grid(1, 32)
    assert g.integrate(np.cos(np.pi * g.nodes[:, 0]) ** 2) == pytest.approx(0.5, abs=1e-12)
    assert tensor_grid(3, 4).weights.sum() == pytest.approx(1.0)
    bg = boundary_grid(2, 8)
    assert bg.weights.sum() == pytest.approx(4.0)
    assert np.allclose(np.abs(bg.normals).sum(axis=1), 1.0)


def test_error_norm_examples():
    spec = single_mode_spec(1, 1, "D")
    e = exact_bundle(spec, "first")
    g = tensor_grid(1, 64)
    assert error_norms(e, e, g).total <= 1e-12
    zero = FirstOrderBundle(SpectralSource([SpectralFunction.zero(1)] * 2), 1)
    errs = error_norms(zero, e, g)
    assert errs.h1_sq[0] == pytest.approx(0.5 + np.pi**2 / 2)
    one = SpectralFunction.from_terms([((0, 0), 1.0)], 2)
    z2 = SpectralFunction.zero(2)
    b = FirstOrderBundle(SpectralSource([z2, one, z2]), 1)
    zb = FirstOrderBundle(SpectralSource([z2, z2, z2]), 1)
    assert error_norms(b, zb, tensor_grid(2, 8)).hdiv_sq[0] == pytest.approx(1.0)


def test_empty_grid_rejected():
    spec = single_mode_spec(1, 1, "D")
    e = exact_bundle(spec, "first")
    with pytest.raises(ValueError):
        error_norms(e, e, QuadGrid(np.zeros((0, 1)), np.zeros(0)))


def test_mc_rate():
    def h(x):
        return np.cos(np.pi * x[:, 0]) ** 2 * (1 + x[:, 1])

    g = tensor_grid(2, 64)
    ref = g.integrate(h(g.nodes))
    Ns = [2**j for j in range(6, 15, 2)]
    rms = []
    for N in Ns:
        errs = [mc_integrate(h, 2, N, seed=1000 * N + r) - ref for r in range(64)]
        rms.append(np.sqrt(np.mean(np.square(errs))))
    assert abs(loglog_slope(Ns, rms) + 0.5) <= 0.15
