import sys

import numpy as np
import pytest

from mimnet.loss import LossBreakdown
from mimnet.network import project_to_class
from mimnet.problem import single_mode_spec
from mimnet.train import OptimizerConfig, TrainingDiverged, class_bound, init_network, train

# the package re-exports train(), which shadows the submodule attribute
T = sys.modules["mimnet.train"]


def test_init_network_feasible():
    net = init_network(32, 3, 4, 2, 5.0, seed=0)
    assert np.all(np.linalg.norm(net.W, axis=1) <= 1 + 1e-12)
    assert np.all(np.abs(net.b) <= 1)
    assert np.abs(net.a).sum(axis=0).max() <= 4 * 5.0
    p = project_to_class(net).get_params()
    assert np.array_equal(p, net.get_params())
    assert np.array_equal(init_network(4, 2, 3, 2, 1.0, seed=9).get_params(), init_network(4, 2, 3, 2, 1.0, seed=9).get_params())
    with pytest.raises(ValueError):
        init_network(0, 2, 3, 2, 1.0)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(method="lbfgs")
    with pytest.raises(ValueError):
        OptimizerConfig(step_size=0)
    with pytest.raises(ValueError):
        OptimizerConfig(steps=-1)


def test_class_bound():
    spec = single_mode_spec(1, 1, "D")
    assert class_bound(spec, "first") == pytest.approx(1 + np.pi**4)
    assert class_bound(spec, "second") == pytest.approx(1 + np.pi**5)


def test_zero_step_returns_initial():
    spec = single_mode_spec(1, 1, "D")
    net = init_network(8, 1, 2, 2, class_bound(spec, "first"), seed=1)
    bundle, rep = train(spec, "first", 8, 64, opt=OptimizerConfig(steps=0), net=net)
    assert np.array_equal(bundle.network.get_params(), net.get_params())
    assert rep.initial == rep.final


def test_short_run_decreases_loss_and_is_reproducible():
    spec = single_mode_spec(1, 1, "D")
    opt = OptimizerConfig(steps=300, step_size=1e-2, seed=3, log_interval=100)
    b1, r1 = train(spec, "first", 16, 256, opt=opt)
    b2, r2 = train(spec, "first", 16, 256, opt=opt)
    assert r1.final.total < 0.2 * r1.initial.total
    assert np.array_equal(b1.network.get_params(), b2.network.get_params())
    assert [row["step"] for row in r1.trajectory] == [0, 100, 200, 300]


def test_second_order_and_resample():
    spec = single_mode_spec(1, 2, "N")
    opt = OptimizerConfig(steps=50, step_size=1e-2, resample=True, method="sgd")
    bundle, rep = train(spec, "second", 8, 128, opt=opt, evaluate=False)
    assert bundle.network.k == 3
    assert rep.steps_run == 50


def test_divergence_guard(monkeypatch):
    calls = {"n": 0}
    real = T.loss_and_gradient

    def fake(bundle, spec, pts):
        loss, grad = real(bundle, spec, pts)
        calls["n"] += 1
        scale = 1.0 if calls["n"] == 1 else 1e7
        return LossBreakdown(loss.interior * scale, loss.boundary * scale), grad

    monkeypatch.setattr(T, "loss_and_gradient", fake)
    with pytest.raises(TrainingDiverged):
        train(single_mode_spec(1, 1, "D"), "first", 4, 32, opt=OptimizerConfig(steps=5))
