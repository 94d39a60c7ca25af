"""Projected first-order training of mixed residual networks."""
from __future__ import annotations

import ctypes
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import FIRST, check_system, network_bundle
from .loss import LossBreakdown, PointSet, empirical_loss, loss_and_gradient
from .network import ShallowNetwork, project_to_class
from .problem import ProblemSpec, barron_norm, exact_bundle
from .quadrature import ErrorNorms, error_norms, network_grid, norm_parts, sample_set

log = logging.getLogger(__name__)

# first-order system uses ReQU, second-order ReCU
ACTIVATION = {"first": 2, "second": 3}


class TrainingDiverged(RuntimeError):
    pass


_ALLOCATOR_TUNED = False


def tune_allocator() -> bool:
    """Keep large freed blocks in the glibc heap.

    Training allocates many same-sized (N, m) temporaries per step; by default
    each one is returned to the OS and faulted back in, which roughly doubles
    the step time. No-op off glibc.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6")
        # M_MMAP_THRESHOLD = -3, M_TRIM_THRESHOLD = -1
        ok = libc.mallopt(-3, 256 << 20) == 1 and libc.mallopt(-1, 512 << 20) == 1
    except (OSError, AttributeError):
        ok = False
    _ALLOCATOR_TUNED = ok
    return ok


@dataclass
class OptimizerConfig:
    method: str = "adam"
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    resample: bool = False
    seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        if self.method not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, size, lr, **_):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


def make_optimizer(cfg: OptimizerConfig, size: int):
    if cfg.method == "adam":
        return Adam(size, cfg.step_size, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(size, cfg.step_size)


def init_network(m: int, d: int, out_dim: int, k: int, B: float, seed=None) -> ShallowNetwork:
    """Random class-feasible network: inner rows inside the unit ball, biases in
    [-1, 1], outer weights of scale B/m and zero output bias."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(m, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = 1.0 - rng.random(m)  # (0, 1]
    W = dirs * radii[:, None]
    b = rng.uniform(-1.0, 1.0, size=m)
    scale = B / m * min(1.0, 4.0 / out_dim)
    a = rng.uniform(-scale, scale, size=(m, out_dim))
    return ShallowNetwork(k, np.zeros(out_dim), a, W, b, B)


def class_bound(spec: ProblemSpec, system: str) -> float:
    """Barron norm of u* of order 2n+2 (first-order) or 2n+3 (second-order)."""
    s = 2 * spec.n + (2 if check_system(system) == FIRST else 3)
    return max(barron_norm(spec.u_star, s), 1e-12)


def output_width(spec: ProblemSpec, system: str) -> int:
    return spec.n * (spec.d + 1) if check_system(system) == FIRST else spec.n


@dataclass
class TrainReport:
    trajectory: list = field(default_factory=list)  # rows: step, interior, boundary, mean_penalty, total
    initial: LossBreakdown | None = None
    final: LossBreakdown | None = None
    errors: ErrorNorms | None = None
    relative_h1: list = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0
    steps_run: int = 0
    diverged: bool = False

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "steps_run": self.steps_run,
            "diverged": self.diverged,
            "initial_loss": self.initial.as_row() if self.initial else None,
            "final_loss": self.final.as_row() if self.final else None,
            "errors": self.errors.to_dict() if self.errors else None,
            "relative_h1": list(self.relative_h1),
            "wall_time": self.wall_time,
        }


def relative_h1_errors(bundle, spec: ProblemSpec, system: str, grid=None):
    """Squared error norms and ||phi_k - phi_k*||_{H1} / ||phi_k*||_{H1} per k."""
    grid = network_grid(spec.d) if grid is None else grid
    exact = exact_bundle(spec, system)
    errs = error_norms(bundle, exact, grid)
    ref = norm_parts(exact, grid)
    ref_h1 = ref.phi + ref.grad_phi
    rel = np.sqrt(errs.h1_sq / np.where(ref_h1 > 0, ref_h1, 1.0))
    return errs, rel.tolist()


def train(
    spec: ProblemSpec,
    system: str,
    m: int,
    N: int,
    N_hat: int | None = None,
    opt: OptimizerConfig | None = None,
    net: ShallowNetwork | None = None,
    grid=None,
    evaluate: bool = True,
):
    """Minimise the empirical loss over the constrained class by projected
    Adam/SGD. Returns the trained bundle and a :class:`TrainReport`."""
    check_system(system)
    tune_allocator()
    opt = OptimizerConfig() if opt is None else opt
    start = time.perf_counter()
    rng = np.random.default_rng(opt.seed)
    init_seed, sample_seed = rng.integers(0, 2**63 - 1, size=2)
    if net is None:
        net = init_network(
            m, spec.d, output_width(spec, system), ACTIVATION[system], class_bound(spec, system), int(init_seed)
        )
    sample_rng = np.random.default_rng(int(sample_seed))
    samples = sample_set(spec.d, N, N_hat, sample_rng)
    pts = PointSet.from_samples(samples).with_data(spec)
    optimizer = make_optimizer(opt, net.n_params)
    report = TrainReport(seed=opt.seed)

    theta = net.get_params()
    initial = None
    for step in range(opt.steps):
        if opt.resample and step > 0:
            samples = sample_set(spec.d, N, N_hat, sample_rng)
            pts = PointSet.from_samples(samples).with_data(spec)
        loss, grad = loss_and_gradient(network_bundle(net, spec.n, system), spec, pts)
        if initial is None:
            initial = loss
        elif not np.isfinite(loss.total) or loss.total > 1e6 * max(initial.total, 1e-300):
            report.diverged = True
            report.steps_run = step
            log.warning("training diverged at step %d (loss %.3e)", step, loss.total)
            raise TrainingDiverged(f"loss {loss.total:.3e} exceeded 1e6 x initial at step {step}")
        if step % opt.log_interval == 0:
            report.trajectory.append({"step": step, **loss.as_row()})
        theta = optimizer.step(theta, grad)
        net = project_to_class(net.with_params(theta))
        theta = net.get_params()

    bundle = network_bundle(net, spec.n, system)
    final = empirical_loss(bundle, spec, pts)
    report.initial = initial if initial is not None else final
    report.final = final
    report.steps_run = opt.steps
    report.trajectory.append({"step": opt.steps, **final.as_row()})
    if evaluate:
        report.errors, report.relative_h1 = relative_h1_errors(bundle, spec, system, grid)
    report.wall_time = time.perf_counter() - start
    return bundle, report
