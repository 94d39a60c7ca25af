"""Manufactured solutions on the cosine basis of the unit cube.

Every field is a finite sum of products of phase-shifted cosines,

    sum_j coeff_j * prod_i cos(pi k_ji x_i + s_ji pi/2),

which is closed under differentiation, so all derived quantities (iterated
Laplacians, gradients, traces, data) are exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    FIRST,
    BoundaryKind,
    FieldSource,
    FirstOrderBundle,
    SecondOrderBundle,
    check_system,
    trace_second,
)


def _shifted_cos(theta, shift):
    s = np.mod(shift, 4)
    return np.select(
        [s == 0, s == 1, s == 2],
        [np.cos(theta), -np.sin(theta), -np.cos(theta)],
        np.sin(theta),
    )


class SpectralFunction:
    """Finite cosine-mode expansion, optionally with derivative phase shifts.

    ``modes`` is an (M, d) array of nonnegative integer multi-indices and
    ``coeffs`` the matching expansion coefficients. ``shifts`` counts quarter
    phase shifts per axis and is zero for a plain cosine expansion.
    """

    def __init__(self, modes, coeffs, shifts=None, d: int | None = None):
        modes = np.asarray(modes, dtype=np.int64)
        if modes.ndim == 1:
            modes = modes.reshape(-1, d if d is not None else modes.size)
        if modes.size == 0:
            if d is None:
                raise ValueError("dimension needed for an empty expansion")
            modes = modes.reshape(0, d)
        coeffs = np.asarray(coeffs, dtype=float).reshape(modes.shape[0])
        shifts = np.zeros_like(modes) if shifts is None else np.asarray(shifts, dtype=np.int64).reshape(modes.shape)
        if np.any(modes < 0):
            raise ValueError("multi-indices must be nonnegative")
        # merge duplicate (mode, shift) pairs so multi-indices stay distinct
        key = np.concatenate([modes, np.mod(shifts, 4)], axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv.ravel(), coeffs)
        dd = modes.shape[1]
        self.modes = uniq[:, :dd]
        self.shifts = uniq[:, dd:]
        self.coeffs = merged

    @classmethod
    def from_terms(cls, terms, d: int) -> "SpectralFunction":
        """Build from ``[(multi_index, coeff), ...]``."""
        terms = list(terms)
        if not terms:
            return cls.zero(d)
        modes = np.array([list(k) for k, _ in terms], dtype=np.int64).reshape(len(terms), d)
        return cls(modes, [c for _, c in terms])

    @classmethod
    def zero(cls, d: int) -> "SpectralFunction":
        return cls(np.zeros((0, d), dtype=np.int64), [], d=d)

    @property
    def d(self) -> int:
        return self.modes.shape[1]

    @property
    def is_cosine(self) -> bool:
        return not np.any(self.shifts)

    def terms(self):
        return [(tuple(int(v) for v in k), float(c)) for k, c in zip(self.modes, self.coeffs)]

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if len(self.coeffs) == 0:
            return np.zeros(x.shape[0])
        theta = np.pi * x[:, None, :] * self.modes[None, :, :]
        return np.prod(_shifted_cos(theta, self.shifts[None]), axis=2) @ self.coeffs

    __call__ = evaluate

    def derivative(self, axis: int) -> "SpectralFunction":
        kax = self.modes[:, axis]
        keep = kax != 0
        shifts = self.shifts.copy()
        shifts[:, axis] += 1
        return SpectralFunction(
            self.modes[keep], (self.coeffs * np.pi * kax)[keep], shifts[keep], d=self.d
        )

    def gradient_functions(self) -> list["SpectralFunction"]:
        return [self.derivative(i) for i in range(self.d)]

    def gradient(self, x) -> np.ndarray:
        return np.stack([g.evaluate(x) for g in self.gradient_functions()], axis=-1)

    def eigenvalues(self) -> np.ndarray:
        """Laplacian multiplier -pi^2 |k|_2^2 of each mode."""
        return -np.pi**2 * np.sum(self.modes**2, axis=1).astype(float)

    def laplacian_power(self, j: int) -> "SpectralFunction":
        if j < 0:
            raise ValueError("power must be nonnegative")
        return SpectralFunction(self.modes, self.coeffs * self.eigenvalues() ** j, self.shifts, d=self.d)

    def laplacian(self, x) -> np.ndarray:
        return self.laplacian_power(1).evaluate(x)

    def scaled(self, factor: float) -> "SpectralFunction":
        return SpectralFunction(self.modes, factor * self.coeffs, self.shifts, d=self.d)

    def __add__(self, other: "SpectralFunction") -> "SpectralFunction":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return SpectralFunction(
            np.concatenate([self.modes, other.modes]),
            np.concatenate([self.coeffs, other.coeffs]),
            np.concatenate([self.shifts, other.shifts]),
            d=self.d,
        )

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def constant_coefficient(self) -> float:
        mask = np.all(self.modes == 0, axis=1)
        return float(self.coeffs[mask].sum())

    def __repr__(self):
        return f"SpectralFunction(d={self.d}, terms={self.terms()})"


def laplacian_power(u: SpectralFunction, j: int) -> SpectralFunction:
    return u.laplacian_power(j)


def barron_norm(u: SpectralFunction, s: float) -> float:
    """sum_k (1 + pi^s |k|_1^s) |u_hat(k)|."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if not u.is_cosine:
        raise ValueError("Barron norm is defined for plain cosine expansions")
    k1 = np.sum(u.modes, axis=1).astype(float)
    return float(np.sum((1.0 + np.pi**s * k1**s) * np.abs(u.coeffs)))


class SpectralSource(FieldSource):
    """Field source whose components are spectral functions."""

    def __init__(self, components):
        self.components = list(components)
        if not self.components:
            raise ValueError("need at least one component")
        self.d = self.components[0].d
        self.width = len(self.components)
        self._grads = [c.gradient_functions() for c in self.components]
        self._laps = [c.laplacian_power(1) for c in self.components]

    def values(self, x):
        return np.stack([c.evaluate(x) for c in self.components], axis=-1)

    def gradients(self, x):
        return np.stack(
            [np.stack([g.evaluate(x) for g in gs], axis=-1) for gs in self._grads], axis=1
        )

    def laplacians(self, x):
        return np.stack([c.evaluate(x) for c in self._laps], axis=-1)


@dataclass
class ProblemSpec:
    """Polyharmonic problem lap^n u = f on [0,1]^d with a manufactured solution."""

    n: int
    d: int
    kind: BoundaryKind
    u_star: SpectralFunction
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        self.kind = BoundaryKind.parse(self.kind)
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if self.u_star.d != self.d:
            raise ValueError("u_star dimension does not match d")
        if not self.u_star.is_cosine:
            raise ValueError("u_star must be a plain cosine expansion")
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("penalties lambda and mu must be positive")
        if self.kind is BoundaryKind.NEUMANN and abs(self.u_star.constant_coefficient()) > 0:
            raise ValueError("Neumann problems need a zero-mean u_star (no constant mode)")

    @property
    def boundary_measure(self) -> float:
        return 2.0 * self.d

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "kind": self.kind.value,
            "lambda": self.lam,
            "mu": self.mu,
            "modes": [{"k": list(k), "coeff": c} for k, c in self.u_star.terms()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProblemSpec":
        d = int(doc["d"])
        terms = [(tuple(m["k"]), float(m["coeff"])) for m in doc["modes"]]
        for k, _ in terms:
            if len(k) != d:
                raise ValueError(f"mode {k} does not have dimension {d}")
        return cls(
            n=int(doc["n"]),
            d=d,
            kind=doc["kind"],
            u_star=SpectralFunction.from_terms(terms, d),
            lam=float(doc.get("lambda", 1.0)),
            mu=float(doc.get("mu", 1.0)),
        )


def single_mode_spec(n: int, d: int, kind, k=None, coeff: float = 1.0, **kw) -> ProblemSpec:
    k = (1,) * d if k is None else tuple(k)
    return ProblemSpec(n, d, kind, SpectralFunction.from_terms([(k, coeff)], d), **kw)


def exact_components(spec: ProblemSpec, system: str) -> list[SpectralFunction]:
    comps = []
    for k in range(spec.n):
        lap_k = spec.u_star.laplacian_power(k)
        comps.append(lap_k)
        if check_system(system) == FIRST:
            comps.extend(lap_k.gradient_functions())
    return comps


def exact_bundle(spec: ProblemSpec, system: str):
    """Bundle of the true fields (lap^k u*, and grad lap^k u* for the first-order system)."""
    source = SpectralSource(exact_components(spec, system))
    if check_system(system) == FIRST:
        return FirstOrderBundle(source, spec.n)
    return SecondOrderBundle(source, spec.n)


def data_f(spec: ProblemSpec) -> SpectralFunction:
    return spec.u_star.laplacian_power(spec.n)


class BoundaryData:
    """g_alpha: the n exact traces of u* at boundary points, (N, n)."""

    def __init__(self, spec: ProblemSpec):
        self.kind = spec.kind
        self._bundle = exact_bundle(spec, "second")

    def __call__(self, x_b, normals) -> np.ndarray:
        return trace_second(self._bundle, x_b, normals, self.kind)


def data_g(spec: ProblemSpec) -> BoundaryData:
    return BoundaryData(spec)
