"""Field bundles of the mixed residual formulation and their operators.

A *source* evaluates a bank of scalar fields at points: values (N, w),
first derivatives (N, w, d) and, where available, Laplacians (N, w).
Networks and exact spectral fields are both sources.

First-order bundles pack ``(phi_0, psi_0, ..., phi_{n-1}, psi_{n-1})`` with
each ``psi_k`` a d-vector, so component ``phi_k`` sits at column ``k(d+1)``.
Second-order bundles pack ``(phi_0, ..., phi_{n-1})``.
"""
from __future__ import annotations

import enum

import numpy as np

from .network import ShallowNetwork

FIRST = "first"
SECOND = "second"


class BoundaryKind(str, enum.Enum):
    DIRICHLET = "D"
    NEUMANN = "N"
    ROBIN = "R"

    @classmethod
    def parse(cls, value) -> "BoundaryKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for kind, names in (
            (cls.DIRICHLET, ("d", "dirichlet")),
            (cls.NEUMANN, ("n", "neumann")),
            (cls.ROBIN, ("r", "robin")),
        ):
            if text in names:
                return kind
        raise ValueError(f"unknown boundary kind {value!r}")


def check_system(system: str) -> str:
    if system not in (FIRST, SECOND):
        raise ValueError(f"system must be {FIRST!r} or {SECOND!r}, got {system!r}")
    return system


class FieldSource:
    """Deterministic evaluator of ``width`` scalar fields on R^d."""

    width: int
    d: int

    def values(self, x) -> np.ndarray:
        raise NotImplementedError

    def gradients(self, x) -> np.ndarray:
        raise NotImplementedError

    def laplacians(self, x) -> np.ndarray:
        raise NotImplementedError


class NetworkSource(FieldSource):
    def __init__(self, net: ShallowNetwork):
        self.net = net
        self.width = net.p
        self.d = net.d

    def values(self, x):
        return self.net.forward(x)

    def gradients(self, x):
        return self.net.input_jacobian(x)

    def laplacians(self, x):
        return self.net.input_laplacian(x)


class CombinationSource(FieldSource):
    """Pointwise linear combination ``sum_i w_i * source_i``."""

    def __init__(self, terms):
        self.terms = [(float(w), s) for w, s in terms]
        widths = {s.width for _, s in self.terms}
        dims = {s.d for _, s in self.terms}
        if len(widths) != 1 or len(dims) != 1:
            raise ValueError("combined sources must share width and dimension")
        self.width = widths.pop()
        self.d = dims.pop()

    def _combine(self, method, x):
        out = None
        for w, s in self.terms:
            v = w * getattr(s, method)(x)
            out = v if out is None else out + v
        return out

    def values(self, x):
        return self._combine("values", x)

    def gradients(self, x):
        return self._combine("gradients", x)

    def laplacians(self, x):
        return self._combine("laplacians", x)


class _Bundle:
    system: str

    def __init__(self, source: FieldSource, n: int):
        if n < 1:
            raise ValueError("half-order n must be >= 1")
        self.source = source
        self.n = n
        self.d = source.d
        if source.width != self.expected_width(n, source.d):
            raise ValueError(
                f"{type(self).__name__} with n={n}, d={source.d} needs width "
                f"{self.expected_width(n, source.d)}, source has {source.width}"
            )

    @staticmethod
    def expected_width(n: int, d: int) -> int:
        raise NotImplementedError

    @property
    def network(self) -> ShallowNetwork | None:
        return self.source.net if isinstance(self.source, NetworkSource) else None

    def combine(self, other: "_Bundle", w_self: float = 1.0, w_other: float = -1.0):
        if type(other) is not type(self) or other.n != self.n or other.d != self.d:
            raise ValueError("bundles must share system, n and d")
        return type(self)(CombinationSource([(w_self, self.source), (w_other, other.source)]), self.n)

    def scaled(self, factor: float):
        return type(self)(CombinationSource([(factor, self.source)]), self.n)

    def __sub__(self, other):
        return self.combine(other)


class FirstOrderBundle(_Bundle):
    system = FIRST

    @staticmethod
    def expected_width(n, d):
        return n * (d + 1)

    def phi_index(self, k: int) -> int:
        return k * (self.d + 1)

    def phi_columns(self) -> np.ndarray:
        return np.arange(self.n) * (self.d + 1)

    def psi_columns(self, k: int) -> slice:
        s = k * (self.d + 1) + 1
        return slice(s, s + self.d)

    def split(self, vals, jac):
        """phi (N,n), psi (N,n,d), grad phi (N,n,d), div psi (N,n)."""
        N, d, n = vals.shape[0], self.d, self.n
        blocks = vals.reshape(N, n, d + 1)
        jblocks = jac.reshape(N, n, d + 1, d)
        phi = blocks[:, :, 0]
        psi = blocks[:, :, 1:]
        grad_phi = jblocks[:, :, 0, :]
        div_psi = np.trace(jblocks[:, :, 1:, :], axis1=2, axis2=3)
        return phi, psi, grad_phi, div_psi


class SecondOrderBundle(_Bundle):
    system = SECOND

    @staticmethod
    def expected_width(n, d):
        return n

    def phi_columns(self) -> np.ndarray:
        return np.arange(self.n)


def network_bundle(net: ShallowNetwork, n: int, system: str):
    cls = FirstOrderBundle if check_system(system) == FIRST else SecondOrderBundle
    return cls(NetworkSource(net), n)


# -- interior operators ---------------------------------------------------------


def _p_residual(vals, jac, n, d):
    N = vals.shape[0]
    blocks = vals.reshape(N, n, d + 1)
    jblocks = jac.reshape(N, n, d + 1, d)
    out = np.empty((N, n, d + 1))
    out[:, :, :d] = jblocks[:, :, 0, :] - blocks[:, :, 1:]
    out[:, :, d] = np.trace(jblocks[:, :, 1:, :], axis1=2, axis2=3)
    out[:, :-1, d] -= blocks[:, 1:, 0]
    return out.reshape(N, n * (d + 1))


def _p_vjp(cot, n, d):
    """Pull a cotangent of the P-residual back to (values, gradients)."""
    N = cot.shape[0]
    cot = cot.reshape(N, n, d + 1)
    cv = np.zeros((N, n, d + 1))
    cj = np.zeros((N, n, d + 1, d))
    cj[:, :, 0, :] += cot[:, :, :d]
    cv[:, :, 1:] -= cot[:, :, :d]
    idx = np.arange(d)
    cj[:, :, 1 + idx, idx] += cot[:, :, d][:, :, None]
    cv[:, 1:, 0] -= cot[:, :-1, d]
    return cv.reshape(N, n * (d + 1)), cj.reshape(N, n * (d + 1), d)


def _pstar_residual(vals, lap):
    out = lap.copy()
    out[:, :-1] -= vals[:, 1:]
    return out


def _pstar_vjp(cot):
    cv = np.zeros_like(cot)
    cv[:, 1:] -= cot[:, :-1]
    return cv, cot.copy()


def apply_P(bundle: FirstOrderBundle, x) -> np.ndarray:
    """(grad phi_0 - psi_0, div psi_0 - phi_1, ..., grad phi_{n-1} - psi_{n-1}, div psi_{n-1})."""
    if not isinstance(bundle, FirstOrderBundle):
        raise TypeError("apply_P needs a first-order bundle")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    vals = bundle.source.values(x)
    jac = bundle.source.gradients(x)
    return _p_residual(vals, jac, bundle.n, bundle.d)


def apply_Pstar(bundle: SecondOrderBundle, x) -> np.ndarray:
    """(lap phi_0 - phi_1, ..., lap phi_{n-2} - phi_{n-1}, lap phi_{n-1})."""
    if not isinstance(bundle, SecondOrderBundle):
        raise TypeError("apply_Pstar needs a second-order bundle")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return _pstar_residual(bundle.source.values(x), bundle.source.laplacians(x))


def interior_residual(bundle, x) -> np.ndarray:
    if isinstance(bundle, FirstOrderBundle):
        return apply_P(bundle, x)
    return apply_Pstar(bundle, x)


# -- traces -----------------------------------------------------------------------


def _dirichlet_neumann(kind: BoundaryKind):
    kind = BoundaryKind.parse(kind)
    return kind in (BoundaryKind.DIRICHLET, BoundaryKind.ROBIN), kind in (
        BoundaryKind.NEUMANN,
        BoundaryKind.ROBIN,
    )


def _trace_first(vals, normals, n, d, kind):
    use_d, use_n = _dirichlet_neumann(kind)
    blocks = vals.reshape(vals.shape[0], n, d + 1)
    out = np.zeros((vals.shape[0], n))
    if use_d:
        out += blocks[:, :, 0]
    if use_n:
        out += np.einsum("nkl,nl->nk", blocks[:, :, 1:], normals)
    return out


def _trace_first_vjp(cot, normals, n, d, kind):
    use_d, use_n = _dirichlet_neumann(kind)
    N = cot.shape[0]
    cv = np.zeros((N, n, d + 1))
    if use_d:
        cv[:, :, 0] += cot
    if use_n:
        cv[:, :, 1:] += cot[:, :, None] * normals[:, None, :]
    return cv.reshape(N, n * (d + 1)), None


def _trace_second(vals, jac, normals, kind):
    use_d, use_n = _dirichlet_neumann(kind)
    out = np.zeros_like(vals)
    if use_d:
        out += vals
    if use_n:
        out += np.einsum("nkl,nl->nk", jac, normals)
    return out


def _trace_second_vjp(cot, normals, kind):
    use_d, use_n = _dirichlet_neumann(kind)
    cv = cot.copy() if use_d else np.zeros_like(cot)
    cj = cot[:, :, None] * normals[:, None, :] if use_n else None
    return cv, cj


def _boundary_args(x_b, normal):
    x_b = np.atleast_2d(np.asarray(x_b, dtype=float))
    normal = np.asarray(normal, dtype=float)
    normal = np.broadcast_to(np.atleast_2d(normal), x_b.shape)
    return x_b, normal


def trace_first(bundle: FirstOrderBundle, x_b, normal, kind) -> np.ndarray:
    """Dirichlet: phi_k; Neumann: n . psi_k; Robin: the sum of both."""
    x_b, normal = _boundary_args(x_b, normal)
    return _trace_first(bundle.source.values(x_b), normal, bundle.n, bundle.d, kind)


def trace_second(bundle: SecondOrderBundle, x_b, normal, kind) -> np.ndarray:
    """Dirichlet: phi_k; Neumann: d phi_k / dn; Robin: the sum of both."""
    x_b, normal = _boundary_args(x_b, normal)
    _, use_n = _dirichlet_neumann(kind)
    jac = bundle.source.gradients(x_b) if use_n else None
    return _trace_second(bundle.source.values(x_b), jac, normal, kind)


def boundary_trace(bundle, x_b, normal, kind) -> np.ndarray:
    if isinstance(bundle, FirstOrderBundle):
        return trace_first(bundle, x_b, normal, kind)
    return trace_second(bundle, x_b, normal, kind)
