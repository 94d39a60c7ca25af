"""Two-layer ReLU^k networks with analytic input and parameter derivatives.

A network maps x in R^d to

    y = c + sum_i a_i * relu_k(W_i . x + b_i)     (y in R^p)

Evaluation is batched: points are an (N, d) array. Derivatives at a kink
(pre-activation exactly zero) take the left, zero branch.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np


class UnsupportedDerivative(ValueError):
    """Raised when a derivative order above the activation power is requested."""


def _check_power(k: int) -> None:
    if k not in (1, 2, 3):
        raise ValueError(f"activation power must be 1, 2 or 3, got {k}")


def relu_power(z, k: int, order: int = 0) -> np.ndarray:
    """Derivative of order ``order`` of ReLU^k, elementwise.

    Orders above ``k`` are zero almost everywhere and are returned as zeros;
    callers that need the strict contract use :func:`activation_eval`.
    """
    z = np.asarray(z, dtype=float)
    if order > k:
        return np.zeros_like(z)
    coef = float(math.factorial(k) // math.factorial(k - order))
    if order == k:
        return coef * (z > 0.0)
    zp = np.maximum(z, 0.0)
    out = zp if k - order == 1 else (zp * zp if k - order == 2 else zp * zp * zp)
    return coef * out if coef != 1.0 else out


def activation_eval(k: int, z: float, order: int = 0) -> float:
    _check_power(k)
    if order < 0 or order > k:
        raise UnsupportedDerivative(f"derivative order {order} exceeds activation power {k}")
    return float(relu_power(z, k, order))


@dataclass
class ShallowNetwork:
    """Parameters of a two-layer ReLU^k network.

    ``a`` is (m, p), ``W`` is (m, d), ``b`` is (m,), ``c`` is (p,).
    ``barron_bound`` is the B entering the class constraints
    ``|W_i|_2 <= 1, |b_i| <= 1, sum_i |a_i|_1 <= 4B, |c|_inf <= 2B``.
    """

    k: int
    c: np.ndarray
    a: np.ndarray
    W: np.ndarray
    b: np.ndarray
    barron_bound: float = 1.0
    constrained: bool = True

    def __post_init__(self):
        _check_power(self.k)
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float)).copy()
        p = self.c.shape[0]
        self.a = np.asarray(self.a, dtype=float).reshape(-1, p).copy()
        m = self.a.shape[0]
        self.W = np.asarray(self.W, dtype=float).copy()
        if self.W.ndim == 1 and m:
            self.W = self.W.reshape(m, -1)
        if self.W.ndim != 2 or self.W.shape[0] != m:
            raise ValueError("a, W and b must have the same number of neurons")
        self.b = np.asarray(self.b, dtype=float).reshape(m).copy()
        if self.barron_bound < 0:
            raise ValueError("barron_bound must be nonnegative")

    @classmethod
    def empty(cls, k: int, d: int, p: int, c=None, barron_bound: float = 1.0) -> "ShallowNetwork":
        c = np.zeros(p) if c is None else c
        return cls(k, c, np.zeros((0, p)), np.zeros((0, d)), np.zeros(0), barron_bound)

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def p(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n_params(self) -> int:
        return self.p + self.m * (self.p + self.d + 1)

    # -- evaluation -------------------------------------------------------

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {x.shape[1]}")
        return x

    def _acts(self, x, order: int):
        """Activation derivatives 0..order at ``x``; reused while ``x`` is the
        same array object (parameters never change in place)."""
        cache = self.__dict__.get("_cache")
        if cache is None or cache[0] is not x:
            xp = self._points(x)
            # writing into a preallocated buffer is much cheaper than a fresh
            # matmul result for tall, skinny products
            z = np.empty((xp.shape[0], self.m))
            np.dot(xp, self.W.T, out=z)
            z += self.b
            cache = (x, xp, z, {})
            self.__dict__["_cache"] = cache
        _, xp, z, acts = cache
        k = self.k
        for o in range(order + 1):
            if o in acts:
                continue
            if o > k:
                acts[o] = np.zeros_like(z)
            elif o == k:
                step = np.empty_like(z)
                np.copyto(step, z > 0.0)
                if k > 1:
                    step *= math.factorial(k)
                acts[o] = step
            else:
                if "zp" not in acts:
                    acts["zp"] = np.maximum(z, 0.0, out=np.empty_like(z))
                zp = acts["zp"]
                if k - o == 1:
                    acts[o] = zp if o == 0 else np.multiply(zp, float(math.factorial(k)), out=np.empty_like(z))
                else:
                    if "zp2" not in acts:
                        acts["zp2"] = np.multiply(zp, zp, out=np.empty_like(z))
                    zp2 = acts["zp2"]
                    if k - o == 2:
                        acts[o] = zp2 if o == 0 else np.multiply(zp2, float(k), out=np.empty_like(z))
                    else:
                        acts[o] = np.multiply(zp2, zp, out=np.empty_like(z))
        return xp, acts

    def preactivation(self, x) -> np.ndarray:
        return self._points(x) @ self.W.T + self.b

    def forward(self, x) -> np.ndarray:
        """Outputs at points ``x``; (N, p)."""
        _, acts = self._acts(x, 0)
        return self.c + acts[0] @ self.a

    def _outer_aw(self) -> np.ndarray:
        """K[(j, l), i] = a_ij * W_il, shape (p*d, m)."""
        return (self.a[:, :, None] * self.W[:, None, :]).reshape(self.m, self.p * self.d).T

    def input_jacobian(self, x) -> np.ndarray:
        """dy_j/dx_l at each point; (N, p, d)."""
        xp, acts = self._acts(x, 1)
        return (acts[1] @ self._outer_aw().T).reshape(xp.shape[0], self.p, self.d)

    def input_laplacian(self, x) -> np.ndarray:
        """Laplacian of each output; (N, p)."""
        if self.k < 2:
            raise UnsupportedDerivative("the Laplacian of a ReLU network is not defined pointwise")
        _, acts = self._acts(x, 2)
        return (acts[2] * np.sum(self.W**2, axis=1)) @ self.a

    def parameter_backprop(self, x, cot_y=None, cot_jac=None, cot_lap=None) -> np.ndarray:
        """Gradient wrt the flat parameters of
        ``<cot_y, y> + <cot_jac, dy/dx> + <cot_lap, lap y>`` summed over points.

        Cotangent shapes are (N, p), (N, p, d) and (N, p); ``None`` means zero.
        """
        p, d, m = self.p, self.d, self.m
        if cot_lap is not None and self.k < 2:
            raise UnsupportedDerivative("Laplacian cotangent needs activation power >= 2")
        order = 3 if cot_lap is not None else (2 if cot_jac is not None else 1)
        x, acts = self._acts(x, order)
        n_pts = x.shape[0]
        s1 = acts[1]
        g_c = np.zeros(p)
        g_a = np.zeros((m, p))
        g_W = np.zeros((m, d))
        g_b = np.zeros(m)
        # accumulated coefficient of W_i . x in the backward pass, (N, m)
        dz = np.zeros((n_pts, m))
        if cot_y is not None:
            cot_y = np.asarray(cot_y, dtype=float).reshape(n_pts, p)
            g_c += cot_y.sum(axis=0)
            g_a += acts[0].T @ cot_y
            dz += (cot_y @ self.a.T) * s1
        if cot_jac is not None:
            cj = np.asarray(cot_jac, dtype=float).reshape(n_pts, p * d)
            M = (s1.T @ cj).reshape(m, p, d)
            g_a += np.sum(M * self.W[:, None, :], axis=2)
            g_W += np.sum(M * self.a[:, :, None], axis=1)
            dz += (cj @ self._outer_aw()) * acts[2]
        if cot_lap is not None:
            cot_lap = np.asarray(cot_lap, dtype=float).reshape(n_pts, p)
            s2 = acts[2]
            wsq = np.sum(self.W**2, axis=1)
            g_a += (s2 * wsq).T @ cot_lap
            lam = cot_lap @ self.a.T  # (N, m)
            dz += lam * acts[3] * wsq
            g_W += 2.0 * np.sum(lam * s2, axis=0)[:, None] * self.W
        g_b += dz.sum(axis=0)
        g_W += dz.T @ x
        return np.concatenate([g_c, g_a.ravel(), g_W.ravel(), g_b])

    # -- flat parameter layout (c, a_1..a_m, W_1..W_m, b_1..b_m) ---------------

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.c, self.a.ravel(), self.W.ravel(), self.b])

    def with_params(self, theta) -> "ShallowNetwork":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        p, d, m = self.p, self.d, self.m
        i = 0
        c = theta[i : i + p]; i += p
        a = theta[i : i + m * p].reshape(m, p); i += m * p
        W = theta[i : i + m * d].reshape(m, d); i += m * d
        b = theta[i : i + m]
        return replace(self, c=c, a=a, W=W, b=b)

    # -- class constraints ----------------------------------------------------

    def is_feasible(self, tol: float = 1e-12) -> bool:
        B = self.barron_bound
        return bool(
            np.all(np.linalg.norm(self.W, axis=1) <= 1 + tol)
            and np.all(np.abs(self.b) <= 1 + tol)
            and np.abs(self.a).sum() <= 4 * B * (1 + tol) + tol
            and np.all(np.abs(self.c) <= 2 * B * (1 + tol) + tol)
        )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "p": self.p,
            "m": self.m,
            "B": self.barron_bound,
            "c": self.c.tolist(),
            "a": self.a.tolist(),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "ShallowNetwork":
        d, p, m = int(doc["d"]), int(doc["p"]), int(doc["m"])
        net = cls(
            int(doc["k"]),
            np.asarray(doc["c"], dtype=float).reshape(p),
            np.asarray(doc["a"], dtype=float).reshape(m, p),
            np.asarray(doc["W"], dtype=float).reshape(m, d),
            np.asarray(doc["b"], dtype=float).reshape(m),
            float(doc["B"]),
        )
        return net

    @classmethod
    def from_json(cls, text: str) -> "ShallowNetwork":
        return cls.from_dict(json.loads(text))


def project_to_class(net: ShallowNetwork) -> ShallowNetwork:
    """Euclidean-style projection onto the constrained class (idempotent)."""
    B = net.barron_bound
    norms = np.linalg.norm(net.W, axis=1)
    W = np.where((norms > 1.0)[:, None], net.W / np.maximum(norms, 1.0)[:, None], net.W)
    b = np.clip(net.b, -1.0, 1.0)
    l1 = np.abs(net.a).sum()
    a = net.a * (4 * B / l1) if l1 > 4 * B else net.a.copy()
    c = np.clip(net.c, -2 * B, 2 * B)
    return replace(net, c=c, a=a, W=W, b=b)
