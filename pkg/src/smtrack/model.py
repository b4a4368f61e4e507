"""Linear system with structured parametric uncertainty.

The plant is

    x(k+1) = A(alpha) x(k) + B(beta) u(k) + omega(k),      y = C x

with the state and input matrices affine in the unknown parameters::

    A(alpha) = A0 + sum_i alpha_i * Ai,   B(beta) = B0 + sum_j beta_j * Bj

The stacked parameter vector is ``theta = [alpha; beta]`` (dimensions r and
s). The additive disturbance is bounded by the ellipsoid ``E(R, 0)`` in
state space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .ellipsoid import Ellipsoid

__all__ = ["UncertainModel", "zoh_discretize"]


def _as_matrix(m, rows=None, cols=None, name="matrix"):
    out = np.atleast_2d(np.asarray(m, dtype=float))
    if rows is not None and out.shape[0] != rows:
        raise ValueError(f"{name} has {out.shape[0]} rows, expected {rows}")
    if cols is not None and out.shape[1] != cols:
        raise ValueError(f"{name} has {out.shape[1]} columns, expected {cols}")
    return out


@dataclass(frozen=True)
class UncertainModel:
    """Immutable description of the uncertain plant.

    ``a_perturbations`` and ``b_perturbations`` are the tuples (Ai), (Bj)
    multiplying the unknown parameters; either may be empty. ``c`` maps the
    state to the tracked output and ``r_shape`` is the disturbance-bound
    shape matrix (n x n, PSD).
    """

    a0: np.ndarray
    a_perturbations: tuple
    b0: np.ndarray
    b_perturbations: tuple
    c: np.ndarray
    r_shape: np.ndarray

    def __post_init__(self):
        a0 = _as_matrix(self.a0, name="a0")
        n = a0.shape[0]
        a0 = _as_matrix(a0, n, n, "a0")
        b0 = np.asarray(self.b0, dtype=float)
        if b0.ndim == 1:
            b0 = b0[:, None]  # flat vector means a single-input column
        b0 = _as_matrix(b0, n, None, "b0")
        c = _as_matrix(self.c, None, n, "c")
        r_shape = _as_matrix(self.r_shape, n, n, "r_shape")
        m = b0.shape[1]
        aps = tuple(_as_matrix(ai, n, n, f"a_perturbations[{i}]")
                    for i, ai in enumerate(self.a_perturbations))
        bps = []
        for j, bj in enumerate(self.b_perturbations):
            bj = np.asarray(bj, dtype=float)
            if bj.ndim == 1:
                bj = bj[:, None]
            bps.append(_as_matrix(bj, n, m, f"b_perturbations[{j}]"))
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "r_shape", 0.5 * (r_shape + r_shape.T))
        object.__setattr__(self, "a_perturbations", aps)
        object.__setattr__(self, "b_perturbations", tuple(bps))
        for arr in (self.a0, self.b0, self.c, self.r_shape,
                    *self.a_perturbations, *self.b_perturbations):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.a0.shape[0]

    @property
    def m(self) -> int:
        return self.b0.shape[1]

    @property
    def l(self) -> int:
        return self.c.shape[0]

    @property
    def r(self) -> int:
        return len(self.a_perturbations)

    @property
    def s(self) -> int:
        return len(self.b_perturbations)

    @property
    def p(self) -> int:
        """Stacked parameter dimension r + s."""
        return self.r + self.s

    def disturbance_set(self) -> Ellipsoid:
        return Ellipsoid(np.zeros(self.n), self.r_shape)

    def split_theta(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.p:
            raise ValueError(f"theta has {theta.size} entries, expected {self.p}")
        return theta[: self.r], theta[self.r:]

    def assemble(self, theta):
        """Realized ``(A, B)`` at a parameter vector."""
        alpha, beta = self.split_theta(theta)
        a = self.a0 + sum(al * ai for al, ai in zip(alpha, self.a_perturbations))
        b = self.b0 + sum(be * bj for be, bj in zip(beta, self.b_perturbations))
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def step(self, x, u, theta, omega):
        """One state transition; returns ``(x_next, y_next)``."""
        x = np.asarray(x, dtype=float).ravel()
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        omega = np.asarray(omega, dtype=float).ravel()
        if x.size != self.n or omega.size != self.n:
            raise ValueError("state or disturbance dimension mismatch")
        if u.size != self.m:
            raise ValueError(f"input has {u.size} entries, expected {self.m}")
        a, b = self.assemble(theta)
        x_next = a @ x + b @ u + omega
        return x_next, self.c @ x_next

    def output(self, x):
        return self.c @ np.asarray(x, dtype=float).ravel()


def zoh_discretize(a_cont, b_cont, dt: float):
    """Zero-order-hold discretization of ``xdot = A x + B u``.

    Computed through the exponential of the augmented matrix
    ``[[A, B], [0, 0]] * dt``: the top blocks of the result are
    ``Ad = exp(A dt)`` and ``Bd = int_0^dt exp(A tau) dtau B``.
    """
    a_cont = _as_matrix(a_cont, name="a_cont")
    n = a_cont.shape[0]
    a_cont = _as_matrix(a_cont, n, n, "a_cont")
    b_cont = np.asarray(b_cont, dtype=float)
    if b_cont.ndim == 1:
        b_cont = b_cont[:, None]
    b_cont = _as_matrix(b_cont, n, None, "b_cont")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    m = b_cont.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_cont * dt
    aug[:n, n:] = b_cont * dt
    full = expm(aug)
    return full[:n, :n], full[:n, n:]
