"""Recursive set-membership parameter estimation.

Each step yields a linear observation of the unknown parameter vector::

    H = phi theta + upsilon,        upsilon in E(Q, 0)

where ``H`` and the regressor ``phi`` are formed from measured signals and
``Q`` bounds the observation noise. Fusing the observation set with the
prior parameter ellipsoid gives the posterior::

    K = P phi^T (phi P phi^T + Q/rho)^{-1}
    center' = center + K eps,                eps = H - phi center
    shape' = beta(rho) [(I - K phi) P (I - K phi)^T + K Q K^T / rho]
    beta(rho) = 1 + rho - eps^T (Q/rho + phi P phi^T)^{-1} eps

The fusion parameter ``rho`` is chosen to minimize posterior volume: the
stationarity condition is a scalar root equation in ``rho`` whose candidate
roots are scanned on a log bracket; with no root the prior is kept
(``rho = 0``). ``beta <= 0`` anywhere on the scan certifies that prior and
observation sets are disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .ellipsoid import (
    Ellipsoid,
    InconsistentSetsError,
    optimal_tau,
    psd_clip,
)
from .model import UncertainModel

__all__ = [
    "Observation",
    "ParameterBelief",
    "InconsistentObservationError",
    "build_observation",
    "build_state_observation",
    "update",
    "innovation_ellipsoid",
]

RHO_BRACKET = (1e-10, 1e8)
RHO_SCAN_POINTS = 200
BETA_SLACK = 1e-10


class InconsistentObservationError(InconsistentSetsError):
    """The observation set cannot intersect the prior parameter set."""


@dataclass(frozen=True)
class Observation:
    """One linear parameter observation ``H = phi theta + noise``."""

    h: np.ndarray
    phi: np.ndarray
    q_shape: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        q = np.atleast_2d(np.asarray(self.q_shape, dtype=float))
        if phi.shape[0] != h.size:
            raise ValueError(f"phi has {phi.shape[0]} rows, h has {h.size}")
        if q.shape != (h.size, h.size):
            raise ValueError(f"q_shape {q.shape} does not match h ({h.size})")
        for arr in (h, phi, q):
            arr.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "q_shape", 0.5 * (q + q.T))


@dataclass(frozen=True)
class ParameterBelief:
    """Parameter ellipsoid plus diagnostics of the latest update."""

    set: Ellipsoid
    last_rho: float = 0.0
    last_beta: float = 1.0
    skipped: bool = False

    @property
    def center(self) -> np.ndarray:
        return self.set.center

    @property
    def shape(self) -> np.ndarray:
        return self.set.shape


def build_observation(model: UncertainModel, x, u, y_next) -> Observation:
    """Observation through the tracked output map.

    ``H = y_next - C A0 x - C B0 u``; regressor columns are ``C Ai x`` then
    ``C Bj u``; the noise shape is ``C R C^T``.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    y_next = np.atleast_1d(np.asarray(y_next, dtype=float)).ravel()
    c = model.c
    h = y_next - c @ (model.a0 @ x) - c @ (model.b0 @ u)
    cols = [c @ (ai @ x) for ai in model.a_perturbations]
    cols += [c @ (bj @ u) for bj in model.b_perturbations]
    phi = np.column_stack(cols) if cols else np.zeros((model.l, 0))
    q = c @ model.r_shape @ c.T
    return Observation(h, phi, q)


def build_state_observation(model: UncertainModel, x, u, x_next) -> Observation:
    """Observation through the full state (identity output map).

    Used by the closed-loop driver, where the state is measurable: every
    perturbation direction excited by ``(x, u)`` is visible, and the noise
    shape is the disturbance bound itself.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    x_next = np.asarray(x_next, dtype=float).ravel()
    h = x_next - model.a0 @ x - model.b0 @ u
    cols = [ai @ x for ai in model.a_perturbations]
    cols += [bj @ u for bj in model.b_perturbations]
    phi = np.column_stack(cols) if cols else np.zeros((model.n, 0))
    return Observation(h, phi, model.r_shape)


def _posterior(prior: Ellipsoid, obs: Observation, rho: float):
    """Posterior (set, beta) at a fixed fusion parameter ``rho > 0``."""
    p = prior.shape
    phi = obs.phi
    q = obs.q_shape
    eps = obs.h - phi @ prior.center
    mid = phi @ p @ phi.T + q / rho
    sol = np.linalg.solve(mid, eps)
    beta = float(1.0 + rho - eps @ sol)
    if beta < -BETA_SLACK * (1.0 + rho):
        return None, beta
    beta = max(beta, 0.0)
    gain = np.linalg.solve(mid, phi @ p).T  # P phi^T mid^{-1}
    eye = np.eye(prior.dim)
    closed = eye - gain @ phi
    core = closed @ p @ closed.T + gain @ q @ gain.T / rho
    fused = Ellipsoid(prior.center + gain @ eps, psd_clip(beta * core))
    return fused, beta


def _defect_terms(prior: Ellipsoid, obs: Observation, rhos: np.ndarray):
    """Vectorized defect and beta over a batch of rho values."""
    p = prior.shape
    phi = obs.phi
    q = obs.q_shape
    eps = obs.h - phi @ prior.center
    ppt = phi @ p @ phi.T
    lam = _information_eigvals(p, phi, q)
    n = prior.dim
    mids = ppt[None, :, :] + q[None, :, :] / rhos[:, None, None]
    rhs = np.broadcast_to(eps[None, :, None], (rhos.size, eps.size, 1))
    sols = np.linalg.solve(mids, rhs)[..., 0]
    betas = 1.0 + rhos - np.einsum("i,bi->b", eps, sols)
    dbetas = 1.0 - np.einsum("bi,ij,bj->b", sols, q, sols) / rhos**2
    lhs = np.sum(lam[None, :] / (1.0 + rhos[:, None] * lam[None, :]), axis=1)
    defects = lhs - n * dbetas / betas
    return defects, betas


def _defect_scalar(prior: Ellipsoid, obs: Observation):
    """Scalar defect function for root polishing, precomputing invariants."""
    p = prior.shape
    phi = obs.phi
    q = obs.q_shape
    eps = obs.h - phi @ prior.center
    ppt = phi @ p @ phi.T
    lam = _information_eigvals(p, phi, q)
    n = prior.dim

    def defect(r):
        sol = np.linalg.solve(ppt + q / r, eps)
        beta = 1.0 + r - eps @ sol
        dbeta = 1.0 - sol @ q @ sol / (r * r)
        lhs = float(np.sum(lam / (1.0 + r * lam)))
        if beta <= 0.0 or not np.isfinite(beta):
            # Touching sets put a pole here; keep the crossing's sign so the
            # refinement converges onto the pole location.
            if dbeta == 0.0:
                return 0.0
            return -1e308 if dbeta > 0.0 else 1e308
        return lhs - float(n * dbeta / beta)

    return defect


def _information_eigvals(p, phi, q):
    """Eigenvalues of ``P phi^T Q^{-1} phi`` (real, clipped at zero)."""
    ridge = 1e-13 * (1.0 + np.trace(q))
    q_reg = q + ridge * np.eye(q.shape[0])
    info = phi.T @ np.linalg.solve(q_reg, phi)
    vals = np.linalg.eigvals(p @ info)
    return np.clip(vals.real, 0.0, None)


def update(belief: ParameterBelief, obs: Observation, policy: str = "raise"):
    """Fuse one observation into the belief at the volume-optimal ``rho``.

    All defect-equation roots found on the scan bracket are evaluated and
    the posterior of smallest log-volume is kept, never one larger than the
    prior (the ``rho = 0`` anchor, which returns the prior unchanged).

    ``policy="raise"`` raises :class:`InconsistentObservationError` when the
    observation set is disjoint from the prior; ``policy="skip"`` instead
    returns the prior flagged ``skipped=True``.
    """
    if policy not in ("raise", "skip"):
        raise ValueError(f"policy must be 'raise' or 'skip', got {policy!r}")
    prior = belief.set
    if obs.phi.shape[1] != prior.dim:
        raise ValueError(
            f"regressor has {obs.phi.shape[1]} columns, belief dim {prior.dim}"
        )
    rhos = np.geomspace(*RHO_BRACKET, RHO_SCAN_POINTS)
    with np.errstate(all="ignore"):
        defects, betas = _defect_terms(prior, obs, rhos)
    finite = np.isfinite(betas)
    if np.any(betas[finite] <= 0.0):
        if policy == "raise":
            raise InconsistentObservationError(
                "observation set is disjoint from the prior parameter set"
            )
        return replace(belief, last_rho=0.0, last_beta=1.0, skipped=True)

    candidates = []
    ok = np.isfinite(defects)
    scalar = _defect_scalar(prior, obs)
    for i in range(rhos.size - 1):
        if not (ok[i] and ok[i + 1]):
            continue
        if defects[i] == 0.0:
            candidates.append(float(rhos[i]))
        elif defects[i] * defects[i + 1] < 0.0:
            candidates.append(float(brentq(scalar, rhos[i], rhos[i + 1], rtol=1e-12)))

    best = (0.0, 1.0, prior, prior.log_det)
    for rho in candidates:
        fused, beta = _posterior(prior, obs, rho)
        if fused is None:
            continue
        vol = fused.log_det
        if vol < best[3]:
            best = (rho, beta, fused, vol)
    rho, beta, fused, _ = best
    return ParameterBelief(fused, last_rho=rho, last_beta=beta, skipped=False)


def innovation_ellipsoid(belief: ParameterBelief, obs: Observation) -> Ellipsoid:
    """Outer bound on the innovation ``H - phi center`` (centered at zero).

    Sum of the propagated parameter uncertainty ``E(phi P phi^T, 0)`` and
    the noise bound ``E(Q, 0)`` with shape ``(1/q + 1) phi P phi^T +
    (q + 1) Q``; ``q`` is the volume-optimal sum parameter, falling back to
    1 when an operand is singular.
    """
    ppt = psd_clip(obs.phi @ belief.shape @ obs.phi.T)
    l = ppt.shape[0]
    try:
        q_par = optimal_tau(Ellipsoid(np.zeros(l), ppt),
                            Ellipsoid(np.zeros(l), obs.q_shape))
    except Exception:
        q_par = 1.0
    shape = (1.0 / q_par + 1.0) * ppt + (q_par + 1.0) * obs.q_shape
    return Ellipsoid(np.zeros(l), psd_clip(shape))
