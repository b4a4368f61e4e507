"""One-step worst-case tracking control.

At state ``x`` with reference ``y_ref`` for the next step, the per-output
tracking error under parameter vector ``theta`` and output noise ``v`` is::

    e_t = f_t + b0_t u + g_t(u) theta + v_t
    f = C A0 x - y_ref,   b0 = C B0,
    g_t(u) = [(C A1 x)_t, ..., (C Ar x)_t, (C B1 u)_t, ..., (C Bs u)_t]

With ``theta`` in the belief ellipsoid ``E(P, th)`` and ``v`` bounded by
``E(Q, 0)``, the worst-case magnitude of ``e_t`` over both sets is::

    |f_t + b0_t u + g_t(u) th| + sqrt(g_t(u) P g_t(u)^T) + sqrt(Q_tt)

The control minimizes the sum of these bounds over a box of admissible
inputs. The epigraph form (one bound variable per output, two second-order
cone constraints each) is solved by an embedded primal log-barrier
interior-point method: cone barrier ``-log(s^2 - |w|^2)``, damped Newton
inner iterations, barrier parameter scaled by 10 per outer stage, stopping
when the duality measure (constraint count / barrier parameter) falls
below 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ellipsoid import Ellipsoid, sym_sqrt
from .estimator import ParameterBelief
from .model import UncertainModel

__all__ = [
    "ControlBounds",
    "TrackingInstance",
    "RobustSolution",
    "build_instance",
    "worst_case_interval",
    "solve_robust",
    "solve_known_theta",
]

DUALITY_TARGET = 1e-8
BARRIER_GROWTH = 10.0
NEWTON_TOL = 1e-9
STAGE_TOL = 2e-3
MAX_NEWTON = 60
WARM_T_START = 1e4
WARM_PROBE_ITERS = 12


@dataclass(frozen=True)
class ControlBounds:
    """Box of admissible inputs; entries may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("bound vectors differ in length")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def m(self) -> int:
        return self.lower.size

    def feasible(self) -> bool:
        return bool(np.all(self.lower <= self.upper))

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        span = 1.0 + np.maximum(np.abs(self.lower), np.abs(self.upper))
        span = np.where(np.isfinite(span), span, 1.0)
        return bool(np.all(u >= self.lower - tol * span)
                    and np.all(u <= self.upper + tol * span))


@dataclass(frozen=True)
class TrackingInstance:
    """Per-step data of the worst-case tracking program."""

    f: np.ndarray            # (l,)   C A0 x - y_ref
    b0: np.ndarray           # (l, m) C B0
    v_rows: tuple            # r matrices, each (l, n): C Ai
    w_rows: tuple            # s matrices, each (l, m): C Bj
    q_shape: np.ndarray      # (l, l) output-noise bound C R C^T
    x: np.ndarray            # (n,)  state the instance was built at

    @property
    def l(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.b0.shape[1]

    @property
    def p(self) -> int:
        return len(self.v_rows) + len(self.w_rows)

    def regressor(self, u):
        """Stacked g(u): row t holds g_t(u), shape (l, r+s)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        cols = [vi @ self.x for vi in self.v_rows]
        cols += [wj @ u for wj in self.w_rows]
        if not cols:
            return np.zeros((self.l, 0))
        return np.column_stack(cols)


@dataclass(frozen=True)
class RobustSolution:
    u: np.ndarray
    z: np.ndarray
    objective: float
    status: str
    newton_iterations: int


def build_instance(model: UncertainModel, x, y_ref_next) -> TrackingInstance:
    """Assemble the tracking program data at a state and next reference."""
    x = np.asarray(x, dtype=float).ravel()
    y_ref = np.atleast_1d(np.asarray(y_ref_next, dtype=float)).ravel()
    if x.size != model.n:
        raise ValueError(f"state has {x.size} entries, expected {model.n}")
    if y_ref.size != model.l:
        raise ValueError(f"reference has {y_ref.size} entries, expected {model.l}")
    c = model.c
    return TrackingInstance(
        f=c @ (model.a0 @ x) - y_ref,
        b0=c @ model.b0,
        v_rows=tuple(c @ ai for ai in model.a_perturbations),
        w_rows=tuple(c @ bj for bj in model.b_perturbations),
        q_shape=c @ model.r_shape @ c.T,
        x=x,
    )


def _error_terms(instance: TrackingInstance, belief: ParameterBelief, u):
    """Per-output (mid, radius) of the worst-case error at input ``u``."""
    g = instance.regressor(u)
    mid = instance.f + instance.b0 @ np.atleast_1d(u) + g @ belief.center
    rad_p = np.sqrt(np.clip(np.einsum("ti,ij,tj->t", g, belief.shape, g), 0.0, None))
    rad_q = np.sqrt(np.clip(np.diag(instance.q_shape), 0.0, None))
    return mid, rad_p + rad_q


def worst_case_interval(instance: TrackingInstance, belief: ParameterBelief, u):
    """Guaranteed per-output error interval ``[lo, hi]`` at input ``u``."""
    mid, rad = _error_terms(instance, belief, u)
    return mid - rad, mid + rad


def solve_robust(instance: TrackingInstance, belief: ParameterBelief,
                 bounds: ControlBounds, u_warm=None) -> RobustSolution:
    """Minimize the summed worst-case error bounds over the input box.

    Returns the input, the per-output certified bounds ``z`` (recomputed at
    the returned point, so ``max(|lo|, |hi|) = z`` holds exactly), their
    sum, a status string, and the Newton iteration count. ``u_warm`` seeds
    the barrier schedule near a previous solution, for solve sequences.
    """
    if bounds.m != instance.m:
        raise ValueError(f"bounds dimension {bounds.m} != inputs {instance.m}")
    if not bounds.feasible():
        m = instance.m
        return RobustSolution(np.full(m, np.nan), np.full(instance.l, np.nan),
                              np.nan, "infeasible", 0)

    u, iters, status = _barrier_solve(instance, belief, bounds, u_warm)
    u = bounds.clip(u)
    mid, rad = _error_terms(instance, belief, u)
    z = np.abs(mid) + rad
    return RobustSolution(u, z, float(np.sum(z)), status, iters)


def solve_known_theta(instance: TrackingInstance, theta_true,
                      bounds: ControlBounds, u_warm=None) -> RobustSolution:
    """Baseline with the parameter known exactly (point belief, noise kept)."""
    theta = np.atleast_1d(np.asarray(theta_true, dtype=float))
    point = ParameterBelief(Ellipsoid(theta, np.zeros((theta.size, theta.size))))
    return solve_robust(instance, point, bounds, u_warm)


# ---------------------------------------------------------------------------
# Interior-point machinery.
# ---------------------------------------------------------------------------

def _barrier_solve(instance, belief, bounds, u_warm=None):
    l, m = instance.l, instance.m
    th = belief.center
    sroot = sym_sqrt(belief.shape)

    # Affine pieces: mid(u) = mid0 + midu @ u, w_t(u) = wb[t] + wm[t] @ u.
    gx = [vi @ instance.x for vi in instance.v_rows]     # r vectors of length l
    p = instance.p
    r = len(instance.v_rows)
    base = np.zeros((l, p))
    for i, col in enumerate(gx):
        base[:, i] = col
    slope = np.zeros((l, p, m))
    for j, wj in enumerate(instance.w_rows):
        slope[:, r + j, :] = wj
    mid0 = instance.f + base @ th
    midu = instance.b0 + np.einsum("tpm,p->tm", slope, th)
    wb = np.einsum("qp,tp->tq", sroot, base)             # (l, p)
    wm = np.einsum("qp,tpm->tqm", sroot, slope)          # (l, p, m)
    qdiag = np.sqrt(np.clip(np.diag(instance.q_shape), 0.0, None))

    # Pin coordinates whose box collapses to a point; solve over the rest.
    lo, hi = bounds.lower.copy(), bounds.upper.copy()
    width = hi - lo
    pinned = np.isfinite(width) & (width <= 1e-12)
    u_fix = np.zeros(m)
    u_fix[pinned] = 0.5 * (lo[pinned] + hi[pinned])
    free = ~pinned
    nf = int(free.sum())
    if nf == 0:
        return u_fix, 0, "optimal"

    mid0 = mid0 + midu[:, pinned] @ u_fix[pinned]
    wb = wb + np.einsum("tqm,m->tq", wm[:, :, pinned], u_fix[pinned])
    midu = midu[:, free]
    wm = wm[:, :, free]
    lo, hi = lo[free], hi[free]
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    n_cons = 2 * l + int(fin_lo.sum()) + int(fin_hi.sum())

    wtw = np.einsum("tqa,tqb->tab", wm, wm)              # (l, nf, nf)
    dim = nf + l

    def cone_state(u, z):
        mids = mid0 + midu @ u
        w = wb + wm @ u
        wn2 = (w * w).sum(axis=1)
        s_plus = z - mids - qdiag        # cone for  mid + |w| + q <= z
        s_minus = z + mids - qdiag       # cone for -mid + |w| + q <= z
        return mids, w, wn2, s_plus, s_minus

    # Constant slack-gradient rows, one per cone: ds/d(u, z) for s = z_t
    # -/+ mid_t(u) - q_t, stacked plus-cones first.
    d0 = np.zeros((2 * l, dim))
    d0[:l, :nf] = -midu
    d0[l:, :nf] = midu
    d0[:l, nf:] = np.eye(l)
    d0[l:, nf:] = np.eye(l)
    jw_pad = np.zeros((2 * l, dim))
    idx = np.arange(nf)
    idx_lo, idx_hi = idx[fin_lo], idx[fin_hi]

    def grad_hess(state, u, t_b):
        _, w, wn2, sp, sm = state
        s_all = np.concatenate([sp, sm])
        psi = s_all * s_all - np.concatenate([wn2, wn2])
        jw = (wm * w[:, :, None]).sum(axis=1)            # (l, nf) = (Jw)^T w
        jw_pad[:l, :nf] = jw
        jw_pad[l:, :nf] = jw
        dpsi = 2.0 * s_all[:, None] * d0 - 2.0 * jw_pad
        dpsi_over = dpsi / psi[:, None]
        g = np.zeros(dim)
        g[nf:] = t_b
        g -= dpsi_over.sum(axis=0)
        h = dpsi_over.T @ dpsi_over
        h -= 2.0 * d0.T @ (d0 / psi[:, None])
        inv2 = 2.0 / psi
        h[:nf, :nf] += np.einsum("tab,t->ab", wtw, inv2[:l] + inv2[l:])
        slack_lo = u[fin_lo] - lo[fin_lo]
        slack_hi = hi[fin_hi] - u[fin_hi]
        g[idx_lo] -= 1.0 / slack_lo
        g[idx_hi] += 1.0 / slack_hi
        h[idx_lo, idx_lo] += 1.0 / slack_lo**2
        h[idx_hi, idx_hi] += 1.0 / slack_hi**2
        return g, h

    def interior(state, u):
        _, _, wn2, sp, sm = state
        if sp.min(initial=np.inf) <= 0.0 or sm.min(initial=np.inf) <= 0.0:
            return False
        if ((sp * sp - wn2).min(initial=np.inf) <= 0.0
                or (sm * sm - wn2).min(initial=np.inf) <= 0.0):
            return False
        return bool(np.all(u[fin_lo] > lo[fin_lo])
                    and np.all(u[fin_hi] < hi[fin_hi]))

    def padded_z(u0, pad):
        _, _, wn2, _, _ = cone_state(u0, np.zeros(l))
        mids0 = mid0 + midu @ u0
        return np.abs(mids0) + np.sqrt(wn2) + qdiag + pad

    eye = 1e-12 * np.eye(dim)

    def central_newton(u, z, t_b, tol, max_iter):
        """Damped Newton toward the center at barrier weight ``t_b``.

        With a self-concordant barrier the step 1/(1 + lambda) stays
        strictly feasible and decreasing without a line search; full steps
        once the decrement is small. Rounding near the boundary is caught
        by an interior check on the trial point, retried with a halved
        step. Returns (u, z, iterations, converged).
        """
        state = cone_state(u, z)
        if not interior(state, u):
            return u, z, 0, False
        for it in range(max_iter):
            g, h = grad_hess(state, u, t_b)
            try:
                step = np.linalg.solve(h + eye, -g)
            except np.linalg.LinAlgError:
                step = -g / (1.0 + np.linalg.norm(g))
            decrement = float(-g @ step)
            if decrement <= 2.0 * tol:
                return u, z, it, True
            du, dz = step[:nf], step[nf:]
            lam = np.sqrt(max(decrement, 0.0))
            alpha = 1.0 if lam <= 0.25 else 1.0 / (1.0 + lam)
            for _ in range(40):
                u_try, z_try = u + alpha * du, z + alpha * dz
                trial = cone_state(u_try, z_try)
                if interior(trial, u_try):
                    break
                alpha *= 0.5
            else:
                return u, z, it + 1, False
            u, z, state = u_try, z_try, trial
        return u, z, max_iter, False

    def stage_schedule(t_start):
        stages = [t_start]
        while n_cons / stages[-1] >= DUALITY_TARGET:
            stages.append(stages[-1] * BARRIER_GROWTH)
        return stages

    total_iters = 0
    warm_ok = False
    u = z = None
    if u_warm is not None and np.all(np.isfinite(u_warm)):
        # Probe a short high-weight schedule near the previous optimum; a
        # stale warm input fails to center quickly and falls back to the
        # cold path, which is robust from any box point.
        inset = np.where(np.isfinite(width[free]),
                         1e-6 * np.minimum(width[free], 1.0), 0.0) + 1e-12
        u0 = np.asarray(u_warm, dtype=float)[free]
        u0 = np.minimum(np.maximum(u0, lo + inset), hi - inset)
        stages = stage_schedule(WARM_T_START)
        z0 = padded_z(u0, max(3.0 * l / WARM_T_START, 1e-3))
        u, z, iters, warm_ok = central_newton(u0, z0, stages[0], STAGE_TOL,
                                              WARM_PROBE_ITERS)
        total_iters += iters
    status = "optimal"
    if warm_ok:
        for t_b in stages[1:]:
            tol = NEWTON_TOL if t_b == stages[-1] else STAGE_TOL
            u, z, iters, done = central_newton(u, z, t_b, tol, MAX_NEWTON)
            total_iters += iters
            if not done:
                status = "max_iter"
    else:
        u0 = np.zeros(nf)
        both = fin_lo & fin_hi
        u0[both] = 0.5 * (lo[both] + hi[both])
        u0[fin_lo & ~fin_hi] = lo[fin_lo & ~fin_hi] + 1.0
        u0[fin_hi & ~fin_lo] = hi[fin_hi & ~fin_lo] - 1.0
        u, z = u0, padded_z(u0, 1.0)
        stages = stage_schedule(1.0)
        for t_b in stages:
            tol = NEWTON_TOL if t_b == stages[-1] else STAGE_TOL
            u, z, iters, done = central_newton(u, z, t_b, tol, MAX_NEWTON)
            total_iters += iters
            if not done:
                status = "max_iter"

    u_full = u_fix.copy()
    u_full[free] = u
    return u_full, total_iters, status
