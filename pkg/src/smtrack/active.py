"""Input selection that accelerates parameter learning.

The posterior parameter set shrinks fastest when the regressor excited by
the applied input carries the most information. With the belief shape ``P``
partitioned into state/input blocks, the information content of the next
observation decomposes as::

    tr(phi P phi^T) = u^T PW u + PVWx u + const(x)

with ``PW`` built from the input block of ``P`` and the input perturbation
rows, and the linear term from the cross block. The active input maximizes
this quadratic over the intersection of an exploration ellipsoid around the
robust input (radius proportional to trace(P): exploration anneals away as
the belief converges) with the input box.

The ellipsoid part is solved exactly: whitening maps it to the unit ball,
where the quadratic's maximizer satisfies the classical trust-region
stationarity system, solved through an eigendecomposition and a secular
equation in the multiplier. Box clipping plus a projected coordinate-ascent
polish (20 sweeps, never leaving the feasible set, never decreasing the
objective) handles the cut case, with exact per-face line maximizations and
the full boundary stationary set as extra starting candidates so small
problems are solved to grid accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .ellipsoid import Ellipsoid, psd_clip, sym_sqrt
from .estimator import ParameterBelief
from .model import UncertainModel
from .robust import ControlBounds

__all__ = [
    "InfoQuadratic",
    "build_info_quadratic",
    "build_trust_region",
    "solve_active",
]

POLISH_SWEEPS = 20


@dataclass(frozen=True)
class InfoQuadratic:
    """Information objective ``u^T pw u + pvwx . u + const``."""

    pw: np.ndarray
    pvwx: np.ndarray
    const: float

    def __post_init__(self):
        pw = np.atleast_2d(np.asarray(self.pw, dtype=float))
        pvwx = np.atleast_1d(np.asarray(self.pvwx, dtype=float))
        if pw.shape[0] != pw.shape[1] or pw.shape[0] != pvwx.size:
            raise ValueError("inconsistent quadratic dimensions")
        pw = 0.5 * (pw + pw.T)
        pw.flags.writeable = False
        pvwx.flags.writeable = False
        object.__setattr__(self, "pw", pw)
        object.__setattr__(self, "pvwx", pvwx)

    @property
    def m(self) -> int:
        return self.pvwx.size

    def value(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(u @ self.pw @ u + self.pvwx @ u + self.const)


def _perturbation_rows(model: UncertainModel, output_map: str):
    if output_map == "tracked":
        v_rows = [model.c @ ai for ai in model.a_perturbations]
        w_rows = [model.c @ bj for bj in model.b_perturbations]
    elif output_map == "state":
        v_rows = list(model.a_perturbations)
        w_rows = list(model.b_perturbations)
    else:
        raise ValueError(f"output_map must be 'tracked' or 'state', got {output_map!r}")
    return v_rows, w_rows


def build_info_quadratic(model: UncertainModel, belief: ParameterBelief, x,
                         output_map: str = "tracked") -> InfoQuadratic:
    """Assemble the information quadratic at state ``x``.

    ``output_map`` picks the regressor level: "tracked" uses the rows
    ``C Ai``/``C Bj``; "state" the raw perturbation matrices (what the
    closed-loop driver learns from). The identity
    ``value(u) = tr(phi P phi^T)`` is exact for the matching regressor.
    """
    x = np.asarray(x, dtype=float).ravel()
    v_rows, w_rows = _perturbation_rows(model, output_map)
    r, s, m = model.r, model.s, model.m
    shape = belief.shape
    pxx = shape[:r, :r]
    pxu = shape[:r, r:]
    puu = shape[r:, r:]
    phix = (np.column_stack([vi @ x for vi in v_rows])
            if r else np.zeros((v_rows[0].shape[0] if v_rows else 1, 0)))
    const = float(np.einsum("ti,ij,tj->", phix, pxx, phix)) if r else 0.0
    if s == 0:
        return InfoQuadratic(np.zeros((m, m)), np.zeros(m), const)
    wstack = np.stack(w_rows)                    # (s, l', m)
    pw = np.einsum("atm,ab,btk->mk", wstack, puu, wstack)
    if r:
        pvwx = 2.0 * np.einsum("ti,ia,atm->m", phix, pxu, wstack)
    else:
        pvwx = np.zeros(m)
    return InfoQuadratic(psd_clip(pw), pvwx, const)


def build_trust_region(belief: ParameterBelief, u_ref, ma) -> Ellipsoid:
    """Exploration ellipsoid ``E(trace(P) * Ma, u_ref)`` over the inputs."""
    u_ref = np.atleast_1d(np.asarray(u_ref, dtype=float))
    m = u_ref.size
    ma = np.asarray(ma, dtype=float)
    if ma.ndim == 0:
        ma = float(ma) * np.eye(m)
    elif ma.ndim == 1:
        ma = np.diag(ma)
    if ma.shape != (m, m):
        raise ValueError(f"ma has shape {ma.shape}, expected ({m}, {m})")
    tr = max(float(np.trace(belief.shape)), 0.0)
    return Ellipsoid(u_ref, psd_clip(tr * ma))


# ---------------------------------------------------------------------------
# Trust-region subproblem on the unit ball.
# ---------------------------------------------------------------------------

def _ball_maximizers(quad, lin):
    """Candidate maximizers of ``w^T quad w + lin . w`` on the unit ball.

    Classical multiplier system: minimize with H = -2 quad, g = -lin, so a
    boundary solution solves ``(H + lam I) w = -g`` with ``H + lam I`` PSD,
    found from the secular equation in ``lam``. Hard-case splits return
    both signed fills. Interior maximizer included when H is PD.
    """
    h = -2.0 * quad
    g = -np.asarray(lin, dtype=float)
    d, basis = np.linalg.eigh(h)
    ghat = basis.T @ g
    scale = 1.0 + float(np.abs(d).max())
    out = []
    if d[0] > 0.0:
        w = -ghat / d
        if np.linalg.norm(w) <= 1.0:
            out.append(basis @ w)
    lam_lo = max(0.0, -d[0])
    on_floor = np.abs(d + lam_lo) <= 1e-12 * scale
    free = ~on_floor

    def norm2(lam):
        return float(np.sum((ghat[free] / (d[free] + lam)) ** 2)
                     + np.sum((ghat[on_floor] / (d[on_floor] + lam)) ** 2))

    base2 = float(np.sum((ghat[free] / (d[free] + lam_lo)) ** 2)) if free.any() else 0.0
    floor_active = bool(np.any(np.abs(ghat[on_floor]) > 1e-12 * (1.0 + np.abs(ghat).max())))
    if floor_active or base2 > 1.0:
        # Regular case: the norm diverges (or exceeds 1) at lam_lo.
        lam_hi = lam_lo + scale
        while norm2(lam_hi) > 1.0:
            lam_hi = lam_lo + 2.0 * (lam_hi - lam_lo)
        f = lambda lam: norm2(lam) - 1.0
        eps = 1e-14 * scale
        lam = brentq(f, lam_lo + eps, lam_hi, rtol=1e-13) if f(lam_lo + eps) > 0.0 \
            else lam_lo + eps
        w = np.zeros_like(ghat)
        w[free] = -ghat[free] / (d[free] + lam)
        w[on_floor] = -ghat[on_floor] / (d[on_floor] + lam)
        out.append(basis @ w)
    else:
        # Hard case: fill the deficit along the floor eigenspace.
        w = np.zeros_like(ghat)
        if free.any():
            w[free] = -ghat[free] / (d[free] + lam_lo)
        alpha = np.sqrt(max(1.0 - base2, 0.0))
        fill = np.zeros_like(ghat)
        fill[np.argmax(on_floor)] = 1.0
        out.append(basis @ (w + alpha * fill))
        out.append(basis @ (w - alpha * fill))
    return out


def _boundary_stationary(quad, lin):
    """All stationary points of the quadratic on the unit circle (m = 2)."""
    vals, basis = np.linalg.eigh(quad)
    bhat = basis.T @ np.asarray(lin, dtype=float)
    # (a1 - mu)^2 (a2 - mu)^2 * 4 = bhat1^2 (a2 - mu)^2 + bhat2^2 (a1 - mu)^2
    p1 = np.array([-1.0, vals[0]])
    p2 = np.array([-1.0, vals[1]])
    p1sq, p2sq = np.polymul(p1, p1), np.polymul(p2, p2)
    poly = np.polysub(4.0 * np.polymul(p1sq, p2sq),
                      np.polyadd(bhat[0] ** 2 * p2sq, bhat[1] ** 2 * p1sq))
    out = []
    scale = 1.0 + float(np.abs(vals).max())
    for mu in np.roots(poly):
        if abs(mu.imag) > 1e-8 * (1.0 + abs(mu.real)):
            continue
        mu = mu.real
        denom = vals - mu
        if np.any(np.abs(denom) <= 1e-12 * scale):
            continue
        w = -bhat / (2.0 * denom)
        nw = np.linalg.norm(w)
        if abs(nw - 1.0) > 1e-6:
            continue
        out.append(basis @ (w / nw))
    # Axis points cover the degenerate splits the polynomial misses.
    out.extend([basis[:, 0], -basis[:, 0], basis[:, 1], -basis[:, 1]])
    return out


# ---------------------------------------------------------------------------
# Feasible-set helpers and the polish.
# ---------------------------------------------------------------------------

def _into_region(u, center, t_inv):
    d = u - center
    form = float(d @ t_inv @ d)
    if form > 1.0:
        u = center + d / np.sqrt(form * (1.0 + 1e-12))
    return u

def _coordinate_ascent(u, info, center, t_inv, bounds):
    m = u.size
    for _ in range(POLISH_SWEEPS):
        moved = 0.0
        for a in range(m):
            d = u - center
            taa = t_inv[a, a]
            ga = float(t_inv[a] @ d)
            slack = 1.0 - float(d @ t_inv @ d)
            # taa*x^2 + 2 ga*x + (form - 1) <= 0 along the coordinate
            if taa <= 0.0:
                continue
            disc = ga * ga + taa * slack
            if disc < 0.0:
                disc = 0.0
            root = np.sqrt(disc)
            lo_b = (-ga - root) / taa
            hi_b = (-ga + root) / taa
            lo = max(lo_b, bounds.lower[a] - u[a])
            hi = min(hi_b, bounds.upper[a] - u[a])
            if lo > hi:
                continue
            lin = float(2.0 * info.pw[a] @ u + info.pvwx[a])
            quad = float(info.pw[a, a])
            cand = [lo, hi]
            if quad < 0.0:
                vertex = -lin / (2.0 * quad)
                if lo < vertex < hi:
                    cand.append(vertex)
            gains = [quad * c * c + lin * c for c in cand]
            best = int(np.argmax(gains))
            if gains[best] > 0.0:
                u = u.copy()
                u[a] += cand[best]
                moved += gains[best]
        if moved <= 1e-15 * (1.0 + abs(info.value(u))):
            break
    return _into_region(bounds.clip(u), center, t_inv)


def solve_active(info: InfoQuadratic, region: Ellipsoid,
                 bounds: ControlBounds) -> np.ndarray:
    """Maximize the information quadratic over region ∩ box.

    Returns the exploring input; the region center (the robust input) is
    always a candidate, so the returned objective never falls below it.
    Exact ties resolve to the lexicographically smallest input.
    """
    center = np.asarray(region.center, dtype=float)
    m = center.size
    if bounds.m != m or info.m != m:
        raise ValueError("input dimension mismatch between region, info, bounds")
    t = region.shape
    if float(np.trace(t)) <= 0.0:
        return center.copy()
    if np.allclose(info.pw, 0.0) and np.allclose(info.pvwx, 0.0):
        return center.copy()
    sroot = sym_sqrt(t)
    quad = sroot @ info.pw @ sroot
    lin = sroot @ (2.0 * info.pw @ center + info.pvwx)

    w_cands = _ball_maximizers(quad, lin)
    if m == 1:
        w_cands.extend([np.array([1.0]), np.array([-1.0])])
    elif m == 2:
        w_cands.extend(_boundary_stationary(quad, lin))
    candidates = [center.copy()] + [center + sroot @ w for w in w_cands]
    try:
        t_inv = np.linalg.inv(t)
    except np.linalg.LinAlgError:
        t_inv = np.linalg.pinv(t)
    if m == 2:
        candidates.extend(_face_maxima(info, center, t_inv, bounds))

    polished = []
    for u in candidates:
        u = _into_region(bounds.clip(np.asarray(u, dtype=float)), center, t_inv)
        polished.append(_coordinate_ascent(u, info, center, t_inv, bounds))
    values = np.array([info.value(u) for u in polished])
    best = float(values.max())
    tol = 1e-12 * (1.0 + abs(best))
    winners = [u for u, v in zip(polished, values) if v >= best - tol]
    winners.sort(key=lambda u: tuple(u))
    return winners[0]


def _face_maxima(info, center, t_inv, bounds):
    """Exact 1-D maximizers on each finite box face cut by the region (m=2)."""
    out = []
    for a in range(2):
        b = 1 - a
        for val in (bounds.lower[a], bounds.upper[a]):
            if not np.isfinite(val):
                continue
            da = val - center[a]
            # region slice along coordinate b: tbb x^2 + 2 gab x + caa <= 0
            tbb = t_inv[b, b]
            gab = t_inv[a, b] * da
            caa = t_inv[a, a] * da * da - 1.0
            if tbb <= 0.0:
                continue
            disc = gab * gab - tbb * caa
            if disc < 0.0:
                continue
            root = np.sqrt(disc)
            lo = center[b] + (-gab - root) / tbb
            hi = center[b] + (-gab + root) / tbb
            lo = max(lo, bounds.lower[b])
            hi = min(hi, bounds.upper[b])
            if lo > hi:
                continue
            quad = float(info.pw[b, b])
            lin = float(info.pvwx[b] + 2.0 * info.pw[a, b] * val)
            cand = [lo, hi]
            if quad < 0.0:
                vertex = -lin / (2.0 * quad)
                if lo < vertex < hi:
                    cand.append(vertex)
            u = np.empty(2)
            u[a] = val
            vals = []
            for cb in cand:
                u_try = u.copy()
                u_try[b] = cb
                vals.append(info.value(u_try))
            u[b] = cand[int(np.argmax(vals))]
            out.append(u)
    return out
