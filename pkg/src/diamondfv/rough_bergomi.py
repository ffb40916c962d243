"""Lognormal forward-variance (rough Bergomi) tree values by quadrature.

Under d xi_t(u)/xi_t(u) = eta~ dW_t/(u-t)^gamma with gamma = 1/2 - H and
eta~ = eta sqrt(2H), conditional expectations of products of forward
variances are explicit exponentials of overlap integrals

    G_gamma(y, x) = (1-2 gamma) int_0^1 dr (y-r)^(-gamma) (x-r)^(-gamma),

so the first- and second-order diamond trees reduce to two- and
three-dimensional integrals with power kernels.  Each kernel-carrying
axis is substituted v = gap^(1-gamma) to remove the endpoint
singularity; Gauss-Legendre panels are geometrically graded into the
remaining soft cusps and split at curve knots on direct axes.  Offsets
(r-s, u-s) are carried as primary variables so deep-graded nodes never
lose them to floating-point absorption.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .afv import ForwardCurve
from .specfun import g_gamma_many

__all__ = [
    "RBParams",
    "FExponent",
    "xi_product_expectation",
    "x_diamond_m",
    "m_diamond_m",
    "m_diamond_m_raw",
    "x_x_m",
]

# Resolution defaults were tuned against high-resolution references: the graded
# panels concentrate nodes where the integrands have power cusps, so modest
# panel counts with order-4/8 Gauss rules already land far inside the target
# accuracy (double integrals ~1e-9 relative, triples ~1e-5) at seconds of cost.
_RATIO = 0.15          # geometric grading factor toward cusped endpoints
_DOUBLE_PANELS = 16
_DOUBLE_ORDER = 8
_TRIPLE_PANELS = (12, 12, 10)
_TRIPLE_ORDER = 4
_RAW_PANELS = (12, 12, 10)


@dataclass(frozen=True)
class RBParams:
    """Lognormal forward-variance parameters; eta_tilde = eta sqrt(2H)."""
    eta: float
    H: float
    rho: float = 0.0
    eta_tilde: Optional[float] = None

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 < self.H < 0.5:
            raise ValueError(f"H must lie strictly in (0, 1/2), got {self.H}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        derived = self.eta * math.sqrt(2.0 * self.H)
        if self.eta_tilde is not None and not math.isclose(
                self.eta_tilde, derived, rel_tol=1e-12, abs_tol=1e-300):
            raise ValueError(
                f"eta_tilde {self.eta_tilde} inconsistent with "
                f"eta sqrt(2H) = {derived}")
        object.__setattr__(self, "eta_tilde", derived)

    @property
    def gamma(self) -> float:
        return 0.5 - self.H


def _gl_cache(order: int):
    return np.polynomial.legendre.leggauss(order)


def _graded_edges(panels: int, ratio: float = _RATIO) -> np.ndarray:
    """Panel edges on [0,1], geometrically graded toward both endpoints."""
    levels = max(2, (3 * panels) // 8)
    mid = max(1, panels - 2 * levels)
    ks = ratio ** np.arange(levels, 0, -1.0)
    left = 0.5 * ks
    right = 1.0 - 0.5 * ks[::-1]
    return np.concatenate(
        ([0.0], left, np.linspace(left[-1], right[0], mid + 1)[1:-1],
         right, [1.0]))


def _panelize(edges: np.ndarray, order: int):
    xg, wg = _gl_cache(order)
    h = 0.5 * np.diff(edges)
    x = edges[:-1, None] + h[:, None] * (xg[None, :] + 1.0)
    w = h[:, None] * wg[None, :]
    return x.ravel(), w.ravel()


def _graded01(panels: int, order: int):
    return _panelize(_graded_edges(panels), order)


def _axis(a: float, b: float, cuts, panels: int, order: int):
    """Graded composite GL rule on [a,b] with extra edges at cuts."""
    edges = a + (b - a) * _graded_edges(panels)
    inner = [c for c in cuts if a < c < b]
    if inner:
        edges = np.unique(np.concatenate((edges, np.asarray(inner, float))))
    return _panelize(edges, order)


# ----------------------------------------------------------- Lemma layer
def xi_product_expectation(curve: ForwardCurve, params: RBParams, t: float,
                           s: float, points: Sequence[Tuple[float, float]]
                           ) -> float:
    """E_t[prod_i xi_s(u_i)^(alpha_i)] for u_n > ... > u_1 >= s >= t.

    Product of today's curve values times a pairwise overlap exponential
    and a single-index variance correction; both exponents vanish at
    s = t, leaving the martingale prefactor.
    """
    if not s >= t:
        raise ValueError(f"ordering violation: need s >= t, got s={s}, t={t}")
    if not points:
        raise ValueError("need at least one (maturity, power) point")
    us = np.array([float(u) for u, _ in points])
    als = np.array([float(a) for _, a in points])
    if np.any(np.diff(us) <= 0.0):
        raise ValueError("ordering violation: maturities must increase "
                         "strictly")
    if us[0] < s:
        raise ValueError(f"ordering violation: need u_1 >= s, got "
                         f"u_1={us[0]}, s={s}")
    pref = float(np.prod(curve.xi(us) ** als))
    if s == t:
        return pref
    th = 2.0 * params.H
    e2 = params.eta * params.eta
    dst = s - t
    single = 0.5 * e2 * float(
        np.sum(als * (als - 1.0) * ((us - t) ** th - (us - s) ** th)))
    pair = 0.0
    if len(us) > 1:
        ys = (us - t) / dst
        i, j = np.triu_indices(len(us), k=1)  # j > i so ys[j] > ys[i]
        g = g_gamma_many(ys[j], ys[i], params.gamma)
        pair = e2 * dst ** th * float(np.sum(als[i] * als[j] * g))
    return pref * math.exp(pair + single)


@dataclass(frozen=True)
class FExponent:
    """Exponent weight F for the third-moment product expectation.

    E_t[sqrt(xi_s(s)) sqrt(xi_s(r)) xi_s(u)] carries exp(eta^2 F) with
    F a combination of four overlap integrals and two power terms in the
    offsets (s-t, r-t, u-t).  Finite as s -> t+ for fixed r < u.
    """
    params: RBParams

    def __call__(self, ds, dr, du):
        ds = np.asarray(ds, dtype=float)
        dr = np.asarray(dr, dtype=float)
        du = np.asarray(du, dtype=float)
        ds, dr, du = np.broadcast_arrays(ds, dr, du)
        if np.any(ds < 0.0) or np.any(dr <= ds) or np.any(du <= dr):
            raise ValueError("offsets must satisfy du > dr > ds >= 0")
        return _f_exponent(ds, dr - ds, du - ds, self.params)


def _f_exponent(ds, drs, dus, params: RBParams):
    """F at offsets ds = s-t, drs = r-s, dus = u-s (arrays OK)."""
    h, gam = params.H, params.gamma
    th = 2.0 * h
    out = (0.5 * drs ** th * g_gamma_many(dus / drs, 1.0, gam)
           - 0.125 * (ds ** th + (ds + drs) ** th))
    pos = ds > 0.0
    if np.all(pos):
        y_r = 1.0 + drs / ds
        y_u = 1.0 + dus / ds
        out = out + ds ** th * (0.25 * g_gamma_many(y_r, 1.0, gam)
                                + 0.5 * g_gamma_many(y_u, 1.0, gam)
                                + 0.5 * g_gamma_many(y_u, y_r, gam))
    elif np.any(pos):
        sub = _f_exponent(ds[pos], drs[pos], dus[pos], params)
        out = np.asarray(out)
        out[pos] = sub
    return out


def _exp_f_grid(ds: float, drs: np.ndarray, dus: np.ndarray,
                params: RBParams) -> np.ndarray:
    """exp(eta^2 F) on a (r, u) tensor: drs (nw,), dus (nw, nz), ds > 0."""
    h, gam = params.H, params.gamma
    th = 2.0 * h
    y_r = 1.0 + drs / ds
    g_rr = g_gamma_many(y_r, 1.0, gam)
    y_u = 1.0 + dus / ds
    g_u = g_gamma_many(y_u, 1.0, gam)
    g_2 = g_gamma_many(y_u, y_r[:, None], gam)
    g_in = g_gamma_many(dus / drs[:, None], 1.0, gam)
    f = ds ** th * (0.25 * g_rr[:, None] + 0.5 * g_u + 0.5 * g_2)
    f += 0.5 * (drs ** th)[:, None] * g_in
    f -= 0.125 * (ds ** th + ((ds + drs) ** th)[:, None])
    return np.exp(params.eta * params.eta * f)


# ----------------------------------------------------------- tree values
def _validate_span(t: float, T: float):
    if not T > t:
        raise ValueError(f"need T > t, got t={t}, T={T}")


def x_diamond_m(curve: ForwardCurve, params: RBParams, t: float, T: float,
                panels: int = _DOUBLE_PANELS,
                order: int = _DOUBLE_ORDER) -> float:
    """First-order tree (X <> M): signed double integral against the curve.

    rho eta~ int_t^T ds sqrt(xi(s)) int_s^T du (u-s)^(-gamma) xi(u)
    exp{eta^2/2 (s-t)^(2H) [G_gamma((u-t)/(s-t)) - 1/4]}, inner axis in
    v = (u-s)^(1-gamma).  Relative accuracy ~1e-5 at default panels.
    """
    _validate_span(t, T)
    if params.rho == 0.0:
        return 0.0
    gam = params.gamma
    p = 1.0 / (1.0 - gam)
    th = 2.0 * params.H
    e2 = params.eta * params.eta
    knots = curve.breakpoints(t, T)[1:-1]
    s_x, s_w = _axis(t, T, knots, panels, order)
    root_xi_s = np.sqrt(curve.xi(s_x))
    total = 0.0
    for s, ws, rx in zip(s_x, s_w, root_xi_s):
        vmax = (T - s) ** (1.0 - gam)
        cuts = [(uk - s) ** (1.0 - gam) for uk in knots if uk > s]
        v, wv = _axis(0.0, vmax, cuts, panels, order)
        dus = v ** p
        g = g_gamma_many(1.0 + dus / (s - t), 1.0, gam)
        ys = curve.xi(s + dus) * np.exp(
            0.5 * e2 * (s - t) ** th * (g - 0.25))
        total += ws * rx * float(ys @ wv) / (1.0 - gam)
    return params.rho * params.eta_tilde * total


def m_diamond_m(curve: ForwardCurve, params: RBParams, t: float, T: float,
                panels: int = _DOUBLE_PANELS,
                order: int = _DOUBLE_ORDER) -> float:
    """Second-order tree (M <> M), variance form (nonnegative).

    2 int_t^T du xi(u) int_t^u dr xi(r)
    [exp{eta^2 (r-t)^(2H) G_gamma((u-t)/(r-t))} - 1]; expm1 keeps the
    small-eta regime exact.  Relative accuracy ~1e-6 at default panels.
    """
    _validate_span(t, T)
    th = 2.0 * params.H
    e2 = params.eta * params.eta
    gam = params.gamma
    knots = curve.breakpoints(t, T)[1:-1]
    u_x, u_w = _axis(t, T, knots, panels, order)
    xi_u = curve.xi(u_x)
    total = 0.0
    for u, wu, xu in zip(u_x, u_w, xi_u):
        r, wr = _axis(t, u, [uk for uk in knots if uk < u], panels, order)
        g = g_gamma_many((u - t) / (r - t), 1.0, gam)
        ys = curve.xi(r) * np.expm1(e2 * (r - t) ** th * g)
        total += wu * xu * float(ys @ wr)
    return 2.0 * total


def m_diamond_m_raw(curve: ForwardCurve, params: RBParams, t: float,
                    T: float, panels: Tuple[int, int, int] = _RAW_PANELS,
                    order: int = _TRIPLE_ORDER) -> float:
    """(M <> M) by the unsimplified ordered triple integral (cross-check).

    2 eta~^2 int ds int dr (r-s)^(-gamma) xi(r) int du (u-s)^(-gamma)
    xi(u) exp{eta^2 (s-t)^(2H) G_gamma((u-t)/(s-t), (r-t)/(s-t))}; the u
    axis is substituted v = (u-s)^(1-gamma) and starts at v = w, the
    substituted r variable.  Coarse-grid companion to m_diamond_m.
    """
    _validate_span(t, T)
    gam = params.gamma
    p = 1.0 / (1.0 - gam)
    th = 2.0 * params.H
    e2 = params.eta * params.eta
    knots = curve.breakpoints(t, T)[1:-1]
    s_x, s_w = _axis(t, T, knots, panels[0], order)
    zw, wzw = _graded01(panels[1], order)
    zv, wzv = _graded01(panels[2], order)
    total = 0.0
    for s, ws in zip(s_x, s_w):
        wmax = (T - s) ** (1.0 - gam)
        w = wmax * zw
        drs = w ** p
        v = w[:, None] + (wmax - w)[:, None] * zv[None, :]
        dus = v ** p
        g2 = g_gamma_many(1.0 + dus / (s - t),
                          (1.0 + drs / (s - t))[:, None], gam)
        ys = curve.xi(s + dus) * np.exp(e2 * (s - t) ** th * g2)
        inner = (wmax - w) * (ys @ wzv) / (1.0 - gam)
        total += ws * wmax * float((curve.xi(s + drs) * inner) @ wzw) \
            / (1.0 - gam)
    return 2.0 * params.eta_tilde ** 2 * total


def x_x_m(curve: ForwardCurve, params: RBParams, t: float, T: float,
          panels: Tuple[int, int, int] = _TRIPLE_PANELS,
          order: int = _TRIPLE_ORDER) -> float:
    """Second-order tree X <> (X <> M) = (rho eta~)^2 {I/2 + J}.

    I carries kernels (r-s)^(-gamma) (u-r)^(-gamma), J carries
    (u-s)^(-gamma) (u-r)^(-gamma); both weight sqrt(xi(s)) sqrt(xi(r))
    xi(u) exp(eta^2 F).  Tensorized GL after per-axis substitutions;
    relative accuracy ~1e-4 at default panels.  Proportional to rho^2.
    """
    _validate_span(t, T)
    if params.rho == 0.0:
        return 0.0
    gam = params.gamma
    p = 1.0 / (1.0 - gam)
    knots = curve.breakpoints(t, T)[1:-1]
    s_x, s_w = _axis(t, T, knots, panels[0], order)
    zw, wzw = _graded01(panels[1], order)
    zv, wzv = _graded01(panels[2], order)
    root_xi_s = np.sqrt(curve.xi(s_x))
    i_val = 0.0
    j_val = 0.0
    for s, ws, rxs in zip(s_x, s_w, root_xi_s):
        ds = s - t
        # I: middle axis substituted for (r-s)^(-gamma), inner for
        # (u-r)^(-gamma)
        wmax = (T - s) ** (1.0 - gam)
        w = wmax * zw
        drs = w ** p
        vmax = (T - s - drs) ** (1.0 - gam)
        dus = drs[:, None] + (vmax[:, None] * zv[None, :]) ** p
        ys = curve.xi(s + dus) * _exp_f_grid(ds, drs, dus, params)
        inner = vmax * (ys @ wzv) / (1.0 - gam)
        mid = np.sqrt(curve.xi(s + drs)) * inner
        i_val += ws * rxs * wmax * float(mid @ wzw) / (1.0 - gam)
        # J: plain middle axis, inner substituted for (u-r)^(-gamma),
        # leaving the bounded (u-s)^(-gamma) factor explicit
        drs = (T - s) * zw
        vmax = (T - s - drs) ** (1.0 - gam)
        dus = drs[:, None] + (vmax[:, None] * zv[None, :]) ** p
        ys = (dus ** (-gam) * curve.xi(s + dus)
              * _exp_f_grid(ds, drs, dus, params))
        inner = vmax * (ys @ wzv) / (1.0 - gam)
        mid = np.sqrt(curve.xi(s + drs)) * inner
        j_val += ws * rxs * (T - s) * float(mid @ wzw)
    pref = (params.rho * params.eta_tilde) ** 2
    return pref * (0.5 * i_val + j_val)
