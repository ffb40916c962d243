"""Affine forward-variance engine.

Compiles diamond trees to convolution profiles h(tau) against a kernel
family and evaluates them on a forward variance curve:

    value(tree) = int_t^T xi_t(u) h(T - u) du.

Base cases: X<>X -> 1, X<>zeta -> rho*kbar, zeta<>zeta -> kbar^2; a tree
against a subtree convolves the subtree's profile with the kernel first
(X<>T -> rho*(kappa*h), zeta<>T -> kbar*(kappa*h)) and two subtrees
multiply their convolved profiles.

Numerics: profiles carry an optional singular "head" monomial c*tau^p
that is convolved and integrated in closed form, with only the smooth
remainder going through the piecewise-linear product-integration rule.
On a pure power-law kernel the head captures the whole profile and tree
values come out exact to rounding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .specfun import mittag_leffler
from .trees import Forest, Tree, diamond, leaf

__all__ = [
    "KernelSpec",
    "ForwardCurve",
    "HProfile",
    "RhoSpec",
    "CoverageError",
    "uniform_grid",
    "kernel_convolve",
    "compile_tree",
    "evaluate_profile",
    "forest_value",
    "curve_power_integral",
]

DEFAULT_DELTA = 30.0 / 365.0

# heads with power >= this are dropped; a single monomial costs nothing
# to keep, so the cutoff only guards against absurd powers from deep trees
_HEAD_POWER_CUTOFF = 8.0


class CoverageError(ValueError):
    """The forward curve does not cover the requested interval."""


@dataclass(frozen=True)
class RhoSpec:
    """Spot/vol correlation d<W,Z> = rho dt."""
    rho: float

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")


def _rho_value(rho) -> float:
    if isinstance(rho, RhoSpec):
        return rho.rho
    r = float(rho)
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {r}")
    return r


@dataclass(frozen=True)
class KernelSpec:
    """Volatility kernel kappa(tau) of the affine forward-variance model.

    Families:
      power-law     kappa = nu tau^(alpha-1) / Gamma(alpha)
      exp-decay     kappa = nu exp(-lam tau)
      rough-heston  kappa = nu tau^(alpha-1) E_{alpha,alpha}(-lam tau^alpha)

    delta is the averaging window of the zeta leaf:
    kbar(tau) = int_tau^(tau+delta) kappa(u) du.
    """
    family: str
    nu: float
    alpha: float = 1.0
    lam: float = 0.0
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.family not in ("power-law", "exp-decay", "rough-heston"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.nu > 0.0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.family in ("power-law", "rough-heston"):
            if not 0.5 < self.alpha <= 1.0:
                raise ValueError(
                    f"alpha must lie in (1/2, 1], got {self.alpha}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.delta < 0.0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")

    @classmethod
    def power_law(cls, nu: float, alpha: float, delta: float = DEFAULT_DELTA):
        return cls("power-law", nu, alpha=alpha, delta=delta)

    @classmethod
    def exp_decay(cls, nu: float, lam: float, delta: float = DEFAULT_DELTA):
        return cls("exp-decay", nu, lam=lam, delta=delta)

    @classmethod
    def rough_heston(cls, nu: float, alpha: float, lam: float,
                     delta: float = DEFAULT_DELTA):
        if lam == 0.0:
            return cls("power-law", nu, alpha=alpha, delta=delta)
        return cls("rough-heston", nu, alpha=alpha, lam=lam, delta=delta)

    def kappa(self, tau):
        """Kernel values; tau must be positive (integrable singularity)."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau <= 0.0):
            raise ValueError("kappa is evaluated for tau > 0 only")
        if self.family == "power-law":
            return self.nu * tau ** (self.alpha - 1.0) / math.gamma(self.alpha)
        if self.family == "exp-decay":
            return self.nu * np.exp(-self.lam * tau)
        out = np.empty_like(tau)
        flat = tau.ravel()
        res = out.ravel()
        for i, tv in enumerate(flat):
            res[i] = (self.nu * tv ** (self.alpha - 1.0)
                      * mittag_leffler(self.alpha, self.alpha,
                                       -self.lam * tv ** self.alpha))
        return out

    def k1(self, tau):
        """Running integral int_0^tau kappa(v) dv, in closed form."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0.0):
            raise ValueError("k1 needs tau >= 0")
        if self.family == "power-law":
            return self.nu * tau ** self.alpha / math.gamma(1.0 + self.alpha)
        if self.family == "exp-decay":
            if self.lam == 0.0:
                return self.nu * tau
            return -self.nu * np.expm1(-self.lam * tau) / self.lam
        out = np.empty_like(tau)
        flat = tau.ravel()
        res = out.ravel()
        a = self.alpha
        for i, tv in enumerate(flat):
            if tv == 0.0:
                res[i] = 0.0
            else:
                res[i] = (self.nu * tv ** a
                          * mittag_leffler(a, a + 1.0, -self.lam * tv ** a))
        return out

    def k2(self, tau):
        """First moment int_0^tau v kappa(v) dv, in closed form."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0.0):
            raise ValueError("k2 needs tau >= 0")
        a = self.alpha
        if self.family == "power-law":
            return (self.nu * tau ** (a + 1.0)
                    / ((a + 1.0) * math.gamma(a)))
        if self.family == "exp-decay":
            if self.lam == 0.0:
                return self.nu * tau ** 2 / 2.0
            x = self.lam * tau
            # 1-(1+x)e^-x suffers cancellation for small x
            series = x * x * (1.0 / 2.0 - x / 3.0 + x ** 2 / 8.0
                              - x ** 3 / 30.0 + x ** 4 / 144.0)
            direct = 1.0 - (1.0 + x) * np.exp(-x)
            w = np.where(x < 1e-2, series, direct)
            return self.nu * w / self.lam ** 2
        out = np.empty_like(tau)
        flat = tau.ravel()
        res = out.ravel()
        for i, tv in enumerate(flat):
            if tv == 0.0:
                res[i] = 0.0
            else:
                z = -self.lam * tv ** a
                res[i] = (self.nu * tv ** (a + 1.0)
                          * (mittag_leffler(a, a + 1.0, z)
                             - mittag_leffler(a, a + 2.0, z)))
        return out

    def kappa_bar(self, tau):
        """Forward-window integral int_tau^(tau+delta) kappa(u) du."""
        tau = np.asarray(tau, dtype=float)
        return self.k1(tau + self.delta) - self.k1(tau)

    def kappa_bar_sing(self) -> Optional[Tuple[float, float]]:
        """Leading non-smooth monomial of kappa_bar at tau = 0+.

        kappa_bar(tau) = kappa_bar(0) - nu tau^alpha / Gamma(1+alpha) + C^2
        terms for the power families; the exponential kernel is smooth,
        as is everything at alpha = 1.
        """
        if self.family == "exp-decay" or self.alpha == 1.0:
            return None
        return -self.nu / math.gamma(1.0 + self.alpha), self.alpha

    def conv_head(self, coeff, p: float, grid: np.ndarray):
        """Closed-form (kappa * coeff tau^p) on the grid.

        Returns (values, head_out) where head_out is the leading monomial
        of the result; for the power-law family the values equal the head
        exactly.
        """
        a = self.alpha
        if self.family == "power-law":
            c2 = coeff * self.nu * math.gamma(p + 1.0) / math.gamma(p + 1.0 + a)
            return c2 * grid ** (p + a), (c2, p + a)
        if self.family == "rough-heston":
            gp = math.gamma(p + 1.0)
            vals = np.empty(len(grid), dtype=complex if
                            isinstance(coeff, complex) else float)
            for i, tv in enumerate(grid):
                if tv == 0.0:
                    vals[i] = 0.0
                else:
                    vals[i] = (coeff * self.nu * gp * tv ** (p + a)
                               * mittag_leffler(a, a + p + 1.0,
                                                -self.lam * tv ** a))
            return vals, (coeff * self.nu * gp / math.gamma(p + 1.0 + a), p + a)
        # exp-decay: int_0^tau e^{-lam(tau-s)} s^p ds via the stable
        # all-positive series tau^{p+1} e^{-x} sum_k x^k/(k!(p+1+k))
        x = self.lam * grid
        s = np.zeros_like(x)
        term = np.ones_like(x)
        k = 0
        while True:
            s += term / (p + 1.0 + k)
            k += 1
            nxt = term * x / k
            if np.all(nxt / (p + 1.0 + k) < 1e-17 * np.maximum(s, 1e-300)):
                break
            term = nxt
            if k > 500:
                break
        vals = coeff * self.nu * np.exp(-x) * grid ** (p + 1.0) * s
        return vals, (coeff * self.nu / (p + 1.0), p + 1.0)

    def pi_weights(self, n: int, step: float):
        """Product-integration weights for piecewise-linear convolution.

        A_j = int over the j-th subinterval of kappa, B_j the first
        moment; exactness on linear h follows from using both.
        """
        taus = step * np.arange(n + 1)
        a = np.diff(self.k1(taus))
        b = np.diff(self.k2(taus))
        j = np.arange(1, n + 1)
        p = np.zeros(n + 1)
        q = np.zeros(n + 1)
        p[1:] = (1.0 - j) * a + b / step
        q[1:] = j * a - b / step
        return p, q


@dataclass(frozen=True)
class ForwardCurve:
    """Forward variance curve xi_t(u) given by knots and an interpolation.

    flat-forward: xi is the value of the latest knot at or before u and
    extends flat beyond the last knot.  linear: polyline through the
    knots, no extrapolation.  Coverage starts at the first knot.
    """
    knots: Tuple[Tuple[float, float], ...]
    interpolation: str = "flat-forward"

    def __post_init__(self):
        if self.interpolation not in ("flat-forward", "linear"):
            raise ValueError(
                f"unknown interpolation {self.interpolation!r}")
        k = tuple((float(u), float(x)) for u, x in self.knots)
        if not k:
            raise ValueError("curve needs at least one knot")
        us = [u for u, _ in k]
        if any(u2 <= u1 for u1, u2 in zip(us, us[1:])):
            raise ValueError("knot times must be strictly increasing")
        if any(x <= 0.0 for _, x in k):
            raise ValueError("xi must be positive at all knots")
        object.__setattr__(self, "knots", k)

    @classmethod
    def flat(cls, xi0: float):
        return cls(((0.0, xi0),))

    @classmethod
    def from_csv(cls, path, interpolation: str = "flat-forward"):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["maturity_years", "xi"]:
            raise ValueError(
                "curve CSV must start with header 'maturity_years,xi'")
        knots = tuple((float(r[0]), float(r[1])) for r in rows[1:] if r)
        return cls(knots, interpolation=interpolation)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["maturity_years", "xi"])
            for u, x in self.knots:
                w.writerow([f"{u:.12g}", f"{x:.12g}"])

    @property
    def _us(self):
        return np.array([u for u, _ in self.knots])

    @property
    def _xis(self):
        return np.array([x for _, x in self.knots])

    def _check_coverage(self, lo: float, hi: float):
        if lo < self.knots[0][0] - 1e-12:
            raise CoverageError(
                f"curve starts at {self.knots[0][0]}, needs {lo}")
        if self.interpolation == "linear" and hi > self.knots[-1][0] + 1e-12:
            raise CoverageError(
                f"linear curve ends at {self.knots[-1][0]}, needs {hi}")

    def xi(self, u):
        """Curve value(s) at time(s) u."""
        u = np.asarray(u, dtype=float)
        self._check_coverage(float(np.min(u)) if u.size else 0.0,
                             float(np.max(u)) if u.size else 0.0)
        us, xis = self._us, self._xis
        if self.interpolation == "flat-forward":
            idx = np.clip(np.searchsorted(us, u, side="right") - 1,
                          0, len(us) - 1)
            return xis[idx] if u.shape else float(xis[idx])
        out = np.interp(u, us, xis)
        return out if u.shape else float(out)

    def segment_at(self, u: float):
        """Coefficients (A, B) with xi(v) = A + B v near v = u."""
        us, xis = self._us, self._xis
        i = int(np.clip(np.searchsorted(us, u, side="right") - 1,
                        0, len(us) - 1))
        if self.interpolation == "flat-forward" or i == len(us) - 1:
            return float(xis[i]), 0.0
        b = (xis[i + 1] - xis[i]) / (us[i + 1] - us[i])
        return float(xis[i] - b * us[i]), float(b)

    def breakpoints(self, lo: float, hi: float):
        us = self._us
        inner = us[(us > lo + 1e-14) & (us < hi - 1e-14)]
        return np.concatenate(([lo], inner, [hi]))


def curve_power_integral(curve: ForwardCurve, t: float, T: float,
                         p: float) -> float:
    """Exact int_t^T xi(u) (T-u)^p du for piecewise curves, p > -1."""
    if not T > t:
        raise ValueError("need T > t")
    if p <= -1.0:
        raise ValueError("power must exceed -1")
    curve._check_coverage(t, T)
    edges = curve.breakpoints(t, T)
    total = 0.0
    for u0, u1 in zip(edges[:-1], edges[1:]):
        a, b = curve.segment_at(0.5 * (u0 + u1))
        t1, t2 = T - u1, T - u0
        total += ((a + b * T) * (t2 ** (p + 1.0) - t1 ** (p + 1.0)) / (p + 1.0)
                  - b * (t2 ** (p + 2.0) - t1 ** (p + 2.0)) / (p + 2.0))
    return total


def uniform_grid(tau_max: float, n_steps: int) -> np.ndarray:
    if not tau_max > 0.0:
        raise ValueError("tau_max must be positive")
    if n_steps < 16:
        raise ValueError("need at least 16 steps")
    return np.linspace(0.0, tau_max, n_steps + 1)


@dataclass
class HProfile:
    """Profile h on a uniform grid over [0, T-t].

    ``values`` hold h at the grid nodes.  ``head`` optionally records
    that h(tau) = c tau^p + (smooth remainder); the head part is treated
    in closed form by convolution and curve integration.
    """
    grid: np.ndarray
    values: np.ndarray
    head: Optional[Tuple[complex, float]] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values)
        if self.grid.ndim != 1 or len(self.grid) < 17:
            raise ValueError("profile grid needs at least 16 steps")
        if len(self.values) != len(self.grid):
            raise ValueError("values/grid length mismatch")
        if self.grid[0] != 0.0:
            raise ValueError("profile grid must start at 0")
        steps = np.diff(self.grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("profile grid must be uniform")
        if self.head is not None and (self.head[0] == 0
                                      or self.head[1] >= _HEAD_POWER_CUTOFF):
            self.head = None

    @property
    def tau_max(self) -> float:
        return float(self.grid[-1])

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def head_values(self) -> np.ndarray:
        if self.head is None:
            return np.zeros(len(self.grid),
                            dtype=complex if np.iscomplexobj(self.values)
                            else float)
        c, p = self.head
        if p == 0.0:
            return np.full(len(self.grid), c)
        return c * self.grid ** p

    def remainder(self) -> np.ndarray:
        return self.values - self.head_values()


def _pl_convolve(values: np.ndarray, pw, qw) -> np.ndarray:
    # product-integration convolution of a piecewise-linear profile:
    # out_i = sum_{j=1..i} values_{i-j} P_j + values_{i-j+1} Q_j
    n = len(values) - 1
    t1 = np.convolve(values, pw)[:n + 1]
    t2 = np.convolve(values, qw)[1:n + 2]
    # the shifted convolution also picks up j = i+1; remove it
    extra = values[0] * np.append(qw[1:], 0.0)
    return t1 + t2 - extra


def kernel_convolve(kernel: KernelSpec, h: HProfile) -> HProfile:
    """(kappa * h)(tau) on h's grid.

    The head monomial convolves in closed form; the remainder goes
    through the exact-subinterval-moment rule, so the kernel singularity
    never meets a naive quadrature.
    """
    grid = h.grid
    n = len(grid) - 1
    pw, qw = kernel.pi_weights(n, h.step)
    rem = h.remainder()
    out_vals = _pl_convolve(rem, pw, qw)
    head_out = None
    if h.head is not None:
        c, p = h.head
        hv, head_out = kernel.conv_head(c, p, grid)
        out_vals = out_vals + hv
    return HProfile(grid, out_vals, head_out)


def _expand_m(tree: Tree) -> Tree:
    if tree.is_leaf:
        if tree.symbol == "M":
            x = leaf("X")
            return diamond(x, x)
        return tree
    return diamond(_expand_m(tree.left), _expand_m(tree.right))


def _compile(tree: Tree, kernel: KernelSpec, rho: float,
             grid: np.ndarray, cache: dict) -> HProfile:
    hit = cache.get(tree)
    if hit is not None:
        return hit
    left, right = tree.left, tree.right
    if left.is_leaf and right.is_leaf:
        pair = (left.symbol, right.symbol)
        if pair == ("X", "X"):
            prof = HProfile(grid, np.ones(len(grid)), (1.0, 0.0))
        elif pair == ("X", "Z"):
            sing = kernel.kappa_bar_sing()
            head = (rho * sing[0], sing[1]) if sing else None
            prof = HProfile(grid, rho * kernel.kappa_bar(grid), head)
        elif pair == ("Z", "Z"):
            kb = kernel.kappa_bar(grid)
            sing = kernel.kappa_bar_sing()
            head = (2.0 * kb[0] * sing[0], sing[1]) if sing else None
            prof = HProfile(grid, kb ** 2, head)
        else:
            raise ValueError(f"unsupported leaf pair {pair}")
    elif left.is_leaf:
        inner = kernel_convolve(
            kernel, _compile(right, kernel, rho, grid, cache))
        if left.symbol == "X":
            head = None
            if inner.head is not None:
                head = (rho * inner.head[0], inner.head[1])
            prof = HProfile(grid, rho * inner.values, head)
        elif left.symbol == "Z":
            kb = kernel.kappa_bar(grid)
            head = None
            if inner.head is not None:
                head = (inner.head[0] * kb[0], inner.head[1])
            prof = HProfile(grid, kb * inner.values, head)
        else:
            raise ValueError(f"unsupported leaf {left.symbol}")
    else:
        h1 = kernel_convolve(kernel, _compile(left, kernel, rho, grid, cache))
        h2 = kernel_convolve(kernel, _compile(right, kernel, rho, grid, cache))
        head = None
        if h1.head is not None and h2.head is not None:
            head = (h1.head[0] * h2.head[0], h1.head[1] + h2.head[1])
        prof = HProfile(grid, h1.values * h2.values, head)
    cache[tree] = prof
    return prof


def compile_tree(tree: Tree, kernel: KernelSpec, rho,
                 grid: np.ndarray) -> HProfile:
    """Compile a diamond tree to its convolution profile on the grid.

    Leaves may be X, Z (the forward-window leaf) or M, which is expanded
    to X<>X before compilation so the two-leaf base cases are the single
    source of truth.
    """
    r = _rho_value(rho)
    if tree.is_leaf:
        raise ValueError("a bare leaf has no profile; need a diamond")
    expanded = _expand_m(tree)
    return _compile(expanded, kernel, r, np.asarray(grid, dtype=float), {})


def evaluate_profile(h: HProfile, curve: ForwardCurve, t: float,
                     T: float):
    """int_t^T xi(u) h(T-u) du.

    Head monomial against the curve in closed form; remainder by a rule
    exact for (linear curve segment) x (piecewise-linear remainder),
    with splits at curve knots so jumps never straddle an interval.
    """
    if not T > t:
        raise ValueError("need T > t")
    if abs(h.tau_max - (T - t)) > 1e-9 * max(1.0, T - t):
        raise ValueError(
            f"profile spans {h.tau_max}, asked to evaluate on {T - t}")
    curve._check_coverage(t, T)
    total = 0.0 + 0.0j if np.iscomplexobj(h.values) else 0.0
    if h.head is not None:
        c, p = h.head
        total = total + c * curve_power_integral(curve, t, T, p)
    rem = h.remainder()
    # combined node set: grid plus curve knots mapped to tau = T - u
    taus = h.grid
    kts = np.sort(T - curve.breakpoints(t, T))
    nodes = np.unique(np.concatenate((taus, kts)))
    rvals = np.interp(nodes, taus, rem.real)
    if np.iscomplexobj(rem):
        rvals = rvals + 1j * np.interp(nodes, taus, rem.imag)
    acc = 0.0 + 0.0j if np.iscomplexobj(rem) else 0.0
    for s0, s1 in zip(nodes[:-1], nodes[1:]):
        if s1 - s0 <= 0.0:
            continue
        a, b = curve.segment_at(T - 0.5 * (s0 + s1))
        # xi as a function of tau on this interval: w(tau) = (a+bT) - b tau
        w0 = (a + b * T) - b * s0
        w1 = (a + b * T) - b * s1
        i0 = np.searchsorted(nodes, s0)
        r0, r1 = rvals[i0], rvals[i0 + 1]
        # exact integral of (linear w) x (linear r)
        acc = acc + (s1 - s0) / 6.0 * (w0 * (2 * r0 + r1) + w1 * (r0 + 2 * r1))
    total = total + acc
    return total


def forest_value(forest: Forest, a, b, c, kernel: KernelSpec, rho,
                 curve: ForwardCurve, t: float, T: float,
                 n_steps: int = 512) -> complex:
    """Bind forest coefficients at (a, b, c) and evaluate every tree."""
    grid = uniform_grid(T - t, n_steps)
    r = _rho_value(rho)
    cache: dict = {}
    total = 0.0 + 0.0j
    for tree, coeff in forest.bind(a, b, c):
        prof = _compile(_expand_m(tree), kernel, r, grid, cache)
        total += coeff * evaluate_profile(prof, curve, t, T)
    return total
