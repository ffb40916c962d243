"""Monte Carlo oracles for diamond-tree values.

Two simulators share one bundle format.  Rough Heston runs a
full-truncation Euler scheme on the Volterra form with cell-averaged
kernel weights, carrying the whole forward-variance curve so the
variance-swap process is a martingale by construction.  Rough Bergomi
steps the Volterra Gaussian exactly: the per-step increments of the
accumulated volatility integrals are jointly Gaussian with a stationary
covariance, so a single Cholesky factor (reused through leading blocks
as maturities expire) reproduces the continuous-time law of the curve
at the grid dates with no discretisation error in the vol layer.

Estimators form realized-covariation sums per path and report the
standard error over antithetic pair means.  Paths are generated in
chunks, each from its own counter-based substream keyed by
(seed, chunk index), so results are bit-reproducible for a fixed
configuration regardless of platform threading.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .afv import ForwardCurve
from .rough_bergomi import RBParams
from .rough_heston import RHParams
from .specfun import g_gamma_many

__all__ = [
    "SimConfig",
    "PathBundle",
    "simulate_rough_heston",
    "simulate_rough_bergomi",
    "estimate_diamond",
    "estimate_leverage",
]

logger = logging.getLogger(__name__)

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; identical configs give identical results.

    antithetic pairs live at adjacent path indices (2i, 2i+1); the
    second path of each pair reuses the first path's normals negated.
    snapshot_steps lists grid indices at which the simulated forward
    curve is stored in full (one (n_paths, n_live) array per index).
    zeta_start, if set, adds a forward-window variance-swap process
    covering [zeta_start, T]; with_xdm_process adds the running value
    of the first-order covariation tree evaluated on the live curve
    (rough Bergomi only).
    """

    n_paths: int
    n_steps: int
    seed: int = 0
    antithetic: bool = True
    chunk_paths: int = 20_000
    snapshot_steps: tuple = ()
    with_xdm_process: bool = False
    zeta_start: Optional[float] = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not 0 <= self.seed < 2 ** 63:
            raise ValueError("seed must fit in a nonnegative 63-bit integer")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if self.chunk_paths < 2:
            raise ValueError("chunk_paths must be at least 2")
        if self.antithetic and self.chunk_paths % 2:
            raise ValueError("chunk_paths must be even under antithetic sampling")
        if self.dtype not in _DTYPES:
            raise ValueError("dtype must be 'float32' or 'float64'")
        for s in self.snapshot_steps:
            if not 0 <= int(s) <= self.n_steps:
                raise ValueError("snapshot_steps entries must lie in [0, n_steps]")


@dataclass
class PathBundle:
    """Simulated paths on a uniform grid, one row per path.

    x is the log price (x[:, 0] = 0), v the spot variance after
    truncation (nonnegative), m_swap the variance-swap value to the
    horizon.  xdm and zeta are optional extra processes; xi_snapshots
    maps a grid index m to the forward curve xi_m(s_j), j = m..n_steps.
    """

    model: str
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    m_swap: np.ndarray
    config: SimConfig
    xdm: Optional[np.ndarray] = None
    zeta: Optional[np.ndarray] = None
    xi_snapshots: dict = field(default_factory=dict)
    truncation_fraction: float = 0.0

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def process(self, spec: str) -> np.ndarray:
        """Resolve a process label to its path array.

        Accepts X (log price), S (price, exp of X), M (variance swap),
        ZETA (forward-window swap, if configured) and XDM (running
        first-order tree, if configured).
        """
        name = str(spec).strip().upper()
        if name == "X":
            return self.x
        if name == "S":
            return np.exp(self.x)
        if name == "M":
            return self.m_swap
        if name == "ZETA":
            if self.zeta is None:
                raise ValueError(
                    "zeta process not available; set SimConfig.zeta_start")
            return self.zeta
        if name == "XDM":
            if self.xdm is None:
                raise ValueError(
                    "xdm process not available; set SimConfig.with_xdm_process")
            return self.xdm
        raise ValueError(f"unknown process spec {spec!r}")


def _substream(seed: int, chunk_index: int) -> np.random.Generator:
    key = np.array([seed, chunk_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_sizes(n_paths: int, chunk_paths: int, antithetic: bool):
    step = min(chunk_paths, n_paths)
    if antithetic and step % 2:
        step -= 1
    sizes = []
    left = n_paths
    while left > 0:
        c = min(step, left)
        sizes.append(c)
        left -= c
    return sizes


def _swap_weights(n_steps: int, delta: float) -> np.ndarray:
    # trapezoid masses over [0, T]; the swap process uses the same fixed
    # weights for realized and forward legs so the handoff is seamless
    c = np.full(n_steps + 1, delta)
    c[0] = 0.5 * delta
    c[-1] = 0.5 * delta
    return c


def _window_weights(times: np.ndarray, start: float) -> tuple:
    """Trapezoid masses over [start, T] and the first covered index."""
    n = len(times) - 1
    delta = times[1] - times[0]
    j0 = int(np.searchsorted(times, start - 1e-12 * max(1.0, abs(start))))
    if not math.isclose(times[j0], start, rel_tol=0.0, abs_tol=1e-9 * max(1.0, delta)):
        raise ValueError("zeta_start must coincide with a grid date")
    if j0 >= n:
        raise ValueError("zeta window must have positive length")
    w = np.zeros(n + 1)
    w[j0:] = delta
    w[j0] = 0.5 * delta
    w[-1] = 0.5 * delta
    return w, j0


# ---------------------------------------------------------------------------
# rough Heston
# ---------------------------------------------------------------------------


def simulate_rough_heston(config: SimConfig,
                          params: RHParams,
                          curve: ForwardCurve,
                          horizon: float) -> PathBundle:
    """Full-truncation Euler paths of the rough Heston forward-variance model.

    The Volterra convolution uses cell-averaged kernel weights (exact
    integrals of kappa over grid cells), so the scheme's forward curve
    has conditional expectations that match the model exactly; the log
    price uses a log-Euler step that keeps exp(X) a martingale in the
    scheme itself.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    n = config.n_steps
    delta = horizon / n
    times = delta * np.arange(n + 1)
    dtype = _DTYPES[config.dtype]

    kernel = params.kernel()
    # cell-averaged kernel weights: kcell[d] = mean of kappa over the
    # d-th cell behind the evaluation date
    edges = kernel.k1(delta * np.arange(n + 1))
    kcell = (np.diff(edges) / delta).astype(dtype)

    xi0 = np.asarray(curve.xi(times), dtype=np.float64)
    if np.any(xi0 <= 0.0):
        raise ValueError("forward curve must be positive on the grid")
    cw = _swap_weights(n, delta)
    zw = j0 = None
    if config.zeta_start is not None:
        zw, j0 = _window_weights(times, config.zeta_start)
    if config.with_xdm_process:
        raise ValueError("the xdm process is only available for rough Bergomi")

    rho = params.rho
    rho_perp = math.sqrt(max(0.0, 1.0 - rho * rho))
    sq_delta = math.sqrt(delta)

    out_x = np.empty((config.n_paths, n + 1), dtype=dtype)
    out_v = np.empty_like(out_x)
    out_m = np.empty_like(out_x)
    out_z = np.empty_like(out_x) if zw is not None else None
    snapshots = {int(s): np.empty((config.n_paths, n + 1 - int(s)), dtype=dtype)
                 for s in config.snapshot_steps}

    cw_d = cw.astype(dtype)
    zw_d = zw.astype(dtype) if zw is not None else None
    xi0_d = xi0.astype(dtype)
    trunc_hits = 0
    trunc_total = 0

    row0 = 0
    for ci, c in enumerate(_chunk_sizes(config.n_paths, config.chunk_paths,
                                        config.antithetic)):
        rng = _substream(config.seed, ci)
        nb = c // 2 if config.antithetic else c
        signs = (1.0, -1.0) if config.antithetic else (1.0,)

        # fwd[b][:, j] is the current curve value at maturity s_j
        fwd = [np.tile(xi0_d, (nb, 1)) for _ in signs]
        x = [np.zeros((nb,), dtype=dtype) for _ in signs]
        realized = [np.zeros((nb,), dtype=np.float64) for _ in signs]
        realized_z = [np.zeros((nb,), dtype=np.float64) for _ in signs]

        def store(col, m, values):
            # interleave antithetic partners at adjacent rows
            if config.antithetic:
                for b in range(2):
                    col[row0 + b:row0 + c:2, m] = values[b]
            else:
                col[row0:row0 + c, m] = values[0]

        for m in range(n + 1):
            vp = [np.maximum(fwd[b][:, m], 0) for b in range(len(signs))]
            rtv = [np.sqrt(vp[b]) for b in range(len(signs))]
            store(out_x, m, x)
            store(out_v, m, vp)
            mm = [realized[b] + fwd[b][:, m:] @ cw_d[m:] for b in range(len(signs))]
            store(out_m, m, mm)
            if zw is not None:
                zz = [realized_z[b] + fwd[b][:, max(m, j0):] @ zw_d[max(m, j0):]
                      for b in range(len(signs))]
                store(out_z, m, zz)
            if m in snapshots:
                store(snapshots[m], slice(None), [fwd[b][:, m:] for b in range(len(signs))])
            if m == n:
                trunc_hits += sum(int(np.count_nonzero(fwd[b] < 0)) for b in range(len(signs)))
                trunc_total += len(signs) * nb * (n + 1)
                break

            z_main = rng.standard_normal((nb,), dtype=dtype)
            z_perp = rng.standard_normal((nb,), dtype=dtype)
            k = n - m
            for b, sgn in enumerate(signs):
                dw = sq_delta * sgn * z_main
                shock = rtv[b] * dw
                fwd[b][:, m + 1:] += kcell[:k, None].T * shock[:, None]
                x[b] += (-0.5 * delta) * vp[b] + rtv[b] * (
                    rho * dw + (rho_perp * sq_delta * sgn) * z_perp)
                realized[b] += cw[m] * vp[b]
                if zw is not None and m >= j0:
                    realized_z[b] += zw[m] * vp[b]
        row0 += c

    frac = trunc_hits / max(1, trunc_total)
    if frac > 0:
        logger.info("rough Heston truncation clipped %.3g%% of variance samples",
                    100.0 * frac)
    return PathBundle(model="rough_heston", times=times, x=out_x, v=out_v,
                      m_swap=out_m, config=config, zeta=out_z,
                      xi_snapshots=snapshots, truncation_fraction=frac)


# ---------------------------------------------------------------------------
# rough Bergomi
# ---------------------------------------------------------------------------


def _rb_increment_cov(n_steps: int, delta: float, gamma: float) -> np.ndarray:
    """Stationary covariance of one step's joint Gaussian increment.

    The volatility integrals are carried on a maturity lattice twice as
    fine as the time grid: index 0 is the Brownian increment over the
    step, index i >= 1 the increment for the maturity i/2 step-lengths
    ahead.  The half-step maturity (i = 1) expires inside the step, so
    its increment runs only to expiry; every variance-swap leg is then
    sampled exactly at its own maturity, and the swap's quadratic
    covariation resolves the short-lag correlation cusp at half the
    step spacing.  Stationarity in (step, offset) means one matrix
    serves every step: two maturities drop off per step, and leading
    principal blocks of the Cholesky factor remain valid factors.
    """
    h = 0.5 - gamma
    n = n_steps
    m = 2 * n
    cov = np.empty((m + 1, m + 1))
    cov[0, 0] = delta
    x = 0.5 * np.arange(1, m + 1, dtype=float)
    xm = np.maximum(x - 1.0, 0.0)       # expiring leg integrates a partial step
    head = (x ** (1.0 - gamma) - xm ** (1.0 - gamma)) / (1.0 - gamma)
    cov[0, 1:] = delta ** (1.0 - gamma) * head
    cov[1:, 0] = cov[0, 1:]
    diag = delta ** (2.0 * h) * (x ** (2.0 * h) - xm ** (2.0 * h)) / (2.0 * h)
    block = cov[1:, 1:]
    # expiring leg vs full-step legs: common window is [0, delta/2]
    if m >= 2:
        y1 = 2.0 * x[1:]
        block[0, 1:] = (delta ** (2.0 * h) * 0.5 ** (2.0 * h)
                        * g_gamma_many(y1, np.ones(m - 1), gamma) / (2.0 * h))
        block[1:, 0] = block[0, 1:]
        iu, ju = np.triu_indices(m - 1, k=1)
        ya = np.maximum(x[1:][iu], x[1:][ju])
        xa = np.minimum(x[1:][iu], x[1:][ju])
        off = delta ** (2.0 * h) * g_gamma_many(ya, xa, gamma) / (2.0 * h)
        sub = block[1:, 1:]
        sub[iu, ju] = off
        sub[ju, iu] = off
    idx = np.arange(m)
    block[idx, idx] = diag
    return cov


def _chol_with_retry(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        logger.warning("increment covariance not PD; retrying with 1e-12 jitter")
        jitter = 1e-12 * np.eye(cov.shape[0])
        try:
            return np.linalg.cholesky(cov + jitter)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "increment covariance is not positive definite even after "
                "a single 1e-12 jitter; aborting")


def _xdm_head_scale(gamma: float, window: int = 65536) -> float:
    """Grid constant scaling the first u-cell of the tree quadrature.

    Covariation estimates pair one-step increments, so the tree enters
    them only through its response to the step's Brownian increment.
    Summed over steps, the r-trapezoid response weights are the
    step-averaged kernel masses q(a) = int_0^1 (1+a-s)^(-gamma) ds, and
    unit r-weights reproduce the continuum r-mass exactly (the step
    average turns the node sum into the integral cell by cell).  The
    second response channel, with weight (u-r)^(-gamma) (u-s)^(-gamma)
    over s < r < u, has no such exactness: its lattice sum of u-cell
    masses times node responses falls short of the closed-form mass
    (W-s)^(2-2gamma)/((1-gamma)(2-2gamma)) by a gamma-dependent amount
    concentrated at the step, absorbed here into one scale on the first
    u-cell of the first r-node.  Without it, realized covariations
    against the tree are biased at O(n^(gamma-1)).
    """
    p = 1.0 - gamma
    w = window
    d = np.arange(1.0, w + 1.0)
    cmass = ((d + 0.5) ** p - (d - 0.5) ** p) / p
    cmass[0] = 1.5 ** p / p                      # head cell [0, 1.5]
    qv = ((d + 1.0) ** p - d ** p) / p           # q(1), ..., q(w)
    cc = np.cumsum(cmass)
    lattice = float(np.sum(qv[1:] * cc[:-1]) + np.sum(cmass[1:] * qv[1:]))
    wu = w + 1.5
    exact = (wu ** (3.0 - 2.0 * gamma) - (wu - 1.0) ** (3.0 - 2.0 * gamma)) / (
        p * (2.0 - 2.0 * gamma) * (3.0 - 2.0 * gamma))
    return (exact - lattice) / (cmass[0] * qv[0])


def _g_ratio_interpolant(n_max: float, gamma: float, knots: int = 2500):
    """Cubic spline of G(1 + x, 1) on the cusp-taming coordinate x^{2H}.

    G has a (y - 1)^{2H} cusp at coincident arguments, so a spline in x
    itself would need enormous resolution near 0; in z = x^{2H} the
    function is smooth and a modest uniform grid reaches ~1e-9.
    """
    from scipy.interpolate import CubicSpline
    h2 = 1.0 - 2.0 * gamma
    z = np.linspace(0.0, n_max ** h2, knots)
    y = 1.0 + z[1:] ** (1.0 / h2)
    vals = np.empty(knots)
    vals[0] = 1.0
    vals[1:] = g_gamma_many(y, np.ones(knots - 1), gamma)
    return CubicSpline(z, vals), h2


def _xdm_tables(n_steps: int, delta: float, params: RBParams):
    """Quadrature tables for the running first-order tree on the live curve.

    The tree value at step m is a double integral of
    sqrt(xi(r)) (u-r)^(-gamma) xi(u) exp-correction over m <= r < u <= T.
    Trapezoid nodes in r; in u the product of the kernel and the
    deterministic exp-correction is integrated exactly over cells centred
    on the nodes (the head cell [0, 1.5 delta] maps to the first node),
    which matters because the correction has a (u-r)^{2H} cusp along the
    diagonal that node sampling would turn into an O(n^{H-1/2}) bias.
    A separate last-column table removes the overhang of the final cell
    beyond the horizon.
    """
    gamma = params.gamma
    h = params.H
    eta = params.eta
    n = n_steps
    p = 1.0 - gamma

    spline, h2 = _g_ratio_interpolant(float(n + 1), gamma)
    gx, gw = np.polynomial.legendre.leggauss(8)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw

    d = np.arange(1, n + 1, dtype=float)
    lo = d - 0.5
    lo[0] = 0.0                            # head cell starts at the origin
    hi = d + 0.5
    wlo, whi, wmid = lo ** p, hi ** p, d ** p

    def cell_integrals(w0, w1):
        # int eps^-gamma corr(a, eps) d eps over [w0^(1/p), w1^(1/p)],
        # in the kernel-exact coordinate w = eps^p; returns rows a=0..n
        span = w1 - w0                                   # (n,)
        wn = w0[:, None] + span[:, None] * gx[None, :]   # (n, nodes)
        eps = wn ** (1.0 / p)
        out = np.zeros((n + 1, n + 1))
        base = span / p * delta ** p                     # row a = 0: corr = 1
        out[0, 1:] = base
        for a in range(1, n + 1):
            dmax = n - a
            if dmax < 1:
                break
            zz = (eps[:dmax] / a) ** h2
            g = spline(zz)
            corr = np.exp((0.5 * eta ** 2 * (a * delta) ** (2.0 * h))
                          * (g - 0.25))
            out[a, a + 1:a + 1 + dmax] = base[:dmax] * (corr @ gw)
        return out

    wcell = cell_integrals(wlo, whi)
    wlow = cell_integrals(wlo, wmid)

    # Weights are sized for covariation use, not for the value itself:
    # step products dX dY see the tree only through its response at the
    # next grid date.  Unit r-weights (including node 0) make the
    # step-averaged response mass exact; the remaining defect of the
    # second response channel is absorbed into one scale on the first
    # u-cell of the first row (see _xdm_head_scale).  A plain trapezoid
    # would bias X<>(X<>M) estimates at O(n^{gamma-1}).
    head = _xdm_head_scale(gamma)
    wcell[0, 1] *= head
    wlow[0, 1] *= head
    weight = delta * wcell
    # column j of wlast removes the half-cell overhang past a horizon at j
    wlast = delta * (wcell - wlow)
    return weight, wlast


def simulate_rough_bergomi(config: SimConfig,
                           params: RBParams,
                           curve: ForwardCurve,
                           horizon: float) -> PathBundle:
    """Exact-in-law Gaussian paths of the rough Bergomi forward curve.

    Each step draws the Brownian increment jointly with the increments
    of the accumulated volatility integrals from their exact covariance,
    so the curve (the stochastic exponential with its analytic variance
    compensator) is sampled without time-stepping error.  Maturities
    live on a lattice twice as fine as the time grid and each variance
    swap leg is sampled exactly at its own expiry (half-step legs get a
    partial-step increment), which halves the lattice spacing seen by
    the swap's quadratic covariation; only the trapezoid swap weights
    and the optional tree quadrature carry discretisation error.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if config.n_steps > 512:
        raise ValueError("rough Bergomi simulation is limited to 512 steps")
    n = config.n_steps
    delta = horizon / n
    times = delta * np.arange(n + 1)
    ftimes = 0.5 * delta * np.arange(2 * n + 1)
    dtype = _DTYPES[config.dtype]
    gamma = params.gamma
    eta = params.eta
    et = params.eta_tilde
    rho = params.rho
    rho_perp = math.sqrt(max(0.0, 1.0 - rho * rho))
    sq_delta = math.sqrt(delta)

    xi0 = np.asarray(curve.xi(ftimes), dtype=np.float64)
    if np.any(xi0 <= 0.0):
        raise ValueError("forward curve must be positive on the grid")
    cw = _swap_weights(2 * n, 0.5 * delta)
    zw = j0 = None
    if config.zeta_start is not None:
        zw, j0 = _window_weights(ftimes, config.zeta_start)

    lt = _chol_with_retry(_rb_increment_cov(n, delta, gamma)).T.astype(dtype)
    lt = np.ascontiguousarray(lt)

    # drift[m, d] = eta^2/2 (u_d^{2H} - (u_d - s_m)^{2H}) compensates the
    # accumulated variance of the volatility integral; driftx gives the
    # fully accumulated compensator used when a leg is sampled at expiry
    h2 = 2.0 * params.H
    sj = ftimes[None, :] ** h2
    gap = np.maximum(ftimes[None, :] - times[:, None], 0.0) ** h2
    drift = (0.5 * eta ** 2 * (sj - gap)).astype(dtype)
    driftx = (0.5 * eta ** 2 * ftimes ** h2).astype(dtype)

    if config.with_xdm_process:
        w_tbl, wlast_tbl = _xdm_tables(n, delta, params)
        w_tbl = w_tbl.astype(dtype)
        wlast_tbl = wlast_tbl.astype(dtype)

    out_x = np.empty((config.n_paths, n + 1), dtype=dtype)
    out_v = np.empty_like(out_x)
    out_m = np.empty_like(out_x)
    out_z = np.empty_like(out_x) if zw is not None else None
    out_y = np.empty_like(out_x) if config.with_xdm_process else None
    snapshots = {int(s): np.empty((config.n_paths, n + 1 - int(s)), dtype=dtype)
                 for s in config.snapshot_steps}

    cw_d = cw.astype(dtype)
    zw_d = zw.astype(dtype) if zw is not None else None
    xi0_d = xi0.astype(dtype)
    pref = dtype(rho * et)

    row0 = 0
    for ci, c in enumerate(_chunk_sizes(config.n_paths, config.chunk_paths,
                                        config.antithetic)):
        rng = _substream(config.seed, ci)
        nb = c // 2 if config.antithetic else c
        signs = (1.0, -1.0) if config.antithetic else (1.0,)

        vol = [np.zeros((nb, 2 * n + 1), dtype=dtype) for _ in signs]
        x = [np.zeros((nb,), dtype=dtype) for _ in signs]
        realized = [np.zeros((nb,), dtype=np.float64) for _ in signs]
        realized_z = [np.zeros((nb,), dtype=np.float64) for _ in signs]

        def store(col, m, values):
            if config.antithetic:
                for b in range(2):
                    col[row0 + b:row0 + c:2, m] = values[b]
            else:
                col[row0:row0 + c, m] = values[0]

        for m in range(n + 1):
            k = n - m
            f = 2 * m
            xi = []
            for b in range(len(signs)):
                e = et * vol[b][:, f:] - drift[m, f:]
                xi.append(xi0_d[f:] * np.exp(e))
            store(out_v, m, [xi[b][:, 0] for b in range(len(signs))])
            store(out_x, m, x)
            mm = [realized[b] + xi[b] @ cw_d[f:] for b in range(len(signs))]
            store(out_m, m, mm)
            if zw is not None:
                zz = [realized_z[b] + xi[b][:, max(f, j0) - f:] @ zw_d[max(f, j0):]
                      for b in range(len(signs))]
                store(out_z, m, zz)
            if config.with_xdm_process or m in snapshots:
                # curve restricted to the step grid
                xie = [np.ascontiguousarray(xi[b][:, ::2])
                       for b in range(len(signs))]
            if config.with_xdm_process:
                yy = []
                for b in range(len(signs)):
                    roots = np.sqrt(xie[b])
                    inner = roots @ w_tbl[:k + 1, :k + 1]
                    y = np.einsum("ij,ij->i", inner, xie[b])
                    y -= (roots @ wlast_tbl[:k + 1, k]) * xie[b][:, k]
                    yy.append(pref * y)
                store(out_y, m, yy)
            if m in snapshots:
                store(snapshots[m], slice(None), xie)
            if m == n:
                break

            z_main = rng.standard_normal((nb, 2 * k + 1), dtype=dtype)
            z_perp = rng.standard_normal((nb,), dtype=dtype)
            inc = z_main @ lt[:2 * k + 1, :2 * k + 1]
            for b, sgn in enumerate(signs):
                # half-step leg: sampled at its expiry inside the step
                volx = vol[b][:, f + 1] + sgn * inc[:, 1]
                vx = xi0_d[f + 1] * np.exp(et * volx - driftx[f + 1])
                if sgn > 0:
                    vol[b][:, f + 2:] += inc[:, 2:]
                else:
                    vol[b][:, f + 2:] -= inc[:, 2:]
                dw = sgn * inc[:, 0]
                vm = xi[b][:, 0]
                x[b] += (-0.5 * delta) * vm + np.sqrt(vm) * (
                    rho * dw + (rho_perp * sq_delta * sgn) * z_perp)
                realized[b] += cw[f] * vm + cw[f + 1] * vx
                if zw is not None:
                    if f >= j0:
                        realized_z[b] += zw[f] * vm
                    if f + 1 >= j0:
                        realized_z[b] += zw[f + 1] * vx
        row0 += c

    return PathBundle(model="rough_bergomi", times=times, x=out_x, v=out_v,
                      m_swap=out_m, config=config, zeta=out_z, xdm=out_y,
                      xi_snapshots=snapshots)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def _pair_stats(per_path: np.ndarray, antithetic: bool) -> tuple:
    if antithetic:
        vals = 0.5 * (per_path[0::2] + per_path[1::2])
    else:
        vals = per_path
    est = float(np.mean(vals))
    if len(vals) < 2:
        return est, float("nan")
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    return est, se


def _cut_index(times: np.ndarray, horizon: Optional[float]) -> int:
    if horizon is None:
        return len(times) - 1
    delta = times[1] - times[0]
    idx = int(round(horizon / delta))
    if not 1 <= idx < len(times) or not math.isclose(
            times[idx], horizon, rel_tol=0.0, abs_tol=1e-9 * max(1.0, delta)):
        raise ValueError("horizon does not land on a simulation grid date")
    return idx


def estimate_diamond(bundle: PathBundle, a_spec: str, b_spec: str,
                     horizon: Optional[float] = None) -> tuple:
    """Realized-covariation estimate E<A, B> up to the horizon.

    Returns (estimate, standard error); the standard error is computed
    over antithetic pair means when the bundle was generated with
    antithetic sampling.
    """
    a = bundle.process(a_spec)
    b = bundle.process(b_spec)
    idx = _cut_index(bundle.times, horizon)
    da = np.diff(a[:, :idx + 1], axis=1)
    db = np.diff(b[:, :idx + 1], axis=1)
    per_path = np.sum((da * db).astype(np.float64), axis=1)
    return _pair_stats(per_path, bundle.config.antithetic)


def estimate_leverage(bundle: PathBundle,
                      horizon: Optional[float] = None) -> tuple:
    """Estimate of the leverage swap E<S, M> / S_0 with standard error."""
    return estimate_diamond(bundle, "S", "M", horizon)
