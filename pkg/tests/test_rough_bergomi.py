"""Tests for the lognormal forward-variance tree quadratures.

Oracles: frozen pins from an independent reference route (adaptive
quadpack on the outer axis over dense graded inner grids, run at two
resolutions until twelve digits agreed), exact Beta-function closed
forms for the small-eta limits, direct quadpack evaluation of the
overlap integral for product expectations, and the affine compiler for
the small-vol cross-model checks.
"""
import math

import numpy as np
import pytest
from scipy.integrate import quad

from diamondfv.afv import (
    ForwardCurve,
    KernelSpec,
    compile_tree,
    evaluate_profile,
    uniform_grid,
)
from diamondfv.rough_bergomi import (
    FExponent,
    RBParams,
    m_diamond_m,
    m_diamond_m_raw,
    x_diamond_m,
    x_x_m,
    xi_product_expectation,
)
from diamondfv.specfun import g_gamma
from diamondfv.trees import M, X, diamond

ETA, H, RHO, XI0, T = 1.5, 0.1, -0.9, 0.04, 0.25
PAR = RBParams(eta=ETA, H=H, rho=RHO)
FLAT = ForwardCurve.flat(XI0)
# xi(u) = 0.04 + 0.04 u on [0, 0.5]
LIN = ForwardCurve(((0.0, 0.04), (0.5, 0.06)), interpolation="linear")

# Reference values at (eta, H, rho, T) above, t = 0; stable to twelve
# digits between the coarse and fine reference resolutions.
XDM_FLAT = -6.149433697096e-04
CMM_FLAT = 5.883737600413e-05
XXM_FLAT = 4.307769525889e-05
XDM_LIN = -7.460076869526e-04
CMM_LIN = 7.745671962124e-05


def beta_xdm(params, xi0, T):
    """Small-eta closed form of the first-order tree on a flat curve."""
    return (params.rho * params.eta_tilde * xi0 ** 1.5
            * T ** (params.H + 1.5)
            / ((params.H + 0.5) * (params.H + 1.5)))


def beta_xxm(params, xi0, T):
    """Small-eta closed form of X <> (X <> M): pure Dirichlet integrals."""
    g = params.gamma
    i0 = (math.gamma(1.0 - g) * math.gamma(2.0 - g)
          / math.gamma(3.0 - 2.0 * g)
          * T ** (3.0 - 2.0 * g) / ((1.0 - g) * (3.0 - 2.0 * g)))
    j0 = T ** (3.0 - 2.0 * g) / (2.0 * (1.0 - g) ** 2 * (3.0 - 2.0 * g))
    return (params.rho * params.eta_tilde) ** 2 * xi0 ** 2 * (0.5 * i0 + j0)


class TestRBParams:
    def test_eta_tilde_derived(self):
        p = RBParams(eta=2.0, H=0.125)
        assert p.eta_tilde == pytest.approx(2.0 * math.sqrt(0.25), rel=1e-15)
        assert p.gamma == pytest.approx(0.375, rel=1e-15)

    def test_explicit_eta_tilde_must_be_consistent(self):
        good = 1.5 * math.sqrt(0.2)
        p = RBParams(eta=1.5, H=0.1, eta_tilde=good)
        assert p.eta_tilde == pytest.approx(good, rel=1e-15)
        with pytest.raises(ValueError, match="inconsistent"):
            RBParams(eta=1.5, H=0.1, eta_tilde=1.01 * good)

    @pytest.mark.parametrize("bad", [0.0, 0.5, -0.1, 0.7])
    def test_h_strictly_inside_half_interval(self, bad):
        with pytest.raises(ValueError, match="H"):
            RBParams(eta=1.0, H=bad)

    def test_eta_and_rho_ranges(self):
        with pytest.raises(ValueError, match="eta"):
            RBParams(eta=0.0, H=0.1)
        with pytest.raises(ValueError, match="rho"):
            RBParams(eta=1.0, H=0.1, rho=-1.5)


class TestProductExpectation:
    def test_single_point_unit_power_is_martingale(self):
        v = xi_product_expectation(LIN, PAR, 0.0, 0.2, [(0.3, 1.0)])
        assert v == LIN.xi(0.3)

    def test_s_equal_t_is_plain_product(self):
        pts = [(0.1, 0.5), (0.2, 2.0), (0.4, 1.0)]
        v = xi_product_expectation(LIN, PAR, 0.0, 0.0, pts)
        assert v == pytest.approx(
            np.prod([LIN.xi(u) ** a for u, a in pts]), rel=1e-15)

    def test_single_point_square_closed_form(self):
        # alpha = 2 leaves only the variance correction
        u, s = 0.3, 0.2
        v = xi_product_expectation(FLAT, PAR, 0.0, s, [(u, 2.0)])
        ref = XI0 ** 2 * math.exp(
            ETA ** 2 * (u ** (2 * H) - (u - s) ** (2 * H)))
        assert v == pytest.approx(ref, rel=1e-14)

    def test_two_point_exponent_against_direct_quadrature(self):
        # E[xi_s(u1) xi_s(u2)] = xi xi exp{eta~^2 int_t^s
        # (u1-r)^(-gam) (u2-r)^(-gam) dr}
        gam = PAR.gamma
        for u1, u2, s in [(0.1, 0.3, 0.08), (0.05, 0.06, 0.05),
                          (0.2, 0.21, 0.15)]:
            v = xi_product_expectation(FLAT, PAR, 0.0, s,
                                       [(u1, 1.0), (u2, 1.0)])
            ov, _ = quad(lambda r: (u1 - r) ** -gam * (u2 - r) ** -gam,
                         0.0, s, epsabs=1e-16, epsrel=1e-12)
            ref = XI0 ** 2 * math.exp(PAR.eta_tilde ** 2 * ov)
            assert v == pytest.approx(ref, rel=1e-10)

    def test_three_point_pairwise_assembly(self):
        s = 0.1
        pts = [(0.15, 1.0), (0.25, 0.5), (0.4, 2.0)]
        v = xi_product_expectation(FLAT, PAR, 0.0, s, pts)
        pair = 0.0
        for i in range(3):
            for j in range(i + 1, 3):
                ui, ai = pts[i]
                uj, aj = pts[j]
                pair += ai * aj * g_gamma(uj / s, ui / s, PAR.gamma)
        single = sum(0.5 * a * (a - 1.0) * (u ** (2 * H) - (u - s) ** (2 * H))
                     for u, a in pts)
        ref = (np.prod([XI0 ** a for _, a in pts])
               * math.exp(ETA ** 2 * (s ** (2 * H) * pair + single)))
        assert v == pytest.approx(ref, rel=1e-10)

    def test_ordering_violations(self):
        with pytest.raises(ValueError, match="ordering"):
            xi_product_expectation(FLAT, PAR, 0.1, 0.05, [(0.2, 1.0)])
        with pytest.raises(ValueError, match="ordering"):
            xi_product_expectation(FLAT, PAR, 0.0, 0.1, [(0.05, 1.0)])
        with pytest.raises(ValueError, match="ordering"):
            xi_product_expectation(FLAT, PAR, 0.0, 0.1,
                                   [(0.3, 1.0), (0.2, 1.0)])
        with pytest.raises(ValueError):
            xi_product_expectation(FLAT, PAR, 0.0, 0.1, [])


class TestFExponent:
    def test_matches_independent_assembly(self):
        f = FExponent(PAR)
        gam = PAR.gamma
        th = 2.0 * H
        for ds, dr, du in [(0.05, 0.1, 0.2), (0.01, 0.011, 0.013),
                           (0.2, 0.21, 0.4)]:
            rr = dr / ds
            ru = du / ds
            ref = (ds ** th * (0.25 * g_gamma(rr, 1.0, gam)
                               + 0.5 * g_gamma(ru, 1.0, gam)
                               + 0.5 * g_gamma(ru, rr, gam))
                   + 0.5 * (dr - ds) ** th
                   * g_gamma((du - ds) / (dr - ds), 1.0, gam)
                   - 0.125 * (ds ** th + dr ** th))
            assert float(f(ds, dr, du)) == pytest.approx(ref, rel=1e-9)

    def test_finite_limit_at_zero_first_offset(self):
        f = FExponent(PAR)
        v0 = float(f(0.0, 0.1, 0.2))
        ref = (0.5 * 0.1 ** (2 * H) * g_gamma(2.0, 1.0, PAR.gamma)
               - 0.125 * 0.1 ** (2 * H))
        assert math.isfinite(v0)
        assert v0 == pytest.approx(ref, rel=1e-10)
        # approach rate: F(ds) - F(0) = -ds^(2H)/8 + O(ds^(H+1/2))
        ds = 1e-9
        assert float(f(ds, 0.1, 0.2)) - v0 == pytest.approx(
            -0.125 * ds ** (2 * H), rel=1e-2)

    def test_broadcasting_and_ordering(self):
        f = FExponent(PAR)
        ds = np.array([0.0, 0.05])
        out = f(ds, 0.1, 0.2)
        assert out.shape == (2,)
        assert np.all(np.isfinite(out))
        with pytest.raises(ValueError, match="offsets"):
            f(0.2, 0.1, 0.3)
        with pytest.raises(ValueError, match="offsets"):
            f(0.1, 0.2, 0.2)


class TestXDiamondM:
    def test_zero_rho_vanishes_exactly(self):
        p = RBParams(eta=ETA, H=H, rho=0.0)
        assert x_diamond_m(FLAT, p, 0.0, T) == 0.0

    def test_sign_follows_rho(self):
        assert x_diamond_m(FLAT, PAR, 0.0, T) < 0.0
        pos = RBParams(eta=ETA, H=H, rho=0.5)
        assert x_diamond_m(FLAT, pos, 0.0, T) > 0.0

    def test_small_eta_beta_closed_form(self):
        p = RBParams(eta=1e-6, H=H, rho=RHO)
        v = x_diamond_m(FLAT, p, 0.0, T)
        assert v == pytest.approx(beta_xdm(p, XI0, T), rel=1e-6)

    def test_reference_value_flat(self):
        v = x_diamond_m(FLAT, PAR, 0.0, T)
        assert v == pytest.approx(XDM_FLAT, rel=1e-5)

    def test_reference_value_linear_curve(self):
        v = x_diamond_m(LIN, PAR, 0.0, T)
        assert v == pytest.approx(XDM_LIN, rel=1e-5)

    def test_time_shift_with_flat_curve(self):
        # flat curves are stationary: only T - t matters
        a = x_diamond_m(FLAT, PAR, 0.0, 0.2)
        b = x_diamond_m(FLAT, PAR, 0.3, 0.5)
        assert b == pytest.approx(a, rel=1e-9)

    def test_rejects_empty_span(self):
        with pytest.raises(ValueError, match="T > t"):
            x_diamond_m(FLAT, PAR, 0.5, 0.5)


class TestMDiamondM:
    def test_nonnegative(self):
        assert m_diamond_m(FLAT, PAR, 0.0, T) > 0.0
        assert m_diamond_m(LIN, PAR, 0.0, T) > 0.0

    def test_small_eta_vanishes(self):
        p = RBParams(eta=1e-7, H=H, rho=RHO)
        assert abs(m_diamond_m(FLAT, p, 0.0, T)) < 1e-12

    def test_reference_value_flat(self):
        v = m_diamond_m(FLAT, PAR, 0.0, T)
        assert v == pytest.approx(CMM_FLAT, rel=1e-6)

    def test_reference_value_linear_curve(self):
        v = m_diamond_m(LIN, PAR, 0.0, T)
        assert v == pytest.approx(CMM_LIN, rel=1e-6)

    def test_integrand_is_covariance_of_product_expectation(self):
        # the double-integral form integrates
        # Cov_t(xi_r(r), xi_r(u)) = E_t[xi_r(r) xi_r(u)] - xi xi over the
        # ordered triangle, doubled; check the identity pointwise
        t = 0.0
        for r, u in [(0.05, 0.2), (0.1, 0.12), (0.01, 0.24)]:
            e2 = ETA ** 2
            direct = FLAT.xi(u) * FLAT.xi(r) * math.expm1(
                e2 * (r - t) ** (2 * H)
                * g_gamma((u - t) / (r - t), 1.0, PAR.gamma))
            via_lemma = (xi_product_expectation(
                FLAT, PAR, t, r, [(r, 1.0), (u, 1.0)])
                - FLAT.xi(u) * FLAT.xi(r))
            assert direct == pytest.approx(via_lemma, rel=1e-12)

    def test_symmetrized_integrand_invariant_under_swap(self):
        # unordered (u, r) evaluation routes through s = min and sorted
        # maturities, so the swap is exact
        def q(a, b):
            lo, hi = sorted((a, b))
            return xi_product_expectation(LIN, PAR, 0.0, lo,
                                          [(lo, 1.0), (hi, 1.0)])
        for a, b in [(0.05, 0.2), (0.18, 0.03), (0.1, 0.22)]:
            assert q(a, b) == q(b, a)

    def test_raw_triple_route_agrees_flat(self):
        direct = m_diamond_m(FLAT, PAR, 0.0, T)
        raw = m_diamond_m_raw(FLAT, PAR, 0.0, T)
        assert raw == pytest.approx(direct, rel=1e-4)

    def test_raw_triple_route_agrees_linear_curve(self):
        direct = m_diamond_m(LIN, PAR, 0.0, T)
        raw = m_diamond_m_raw(LIN, PAR, 0.0, T)
        assert raw == pytest.approx(direct, rel=1e-4)


class TestXXM:
    def test_zero_rho_vanishes_exactly(self):
        p = RBParams(eta=ETA, H=H, rho=0.0)
        assert x_x_m(FLAT, p, 0.0, T) == 0.0

    def test_small_eta_beta_closed_form(self):
        p = RBParams(eta=1e-6, H=H, rho=RHO)
        v = x_x_m(FLAT, p, 0.0, T, panels=(8, 8, 6), order=4)
        assert v == pytest.approx(beta_xxm(p, XI0, T), rel=1e-4)

    def test_reference_value_flat(self):
        v = x_x_m(FLAT, PAR, 0.0, T)
        assert v == pytest.approx(XXM_FLAT, rel=1e-4)

    def test_proportional_to_rho_squared(self):
        a = x_x_m(FLAT, PAR, 0.0, T, panels=(8, 8, 6), order=4)
        half = RBParams(eta=ETA, H=H, rho=RHO / 2)
        b = x_x_m(FLAT, half, 0.0, T, panels=(8, 8, 6), order=4)
        assert a == pytest.approx(4.0 * b, rel=1e-12)


class TestScaling:
    # short-time orders on a flat curve in the small-eta regime:
    # X <> M ~ T^(H+3/2), M <> M ~ T^(2H+2)
    def test_log_log_slopes(self):
        p = RBParams(eta=0.05, H=H, rho=RHO)
        for fn, expect in ((x_diamond_m, H + 1.5),
                           (m_diamond_m, 2 * H + 2.0)):
            v1 = fn(FLAT, p, 0.0, 0.1)
            v2 = fn(FLAT, p, 0.0, 0.2)
            slope = math.log(abs(v2 / v1)) / math.log(2.0)
            assert slope == pytest.approx(expect, rel=0.02)


class TestCrossModelSmallVol:
    """Near H = 1/2 the lognormal model linearizes onto the affine one.

    Matching kernels gives nu = eta~ sqrt(xi0) Gamma(H + 1/2).  The
    first-order tree then agrees in the eta -> 0 limit; the
    second-order tree values of the two models differ by a fixed factor
    (3/2 at H = 1/2 exactly) times O(eta^2) magnitudes, so agreement
    there is absolute O(eta^2), not relative.
    """
    HH = 0.49
    ALPHA = HH + 0.5
    RHO2 = -0.7
    T2 = 0.1

    def _afv_value(self, tree, nu):
        kern = KernelSpec.power_law(nu, self.ALPHA)
        prof = compile_tree(tree, kern, self.RHO2,
                            uniform_grid(self.T2, 512))
        return evaluate_profile(prof, FLAT, 0.0, self.T2)

    def test_first_order_tree_matches_relatively(self):
        gaps = []
        for eta in (0.2, 0.1):
            p = RBParams(eta=eta, H=self.HH, rho=self.RHO2)
            nu = p.eta_tilde * math.sqrt(XI0) * math.gamma(self.ALPHA)
            rb = x_diamond_m(FLAT, p, 0.0, self.T2)
            afv = self._afv_value(diamond(X, M), nu)
            gaps.append(abs(rb / afv - 1.0))
        assert gaps[1] < 2e-4
        # relative gap itself decays like eta^2
        assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.15)

    def test_second_order_tree_gap_is_order_eta_squared(self):
        per_eta2 = []
        for eta in (0.2, 0.1):
            p = RBParams(eta=eta, H=self.HH, rho=self.RHO2)
            nu = p.eta_tilde * math.sqrt(XI0) * math.gamma(self.ALPHA)
            rb = x_x_m(FLAT, p, 0.0, self.T2, panels=(8, 8, 6), order=4)
            afv = self._afv_value(diamond(X, diamond(X, M)), nu)
            per_eta2.append(abs(rb - afv) / eta ** 2)
        # measured ~6.85e-8 per unit eta^2 on this configuration
        assert per_eta2[0] < 8e-8
        assert per_eta2[1] < 8e-8
        assert per_eta2[0] == pytest.approx(per_eta2[1], rel=0.05)
