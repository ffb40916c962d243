"""Tests for the forward-variance engine.

Oracles: mpmath tanh-sinh quadrature for kernel integrals (handles the
tau^(alpha-1) endpoint singularity), hand-derived power-law closed forms
for compiled trees, and per-segment symbolic integration for curve
integrals.
"""
import math
import os
import tempfile

import mpmath as mp
import numpy as np
import pytest

from diamondfv.afv import (
    CoverageError,
    ForwardCurve,
    HProfile,
    KernelSpec,
    RhoSpec,
    compile_tree,
    curve_power_integral,
    evaluate_profile,
    forest_value,
    kernel_convolve,
    uniform_grid,
)
from diamondfv.trees import M, X, ZETA, diamond, g_forests

NU, ALPHA = 0.3, 0.6
RHO = -0.7
XI0 = 0.04
PL = KernelSpec.power_law(NU, ALPHA)


def kappa_integral_oracle(kernel, tau, moment=0):
    """mpmath quadrature of int_0^tau v^moment kappa(v) dv."""
    mp.mp.dps = 30
    if kernel.family == "power-law":
        f = lambda v: (kernel.nu * v ** (kernel.alpha - 1)
                       / mp.gamma(kernel.alpha) * v ** moment)
    elif kernel.family == "exp-decay":
        f = lambda v: kernel.nu * mp.e ** (-kernel.lam * v) * v ** moment
    else:
        from diamondfv.specfun import mittag_leffler
        f = lambda v: (kernel.nu * v ** (kernel.alpha - 1)
                       * mittag_leffler(kernel.alpha, kernel.alpha,
                                        -kernel.lam * float(v)
                                        ** kernel.alpha) * v ** moment)
    return float(mp.quad(f, [0, tau]))


def conv_oracle(kernel, p, tau):
    """mpmath quadrature of int_0^tau kappa(tau - s) s^p ds."""
    mp.mp.dps = 30
    if kernel.family == "power-law":
        f = lambda s: (kernel.nu * (tau - s) ** (kernel.alpha - 1)
                       / mp.gamma(kernel.alpha) * s ** p)
    elif kernel.family == "exp-decay":
        f = lambda s: kernel.nu * mp.e ** (-kernel.lam * (tau - s)) * s ** p
    else:
        from diamondfv.specfun import mittag_leffler
        f = lambda s: (kernel.nu * (tau - s) ** (kernel.alpha - 1)
                       * mittag_leffler(kernel.alpha, kernel.alpha,
                                        -kernel.lam * float(tau - s)
                                        ** kernel.alpha) * s ** p)
    return float(mp.quad(f, [0, tau / 2, tau]))


class TestKernelMoments:
    def test_power_law_k1_k2(self):
        k = PL
        for tau in (0.1, 0.5, 1.0):
            assert k.k1(tau) == pytest.approx(
                kappa_integral_oracle(k, tau, 0), rel=1e-12)
            assert k.k2(tau) == pytest.approx(
                kappa_integral_oracle(k, tau, 1), rel=1e-12)

    def test_exp_decay_k1_k2(self):
        k = KernelSpec.exp_decay(0.5, 1.3)
        for tau in (0.05, 0.7, 2.0):
            assert k.k1(tau) == pytest.approx(
                kappa_integral_oracle(k, tau, 0), rel=1e-12)
            assert k.k2(tau) == pytest.approx(
                kappa_integral_oracle(k, tau, 1), rel=1e-12)

    def test_exp_decay_small_lambda_seam(self):
        # k2 switches to a series below lam*tau = 1e-2
        k = KernelSpec.exp_decay(0.5, 1.0)
        for tau in (0.009, 0.011):
            assert k.k2(tau) == pytest.approx(
                kappa_integral_oracle(k, tau, 1), rel=1e-11)
        k0 = KernelSpec.exp_decay(0.5, 0.0)
        assert k0.k1(0.3) == pytest.approx(0.15, rel=1e-14)
        assert k0.k2(0.3) == pytest.approx(0.5 * 0.09 / 2, rel=1e-14)

    def test_resolvent_family_k1_k2(self):
        k = KernelSpec.rough_heston(0.4, 0.62, 1.1)
        for tau in (0.2, 1.0):
            assert float(k.k1(tau)) == pytest.approx(
                kappa_integral_oracle(k, tau, 0), rel=1e-10)
            assert float(k.k2(tau)) == pytest.approx(
                kappa_integral_oracle(k, tau, 1), rel=1e-10)

    def test_resolvent_zero_lambda_collapses_to_power_law(self):
        k = KernelSpec.rough_heston(0.3, 0.6, 0.0)
        assert k.family == "power-law"

    def test_kappa_bar_window(self):
        k = PL
        tau = np.array([0.0, 0.25, 0.8])
        ref = k.k1(tau + k.delta) - k.k1(tau)
        np.testing.assert_allclose(k.kappa_bar(tau), ref, rtol=1e-14)
        assert KernelSpec.power_law(NU, ALPHA, delta=0.0).kappa_bar(0.3) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            KernelSpec.power_law(-0.1, 0.6)
        with pytest.raises(ValueError):
            KernelSpec.power_law(0.3, 0.4)
        with pytest.raises(ValueError):
            KernelSpec.power_law(0.3, 1.2)
        with pytest.raises(ValueError):
            KernelSpec.exp_decay(0.3, -1.0)


class TestConvolution:
    def test_constant_profile_closed_form_exact_via_head(self):
        grid = uniform_grid(1.0, 512)
        h = HProfile(grid, np.ones(513), (1.0, 0.0))
        out = kernel_convolve(PL, h)
        ref = NU * grid ** ALPHA / math.gamma(1 + ALPHA)
        np.testing.assert_allclose(out.values, ref, rtol=1e-13, atol=1e-16)
        assert out.head == (NU / math.gamma(1 + ALPHA), ALPHA)

    def test_constant_profile_product_integration_accuracy(self):
        # headless path exercises the quadrature rule itself
        grid = uniform_grid(1.0, 512)
        h = HProfile(grid, np.ones(513))
        out = kernel_convolve(PL, h)
        ref = NU * grid ** ALPHA / math.gamma(1 + ALPHA)
        rel = np.max(np.abs(out.values[1:] - ref[1:]) / ref[1:])
        assert rel <= 1e-6

    def test_grid_refinement_second_order(self):
        # the rule is exact on piecewise-linear input, so a curved
        # profile is needed to expose discretization error at all
        mp.mp.dps = 25
        ref = float(mp.quad(
            lambda s: (NU * (1 - s) ** (ALPHA - 1)
                       / mp.gamma(ALPHA) * mp.cos(3 * s)), [0, 1]))
        errs = []
        for n in (256, 512):
            grid = uniform_grid(1.0, n)
            out = kernel_convolve(PL, HProfile(grid, np.cos(3.0 * grid)))
            errs.append(abs(out.values[-1] - ref) / abs(ref))
        assert errs[0] / errs[1] >= 3.0

    def test_zero_profile(self):
        grid = uniform_grid(1.0, 64)
        out = kernel_convolve(PL, HProfile(grid, np.zeros(65)))
        assert np.all(out.values == 0.0)

    def test_exp_decay_constant_profile(self):
        k = KernelSpec.exp_decay(0.5, 2.0)
        grid = uniform_grid(1.5, 512)
        out = kernel_convolve(k, HProfile(grid, np.ones(513), (1.0, 0.0)))
        ref = 0.5 * (1.0 - np.exp(-2.0 * grid)) / 2.0
        np.testing.assert_allclose(out.values, ref, rtol=1e-10, atol=1e-14)

    def test_smooth_profile_matches_quadrature(self):
        # no head: cos profile against the singular kernel
        grid = uniform_grid(1.0, 512)
        out = kernel_convolve(PL, HProfile(grid, np.cos(3.0 * grid)))
        mp.mp.dps = 25
        for tau in (0.25, 1.0):
            ref = float(mp.quad(
                lambda s: (NU * (tau - s) ** (ALPHA - 1)
                           / mp.gamma(ALPHA) * mp.cos(3 * s)), [0, tau]))
            i = int(round(tau / grid[1]))
            # second-order interpolation error, ~3e-6 at this step size
            assert out.values[i] == pytest.approx(ref, rel=1e-5)

    def test_head_convolution_oracles(self):
        grid = uniform_grid(0.8, 64)
        for kernel in (PL,
                       KernelSpec.exp_decay(0.5, 1.7),
                       KernelSpec.rough_heston(0.4, 0.7, 0.9)):
            vals, head = kernel.conv_head(1.3, 0.6, grid)
            for tau in (0.4, 0.8):
                ref = 1.3 * conv_oracle(kernel, 0.6, tau)
                i = int(round(tau / grid[1]))
                assert float(np.real(vals[i])) == pytest.approx(ref, rel=1e-9)

    def test_complex_profile_supported(self):
        grid = uniform_grid(1.0, 64)
        h = HProfile(grid, (1.0 + 2.0j) * np.ones(65), (1.0 + 2.0j, 0.0))
        out = kernel_convolve(PL, h)
        ref = (1.0 + 2.0j) * NU * grid ** ALPHA / math.gamma(1 + ALPHA)
        np.testing.assert_allclose(out.values, ref, rtol=1e-12)


CLOSED_FORMS = [
    # (tree, coefficient, power j in tau^(j alpha))
    (diamond(X, M), RHO * NU / math.gamma(1 + ALPHA), 1),
    (diamond(M, M), NU ** 2 / math.gamma(1 + ALPHA) ** 2, 2),
    (diamond(X, diamond(X, M)), RHO ** 2 * NU ** 2 / math.gamma(1 + 2 * ALPHA), 2),
    (diamond(M, diamond(X, M)),
     RHO * NU ** 3 / (math.gamma(1 + ALPHA) * math.gamma(1 + 2 * ALPHA)), 3),
    (diamond(X, diamond(X, diamond(X, M))),
     RHO ** 3 * NU ** 3 / math.gamma(1 + 3 * ALPHA), 3),
    (diamond(X, diamond(M, M)),
     RHO * NU ** 3 * math.gamma(1 + 2 * ALPHA)
     / (math.gamma(1 + ALPHA) ** 2 * math.gamma(1 + 3 * ALPHA)), 3),
    (diamond(X, diamond(X, diamond(X, diamond(X, M)))),
     RHO ** 4 * NU ** 4 / math.gamma(1 + 4 * ALPHA), 4),
]


class TestCompiler:
    def test_power_law_closed_forms(self):
        grid = uniform_grid(1.0, 512)
        curve = ForwardCurve.flat(XI0)
        for tree, coeff, j in CLOSED_FORMS:
            prof = compile_tree(tree, PL, RHO, grid)
            ref_prof = coeff * grid ** (j * ALPHA)
            np.testing.assert_allclose(prof.values, ref_prof,
                                       rtol=1e-11, atol=1e-18)
            val = evaluate_profile(prof, curve, 0.0, 1.0)
            ref_val = coeff * XI0 / (j * ALPHA + 1.0)
            assert val == pytest.approx(ref_val, rel=1e-11)

    def test_m_leaf_is_alias_for_x_diamond_x(self):
        grid = uniform_grid(0.5, 64)
        xx = diamond(X, X)
        p1 = compile_tree(diamond(M, M), PL, RHO, grid)
        p2 = compile_tree(diamond(xx, xx), PL, RHO, grid)
        np.testing.assert_array_equal(p1.values, p2.values)
        assert p1.head == p2.head

    def test_two_leaf_base_cases(self):
        grid = uniform_grid(0.5, 64)
        kb = PL.kappa_bar(grid)
        np.testing.assert_allclose(
            compile_tree(diamond(X, ZETA), PL, RHO, grid).values,
            RHO * kb, rtol=1e-14)
        np.testing.assert_allclose(
            compile_tree(diamond(ZETA, ZETA), PL, RHO, grid).values,
            kb ** 2, rtol=1e-14)
        np.testing.assert_allclose(
            compile_tree(diamond(X, X), PL, RhoSpec(RHO), grid).values,
            np.ones(65), rtol=0)

    def test_bare_leaf_rejected(self):
        with pytest.raises(ValueError):
            compile_tree(X, PL, RHO, uniform_grid(1.0, 64))

    def test_bad_rho_rejected(self):
        with pytest.raises(ValueError):
            compile_tree(diamond(X, X), PL, 1.5, uniform_grid(1.0, 64))


class TestEvaluate:
    def test_constant_profile_flat_curve(self):
        grid = uniform_grid(0.75, 64)
        h = HProfile(grid, np.ones(65), (1.0, 0.0))
        curve = ForwardCurve.flat(XI0)
        assert evaluate_profile(h, curve, 0.0, 0.75) == pytest.approx(
            XI0 * 0.75, rel=1e-14)

    def test_power_profile_flat_curve(self):
        j = 2
        grid = uniform_grid(1.0, 128)
        h = HProfile(grid, grid ** (j * ALPHA), (1.0, j * ALPHA))
        val = evaluate_profile(h, ForwardCurve.flat(XI0), 0.0, 1.0)
        assert val == pytest.approx(XI0 / (j * ALPHA + 1.0), rel=1e-14)

    def test_two_knot_flat_forward_segments(self):
        curve = ForwardCurve(((0.0, 0.04), (0.4, 0.09)))
        grid = uniform_grid(1.0, 64)
        h = HProfile(grid, np.ones(65), (1.0, 0.0))
        ref = 0.04 * 0.4 + 0.09 * 0.6
        assert evaluate_profile(h, curve, 0.0, 1.0) == pytest.approx(
            ref, rel=1e-14)

    def test_linear_curve_headless_profile_is_exact_per_segment(self):
        curve = ForwardCurve(((0.0, 0.04), (1.0, 0.10)), interpolation="linear")
        grid = uniform_grid(1.0, 64)
        # linear remainder x linear curve handled exactly by the rule
        h = HProfile(grid, 2.0 - grid)
        ref = float(mp.quad(lambda u: (0.04 + 0.06 * u) * (2 - (1 - u)), [0, 1]))
        assert evaluate_profile(h, curve, 0.0, 1.0) == pytest.approx(
            ref, rel=1e-13)

    def test_span_mismatch_rejected(self):
        h = HProfile(uniform_grid(0.5, 64), np.ones(65))
        with pytest.raises(ValueError):
            evaluate_profile(h, ForwardCurve.flat(0.04), 0.0, 1.0)

    def test_coverage_gap_rejected(self):
        curve = ForwardCurve(((0.5, 0.04),))
        h = HProfile(uniform_grid(1.0, 64), np.ones(65))
        with pytest.raises(CoverageError):
            evaluate_profile(h, curve, 0.0, 1.0)


class TestCurvePowerIntegral:
    def test_flat_curve_power(self):
        for p in (0.0, 0.6, 1.7):
            ref = XI0 * 1.0 ** (p + 1) / (p + 1)
            assert curve_power_integral(
                ForwardCurve.flat(XI0), 0.0, 1.0, p) == pytest.approx(
                    ref, rel=1e-14)

    def test_piecewise_flat_vs_quadrature(self):
        curve = ForwardCurve(((0.0, 0.04), (0.3, 0.07), (0.8, 0.05)))
        mp.mp.dps = 25
        p = 0.6
        ref = float(
            mp.quad(lambda u: 0.04 * (1 - u) ** p, [0, 0.3])
            + mp.quad(lambda u: 0.07 * (1 - u) ** p, [0.3, 0.8])
            + mp.quad(lambda u: 0.05 * (1 - u) ** p, [0.8, 1.0]))
        assert curve_power_integral(curve, 0.0, 1.0, p) == pytest.approx(
            ref, rel=1e-12)

    def test_linear_curve_vs_quadrature(self):
        curve = ForwardCurve(((0.0, 0.04), (1.0, 0.08)),
                             interpolation="linear")
        ref = float(mp.quad(
            lambda u: (0.04 + 0.04 * u) * (1 - u) ** 1.2, [0, 1]))
        assert curve_power_integral(curve, 0.0, 1.0, 1.2) == pytest.approx(
            ref, rel=1e-12)


class TestForestValue:
    def test_martingale_bind_vanishes(self):
        g = g_forests(4, mode="triple")
        curve = ForwardCurve.flat(XI0)
        for k, forest in g.items():
            v = forest_value(forest, 1.0, 0.0, 0.0, PL, RHO, curve,
                             0.0, 0.5, n_steps=64)
            assert abs(v) == 0.0

    def test_pure_zeta_binding_matches_quadrature(self):
        # G2 at (0,0,c) reduces to (c^2/2) int xi kbar(T-u)^2 du
        c = 0.8
        curve = ForwardCurve.flat(XI0)
        g2 = g_forests(2, mode="triple")[2]
        val = forest_value(g2, 0.0, 0.0, c, PL, RHO, curve, 0.0, 0.5,
                           n_steps=512)
        mp.mp.dps = 25
        kb = lambda tau: float(PL.kappa_bar(float(tau)))
        ref = 0.5 * c * c * XI0 * float(
            mp.quad(lambda tau: kb(tau) ** 2, [0, 0.5]))
        assert val.imag == 0.0
        # kbar^2 keeps a tau^(2 alpha) term after its head is removed,
        # so this converges at second order rather than exactly
        assert val.real == pytest.approx(ref, rel=5e-5)

    def test_scalar_g2_value(self):
        g2 = g_forests(2, mode="scalar")[2]
        curve = ForwardCurve.flat(XI0)
        a, b = 1.4, 0.2
        v = forest_value(g2, a, b, 0.0, PL, RHO, curve, 0.0, 1.0, n_steps=64)
        # G2 = (a^2/2 + b) X<>X and X<>X evaluates to the variance swap
        assert v.real == pytest.approx((a * a / 2 + b) * XI0 * 1.0, rel=1e-13)


class TestForwardCurveIO:
    def test_csv_round_trip(self):
        curve = ForwardCurve(((0.0, 0.04), (0.5, 0.0625), (1.3, 0.05)))
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "curve.csv")
            curve.to_csv(path)
            back = ForwardCurve.from_csv(path)
        assert back.knots == curve.knots

    def test_csv_header_enforced(self):
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "bad.csv")
            with open(path, "w") as fh:
                fh.write("t,value\n0.0,0.04\n")
            with pytest.raises(ValueError):
                ForwardCurve.from_csv(path)

    def test_validation(self):
        with pytest.raises(ValueError):
            ForwardCurve(((0.0, 0.04), (0.0, 0.05)))
        with pytest.raises(ValueError):
            ForwardCurve(((0.0, -0.01),))
        with pytest.raises(ValueError):
            ForwardCurve(((0.0, 0.04),), interpolation="cubic")

    def test_flat_forward_lookup(self):
        curve = ForwardCurve(((0.0, 0.04), (1.0, 0.09)))
        assert curve.xi(0.5) == 0.04
        assert curve.xi(1.0) == 0.09
        assert curve.xi(3.0) == 0.09
        with pytest.raises(CoverageError):
            curve.xi(-0.5)

    def test_linear_interpolation(self):
        curve = ForwardCurve(((0.0, 0.04), (1.0, 0.08)),
                             interpolation="linear")
        assert curve.xi(0.25) == pytest.approx(0.05)
        with pytest.raises(CoverageError):
            curve.xi(1.5)
