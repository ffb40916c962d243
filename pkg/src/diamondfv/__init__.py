"""Diamond-tree expansions for forward variance models.

Symbolic forests with exact coefficients, a compiler from trees to
forward-variance integrals for power-law / exponential / tempered kernels,
closed forms and a convolution Riccati solver for the rough Heston family,
lognormal forward-variance (rough Bergomi) tree quadratures, Fourier smile
inversion, Monte Carlo validation oracles, and leverage-swap calibration.
"""

__version__ = "0.1.0"

from .trees import (  # noqa: F401
    Tree, QI, Poly, Forest,
    X, ZETA, M,
    leaf, diamond, forest_diamond,
    g_forests, f_tilde_forests, substitute_m, bind_coefficients,
    tree_to_sexp, tree_to_latex, forest_to_text, forest_to_latex,
)
from .specfun import (  # noqa: F401
    mittag_leffler, g_gamma, gauss_2f1,
)
from .afv import (  # noqa: F401
    CoverageError, KernelSpec, ForwardCurve, HProfile, RhoSpec,
    compile_tree, evaluate_profile, forest_value, kernel_convolve,
)
from .rough_heston import (  # noqa: F401
    RHParams, i_j_integral, x_pow_diamond_m, leverage_swap,
    atm_skew_asymptotic, riccati_solve, mgf_triple, cf_log_price,
)
from .rough_bergomi import (  # noqa: F401
    RBParams, FExponent, xi_product_expectation,
    x_diamond_m, m_diamond_m, m_diamond_m_raw, x_x_m,
)
from .smile import (  # noqa: F401
    SmileSlice, TreeInputs, bg_expansion,
    implied_total_variance, fourier_smile,
    varswap_from_smile, gammaswap_from_smile, leverage_from_smile,
)
