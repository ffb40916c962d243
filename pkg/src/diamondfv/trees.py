"""Symbolic diamond-tree algebra with exact polynomial coefficients.

A diamond tree is a full binary tree whose leaves carry one of three
martingale symbols:

    X   log-price martingale part
    Z   deferred-variance increment (``zeta`` in the numeric layer)
    M   variance-swap payoff integral

An internal node is the diamond product of its two children.  The product
is commutative but not associative, so every tree is kept in a canonical
form: the children of each node are sorted, smaller subtrees first, with
leaves ordered ``X < Z < M``.

Coefficients are polynomials in the formal scalars ``a, b, c`` over
Gaussian rationals (exact rational real and imaginary parts), so vanishing
identities cancel structurally instead of merely within a float tolerance.

Two generating families are provided:

* ``g_forests`` -- cumulant-expansion forests ``G^k``.  Scalar mode:

      G^2 = (a^2/2 + b) (X <> X)
      G^k = 1/2 sum_{j=2}^{k-2} G^{k-j} <> G^j  +  a (X <> G^{k-1})

  Triple mode replaces the seed by
  ``(a(a-1)/2 + b)(X<>X) + ac (X<>Z) + (c^2/2)(Z<>Z)`` and the linear term
  by ``(aX + cZ) <> G^{k-1}``.

* ``f_tilde_forests`` -- characteristic-exponent forests:

      F~_0 = -(a(a+i)/2) M
      F~_k = 1/2 sum_{j=0}^{k-2} F~_{k-2-j} <> F~_j  +  i a (X <> F~_{k-1})
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from typing import Iterable

__all__ = [
    "Tree", "QI", "Poly", "Forest",
    "X", "ZETA", "M",
    "leaf", "diamond", "forest_diamond",
    "g_forests", "f_tilde_forests", "substitute_m", "bind_coefficients",
    "tree_to_sexp", "tree_to_latex", "forest_to_text", "forest_to_latex",
]

_LEAF_RANK = {"X": 0, "Z": 1, "M": 2}


# ------------------------------------------------------------------ trees

class Tree:
    """Canonical immutable diamond tree (leaf or binary node).

    Not instantiated directly: use the module leaves ``X``, ``ZETA``, ``M``
    and :func:`diamond`.  Every structurally distinct tree is interned, so
    equality checks are cheap and trees can key dictionaries.
    """

    __slots__ = ("symbol", "left", "right", "n_leaves", "key", "_hash")

    def __init__(self, symbol, left, right, n_leaves, key):
        self.symbol = symbol          # leaf label, None for internal nodes
        self.left = left
        self.right = right
        self.n_leaves = n_leaves      # structural count, M counts once
        self.key = key                # canonical sort key (nested tuples)
        self._hash = hash(key)

    @property
    def is_leaf(self) -> bool:
        return self.symbol is not None

    def weight(self, m_weight: int = 1) -> int:
        """Leaf count with each ``M`` leaf counted ``m_weight`` times."""
        if self.is_leaf:
            return m_weight if self.symbol == "M" else 1
        return self.left.weight(m_weight) + self.right.weight(m_weight)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other or (isinstance(other, Tree) and self.key == other.key)

    def __lt__(self, other):
        return self.key < other.key

    def __repr__(self):
        return tree_to_sexp(self)


_POOL: dict = {}


def leaf(symbol: str) -> Tree:
    if symbol not in _LEAF_RANK:
        raise ValueError(f"unknown leaf symbol {symbol!r}")
    key = (1, _LEAF_RANK[symbol])
    t = _POOL.get(key)
    if t is None:
        t = _POOL[key] = Tree(symbol, None, None, 1, key)
    return t


X = leaf("X")
ZETA = leaf("Z")
M = leaf("M")


def diamond(t1: Tree, t2: Tree) -> Tree:
    """Diamond product of two trees; children sorted into canonical order.

    Leaves sort before larger subtrees (``X < Z < M`` among leaves); nodes
    compare by leaf count first, then recursively by children.
    """
    if t2.key < t1.key:
        t1, t2 = t2, t1
    n = t1.n_leaves + t2.n_leaves
    key = (n, t1.key, t2.key)
    t = _POOL.get(key)
    if t is None:
        t = _POOL[key] = Tree(None, t1, t2, n, key)
    return t


# --------------------------------------------------- Gaussian rationals

class QI:
    """Gaussian rational ``re + im*i`` with exact :class:`Fraction` parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = re if isinstance(re, Fraction) else Fraction(re)
        self.im = im if isinstance(im, Fraction) else Fraction(im)

    def __add__(self, other):
        other = _as_qi(other)
        return QI(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        other = _as_qi(other)
        return QI(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        other = _as_qi(other)
        return QI(self.re * other.re - self.im * other.im,
                  self.re * other.im + self.im * other.re)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return QI(-self.re, -self.im)

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __eq__(self, other):
        if not isinstance(other, (QI, int, Fraction)):
            return NotImplemented
        other = _as_qi(other)
        return self.re == other.re and self.im == other.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __complex__(self):
        return complex(self.re) + 1j * complex(self.im)

    def __repr__(self):
        return f"QI({self.re!r}, {self.im!r})"

    def __str__(self):
        if not self.im:
            return str(self.re)
        if not self.re:
            return _imag_str(self.im)
        im = _imag_str(self.im)
        sep = "+" if not im.startswith("-") else ""
        return f"({self.re}{sep}{im})"


def _imag_str(im: Fraction) -> str:
    if im == 1:
        return "i"
    if im == -1:
        return "-i"
    return f"{im}*i"


def _as_qi(v) -> QI:
    if isinstance(v, QI):
        return v
    if isinstance(v, (int, Fraction)):
        return QI(v)
    raise TypeError(f"cannot coerce {type(v).__name__} to Gaussian rational")


QI_ONE = QI(1)
QI_I = QI(0, 1)


# -------------------------------------------------------- polynomials

class Poly:
    """Polynomial in the formal variables ``a, b, c`` over Gaussian rationals.

    Stored as a monomial dictionary ``(ea, eb, ec) -> QI``; zero
    coefficients are never kept, so ``not poly.terms`` means the exact zero
    polynomial.
    """

    __slots__ = ("terms",)
    VARS = ("a", "b", "c")

    def __init__(self, terms: dict | None = None):
        self.terms = {e: q for e, q in (terms or {}).items() if q}

    # -- constructors
    @classmethod
    def const(cls, v) -> "Poly":
        q = _as_qi(v)
        return cls({(0, 0, 0): q}) if q else cls()

    @classmethod
    def var(cls, name: str) -> "Poly":
        i = cls.VARS.index(name)
        e = tuple(1 if j == i else 0 for j in range(3))
        return cls({e: QI_ONE})

    # -- ring operations
    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for e, q in other.terms.items():
            s = terms.get(e)
            s = q if s is None else s + q
            if s:
                terms[e] = s
            else:
                terms.pop(e, None)
        out = Poly.__new__(Poly)
        out.terms = terms
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __neg__(self):
        out = Poly.__new__(Poly)
        out.terms = {e: -q for e, q in self.terms.items()}
        return out

    def __mul__(self, other):
        other = self._coerce(other)
        terms: dict = {}
        for e1, q1 in self.terms.items():
            for e2, q2 in other.terms.items():
                e = (e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2])
                q = q1 * q2
                s = terms.get(e)
                s = q if s is None else s + q
                if s:
                    terms[e] = s
                else:
                    terms.pop(e, None)
        out = Poly.__new__(Poly)
        out.terms = terms
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative polynomial power")
        out = Poly.const(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    @staticmethod
    def _coerce(v) -> "Poly":
        if isinstance(v, Poly):
            return v
        return Poly.const(v)

    # -- queries
    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other):
        if not isinstance(other, (Poly, QI, int, Fraction)):
            return NotImplemented
        return self._coerce(other).terms == self.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    # -- calculus / substitution / evaluation
    def diff(self, name: str) -> "Poly":
        i = self.VARS.index(name)
        terms = {}
        for e, q in self.terms.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                terms[tuple(e2)] = q * e[i]
        return Poly(terms)

    def subs(self, name: str, value: "Poly") -> "Poly":
        """Substitute a polynomial for one variable, exactly."""
        i = self.VARS.index(name)
        powers = {0: Poly.const(1)}

        def vpow(n):
            if n not in powers:
                powers[n] = vpow(n - 1) * value
            return powers[n]

        out = Poly()
        for e, q in self.terms.items():
            rest = list(e)
            n = rest[i]
            rest[i] = 0
            out = out + Poly({tuple(rest): q}) * vpow(n)
        return out

    def eval(self, a: complex, b: complex = 0.0, c: complex = 0.0) -> complex:
        total = 0j
        for (ea, eb, ec), q in self.terms.items():
            total += complex(q) * a**ea * b**eb * c**ec
        return total

    def eval_exact(self, a, b=0, c=0) -> QI:
        """Evaluate at exact Gaussian-rational points."""
        a, b, c = _as_qi(a), _as_qi(b), _as_qi(c)
        total = QI()
        for (ea, eb, ec), q in self.terms.items():
            term = q
            for base, e in ((a, ea), (b, eb), (c, ec)):
                for _ in range(e):
                    term = term * base
            total = total + term
        return total

    # -- printing
    def _sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: (sum(kv[0]), kv[0]),
                      reverse=True)

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for e, q in self._sorted_terms():
            mono = "*".join(f"{v}^{n}" if n > 1 else v
                            for v, n in zip(self.VARS, e) if n)
            if not mono:
                s = str(q)
            elif q == QI_ONE:
                s = mono
            elif q == QI(-1):
                s = f"-{mono}"
            else:
                s = f"{q}*{mono}"
            parts.append(s)
        out = parts[0]
        for p in parts[1:]:
            out += p if p.startswith("-") else "+" + p
        return out

    __repr__ = __str__

    def latex(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for e, q in self._sorted_terms():
            mono = r"\,".join(f"{v}^{{{n}}}" if n > 1 else v
                              for v, n in zip(self.VARS, e) if n)
            coeff = _qi_latex(q, bare_one=not mono)
            parts.append((coeff + (r"\," if coeff and mono else "") + mono) or "1")
        out = parts[0]
        for p in parts[1:]:
            out += p if p.startswith("-") else "+" + p
        return out


def _frac_latex(f: Fraction) -> str:
    if f.denominator == 1:
        return str(f.numerator)
    sign = "-" if f < 0 else ""
    return rf"{sign}\tfrac{{{abs(f.numerator)}}}{{{f.denominator}}}"


def _qi_latex(q: QI, bare_one: bool) -> str:
    if not q.im:
        if q.re == 1 and not bare_one:
            return ""
        if q.re == -1 and not bare_one:
            return "-"
        return _frac_latex(q.re)
    if not q.re:
        if q.im == 1:
            return "i"
        if q.im == -1:
            return "-i"
        return _frac_latex(q.im) + "i"
    return rf"\left({_frac_latex(q.re)}+{_frac_latex(q.im)}i\right)"


# ------------------------------------------------------------- forests

class Forest:
    """Finite formal sum of canonical trees with :class:`Poly` coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict | None = None):
        self.terms = {t: p for t, p in (terms or {}).items() if not p.is_zero}

    @classmethod
    def zero(cls) -> "Forest":
        return cls()

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def n_trees(self) -> int:
        return len(self.terms)

    def items(self):
        """Terms in canonical tree order."""
        return sorted(self.terms.items(), key=lambda kv: kv[0].key)

    def __add__(self, other: "Forest") -> "Forest":
        terms = dict(self.terms)
        for t, p in other.terms.items():
            s = terms.get(t)
            s = p if s is None else s + p
            if s.is_zero:
                terms.pop(t, None)
            else:
                terms[t] = s
        out = Forest.__new__(Forest)
        out.terms = terms
        return out

    def scale(self, factor) -> "Forest":
        factor = Poly._coerce(factor)
        return Forest({t: p * factor for t, p in self.terms.items()})

    def diamond(self, other: "Forest") -> "Forest":
        """Bilinear extension of the tree diamond product."""
        out = Forest()
        terms = out.terms
        for t1, p1 in self.terms.items():
            for t2, p2 in other.terms.items():
                t = diamond(t1, t2)
                p = p1 * p2
                s = terms.get(t)
                s = p if s is None else s + p
                if s.is_zero:
                    terms.pop(t, None)
                else:
                    terms[t] = s
        return out

    def map_coeffs(self, fn) -> "Forest":
        return Forest({t: fn(p) for t, p in self.terms.items()})

    def subs_coeff(self, name: str, value: Poly) -> "Forest":
        return self.map_coeffs(lambda p: p.subs(name, value))

    def bind(self, a: complex, b: complex = 0.0, c: complex = 0.0):
        """Numeric binding: list of ``(tree, complex)`` with zeros dropped."""
        out = [(t, p.eval(a, b, c)) for t, p in self.items()]
        return [(t, v) for t, v in out if v != 0]

    def bind_exact(self, a, b=0, c=0) -> dict:
        """Exact binding at Gaussian-rational points; zeros dropped."""
        out = {}
        for t, p in self.terms.items():
            v = p.eval_exact(a, b, c)
            if v:
                out[t] = v
        return out

    def __eq__(self, other):
        return isinstance(other, Forest) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset((t, p) for t, p in self.terms.items()))

    def __repr__(self):
        return forest_to_text(self)


def forest_diamond(f1: Forest, f2: Forest) -> Forest:
    return f1.diamond(f2)


def bind_coefficients(f: Forest, a: complex, b: complex = 0.0, c: complex = 0.0):
    return f.bind(a, b, c)


# ------------------------------------------------------- recursions

def _var(name):
    return Poly.var(name)


@lru_cache(maxsize=None)
def _g_seed(mode: str) -> Forest:
    a, b, c = _var("a"), _var("b"), _var("c")
    if mode == "scalar":
        return Forest({diamond(X, X): a * a * Fraction(1, 2) + b})
    # triple: the log-price drift is folded into the quadratic seed
    return Forest({
        diamond(X, X): a * (a - Poly.const(1)) * Fraction(1, 2) + b,
        diamond(X, ZETA): a * c,
        diamond(ZETA, ZETA): c * c * Fraction(1, 2),
    })


@lru_cache(maxsize=None)
def _g_linear(mode: str) -> Forest:
    a, c = _var("a"), _var("c")
    if mode == "scalar":
        return Forest({X: a})
    return Forest({X: a, ZETA: c})


@lru_cache(maxsize=None)
def _g_forest(k: int, mode: str) -> Forest:
    if k == 2:
        return _g_seed(mode)
    acc = Forest.zero()
    for j in range(2, k - 1):
        acc = acc + _g_forest(k - j, mode).diamond(_g_forest(j, mode))
    acc = acc.scale(Fraction(1, 2))
    return acc + _g_linear(mode).diamond(_g_forest(k - 1, mode))


def g_forests(max_order: int, mode: str = "scalar") -> dict[int, Forest]:
    """Cumulant-expansion forests ``G^k`` for ``k = 2 .. max_order``.

    Parameters
    ----------
    max_order : int
        Highest order generated; must be at least 2.
    mode : {"scalar", "triple"}
        Leaf alphabet and seed.  Scalar mode expands over ``X`` alone;
        triple mode carries the deferred-variance leaf ``Z`` as well and
        seeds with the drift-adjusted quadratic form.

    Returns
    -------
    dict[int, Forest]
        Maps each order ``k`` to its forest.  Forests are cached and must
        be treated as immutable.
    """
    if not isinstance(max_order, int) or max_order < 2:
        raise ValueError("max_order must be an integer >= 2")
    if mode not in ("scalar", "triple"):
        raise ValueError(f"unknown mode {mode!r}")
    return {k: _g_forest(k, mode) for k in range(2, max_order + 1)}


@lru_cache(maxsize=None)
def _f_tilde(k: int) -> Forest:
    a = _var("a")
    if k == 0:
        return Forest({M: a * (a + Poly.const(QI_I)) * Fraction(-1, 2)})
    acc = Forest.zero()
    for j in range(0, k - 1):
        acc = acc + _f_tilde(k - 2 - j).diamond(_f_tilde(j))
    acc = acc.scale(Fraction(1, 2))
    lin = Forest({X: a * Poly.const(QI_I)})
    return acc + lin.diamond(_f_tilde(k - 1))


def f_tilde_forests(max_index: int) -> dict[int, Forest]:
    """Characteristic-exponent forests ``F~_k`` for ``k = 0 .. max_index``.

    ``F~_0 = -(a(a+i)/2) M``; higher indices follow the pair-sum plus
    ``ia (X <> F~_{k-1})`` recursion.  Leaves are ``X`` and ``M``; after
    expanding ``M`` back to ``X <> X`` the trees of ``F~_k`` carry ``k+2``
    leaves (``M`` counting twice).
    """
    if not isinstance(max_index, int) or max_index < 0:
        raise ValueError("max_index must be a non-negative integer")
    return {k: _f_tilde(k) for k in range(max_index + 1)}


# ------------------------------------------------- M-leaf substitution

def _substitute_m_tree(t: Tree) -> Tree:
    if t.is_leaf:
        return t
    left = _substitute_m_tree(t.left)
    right = _substitute_m_tree(t.right)
    if left is X and right is X:
        return M
    return diamond(left, right)


def substitute_m(f: Forest) -> Forest:
    """Rewrite every ``X <> X`` subtree as the single leaf ``M``.

    Applied bottom-up, so nested quadratic-variation subtrees collapse
    (e.g. ``(X<>X) <> (X<>X)`` becomes ``M <> M``).  Coefficients of trees
    that collide after rewriting are added.
    """
    out = Forest.zero()
    for t, p in f.terms.items():
        out = out + Forest({_substitute_m_tree(t): p})
    return out


# ------------------------------------------------------------ printing

def tree_to_sexp(t: Tree) -> str:
    """S-expression form, e.g. ``(d (d X X) X)``."""
    if t.is_leaf:
        return t.symbol
    return f"(d {tree_to_sexp(t.left)} {tree_to_sexp(t.right)})"


def tree_to_latex(t: Tree) -> str:
    if t.is_leaf:
        return {"X": "X", "Z": r"\zeta", "M": "M"}[t.symbol]
    return rf"\left({tree_to_latex(t.left)}\diamond {tree_to_latex(t.right)}\right)"


def forest_to_text(f: Forest) -> str:
    """One ``(coefficient) (tree)`` line per term, canonically ordered."""
    if f.is_zero:
        return "0"
    return "\n".join(f"({p}) {tree_to_sexp(t)}" for t, p in f.items())


def forest_to_latex(f: Forest) -> str:
    if f.is_zero:
        return "0"
    parts = [rf"\left({p.latex()}\right)\,{tree_to_latex(t)}" for t, p in f.items()]
    return " + ".join(parts)
