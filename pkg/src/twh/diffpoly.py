"""Exact differential-polynomial algebra over one dependent function.

A :class:`DiffPoly` is a polynomial in the jet variables ``q, q_x, q_xx, ...``
of a single unknown function, with coefficients that are themselves exact
rational polynomials in the scalar symbols ``x``, ``alpha`` and
``tau_1 .. tau_m`` (:class:`CoeffPoly`).  On top of this algebra the module
builds the Lenard recursion operators and assembles the members of the
Painleve II hierarchy together with their jet Jacobians, which is everything
the collocation solver needs.

All arithmetic in this module is exact (``fractions.Fraction``); floating
point enters only in :func:`eval_jet` / :func:`compile_jet_evaluator`.
"""

from __future__ import annotations

import threading
from fractions import Fraction

import numpy as np

__all__ = [
    "CoeffPoly",
    "DiffPoly",
    "NotExactDerivative",
    "MissingJetEntry",
    "total_derivative",
    "integrate_exact",
    "lenard",
    "pii_equation",
    "jet_jacobian",
    "eval_jet",
    "compile_jet_evaluator",
    "format_diffpoly",
    "format_pii_equation",
    "MAX_HIERARCHY_N",
]

# Largest hierarchy member assembled by default; order-2n ODEs beyond n=5 are
# outside any solve target and the symbolic cost grows quickly.
MAX_HIERARCHY_N = 5
_MAX_LENARD_J = MAX_HIERARCHY_N + 1

# coefficient-symbol indices: 0 -> x, 1 -> alpha, 2+(ell-1) -> tau_ell
_X, _ALPHA = 0, 1


class NotExactDerivative(ValueError):
    """Input to :func:`integrate_exact` is not a total x-derivative."""


class MissingJetEntry(KeyError):
    """A jet vector does not cover every derivative order of the polynomial."""


def _tau_index(ell):
    if ell < 1:
        raise ValueError("tau indices start at 1")
    return 1 + ell


def _strip(exps):
    exps = tuple(exps)
    while exps and exps[-1] == 0:
        exps = exps[:-1]
    return exps


class CoeffPoly:
    """Exact polynomial in the symbols (x, alpha, tau_1, ...).

    Stored as a map from stripped exponent tuples to nonzero Fractions.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        if terms:
            for exps, c in terms.items():
                c = Fraction(c)
                if c != 0:
                    key = _strip(exps)
                    acc = self.terms.get(key, 0) + c
                    if acc == 0:
                        self.terms.pop(key, None)
                    else:
                        self.terms[key] = acc

    @staticmethod
    def const(c):
        c = Fraction(c)
        return CoeffPoly({(): c} if c != 0 else {})

    @staticmethod
    def x():
        return CoeffPoly({(1,): Fraction(1)})

    @staticmethod
    def alpha():
        return CoeffPoly({(0, 1): Fraction(1)})

    @staticmethod
    def tau(ell):
        exps = [0] * (_tau_index(ell) + 1)
        exps[_tau_index(ell)] = 1
        return CoeffPoly({tuple(exps): Fraction(1)})

    def is_zero(self):
        return not self.terms

    def constant_value(self):
        """The value if the polynomial is a constant, else None."""
        if not self.terms:
            return Fraction(0)
        if len(self.terms) == 1 and () in self.terms:
            return self.terms[()]
        return None

    def __add__(self, other):
        out = dict(self.terms)
        for exps, c in other.terms.items():
            acc = out.get(exps, 0) + c
            if acc == 0:
                out.pop(exps, None)
            else:
                out[exps] = acc
        res = CoeffPoly()
        res.terms = out
        return res

    def __neg__(self):
        res = CoeffPoly()
        res.terms = {e: -c for e, c in self.terms.items()}
        return res

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            other = CoeffPoly.const(other)
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                n = max(len(e1), len(e2))
                e = _strip(
                    tuple(
                        (e1[i] if i < len(e1) else 0) + (e2[i] if i < len(e2) else 0)
                        for i in range(n)
                    )
                )
                acc = out.get(e, 0) + c1 * c2
                if acc == 0:
                    out.pop(e, None)
                else:
                    out[e] = acc
        res = CoeffPoly()
        res.terms = out
        return res

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, CoeffPoly) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def diff_x(self):
        """Partial derivative with respect to the symbol x."""
        out = {}
        for exps, c in self.terms.items():
            if len(exps) > 0 and exps[0] > 0:
                e = list(exps)
                e[0] -= 1
                out[_strip(e)] = out.get(_strip(e), 0) + c * exps[0]
        res = CoeffPoly()
        res.terms = {e: c for e, c in out.items() if c != 0}
        return res

    def depends_on_x(self):
        return any(len(e) > 0 and e[0] > 0 for e in self.terms)

    def eval(self, x, alpha, tau):
        """Evaluate exactly; returns a Fraction if all inputs are exact."""
        vals = [x, alpha] + list(tau)
        total = 0
        for exps, c in self.terms.items():
            t = c
            for i, p in enumerate(exps):
                if p:
                    if i >= len(vals):
                        raise ValueError("tau vector too short for coefficient")
                    t = t * vals[i] ** p
            total = total + t
        return total

    def __repr__(self):
        return f"CoeffPoly({self.terms!r})"


def _jet_key(pairs):
    pairs = tuple(sorted((d, p) for d, p in pairs if p))
    return pairs


def _jet_weight(key):
    return sum((d + 1) * p for d, p in key)


class DiffPoly:
    """Differential polynomial: map from jet monomials to CoeffPoly.

    A jet monomial is a sorted tuple of ``(derivative_order, power)`` pairs;
    the empty tuple is the constant (jet-free) monomial.  Canonical form drops
    zero coefficients, so two DiffPolys are equal iff their dicts are equal.
    """

    __slots__ = ("monomials",)

    def __init__(self, monomials=None):
        self.monomials = {}
        if monomials:
            for key, cp in monomials.items():
                if not cp.is_zero():
                    k = _jet_key(key)
                    if k in self.monomials:
                        acc = self.monomials[k] + cp
                        if acc.is_zero():
                            del self.monomials[k]
                        else:
                            self.monomials[k] = acc
                    else:
                        self.monomials[k] = cp

    @staticmethod
    def zero():
        return DiffPoly()

    @staticmethod
    def const(c):
        cp = CoeffPoly.const(c) if isinstance(c, (int, Fraction)) else c
        return DiffPoly({(): cp})

    @staticmethod
    def jet(d, power=1):
        return DiffPoly({((d, power),): CoeffPoly.const(1)})

    def __add__(self, other):
        out = dict(self.monomials)
        for key, cp in other.monomials.items():
            if key in out:
                acc = out[key] + cp
                if acc.is_zero():
                    del out[key]
                else:
                    out[key] = acc
            else:
                out[key] = cp
        res = DiffPoly()
        res.monomials = out
        return res

    def __neg__(self):
        res = DiffPoly()
        res.monomials = {k: -cp for k, cp in self.monomials.items()}
        return res

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, CoeffPoly)):
            return self.scale(other)
        out = {}
        for k1, c1 in self.monomials.items():
            for k2, c2 in other.monomials.items():
                powers = {}
                for d, p in k1:
                    powers[d] = powers.get(d, 0) + p
                for d, p in k2:
                    powers[d] = powers.get(d, 0) + p
                key = _jet_key(powers.items())
                c = c1 * c2
                if key in out:
                    acc = out[key] + c
                    if acc.is_zero():
                        del out[key]
                    else:
                        out[key] = acc
                else:
                    out[key] = c
        res = DiffPoly()
        res.monomials = out
        return res

    __rmul__ = __mul__

    def scale(self, c):
        if isinstance(c, (int, Fraction)):
            c = CoeffPoly.const(c)
        out = {}
        for key, cp in self.monomials.items():
            prod = cp * c
            if not prod.is_zero():
                out[key] = prod
        res = DiffPoly()
        res.monomials = out
        return res

    def is_zero(self):
        return not self.monomials

    def __eq__(self, other):
        return isinstance(other, DiffPoly) and self.monomials == other.monomials

    def __hash__(self):
        return hash(frozenset((k, hash(c)) for k, c in self.monomials.items()))

    def max_order(self):
        """Highest derivative order present, or -1 for jet-free polynomials."""
        orders = [d for key in self.monomials for d, _ in key]
        return max(orders) if orders else -1

    def orders(self):
        return sorted({d for key in self.monomials for d, _ in key})

    def constant_monomial(self):
        """Coefficient of the jet-free monomial."""
        return self.monomials.get((), CoeffPoly.const(0))

    def partial_jet(self, d):
        """Exact partial derivative with respect to the jet variable q^(d)."""
        out = {}
        for key, cp in self.monomials.items():
            powers = dict(key)
            p = powers.get(d, 0)
            if p == 0:
                continue
            newpowers = dict(powers)
            if p == 1:
                del newpowers[d]
            else:
                newpowers[d] = p - 1
            k = _jet_key(newpowers.items())
            c = cp * p
            if k in out:
                acc = out[k] + c
                if acc.is_zero():
                    del out[k]
                else:
                    out[k] = acc
            else:
                out[k] = c
        res = DiffPoly()
        res.monomials = out
        return res

    def substitute(self, expr):
        """Replace the dependent function by ``expr``: q^(d) -> D^d(expr)."""
        derivs = {0: expr}

        def dk(d):
            if d not in derivs:
                derivs[d] = total_derivative(dk(d - 1))
            return derivs[d]

        result = DiffPoly.zero()
        for key, cp in self.monomials.items():
            term = DiffPoly.const(1)
            for d, p in key:
                base = dk(d)
                for _ in range(p):
                    term = term * base
            result = result + term.scale(cp)
        return result

    def __repr__(self):
        return f"DiffPoly({format_diffpoly(self)})"


def dp_algebra(a, b, op):
    """Dispatch helper mirroring the three algebra primitives.

    ``op`` is one of ``"add"``, ``"mul"``, ``"scale"`` (b a CoeffPoly/Fraction).
    """
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "scale":
        return a.scale(b)
    raise ValueError(f"unknown op {op!r}")


def total_derivative(p):
    """Total x-derivative: q^(d) -> q^(d+1) by the product rule, x -> 1."""
    out = DiffPoly.zero()
    for key, cp in p.monomials.items():
        dcp = cp.diff_x()
        if not dcp.is_zero():
            out = out + DiffPoly({key: dcp})
        for d, pw in key:
            powers = dict(key)
            if pw == 1:
                del powers[d]
            else:
                powers[d] = pw - 1
            powers[d + 1] = powers.get(d + 1, 0) + 1
            out = out + DiffPoly({_jet_key(powers.items()): cp * pw})
    return out


def integrate_exact(p):
    """Invert the total derivative by peeling leading monomials.

    Requires coefficients free of the symbol x (true for every Lenard step,
    where coefficients are plain rationals).  The antiderivative is normalized
    to have zero jet-free (constant) monomial.  Raises
    :class:`NotExactDerivative` if a nonzero remainder survives the peel.
    """
    for cp in p.monomials.values():
        if cp.depends_on_x():
            raise ValueError("integrate_exact requires x-free coefficients")
    acc = DiffPoly.zero()
    rem = p
    while not rem.is_zero():
        d = rem.max_order()
        if d <= 0:
            # pure q-powers or constants cannot be total derivatives
            raise NotExactDerivative(
                f"non-integrable remainder: {format_diffpoly(rem)}"
            )
        chunk = DiffPoly.zero()
        for key, cp in rem.monomials.items():
            powers = dict(key)
            if d not in powers:
                continue
            if powers[d] != 1:
                raise NotExactDerivative(
                    f"top derivative q^({d}) appears with power {powers[d]}"
                )
            del powers[d]
            k = powers.get(d - 1, 0)
            powers[d - 1] = k + 1
            chunk = chunk + DiffPoly(
                {_jet_key(powers.items()): cp * Fraction(1, k + 1)}
            )
        acc = acc + chunk
        rem = rem - total_derivative(chunk)
    return acc


_lenard_cache = [DiffPoly.const(Fraction(1, 2))]
_lenard_lock = threading.Lock()


def lenard(j, max_j=_MAX_LENARD_J):
    """Lenard differential polynomial L_j in the dependent function f.

    L_0 = 1/2 and D L_{j+1} = (D^3 + 4 f D + 2 f_x) L_j, with the integration
    constant fixed so that L_j has zero constant term for j >= 1.  Results are
    cached; the cache is guarded for concurrent first use.
    """
    if j < 0:
        raise ValueError("lenard index must be nonnegative")
    if j > max_j:
        raise ValueError(f"lenard index {j} above configured maximum {max_j}")
    with _lenard_lock:
        while len(_lenard_cache) <= j:
            prev = _lenard_cache[-1]
            f = DiffPoly.jet(0)
            fx = DiffPoly.jet(1)
            rhs = (
                total_derivative(total_derivative(total_derivative(prev)))
                + 4 * (f * total_derivative(prev))
                + 2 * (fx * prev)
            )
            _lenard_cache.append(integrate_exact(rhs))
        return _lenard_cache[j]


def pii_equation(n, max_n=MAX_HIERARCHY_N):
    """Member n of the Painleve II hierarchy as a DiffPoly G_n in q.

    G_n = (D + 2q) L_n[q_x - q^2]
          + sum_{l=1}^{n-1} tau_l (D + 2q) L_l[q_x - q^2] - x q + alpha,
    so the differential equation reads G_n = 0.  The substitution
    f -> q_x - q^2 is carried out symbolically before applying (D + 2q).
    """
    if n < 1:
        raise ValueError("hierarchy index must be a positive integer")
    if n > max_n:
        raise ValueError(f"hierarchy index {n} above configured maximum {max_n}")
    f_expr = DiffPoly.jet(1) - DiffPoly.jet(0) * DiffPoly.jet(0)
    q = DiffPoly.jet(0)

    def d_plus_2q(p):
        return total_derivative(p) + 2 * (q * p)

    G = d_plus_2q(lenard(n).substitute(f_expr))
    for ell in range(1, n):
        G = G + d_plus_2q(lenard(ell).substitute(f_expr)).scale(CoeffPoly.tau(ell))
    G = G - DiffPoly({((0, 1),): CoeffPoly.x()}) + DiffPoly.const(CoeffPoly.alpha())
    return G


def jet_jacobian(p):
    """Exact partials of p with respect to each jet variable present.

    Returns a list of ``(d, dp/dq^(d))`` pairs sorted by derivative order.
    """
    return [(d, p.partial_jet(d)) for d in p.orders()]


def eval_jet(p, jet, x, alpha=0.0, tau=()):
    """Evaluate a DiffPoly at a numeric jet.

    ``jet`` is indexed by derivative order and must cover every order in p.
    Coefficients are converted to float once; accumulation is deterministic.
    """
    need = p.max_order()
    if need >= 0 and len(jet) <= need:
        raise MissingJetEntry(
            f"jet of length {len(jet)} lacks derivative order {need}"
        )
    total = 0.0
    for key, cp in sorted(p.monomials.items(), key=lambda kv: (_jet_weight(kv[0]), kv[0])):
        c = float(cp.eval(Fraction(x) if isinstance(x, int) else x, alpha, tau))
        t = c
        for d, pw in key:
            t *= float(jet[d]) ** pw
        total += t
    return total


def compile_jet_evaluator(p, alpha, tau):
    """Compile p into a vectorized evaluator over numpy arrays.

    alpha and tau are fixed numerically; x stays symbolic so the returned
    callable ``f(x_array, jets)`` takes the grid and a list of jet arrays
    (indexed by derivative order) and returns the residual array.
    """
    terms = []
    for key, cp in sorted(p.monomials.items(), key=lambda kv: (_jet_weight(kv[0]), kv[0])):
        xpoly = {}
        for exps, c in cp.terms.items():
            xp = exps[0] if len(exps) > 0 else 0
            rest = Fraction(c)
            vals = [Fraction(1), Fraction(alpha) if isinstance(alpha, int) else alpha] + [
                Fraction(t) if isinstance(t, int) else t for t in tau
            ]
            for i, pw in enumerate(exps):
                if i == 0 or pw == 0:
                    continue
                if i >= len(vals):
                    raise ValueError("tau vector too short for coefficient")
                rest = rest * vals[i] ** pw
            xpoly[xp] = xpoly.get(xp, 0) + rest
        coeffs = [(xp, float(c)) for xp, c in sorted(xpoly.items()) if c != 0]
        if coeffs:
            terms.append((coeffs, tuple(key)))

    def evaluate(x, jets):
        x = np.asarray(x)
        out = np.zeros_like(x, dtype=float)
        for coeffs, key in terms:
            c = np.zeros_like(x, dtype=float)
            for xp, cv in coeffs:
                c = c + cv * x**xp if xp else c + cv
            t = c
            for d, pw in key:
                t = t * jets[d] ** pw
            out += t
        return out

    return evaluate


# ---------------------------------------------------------------------------
# printing

def _fmt_frac(c, latex):
    if c.denominator == 1:
        return str(c.numerator)
    if latex:
        sign = "-" if c < 0 else ""
        return f"{sign}\\frac{{{abs(c.numerator)}}}{{{c.denominator}}}"
    return f"{c.numerator}/{c.denominator}"


def _fmt_symbol(i, latex):
    if i == 0:
        return "x"
    if i == 1:
        return r"\alpha" if latex else "alpha"
    ell = i - 1
    return f"\\tau_{{{ell}}}" if latex else f"tau_{ell}"


def _fmt_jetvar(func, d, latex):
    if d == 0:
        return func
    if d == 1:
        return f"{func}_x"
    if d == 2:
        return f"{func}_{{xx}}" if latex else f"{func}_xx"
    return f"{func}_x^{{({d})}}" if latex else f"{func}^({d})"


def _fmt_power(base, p, latex):
    if p == 1:
        return base
    return f"{base}^{{{p}}}" if latex else f"{base}^{p}"


def format_diffpoly(p, func="q", latex=False):
    """Render a DiffPoly as plain text or LaTeX."""
    if p.is_zero():
        return "0"
    pieces = []
    for key in sorted(p.monomials, key=lambda k: (-_jet_weight(k), k)):
        cp = p.monomials[key]
        for exps in sorted(cp.terms, key=lambda e: (sum(e), e)):
            c = cp.terms[exps]
            factors = []
            for i, pw in enumerate(exps):
                if pw:
                    factors.append(_fmt_power(_fmt_symbol(i, latex), pw, latex))
            for d, pw in sorted(key, reverse=True):
                factors.append(_fmt_power(_fmt_jetvar(func, d, latex), pw, latex))
            body = " ".join(factors) if not latex else "".join(factors)
            if not factors:
                term = _fmt_frac(abs(c), latex)
            elif abs(c) == 1:
                term = body
            else:
                term = f"{_fmt_frac(abs(c), latex)} {body}" if not latex else f"{_fmt_frac(abs(c), latex)}{body}"
            pieces.append(("-" if c < 0 else "+", term))
    sign0, term0 = pieces[0]
    out = (("-" if sign0 == "-" else "") + term0)
    for sign, term in pieces[1:]:
        out += f" {sign} {term}"
    return out


def format_pii_equation(n, latex=False):
    """Paper-style rendering with the x q - alpha terms moved to the right."""
    G = pii_equation(n)
    lhs = G - (-DiffPoly({((0, 1),): CoeffPoly.x()}) + DiffPoly.const(CoeffPoly.alpha()))
    rhs = DiffPoly({((0, 1),): CoeffPoly.x()}) - DiffPoly.const(CoeffPoly.alpha())
    eq = "=" if not latex else "="
    return f"{format_diffpoly(lhs, latex=latex)} {eq} {format_diffpoly(rhs, latex=latex)}"
