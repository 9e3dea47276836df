"""Ramified irregular values with exact polar coefficients.

Values are finite sums sum_j c_j z_p^{-j} stored with exact polar
coefficients (positive magnitude, angle a rational multiple of pi) or,
for refined Fourier-transform output, complex floats.  The pointwise
partial orders <=_theta are decided exactly on the exact path: every
sign test reduces to the sign of a real element of a cyclotomic field,
which vanishes iff its normal form modulo the cyclotomic polynomial is
zero, and otherwise is resolved by adaptive-precision interval
evaluation.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import gcd

import mpmath

from .linalg import FLOAT_TOL


class UndecidedSignError(ArithmeticError):
    """A certified sign test could not separate a value from zero."""


# ---------------------------------------------------------------------------
# exact angles (rational multiples of pi)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Angle:
    """The angle q*pi radians, q an exact rational in lowest terms."""

    q: Fraction

    def __init__(self, q):
        object.__setattr__(self, "q", Fraction(q))

    def __add__(self, other):
        if isinstance(other, Angle):
            return Angle(self.q + other.q)
        return Angle(self.q + Fraction(other))

    def __sub__(self, other):
        if isinstance(other, Angle):
            return Angle(self.q - other.q)
        return Angle(self.q - Fraction(other))

    def __neg__(self):
        return Angle(-self.q)

    def __mul__(self, s):
        return Angle(self.q * Fraction(s))

    __rmul__ = __mul__

    def __truediv__(self, s):
        return Angle(self.q / Fraction(s))

    def mod(self, period: Fraction) -> "Angle":
        """Reduce into [0, period) (period in units of pi)."""
        period = Fraction(period)
        return Angle(self.q - (self.q // period) * period)

    def radians(self) -> float:
        return float(self.q) * math.pi

    def __repr__(self):
        return f"Angle({self.q}*pi)"


# ---------------------------------------------------------------------------
# cyclotomic exact-zero kernel
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _cyclotomic_poly(n: int):
    """Coefficients of the n-th cyclotomic polynomial (ascending)."""
    # Phi_n = (x^n - 1) / prod_{d | n, d < n} Phi_d, exact division over Q.
    num = [Fraction(-1)] + [Fraction(0)] * (n - 1) + [Fraction(1)]
    for d in range(1, n):
        if n % d == 0:
            den = _cyclotomic_poly(d)
            num = _poly_div_exact(num, den)
    return tuple(num)


def _poly_div_exact(num, den):
    num = list(num)
    den = list(den)
    out = [Fraction(0)] * (len(num) - len(den) + 1)
    for i in range(len(out) - 1, -1, -1):
        c = num[i + len(den) - 1] / den[-1]
        out[i] = c
        if c:
            for j, dj in enumerate(den):
                num[i + j] -= c * dj
    assert all(x == 0 for x in num[:len(den) - 1]), "non-exact polynomial division"
    return out


class CycSum:
    """Finite Q-linear combination of roots of unity e^{i pi q_j}.

    Used only through its real/imaginary parts; supports exact zero
    testing and certified sign evaluation.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        # terms: dict Fraction (angle in units of pi, mod 2) -> Fraction coeff
        d = {}
        for q, c in (terms.items() if isinstance(terms, dict) else terms):
            q = Fraction(q) % 2
            c = Fraction(c)
            if c:
                d[q] = d.get(q, Fraction(0)) + c
                if not d[q]:
                    del d[q]
        self.terms = d

    @staticmethod
    def unit(q, coeff=1):
        return CycSum([(Fraction(q), Fraction(coeff))])

    def __add__(self, other):
        t = dict(self.terms)
        for q, c in other.terms.items():
            t[q] = t.get(q, Fraction(0)) + c
            if not t[q]:
                del t[q]
        out = CycSum()
        out.terms = t
        return out

    def __neg__(self):
        out = CycSum()
        out.terms = {q: -c for q, c in self.terms.items()}
        return out

    def __sub__(self, other):
        return self + (-other)

    def rotate(self, q):
        """Multiply by e^{i pi q}."""
        out = CycSum()
        out.terms = {(qq + Fraction(q)) % 2: c for qq, c in self.terms.items()}
        return out

    def scale(self, s):
        s = Fraction(s)
        out = CycSum()
        out.terms = {} if not s else {q: c * s for q, c in self.terms.items()}
        return out

    def conj(self):
        out = CycSum()
        out.terms = {(-q) % 2: c for q, c in self.terms.items()}
        return out

    def real_part(self):
        """(z + conj z)/2 as a CycSum."""
        return (self + self.conj()).scale(Fraction(1, 2))

    def imag_part(self):
        """(z - conj z)/(2i) = rotate by -pi/2 then real part."""
        return self.rotate(Fraction(-1, 2)).real_part()

    def is_zero(self) -> bool:
        """Exact zero test via reduction modulo the cyclotomic polynomial."""
        if not self.terms:
            return True
        dens = [q.denominator for q in self.terms]
        n = 1
        for d in dens:
            n = n * d // gcd(n, d)
        n *= 2  # angles are multiples of pi = zeta_{2n'}^{n'}
        # write each term as coeff * zeta_n^{k} with zeta_n = e^{2 pi i / n}
        poly = [Fraction(0)] * n
        for q, c in self.terms.items():
            k = int(q * n / 2) % n
            poly[k] += c
        phi = list(_cyclotomic_poly(n))
        # reduce poly modulo x^n - 1 is already done; now mod Phi_n
        deg = len(phi) - 1
        for i in range(n - 1, deg - 1, -1):
            c = poly[i]
            if c:
                for j in range(deg + 1):
                    poly[i - deg + j] -= c * phi[j]
        return all(x == 0 for x in poly[:deg])

    def evalf(self, prec=53):
        with mpmath.workprec(prec):
            acc = mpmath.mpf(0)
            for q, c in self.terms.items():
                acc += mpmath.mpf(c.numerator) / c.denominator * mpmath.cospi(mpmath.mpf(q.numerator) / q.denominator)
        return acc

    def sign(self) -> int:
        """Exact sign of the (real) value; requires self to be real."""
        if self.is_zero():
            return 0
        prec = 64
        while prec <= 4096:
            with mpmath.workprec(prec):
                total = mpmath.mpf(0)
                radius = mpmath.mpf(0)
                for q, c in self.terms.items():
                    cq = mpmath.mpf(c.numerator) / c.denominator
                    val = cq * mpmath.cospi(mpmath.mpf(q.numerator) / q.denominator)
                    total += val
                    radius += abs(cq)
                err = radius * mpmath.mpf(2) ** (8 - prec)
                if abs(total) > err:
                    return 1 if total > 0 else -1
            prec *= 2
        raise ArithmeticError("UNDECIDED: certified sign refinement hit the precision cap")


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolicMag:
    """Positive magnitude const*base**exp with a named positive constant."""

    const: str
    const_value: float
    base: Fraction
    exp: Fraction
    provenance: object = field(default=None, compare=False)

    def value(self) -> float:
        return self.const_value * float(self.base) ** float(self.exp)

    def __repr__(self):
        return f"{self.const}*{self.base}^{self.exp}"


def mag_sort_key(mag):
    """Sort key for magnitudes; exact within one provenance family."""
    if isinstance(mag, (int, Fraction)):
        return (0, Fraction(mag), "", Fraction(0))
    return (1, Fraction(mag.base) if mag.exp > 0 else -Fraction(mag.base), mag.const, Fraction(mag.exp))


def mag_equal(m1, m2) -> bool:
    if isinstance(m1, (int, Fraction)) and isinstance(m2, (int, Fraction)):
        return Fraction(m1) == Fraction(m2)
    if isinstance(m1, SymbolicMag) and isinstance(m2, SymbolicMag):
        return (m1.const, m1.base, m1.exp) == (m2.const, m2.base, m2.exp)
    return False


@dataclass(frozen=True)
class PolarCoeff:
    """Nonzero coefficient mag * e^{i*arg}, arg a rational multiple of pi."""

    mag: object  # positive Fraction or SymbolicMag
    arg: Angle

    def __post_init__(self):
        if isinstance(self.mag, (int, Fraction)):
            object.__setattr__(self, "mag", Fraction(self.mag))
            assert self.mag > 0, "polar coefficients must have positive magnitude"

    def neg(self) -> "PolarCoeff":
        return PolarCoeff(self.mag, (self.arg + 1).mod(2))

    def galois_shift(self, delta: Angle) -> "PolarCoeff":
        return PolarCoeff(self.mag, (self.arg + delta).mod(2))

    def mag_value(self) -> float:
        return self.mag.value() if isinstance(self.mag, SymbolicMag) else float(self.mag)

    def to_complex(self) -> complex:
        return self.mag_value() * cmath.exp(1j * self.arg.radians())

    def as_cycsum(self):
        """CycSum representation; only available for rational magnitudes."""
        if isinstance(self.mag, SymbolicMag):
            raise TypeError("symbolic magnitude has no exact cyclotomic form")
        return CycSum.unit(self.arg.q, self.mag)

    def __repr__(self):
        return f"{self.mag}*e^(i*{self.arg.q}*pi)"


def _coeff_key(c) -> tuple:
    if isinstance(c, PolarCoeff):
        if isinstance(c.mag, Fraction):
            mag = (0, c.mag, "", Fraction(0))
        else:
            mag = (1, Fraction(c.mag.base), c.mag.const, Fraction(c.mag.exp))
        return ("polar", mag, c.arg.q)
    return ("float", (0, Fraction(round(c.real, 12)).limit_denominator(10**12), "",
                      Fraction(round(c.imag, 12)).limit_denominator(10**12)), Fraction(0))


# ---------------------------------------------------------------------------
# ramified values
# ---------------------------------------------------------------------------

LT, GT, EQ, INCOMPARABLE = "LT", "GT", "EQ", "INCOMPARABLE"


@dataclass(frozen=True)
class RamifiedValue:
    """Finite sum of c_j z_p^{-j}, j >= 1; the zero value has no terms."""

    p: int
    terms: tuple  # sorted tuple of (j, coeff); coeff: PolarCoeff or complex

    def __init__(self, p: int, terms=()):
        assert p >= 1
        if isinstance(terms, dict):
            terms = terms.items()
        cleaned = []
        for j, c in terms:
            assert j >= 1
            if isinstance(c, complex) and abs(c) == 0:
                continue
            cleaned.append((int(j), c))
        cleaned.sort(key=lambda t: -t[0])
        # canonical minimal ramification: divide out gcd(p, all poles)
        if cleaned:
            g = p
            for j, _ in cleaned:
                g = gcd(g, j)
            if g > 1:
                p //= g
                cleaned = [(j // g, c) for j, c in cleaned]
        else:
            p = 1
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "terms", tuple(cleaned))

    # -- basic structure ----------------------------------------------
    @property
    def is_zero(self):
        return not self.terms

    @property
    def is_monomial(self):
        return len(self.terms) == 1

    def leading(self):
        """(j, coeff) of the highest pole, or None for the zero value."""
        return self.terms[0] if self.terms else None

    def coeff(self, j):
        for jj, c in self.terms:
            if jj == j:
                return c
        return None

    def key(self):
        return (self.p, tuple((j, _coeff_key(c)) for j, c in self.terms))

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        if not isinstance(other, RamifiedValue):
            return NotImplemented
        if self.p != other.p:
            a, b = rebase_pair(self, other)
            return a.key() == b.key()
        return self.key() == other.key()

    def __neg__(self):
        out = []
        for j, c in self.terms:
            out.append((j, c.neg() if isinstance(c, PolarCoeff) else -c))
        return RamifiedValue(self.p, out)

    def rebase(self, p_new: int) -> "RamifiedValue":
        """Rewrite over z_{p_new} with p | p_new."""
        assert p_new % self.p == 0
        k = p_new // self.p
        return RamifiedValue(p_new, [(j * k, c) for j, c in self.terms])

    def __repr__(self):
        if self.is_zero:
            return "0"
        var = "z" if self.p == 1 else f"z_{self.p}"
        return " + ".join(f"({c})*{var}^-{j}" for j, c in self.terms)


def rebase_pair(a: RamifiedValue, b: RamifiedValue):
    p = a.p * b.p // gcd(a.p, b.p)
    return a.rebase(p), b.rebase(p)


def zero_value(p=1) -> RamifiedValue:
    return RamifiedValue(p, ())


def monomial(p: int, j: int, mag, arg_pi) -> RamifiedValue:
    return RamifiedValue(p, [(j, PolarCoeff(mag, Angle(arg_pi).mod(2)))])


# -- operations --------------------------------------------------------------


def order(a: RamifiedValue) -> Fraction:
    """-(max pole)/p; the zero value has order 0 by convention."""
    if a.is_zero:
        return Fraction(0)
    return Fraction(-a.terms[0][0], a.p)


def truncate(a: RamifiedValue, omega) -> RamifiedValue:
    """Drop the terms of order > -omega (keep poles j with j/p >= omega)."""
    omega = Fraction(omega)
    if omega <= 0:
        raise ValueError("truncation order must be positive")
    if a.is_zero:
        return a
    ell = omega * a.p
    if ell.denominator != 1:
        # rebase so that omega = integer / p'
        p_new = a.p * ell.denominator
        return truncate(a.rebase(p_new), omega)
    ell = int(ell)
    return RamifiedValue(a.p, [(j, c) for j, c in a.terms if j >= ell])


def shift_action(a: RamifiedValue, k: int = 1) -> RamifiedValue:
    """k-th power of the Galois generator: coeff of z_p^-j gains e^{-2 pi i j k / p}."""
    out = []
    for j, c in a.terms:
        delta = Fraction(-2 * j * k, a.p)
        if isinstance(c, PolarCoeff):
            out.append((j, c.galois_shift(Angle(delta))))
        else:
            out.append((j, c * cmath.exp(1j * math.pi * float(delta))))
    return RamifiedValue(a.p, out)


def _difference_leading(a: RamifiedValue, b: RamifiedValue):
    """Leading term (j, parts) of a-b; parts is a list of signed coefficients.

    Returns None when a == b.  Exact coefficients stay symbolic: the pair
    of (coeff, sign) entries is combined later inside the sign test.
    """
    a, b = rebase_pair(a, b) if a.p != b.p else (a, b)
    js = sorted({j for j, _ in a.terms} | {j for j, _ in b.terms}, reverse=True)
    for j in js:
        ca, cb = a.coeff(j), b.coeff(j)
        if ca is None and cb is None:
            continue
        if ca is not None and cb is not None and _coeff_key(ca) == _coeff_key(cb):
            continue
        return a.p, j, ca, cb
    return None


def _re_rotated_sign(ca, cb, rot: Fraction, tol=FLOAT_TOL) -> int:
    """Exact/certified sign of Re((ca - cb) * e^{i pi rot})."""
    exact = ((ca is None or (isinstance(ca, PolarCoeff) and isinstance(ca.mag, Fraction)))
             and (cb is None or (isinstance(cb, PolarCoeff) and isinstance(cb.mag, Fraction))))
    if exact:
        s = CycSum()
        if ca is not None:
            s = s + ca.as_cycsum()
        if cb is not None:
            s = s - cb.as_cycsum()
        return s.rotate(rot).real_part().sign()
    za = (ca.to_complex() if isinstance(ca, PolarCoeff) else complex(ca)) if ca is not None else 0j
    zb = (cb.to_complex() if isinstance(cb, PolarCoeff) else complex(cb)) if cb is not None else 0j
    v = ((za - zb) * cmath.exp(1j * math.pi * float(rot))).real
    if abs(v) <= tol:
        return 0
    return 1 if v > 0 else -1


def compare_at(a: RamifiedValue, b: RamifiedValue, theta, tol=FLOAT_TOL) -> str:
    """Order of a, b at direction theta (an Angle or float radians).

    With s the sign of Re(c e^{-i k theta / p}) for the leading term
    c z_p^{-k} of a-b: s > 0 gives LT (a below b), s < 0 gives GT, and
    s = 0 gives INCOMPARABLE.
    """
    lead = _difference_leading(a, b)
    if lead is None:
        return EQ
    p, k, ca, cb = lead
    if isinstance(theta, Angle):
        s = _re_rotated_sign(ca, cb, Fraction(-k, p) * theta.q, tol)
    else:
        za = (ca.to_complex() if isinstance(ca, PolarCoeff) else complex(ca)) if ca is not None else 0j
        zb = (cb.to_complex() if isinstance(cb, PolarCoeff) else complex(cb)) if cb is not None else 0j
        v = ((za - zb) * cmath.exp(-1j * k * float(theta) / p)).real
        if abs(v) <= tol:
            raise UndecidedSignError("sign within tolerance of zero at a float direction")
        s = 1 if v > 0 else -1
    if s > 0:
        return LT
    if s < 0:
        return GT
    return INCOMPARABLE


def difference_change_angles(a: RamifiedValue, b: RamifiedValue):
    """Directions where the leading term of a-b changes sign, as floats
    (radians) with the exact spacing pi*p/k; returns (base, spacing) with
    base the smallest nonnegative change direction.

    On the exact path with cyclotomic coefficients the base angle is
    certified by adaptive precision; it is in general not a rational
    multiple of pi.
    """
    lead = _difference_leading(a, b)
    if lead is None:
        return None
    p, k, ca, cb = lead
    za = (ca.to_complex() if isinstance(ca, PolarCoeff) else complex(ca)) if ca is not None else 0j
    zb = (cb.to_complex() if isinstance(cb, PolarCoeff) else complex(cb)) if cb is not None else 0j
    phi = cmath.phase(za - zb)
    # Re((za-zb) e^{-ik theta/p}) = 0 <=> k theta / p = phi +- pi/2 + m pi
    base = (phi + math.pi / 2) * p / k
    spacing = math.pi * p / k
    base = base % spacing
    return base, spacing


def compare_on(a: RamifiedValue, b: RamifiedValue, J, tol=FLOAT_TOL) -> str:
    """Order of a, b over the whole open interval J (with .left/.right Angles).

    The sign of Re((a-b)) along the boundary circle vanishes on an exact
    arithmetic progression of spacing pi*p/k; sampling every half-spacing,
    endpoints included, therefore detects every interior change exactly.
    """
    lead = _difference_leading(a, b)
    if lead is None:
        return EQ
    p, k, ca, cb = lead
    left, right = J.left, J.right
    span = right.q - left.q
    assert span > 0
    nsteps = max(2, int(2 * span * Fraction(k, p)) + 2)  # step < half the zero spacing
    step = span / nsteps
    signs = []
    for i in range(nsteps + 1):
        theta_q = left.q + i * step
        signs.append(_re_rotated_sign(ca, cb, Fraction(-k, p) * theta_q, tol))
    if any(s == 0 for s in signs[1:-1]):
        return INCOMPARABLE
    nonzero = [s for s in signs if s != 0]
    if any(s != nonzero[0] for s in nonzero):
        return INCOMPARABLE
    return LT if nonzero[0] > 0 else GT


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------


class IndexSet:
    """Finite Galois-stable set of ramified values (possibly with 0)."""

    def __init__(self, p: int, elems, contains_zero=None):
        elems = list(elems)
        nonzero = [e for e in elems if not e.is_zero]
        has_zero = any(e.is_zero for e in elems)
        if contains_zero is not None:
            has_zero = contains_zero
        for e in nonzero:
            if p % e.p != 0:
                raise ValueError(f"value with ramification {e.p} does not live over z_{p}")
        # close under the Galois action of Gal(p); elements stay canonical
        seen = {}
        stack = list(nonzero)
        while stack:
            e = stack.pop()
            k = e.key()
            if k in seen:
                continue
            seen[k] = e
            stack.append(shift_action(e.rebase(p), 1))
        self.p = p
        self.elems = sorted(seen.values(), key=lambda e: e.key())
        self.contains_zero = has_zero

    @property
    def nonzero(self):
        return self.elems

    def all_values(self):
        out = list(self.elems)
        if self.contains_zero:
            out.append(zero_value(self.p))
        return out

    @property
    def symmetric(self) -> bool:
        keys = {e.key() for e in self.elems}
        return all((-e).key() in keys for e in self.elems)

    def pure_level(self):
        """(n, omega) when all nonzero elements are monomials of one order; else None."""
        if not self.elems:
            return None
        orders = {Fraction(e.terms[0][0], e.p) for e in self.elems}
        if len(orders) != 1 or not all(e.is_monomial for e in self.elems):
            return None
        omega = orders.pop()
        n = omega * self.p
        if n.denominator != 1:
            return None
        return int(n), omega

    def negate(self) -> "IndexSet":
        return IndexSet(self.p, [-e for e in self.elems], self.contains_zero)

    def key(self):
        return (self.p, self.contains_zero, tuple(e.key() for e in self.elems))

    def __eq__(self, other):
        return isinstance(other, IndexSet) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        zero = ["0"] if self.contains_zero else []
        return f"IndexSet(p={self.p}, {{{', '.join(zero + [repr(e) for e in self.elems])}}})"


def loosen_sets(iset: IndexSet, omega):
    """(T_omega, S_omega, T~_omega, S~_omega) per the loosening definitions."""
    omega = Fraction(omega)

    def split(om):
        t_elems, s_elems = [], []
        for e in iset.elems:
            if truncate_or_zero(e, om).is_zero:
                t_elems.append(e)
            else:
                s_elems.append(e)
        t = IndexSet(iset.p, t_elems, contains_zero=iset.contains_zero)
        s = IndexSet(iset.p, s_elems, contains_zero=True)
        return t, s

    t, s = split(omega)
    tt, ss = split(omega + Fraction(1, iset.p))
    return t, s, tt, ss


def truncate_or_zero(a: RamifiedValue, omega) -> RamifiedValue:
    try:
        return truncate(a, omega)
    except ValueError:
        return zero_value(a.p)
