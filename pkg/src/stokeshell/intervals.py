"""Stokes directions and the interval combinatorics indexing shells.

Everything here is exact: for a pure-level index set the Stokes
directions are rational multiples of pi.  A fundamental domain of left
endpoints in [0, 2*pi) is stored; translated intervals are referenced by
(index, shift) pairs and the Galois shift acts on stored data through
the relabelling of rays.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .irregular import (Angle, IndexSet, RamifiedValue, compare_on, mag_sort_key,
                        LT, GT, zero_value)


@dataclass(frozen=True)
class Interval:
    """Open interval (left, left + pi/omega); endpoints exact angles."""

    left: Angle
    omega: Fraction

    def __post_init__(self):
        assert self.omega > 0

    @property
    def length_q(self) -> Fraction:
        """Length in units of pi."""
        return 1 / Fraction(self.omega)

    @property
    def right(self) -> Angle:
        return Angle(self.left.q + self.length_q)

    def shift(self, q) -> "Interval":
        """Translate by q*pi."""
        return Interval(Angle(self.left.q + Fraction(q)), self.omega)

    def contains_angle(self, theta: Angle) -> bool:
        return self.left.q < theta.q < self.right.q

    def overlaps(self, other: "Interval") -> bool:
        return self.left.q < other.right.q and other.left.q < self.right.q

    def midpoint(self) -> Angle:
        return Angle((self.left.q + self.right.q) / 2)

    def __repr__(self):
        return f"({self.left.q}pi, {self.right.q}pi)"


@dataclass(frozen=True)
class JRef:
    """Reference to a stored interval translated by 2*pi*shift."""

    idx: int
    shift: int = 0

    def shifted(self, k: int) -> "JRef":
        return JRef(self.idx, self.shift + k)


class TrivialIndexSetError(ValueError):
    pass


def ray_angles(iset: IndexSet):
    """Sorted ray arguments (Angle, in [0,2)) with their member values.

    Values are grouped by the argument of the leading coefficient; each
    group is sorted by ascending magnitude.
    """
    groups = {}
    for e in iset.elems:
        j, c = e.terms[0]
        groups.setdefault(c.arg.mod(2).q, []).append(e)
    out = []
    for q in sorted(groups):
        vals = sorted(groups[q], key=lambda e: mag_sort_key(e.terms[0][1].mag))
        out.append((Angle(q), vals))
    return out


def stokes_directions(iset: IndexSet):
    """Sorted Stokes directions of a pure-level set in [0, 2*pi).

    Each direction is returned with the argument of the ray pair owning
    it.  Raises on a trivial set (no nonzero values).
    """
    if not iset.elems:
        raise TrivialIndexSetError("trivial index set: no nonzero ramified values")
    level = iset.pure_level()
    if level is None:
        raise ValueError("index set is not pure level")
    n, omega = level
    p = iset.p
    dirs = {}
    for ray_arg, _ in ray_angles(iset):
        # Re(alpha z_p^{-n}) = 0 at theta = (p/n)(arg + pi/2 + k pi)
        base = Fraction(p, n) * (ray_arg.q + Fraction(1, 2))
        stepq = Fraction(p, n)
        t = base % stepq
        while t < 2:
            dirs.setdefault(t, ray_arg.q)
            t += stepq
    return [(Angle(q), Angle(dirs[q])) for q in sorted(dirs)]


class IntervalCombinatorics:
    """All interval data of a pure-level, symmetric index set with 0."""

    def __init__(self, iset: IndexSet):
        if not iset.contains_zero:
            raise ValueError("index sets for shells must contain 0")
        if not iset.symmetric:
            raise ValueError("index sets for shells must satisfy I = -I")
        level = iset.pure_level()
        if level is None:
            raise ValueError("index set is not pure level")
        self.iset = iset
        self.n, self.omega = level
        self.p = iset.p
        self.len_q = 1 / self.omega  # interval length in pi units

        dirs = stokes_directions(iset)
        self.s0 = [d for d, _ in dirs]                       # sorted, in [0,2)pi
        self.t_intervals = [Interval(d, self.omega) for d in self.s0]
        self.num = len(self.s0)

        rays = ray_angles(iset)
        self.rays = rays  # list of (Angle, values sorted by magnitude)
        self.ray_args = [a.q for a, _ in rays]

        # per stored interval: classification
        self.neg_values = []   # I_{J,<0}
        self.pos_values = []   # I_{J,>0}
        zero = zero_value(self.p)
        for J in self.t_intervals:
            neg, pos = [], []
            for ray_arg, vals in rays:
                # the ray owns J iff its Stokes set contains the left endpoint
                base = Fraction(self.p, self.n) * (ray_arg.q + Fraction(1, 2))
                step = Fraction(self.p, self.n)
                if (J.left.q - base) % step == 0:
                    rel = compare_on(vals[0], zero, J)
                    if rel == LT:
                        neg.extend(vals)
                    elif rel == GT:
                        pos.extend(vals)
                    else:
                        raise AssertionError("ray is unexpectedly incomparable to 0 on its own interval")
            if not neg or not pos:
                raise AssertionError("interval misses a <0 or >0 ray (index set not symmetric?)")
            self.neg_values.append(neg)
            self.pos_values.append(pos)

        # components of R minus S_0(I), fundamental domain by left endpoint
        self.components = []
        for i, d in enumerate(self.s0):
            right = self.s0[(i + 1) % self.num].q + (2 if i + 1 == self.num else 0)
            self.components.append(Interval(d, Fraction(1) / Fraction(right - d.q)))
        # note: components are plain open intervals; omega only encodes length

    # -- ray bookkeeping ------------------------------------------------
    def ray_index(self, arg_q: Fraction) -> int:
        return self.ray_args.index(Fraction(arg_q) % 2)

    def ray_shift_arg(self, arg_q: Fraction, k: int = 1) -> Fraction:
        """Galois shift rho^* applied k times to a ray argument."""
        return (Fraction(arg_q) - Fraction(2 * self.n * k, self.p)) % 2

    def value_shift(self, value: RamifiedValue, k: int) -> RamifiedValue:
        from .irregular import shift_action
        return shift_action(value.rebase(self.p), k)

    # -- interval references ---------------------------------------------
    def interval(self, ref: JRef) -> Interval:
        return self.t_intervals[ref.idx].shift(2 * ref.shift)

    def reduce_angle(self, theta: Angle):
        """(reduced angle in [0,2), k) with theta = reduced + 2*pi*k."""
        k = theta.q // 2
        return Angle(theta.q - 2 * k), int(k)

    def ref_for_left(self, theta: Angle) -> JRef:
        """The JRef whose interval has left endpoint theta."""
        red, k = self.reduce_angle(theta)
        idx = self._s0_index(red)
        return JRef(idx, k)

    def _s0_index(self, red: Angle) -> int:
        for i, d in enumerate(self.s0):
            if d.q == red.q:
                return i
        raise KeyError(f"{red} is not a Stokes direction")

    def is_stokes_direction(self, theta: Angle) -> bool:
        red, _ = self.reduce_angle(theta)
        return any(d.q == red.q for d in self.s0)

    def refs_containing(self, theta: Angle):
        """All JRefs of intervals strictly containing direction theta."""
        out = []
        span = int(self.len_q // 2) + 1
        for idx in range(self.num):
            for k in range(-span - 1, span + 2):
                ref = JRef(idx, k)
                if self.interval(ref).contains_angle(theta):
                    out.append(ref)
        out.sort(key=lambda r: self.interval(r).left.q)
        return out

    def t_over_component(self, comp_idx: int):
        """T(I)_I: the stored-interval refs containing the component."""
        comp = self.components[comp_idx]
        theta1 = comp.right
        j1 = self.ref_for_left(Angle(theta1.q - self.len_q))
        out = [j1] + [r for r in self.refs_containing(theta1) if r != j1]
        out.sort(key=lambda r: self.interval(r).left.q)
        return out

    # -- relations --------------------------------------------------------
    def vdash(self, r1: JRef, r2: JRef) -> bool:
        """J1 |- J2: consecutive left endpoints with no Stokes direction between."""
        l1 = self.interval(r1).left.q
        l2 = self.interval(r2).left.q
        if not l1 < l2:
            return False
        succ = self.successor(r1)
        return self.interval(succ).left.q == l2

    def successor(self, ref: JRef) -> JRef:
        idx = ref.idx + 1
        shift = ref.shift
        if idx == self.num:
            idx = 0
            shift += 1
        return JRef(idx, shift)

    def predecessor(self, ref: JRef) -> JRef:
        idx = ref.idx - 1
        shift = ref.shift
        if idx < 0:
            idx = self.num - 1
            shift -= 1
        return JRef(idx, shift)

    def t2_pairs(self):
        """Ordered pairs (J1, J2) in T_2 with J1 in the fundamental domain."""
        out = []
        for i in range(self.num):
            base = self.t_intervals[i]
            span = int(self.len_q // 2) + 1
            for j in range(self.num):
                for k in range(-span - 1, span + 2):
                    if i == j and k == 0:
                        continue
                    ref = JRef(j, k)
                    if base.overlaps(self.interval(ref)):
                        out.append((JRef(i, 0), ref))
        return out

    # -- classification accessors ----------------------------------------
    def values_neg(self, ref: JRef):
        """I_{J,<0} for the referenced interval (values relabelled)."""
        return [self.value_shift(v, ref.shift) for v in self.neg_values[ref.idx]]

    def values_pos(self, ref: JRef):
        return [self.value_shift(v, ref.shift) for v in self.pos_values[ref.idx]]

    def lambda_plus_arg(self, ref: JRef) -> Fraction:
        """Argument of the ray lambda_+(J)."""
        v = self.pos_values[ref.idx][0]
        arg = v.terms[0][1].arg.q
        return self.ray_shift_arg(arg, ref.shift)

    def lambda_minus_arg(self, ref: JRef) -> Fraction:
        v = self.neg_values[ref.idx][0]
        arg = v.terms[0][1].arg.q
        return self.ray_shift_arg(arg, ref.shift)

    # -- reporting ---------------------------------------------------------
    def report(self) -> dict:
        """JSON-friendly Stokes diagram."""
        return {
            "p": self.p,
            "n": self.n,
            "omega": str(self.omega),
            "stokes_directions_pi": [str(d.q) for d in self.s0],
            "intervals": [
                {
                    "left_pi": str(self.t_intervals[i].left.q),
                    "right_pi": str(self.t_intervals[i].right.q),
                    "neg": [repr(v) for v in self.neg_values[i]],
                    "pos": [repr(v) for v in self.pos_values[i]],
                }
                for i in range(self.num)
            ],
            "t2_pairs": [
                [i1.idx, i2.idx, i2.shift] for i1, i2 in self.t2_pairs()
            ],
        }


def interval_set(iset: IndexSet) -> IntervalCombinatorics:
    """Build the full interval combinatorics of a pure-level index set."""
    return IntervalCombinatorics(iset)
