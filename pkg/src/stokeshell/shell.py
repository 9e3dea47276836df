"""The Stokes shell data structure: graded spaces, internal transitions,
gluing and wrap maps, deformation data, morphisms, duality.

Storage convention (the "reduced gauge"): spaces are stored for the
fundamental domain of intervals with left endpoint in [0, 2*pi).  A
vector over a translated interval J + 2*pi*k is always represented by
its image under the k-th power of the equivariance map, so the
equivariance itself becomes the identity with a relabelling of values by
the Galois shift; the wrap twist lives in the seam-crossing gluing
matrices.  All structural matrices are therefore shift-invariant in
stored coordinates.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from .intervals import IntervalCombinatorics, Interval, JRef, interval_set
from .irregular import (EQ, GT, INCOMPARABLE, LT, IndexSet, RamifiedValue,
                        compare_on, zero_value)
from .linalg import (QI, GradedSpace, Matrix, block_matrix, block_of,
                     direct_sum, is_block_supported, set_block)

NEG, POS, ZERO = "-", "+", "0"


@dataclass
class ShellBlock:
    """One graded space K_{lambda,J} in its inf-side grading."""

    labels: tuple          # RamifiedValue labels, magnitude-ascending
    dims: tuple            # ints
    transition: Matrix     # strictly lowering w.r.t. <=_J ("fR")

    @property
    def space(self) -> GradedSpace:
        return GradedSpace(self.labels, self.dims)

    @property
    def total(self) -> int:
        return sum(self.dims)

    def sup_side_change(self) -> Matrix:
        """id - fR: maps inf-side graded pieces onto sup-side pieces."""
        return Matrix.identity(self.total, self.transition.is_exact) - self.transition

    def copy(self):
        return ShellBlock(self.labels, self.dims, self.transition.copy())


def _leq_on(comb: IntervalCombinatorics, ref: JRef):
    """Strict order a <_J b on the values of the referenced interval."""
    J = comb.interval(ref)

    def less(a: RamifiedValue, b: RamifiedValue) -> bool:
        return compare_on(a, b, J) == LT

    return less


class StokesShell:
    """A Stokes shell over a pure-level symmetric index set containing 0."""

    def __init__(self, comb: IntervalCombinatorics, blocks, phi_neg, phi_pos,
                 phi_zero, p_maps, q_maps, r_intra, r_inter):
        self.comb = comb
        self.blocks = blocks        # dict (sign, idx) -> ShellBlock
        self.phi_neg = phi_neg      # list[Matrix]: K_{<0,J_i} -> K_{>0, next}
        self.phi_pos = phi_pos      # list[Matrix]: K_{>0,J_i} -> K_{<0, next}
        self.phi_zero = phi_zero    # list[Matrix]: K_{0,J_i} -> K_{0, succ}
        self.p_maps = p_maps        # list[Matrix]: K_0 -> K_{<0}
        self.q_maps = q_maps        # list[Matrix]: K_{>0} -> K_0
        self.r_intra = r_intra      # list[Matrix]: K_{>0} -> K_{<0} (same J)
        self.r_inter = r_inter      # dict (i,(j,k)) -> Matrix for T2 pairs

    # -- basic accessors ---------------------------------------------------
    @property
    def num(self):
        return self.comb.num

    def block(self, sign, ref) -> ShellBlock:
        idx = ref.idx if isinstance(ref, JRef) else ref
        return self.blocks[(sign, idx)]

    def dim(self, sign, ref) -> int:
        return self.block(sign, ref).total

    def block_labels(self, sign, ref):
        """Value labels of the referenced (possibly translated) block."""
        idx, shift = (ref.idx, ref.shift) if isinstance(ref, JRef) else (ref, 0)
        labels = self.blocks[(sign, idx)].labels
        if shift == 0:
            return labels
        return tuple(self.comb.value_shift(v, -shift) for v in labels)

    def next_ref(self, ref: JRef) -> JRef:
        """The interval J + pi/omega of the same ray pair."""
        from .irregular import Angle
        left = self.comb.interval(ref).left
        return self.comb.ref_for_left(Angle(left.q + self.comb.len_q))

    def prev_ref(self, ref: JRef) -> JRef:
        from .irregular import Angle
        left = self.comb.interval(ref).left
        return self.comb.ref_for_left(Angle(left.q - self.comb.len_q))

    def r2(self, src: JRef, tgt: JRef) -> Matrix:
        """Deformation map K_{>0,src} -> K_{<0,tgt} for a T2 pair."""
        key = (src.idx, (tgt.idx, tgt.shift - src.shift))
        return self.r_inter[key]

    def t2_targets(self, src: JRef):
        """All tgt refs with (src, tgt) in T2, at the source's shift."""
        out = []
        for (i, (j, k)) in self.r_inter:
            if i == src.idx:
                out.append(JRef(j, k + src.shift))
        out.sort(key=lambda r: self.comb.interval(r).left.q)
        return out

    # -- transports ----------------------------------------------------------
    def ray_step(self, sign, ref: JRef) -> Matrix:
        """One forward gluing step K_{sign,J} -> K_{-sign, J+pi/omega}."""
        return (self.phi_neg if sign == NEG else self.phi_pos)[ref.idx]

    def ray_transport(self, sign, src: JRef, tgt: JRef):
        """(matrix, end_sign) of the parallel transport of the ray system.

        src and tgt must belong to the same ray pair chain (their left
        endpoints differ by a multiple of pi/omega).
        """
        diff = (self.comb.interval(tgt).left.q - self.comb.interval(src).left.q) / self.comb.len_q
        assert diff.denominator == 1, "refs not in the same ray chain"
        steps = int(diff)
        m = Matrix.identity(self.dim(sign, src), True)
        cur_sign, cur = sign, src
        if steps >= 0:
            for _ in range(steps):
                m = self.ray_step(cur_sign, cur) * m
                cur_sign = POS if cur_sign == NEG else NEG
                cur = self.next_ref(cur)
        else:
            for _ in range(-steps):
                prev = self.prev_ref(cur)
                prev_sign = POS if cur_sign == NEG else NEG
                m = self.ray_step(prev_sign, prev).inverse() * m
                cur_sign, cur = prev_sign, prev
        assert cur.idx == tgt.idx and cur.shift == tgt.shift
        return m, cur_sign

    def zero_transport(self, src: JRef, tgt: JRef) -> Matrix:
        """Parallel transport of the 0-part from src to tgt."""
        steps = self._interval_distance(src, tgt)
        m = Matrix.identity(self.dim(ZERO, src), True)
        cur = src
        if steps >= 0:
            for _ in range(steps):
                m = self.phi_zero[cur.idx] * m
                cur = self.comb.successor(cur)
        else:
            for _ in range(-steps):
                cur = self.comb.predecessor(cur)
                m = self.phi_zero[cur.idx].inverse() * m
        return m

    def _interval_distance(self, src: JRef, tgt: JRef) -> int:
        return (tgt.idx - src.idx) + self.num * (tgt.shift - src.shift)

    def monodromy_zero(self, ref: JRef) -> Matrix:
        """Transport once around in the negative direction composed with the
        equivariance (identity in the reduced gauge)."""
        return self.zero_transport(ref, JRef(ref.idx, ref.shift - 1))

    # -- derived maps ---------------------------------------------------------
    def internal_iso(self, sign, ref) -> Matrix:
        """fI = id - fR on a block."""
        return self.block(sign, ref).sup_side_change()

    def pi_auto(self, i: int) -> Matrix:
        """Pi^{J_+,J_-} on K_0 (+) K_- (+) K_+ at the stored interval i."""
        d0, dn, dp = (self.dim(ZERO, i), self.dim(NEG, i), self.dim(POS, i))
        exact = self.p_maps[i].is_exact
        m = Matrix.identity(d0 + dn + dp, exact)
        # blocks ordered [0, -, +]
        for r in range(dn):
            for c in range(d0):
                m.data[d0 + r][c] = self.p_maps[i].data[r][c]
        for r in range(d0):
            for c in range(dp):
                m.data[r][d0 + dn + c] = self.q_maps[i].data[r][c]
        for r in range(dn):
            for c in range(dp):
                m.data[d0 + r][d0 + dn + c] = self.r_intra[i].data[r][c]
        return m

    def r_intra_rev(self, i: int) -> Matrix:
        """R^{J_+}_{J_-} := -R^{J_-}_{J_+} + P o Q."""
        return -self.r_intra[i] + self.p_maps[i] * self.q_maps[i]

    def upsilon_tilde(self, src: JRef, tgt: JRef):
        """(on K_{>0,src}, on K_{<0,src}) components of the map into K_{<0,tgt}."""
        on_pos = self.r2(src, tgt)
        nxt = self.next_ref(src)
        on_neg = -self.r2(nxt, tgt) * self.phi_neg[src.idx]
        return on_pos, on_neg

    def upsilon_check(self, src: JRef, tgt: JRef):
        """(into K_{<0,tgt}, into K_{>0,tgt}) components on K_{>0,src}."""
        into_neg = self.r2(src, tgt)
        prev = self.prev_ref(tgt)
        into_pos = self.phi_neg[prev.idx] * (-self.r2(src, prev))
        return into_neg, into_pos

    # -- structure maps summary ----------------------------------------------
    def signature(self):
        return tuple(sorted((s, i, self.blocks[(s, i)].dims) for (s, i) in self.blocks))

    def __eq__(self, other):
        if not isinstance(other, StokesShell):
            return NotImplemented
        if self.comb.iset != other.comb.iset:
            return False
        for key in self.blocks:
            b1, b2 = self.blocks[key], other.blocks[key]
            if b1.dims != b2.dims or not (b1.transition == b2.transition):
                return False
            if tuple(v.key() for v in b1.labels) != tuple(v.key() for v in b2.labels):
                return False
        for a, b in ((self.phi_neg, other.phi_neg), (self.phi_pos, other.phi_pos),
                     (self.phi_zero, other.phi_zero), (self.p_maps, other.p_maps),
                     (self.q_maps, other.q_maps), (self.r_intra, other.r_intra)):
            if any(not (x == y) for x, y in zip(a, b)):
                return False
        if set(self.r_inter) != set(other.r_inter):
            return False
        return all(self.r_inter[k] == other.r_inter[k] for k in self.r_inter)

    # -- validation -------------------------------------------------------------
    def validate(self):
        """Check every structural invariant; returns a report object."""
        issues = []
        comb = self.comb
        for i in range(self.num):
            ref = JRef(i, 0)
            for sign in (NEG, POS, ZERO):
                blk = self.block(sign, ref)
                n = blk.total
                if blk.transition.rows != n or blk.transition.cols != n:
                    issues.append((sign, i, "transition shape mismatch"))
                    continue
                less = _leq_on(comb, ref)
                sp = blk.space
                ok = is_block_supported(blk.transition, sp, sp,
                                        lambda ol, il, less=less: ol != il and less(ol, il))
                if not ok:
                    issues.append((sign, i, "strict lowering violated"))
            # gluing shapes and gradedness
            nxt = self.next_ref(ref)
            for sign, phi in ((NEG, self.phi_neg[i]), (POS, self.phi_pos[i])):
                tgt_sign = POS if sign == NEG else NEG
                src = self.block(sign, ref)
                tgt = self.block(tgt_sign, nxt)
                if phi.rows != tgt.total or phi.cols != src.total:
                    issues.append((sign, i, "gluing shape mismatch"))
                    continue
                try:
                    phi.inverse()
                except ValueError:
                    issues.append((sign, i, "gluing not invertible"))
                    continue
                graded = phi * src.sup_side_change()
                if not _positionally_graded(graded, tgt.space, src.space):
                    issues.append((sign, i, "gluing does not respect the endpoint splitting"))
            z = self.phi_zero[i]
            succ = comb.successor(ref)
            if z.rows != self.dim(ZERO, succ) or z.cols != self.dim(ZERO, ref):
                issues.append((ZERO, i, "zero-part gluing shape mismatch"))
            else:
                try:
                    z.inverse()
                except ValueError:
                    issues.append((ZERO, i, "zero-part gluing not invertible"))
            # deformation data shapes
            if self.p_maps[i].rows != self.dim(NEG, ref) or self.p_maps[i].cols != self.dim(ZERO, ref):
                issues.append((ZERO, i, "P shape mismatch"))
            if self.q_maps[i].rows != self.dim(ZERO, ref) or self.q_maps[i].cols != self.dim(POS, ref):
                issues.append((POS, i, "Q shape mismatch"))
            if self.r_intra[i].rows != self.dim(NEG, ref) or self.r_intra[i].cols != self.dim(POS, ref):
                issues.append((POS, i, "R shape mismatch"))
        t2 = set()
        for (i, jk) in self.r_inter:
            t2.add((i, jk))
            m = self.r_inter[(i, jk)]
            if m.rows != self.dim(NEG, JRef(*jk)) or m.cols != self.dim(POS, JRef(i, 0)):
                issues.append((POS, i, f"inter-interval R shape mismatch at {jk}"))
        expected = {(a.idx, (b.idx, b.shift)) for a, b in self.comb.t2_pairs()}
        if t2 != expected:
            issues.append((POS, -1, "inter-interval R support differs from T2"))
        return ValidationReport(issues)


def _positionally_graded(m: Matrix, sp_out: GradedSpace, sp_in: GradedSpace) -> bool:
    """Block-diagonal w.r.t. matching label positions (labels correspond
    position-wise between source and target)."""
    if len(sp_out.labels) != len(sp_in.labels):
        return False
    for oi, ol in enumerate(sp_out.labels):
        for ii, il in enumerate(sp_in.labels):
            if oi != ii and not block_of(m, sp_out, sp_in, ol, il).is_zero():
                return False
    return True


@dataclass
class ValidationReport:
    issues: list

    @property
    def ok(self):
        return not self.issues

    def __bool__(self):
        return self.ok

    def __repr__(self):
        if self.ok:
            return "valid"
        return "invalid: " + "; ".join(f"({s},{i}) {msg}" for s, i, msg in self.issues)


# ---------------------------------------------------------------------------
# morphisms
# ---------------------------------------------------------------------------


class ShellMorphism:
    """Graded maps per block commuting with every piece of structure."""

    def __init__(self, source: StokesShell, target: StokesShell, components):
        self.source = source
        self.target = target
        self.components = components   # dict (sign, idx) -> Matrix

    def comp(self, sign, ref) -> Matrix:
        idx = ref.idx if isinstance(ref, JRef) else ref
        return self.components[(sign, idx)]

    @staticmethod
    def identity(sh: StokesShell) -> "ShellMorphism":
        comps = {k: Matrix.identity(b.total, True) for k, b in sh.blocks.items()}
        return ShellMorphism(sh, sh, comps)

    def __mul__(self, other: "ShellMorphism") -> "ShellMorphism":
        assert other.target is self.source or other.target.comb.iset == self.source.comb.iset
        comps = {k: self.components[k] * other.components[k] for k in self.components}
        return ShellMorphism(other.source, self.target, comps)

    def validate(self):
        issues = []
        s, t = self.source, self.target
        for i in range(s.num):
            ref = JRef(i, 0)
            for sign in (NEG, POS, ZERO):
                f = self.comp(sign, ref)
                bs, bt = s.block(sign, ref), t.block(sign, ref)
                if f.rows != bt.total or f.cols != bs.total:
                    issues.append((sign, i, "component shape mismatch"))
                    continue
                if not _positionally_graded(f, bt.space, bs.space):
                    issues.append((sign, i, "component not graded"))
                if not (f * bs.transition == bt.transition * f):
                    issues.append((sign, i, "component does not intertwine transitions"))
            # gluing compatibility
            nxt = s.next_ref(ref)
            if not (self.comp(POS, nxt) * s.phi_neg[i] == t.phi_neg[i] * self.comp(NEG, ref)):
                issues.append((NEG, i, "component does not intertwine gluing"))
            if not (self.comp(NEG, nxt) * s.phi_pos[i] == t.phi_pos[i] * self.comp(POS, ref)):
                issues.append((POS, i, "component does not intertwine gluing"))
            succ = s.comb.successor(ref)
            if not (self.comp(ZERO, succ) * s.phi_zero[i] == t.phi_zero[i] * self.comp(ZERO, ref)):
                issues.append((ZERO, i, "component does not intertwine zero gluing"))
            # deformation data
            if not (self.comp(NEG, ref) * s.p_maps[i] == t.p_maps[i] * self.comp(ZERO, ref)):
                issues.append((ZERO, i, "component does not intertwine P"))
            if not (self.comp(ZERO, ref) * s.q_maps[i] == t.q_maps[i] * self.comp(POS, ref)):
                issues.append((POS, i, "component does not intertwine Q"))
            if not (self.comp(NEG, ref) * s.r_intra[i] == t.r_intra[i] * self.comp(POS, ref)):
                issues.append((POS, i, "component does not intertwine R"))
        for (i, jk), m in s.r_inter.items():
            tgt = JRef(*jk)
            if not (self.comp(NEG, tgt) * m == t.r_inter[(i, jk)] * self.comp(POS, JRef(i, 0))):
                issues.append((POS, i, f"component does not intertwine inter-interval R at {jk}"))
        return ValidationReport(issues)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


def _dual_transition(fr: Matrix) -> Matrix:
    ident = Matrix.identity(fr.rows, fr.is_exact)
    return ident - (ident - fr).inverse().transpose()


def dualize(sh: StokesShell) -> StokesShell:
    """The dual shell: spaces dualized with +/- swapped, data transposed."""
    comb = sh.comb
    blocks = {}
    for i in range(sh.num):
        for sign, osign in ((NEG, POS), (POS, NEG), (ZERO, ZERO)):
            src = sh.blocks[(osign, i)]
            labels = tuple(-v for v in src.labels)
            blocks[(sign, i)] = ShellBlock(labels, src.dims, _dual_transition(src.transition))
    phi_neg, phi_pos, phi_zero, p_maps, q_maps, r_intra = [], [], [], [], [], []
    for i in range(sh.num):
        phi_neg.append(sh.phi_pos[i].inverse().transpose())
        phi_pos.append(sh.phi_neg[i].inverse().transpose())
        phi_zero.append(sh.phi_zero[i].inverse().transpose())
        p_maps.append(-sh.q_maps[i].transpose())
        q_maps.append(-sh.p_maps[i].transpose())
        r_intra.append(sh.r_intra_rev(i).transpose())
    r_inter = {}
    for (i, (j, k)), m in sh.r_inter.items():
        # dual of R^{J2}_{J1}; re-key so the source sits in the fundamental domain
        r_inter[(j, (i, -k))] = m.transpose()
    return StokesShell(comb, blocks, phi_neg, phi_pos, phi_zero,
                       p_maps, q_maps, r_intra, r_inter)


def gr(sh: StokesShell):
    """Graded skeleton: per (sign, interval) the labelled dimension table."""
    out = {}
    for (sign, i), blk in sh.blocks.items():
        out[(sign, i)] = {repr(v): d for v, d in zip(blk.labels, blk.dims)}
    return out


# ---------------------------------------------------------------------------
# random shells
# ---------------------------------------------------------------------------


def _random_qi(rng, scale=3):
    return QI(Fraction(rng.randint(-scale, scale)), Fraction(rng.randint(-scale, scale)))


def _random_matrix(rng, rows, cols, density=0.7):
    m = Matrix.zeros(rows, cols, True)
    for r in range(rows):
        for c in range(cols):
            if rng.random() < density:
                m.data[r][c] = _random_qi(rng)
    return m


def _random_invertible(rng, n):
    while True:
        m = _random_matrix(rng, n, n, density=0.9)
        try:
            m.inverse()
            return m
        except ValueError:
            continue


def _random_graded_invertible(rng, space: GradedSpace):
    mats = [_random_invertible(rng, d) for d in space.dims]
    return direct_sum(mats) if space.dims else Matrix.zeros(0, 0)


def _random_lowering(rng, comb, ref, space: GradedSpace):
    less = _leq_on(comb, ref)
    m = Matrix.zeros(space.total, space.total, True)
    for il in space.labels:
        for ol in space.labels:
            if ol != il and less(ol, il):
                blk = _random_matrix(rng, space.dims[space.labels.index(ol)],
                                     space.dims[space.labels.index(il)])
                set_block(m, space, space, ol, il, blk)
    return m


def random_shell(iset: IndexSet, max_dim=2, seed=0, zero_deformation=False) -> StokesShell:
    """Generator for valid random shells (exact backend)."""
    rng = random.Random(seed)
    comb = interval_set(iset)
    blocks = {}
    d0 = rng.randint(0 if zero_deformation else 1, max_dim)
    # ray dims: constant along the Galois/gluing orbit of each ray family
    raydim = {}
    for i in range(comb.num):
        for vals, sign in ((comb.neg_values[i], NEG), (comb.pos_values[i], POS)):
            for v in vals:
                orb = _value_orbit_key(comb, v)
                if orb not in raydim:
                    raydim[orb] = rng.randint(0, max_dim)
    for i in range(comb.num):
        ref = JRef(i, 0)
        for sign, vals in ((NEG, comb.neg_values[i]), (POS, comb.pos_values[i])):
            labels = tuple(vals)
            dims = tuple(raydim[_value_orbit_key(comb, v)] for v in vals)
            blk = ShellBlock(labels, dims, Matrix.zeros(sum(dims), sum(dims), True))
            blk.transition = _random_lowering(rng, comb, ref, blk.space)
            blocks[(sign, i)] = blk
        blocks[(ZERO, i)] = ShellBlock((zero_value(comb.p),), (d0,),
                                       Matrix.zeros(d0, d0, True))
    sh = StokesShell(comb, blocks, [], [], [], [], [], [], {})
    for i in range(sh.num):
        ref = JRef(i, 0)
        nxt = sh.next_ref(ref)
        for sign, store in ((NEG, sh.phi_neg), (POS, sh.phi_pos)):
            tgt_sign = POS if sign == NEG else NEG
            src, tgt = sh.block(sign, ref), sh.block(tgt_sign, nxt)
            g = _random_graded_invertible(rng, tgt.space)
            store.append(g * src.sup_side_change().inverse())
        sh.phi_zero.append(_random_invertible(rng, d0))
        dn, dp = sh.dim(NEG, ref), sh.dim(POS, ref)
        if zero_deformation:
            sh.p_maps.append(Matrix.zeros(dn, d0, True))
            sh.q_maps.append(Matrix.zeros(d0, dp, True))
            sh.r_intra.append(Matrix.zeros(dn, dp, True))
        else:
            sh.p_maps.append(_random_matrix(rng, dn, d0))
            sh.q_maps.append(_random_matrix(rng, d0, dp))
            sh.r_intra.append(_random_matrix(rng, dn, dp))
    for (a, b) in comb.t2_pairs():
        dnb = sh.dim(NEG, b)
        dpa = sh.dim(POS, a)
        sh.r_inter[(a.idx, (b.idx, b.shift))] = (
            Matrix.zeros(dnb, dpa, True) if zero_deformation else _random_matrix(rng, dnb, dpa))
    return sh


def _value_orbit_key(comb, v: RamifiedValue):
    """Key constant along Galois orbits and independent of translation."""
    keys = set()
    w = v
    for _ in range(comb.p):
        keys.add(w.key())
        w = comb.value_shift(w, 1)
    return tuple(sorted(keys))


def embed(sh: StokesShell, bigger: IndexSet) -> StokesShell:
    """Extend a shell by zero blocks over a larger index set of the same level.

    The zero-part gluing along refined chains keeps the old matrices on
    the steps reaching old Stokes directions and the identity elsewhere.
    """
    comb1 = sh.comb
    comb2 = interval_set(bigger)
    old_keys = {v.key() for v in comb1.iset.elems}
    if not old_keys <= {v.key() for v in bigger.elems}:
        raise ValueError("embedding target must contain the index set")
    if (comb2.n, comb2.p) != (comb1.n, comb1.p):
        raise ValueError("embedding target must have the same level data")
    old_lefts = {d.q: i for i, d in enumerate(comb1.s0)}
    d0 = sh.dim(ZERO, JRef(0, 0))
    blocks = {}
    phi_neg, phi_pos, phi_zero = [], [], []
    p_maps, q_maps, r_intra = [], [], []
    for i2 in range(comb2.num):
        left = comb2.s0[i2].q
        if left in old_lefts:
            i1 = old_lefts[left]
            blocks[(NEG, i2)] = sh.blocks[(NEG, i1)].copy()
            blocks[(POS, i2)] = sh.blocks[(POS, i1)].copy()
        else:
            for sign, vals in ((NEG, comb2.neg_values[i2]), (POS, comb2.pos_values[i2])):
                labels = tuple(vals)
                dims = tuple(0 for _ in vals)
                blocks[(sign, i2)] = ShellBlock(labels, dims, Matrix.zeros(0, 0, True))
        blocks[(ZERO, i2)] = ShellBlock((zero_value(comb2.p),), (d0,), Matrix.zeros(d0, d0, True))
    out = StokesShell(comb2, blocks, phi_neg, phi_pos, phi_zero, p_maps, q_maps, r_intra, {})
    for i2 in range(comb2.num):
        left = comb2.s0[i2].q
        if left in old_lefts:
            i1 = old_lefts[left]
            phi_neg.append(sh.phi_neg[i1].copy())
            phi_pos.append(sh.phi_pos[i1].copy())
            p_maps.append(sh.p_maps[i1].copy())
            q_maps.append(sh.q_maps[i1].copy())
            r_intra.append(sh.r_intra[i1].copy())
        else:
            phi_neg.append(Matrix.zeros(0, 0, True))
            phi_pos.append(Matrix.zeros(0, 0, True))
            p_maps.append(Matrix.zeros(0, d0, True))
            q_maps.append(Matrix.zeros(d0, 0, True))
            r_intra.append(Matrix.zeros(0, 0, True))
        succ2 = comb2.successor(JRef(i2, 0))
        succ_left = comb2.interval(succ2).left.mod(2).q
        if succ_left in old_lefts:
            # this refined step completes an old step; the old step starts at
            # the largest old direction <= the current left endpoint
            cands = [q for q in old_lefts if q <= left]
            base = max(cands) if cands else max(old_lefts)
            phi_zero.append(sh.phi_zero[old_lefts[base]].copy())
        else:
            phi_zero.append(Matrix.identity(d0, True))
    for (a, b) in comb2.t2_pairs():
        la, lb = comb2.s0[a.idx].q, comb2.s0[b.idx].q
        if la in old_lefts and lb in old_lefts:
            key1 = (old_lefts[la], (old_lefts[lb], b.shift))
            m = sh.r_inter.get(key1)
            out.r_inter[(a.idx, (b.idx, b.shift))] = (
                m.copy() if m is not None else Matrix.zeros(out.dim(NEG, b), out.dim(POS, a), True))
        else:
            out.r_inter[(a.idx, (b.idx, b.shift))] = Matrix.zeros(out.dim(NEG, b), out.dim(POS, a), True)
    return out
