"""Scalar backends, dense matrices, graded spaces and subspace utilities.

Two scalar backends are supported: exact Gaussian rationals (`QI`) and
complex floats.  Mixed arithmetic promotes to float.  All the structural
algorithms of the package (echelon forms, splitting solvers, block maps)
are written against either backend; the acceptance suite runs on the
exact one.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

FLOAT_TOL = 1e-9


class QI:
    """Gaussian rational: re + im*i with exact Fraction parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    def __add__(self, other):
        if isinstance(other, QI):
            return QI(self.re + other.re, self.im + other.im)
        if isinstance(other, (int, Fraction)):
            return QI(self.re + other, self.im)
        if isinstance(other, (float, complex)):
            return complex(self) + other
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return QI(-self.re, -self.im)

    def __sub__(self, other):
        return self + (-other if isinstance(other, QI) else -QI(other) if isinstance(other, (int, Fraction)) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, QI):
            return QI(self.re * other.re - self.im * other.im,
                      self.re * other.im + self.im * other.re)
        if isinstance(other, (int, Fraction)):
            return QI(self.re * other, self.im * other)
        if isinstance(other, (float, complex)):
            return complex(self) * other
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return QI(self.re / other, self.im / other)
        if isinstance(other, QI):
            n = other.re * other.re + other.im * other.im
            if n == 0:
                raise ZeroDivisionError("division by zero Gaussian rational")
            return self * QI(other.re / n, -other.im / n)
        if isinstance(other, (float, complex)):
            return complex(self) / other
        return NotImplemented

    def __rtruediv__(self, other):
        n = self.re * self.re + self.im * self.im
        if n == 0:
            raise ZeroDivisionError
        inv = QI(self.re / n, -self.im / n)
        return inv * other

    def conj(self):
        return QI(self.re, -self.im)

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def __eq__(self, other):
        if isinstance(other, QI):
            return self.re == other.re and self.im == other.im
        if isinstance(other, (int, Fraction)):
            return self.im == 0 and self.re == other
        if isinstance(other, (float, complex)):
            return complex(self) == complex(other)
        return NotImplemented

    def __hash__(self):
        return hash((self.re, self.im))

    def __bool__(self):
        return self.re != 0 or self.im != 0

    def __repr__(self):
        return f"QI({self.re!s}, {self.im!s})"

    def __str__(self):
        if self.im == 0:
            return str(self.re)
        if self.re == 0:
            return f"{self.im}*i"
        sign = "+" if self.im > 0 else "-"
        return f"{self.re}{sign}{abs(self.im)}*i"


QI_ZERO = QI(0)
QI_ONE = QI(1)


def as_scalar(x, exact=True):
    """Coerce a number into the requested backend."""
    if exact:
        if isinstance(x, QI):
            return x
        if isinstance(x, (int, Fraction)):
            return QI(x)
        raise TypeError(f"cannot coerce {x!r} into the exact backend")
    return complex(x)


def scalar_is_zero(x, tol=FLOAT_TOL):
    if isinstance(x, QI):
        return not x
    return abs(x) <= tol


class Matrix:
    """Dense matrix over one scalar backend (QI entries or complex)."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data=None):
        self.rows = rows
        self.cols = cols
        if data is None:
            self.data = [[QI_ZERO] * cols for _ in range(rows)]
        else:
            assert len(data) == rows and all(len(r) == cols for r in data)
            self.data = data

    # -- constructors -------------------------------------------------
    @staticmethod
    def zeros(rows, cols, exact=True):
        fill = QI_ZERO if exact else 0j
        return Matrix(rows, cols, [[fill] * cols for _ in range(rows)])

    @staticmethod
    def identity(n, exact=True):
        one, zero = (QI_ONE, QI_ZERO) if exact else (1 + 0j, 0j)
        return Matrix(n, n, [[one if i == j else zero for j in range(n)] for i in range(n)])

    @staticmethod
    def from_rows(rows):
        rows = [list(r) for r in rows]
        return Matrix(len(rows), len(rows[0]) if rows else 0, rows)

    @staticmethod
    def scalar(n, value):
        m = Matrix.zeros(n, n, exact=isinstance(value, QI))
        for i in range(n):
            m.data[i][i] = value
        return m

    def copy(self):
        return Matrix(self.rows, self.cols, [row[:] for row in self.data])

    @property
    def is_exact(self):
        for row in self.data:
            for x in row:
                if not isinstance(x, QI):
                    return False
        return True

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        assert self.rows == other.rows and self.cols == other.cols
        return Matrix(self.rows, self.cols,
                      [[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.data, other.data)])

    def __sub__(self, other):
        assert self.rows == other.rows and self.cols == other.cols
        return Matrix(self.rows, self.cols,
                      [[a - b for a, b in zip(r1, r2)] for r1, r2 in zip(self.data, other.data)])

    def __neg__(self):
        return Matrix(self.rows, self.cols, [[-a for a in r] for r in self.data])

    def __mul__(self, other):
        if isinstance(other, Matrix):
            assert self.cols == other.rows, f"shape mismatch {self.cols} vs {other.rows}"
            zero = QI_ZERO if (self.is_exact and other.is_exact) else 0j
            ot = list(zip(*other.data))
            out = []
            for r in self.data:
                row = []
                for col in ot:
                    acc = zero
                    for a, b in zip(r, col):
                        if a and b:
                            acc = acc + a * b
                    row.append(acc)
                out.append(row)
            return Matrix(self.rows, other.cols, out)
        return Matrix(self.rows, self.cols, [[a * other for a in r] for r in self.data])

    __rmul__ = __mul__

    def apply(self, vec: Sequence):
        assert self.cols == len(vec)
        zero = QI_ZERO if self.is_exact else 0j
        out = []
        for r in self.data:
            acc = zero
            for a, b in zip(r, vec):
                if a and b:
                    acc = acc + a * b
            out.append(acc)
        return out

    def transpose(self):
        return Matrix(self.cols, self.rows,
                      [[self.data[r][c] for r in range(self.rows)] for c in range(self.cols)])

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        if self.rows != other.rows or self.cols != other.cols:
            return False
        for r1, r2 in zip(self.data, other.data):
            for a, b in zip(r1, r2):
                if not scalar_is_zero(a - b):
                    return False
        return True

    def __hash__(self):
        return hash((self.rows, self.cols))

    def is_zero(self, tol=FLOAT_TOL):
        return all(scalar_is_zero(x, tol) for r in self.data for x in r)

    def __repr__(self):
        body = "; ".join(" ".join(str(x) for x in r) for r in self.data)
        return f"Matrix({self.rows}x{self.cols}: {body})"

    # -- elimination ----------------------------------------------------
    def rref(self, tol=FLOAT_TOL):
        """Row-reduced echelon form; returns (matrix, pivot column list)."""
        m = [row[:] for row in self.data]
        pivots = []
        r = 0
        for c in range(self.cols):
            if r >= self.rows:
                break
            # pivot search: exact backend takes first nonzero, float takes max modulus
            best, best_val = None, None
            for i in range(r, self.rows):
                x = m[i][c]
                if isinstance(x, QI):
                    if x:
                        best = i
                        break
                else:
                    if abs(x) > tol and (best_val is None or abs(x) > best_val):
                        best, best_val = i, abs(x)
            if best is None:
                continue
            m[r], m[best] = m[best], m[r]
            piv = m[r][c]
            m[r] = [x / piv for x in m[r]]
            for i in range(self.rows):
                if i != r and not scalar_is_zero(m[i][c], tol):
                    f = m[i][c]
                    m[i] = [a - f * b for a, b in zip(m[i], m[r])]
            pivots.append(c)
            r += 1
        return Matrix(self.rows, self.cols, m), pivots

    def rank(self, tol=FLOAT_TOL):
        return len(self.rref(tol)[1])

    def inverse(self, tol=FLOAT_TOL):
        assert self.rows == self.cols
        n = self.rows
        aug = Matrix(n, 2 * n, [row[:] + Matrix.identity(n, self.is_exact).data[i][:]
                                for i, row in enumerate(self.data)])
        red, piv = aug.rref(tol)
        if piv != list(range(n)):
            raise ValueError("matrix is singular")
        return Matrix(n, n, [row[n:] for row in red.data])

    def solve(self, rhs: "Matrix", tol=FLOAT_TOL):
        """Solve self*X = rhs; raises ValueError when inconsistent.

        Returns a particular solution (free variables set to zero).
        """
        n, k = self.cols, rhs.cols
        aug = Matrix(self.rows, n + k,
                     [row[:] + rrow[:] for row, rrow in zip(self.data, rhs.data)])
        red, piv = aug.rref(tol)
        piv_main = [c for c in piv if c < n]
        for c in piv:
            if c >= n:
                raise ValueError("inconsistent linear system")
        zero = QI_ZERO if self.is_exact else 0j
        sol = [[zero] * k for _ in range(n)]
        for r, c in enumerate(piv_main):
            sol[c] = red.data[r][n:]
        return Matrix(n, k, sol)

    def column_span(self, tol=FLOAT_TOL):
        """Subspace spanned by the columns."""
        return Subspace.from_matrix(self, tol)

    def nullspace(self, tol=FLOAT_TOL):
        red, piv = self.rref(tol)
        free = [c for c in range(self.cols) if c not in piv]
        one = QI_ONE if self.is_exact else 1 + 0j
        zero = QI_ZERO if self.is_exact else 0j
        cols = []
        for f in free:
            v = [zero] * self.cols
            v[f] = one
            for r, c in enumerate(piv):
                v[c] = -red.data[r][f]
            cols.append(v)
        return Matrix.from_rows(list(map(list, zip(*cols)))) if cols else Matrix.zeros(self.cols, 0, self.is_exact)


def block_matrix(blocks):
    """Assemble a matrix from a 2D grid of blocks (or None for zeros).

    `blocks[i][j]` may be None only if the row/column dimensions are
    deducible from siblings.
    """
    nr = len(blocks)
    nc = len(blocks[0])
    row_dims = [None] * nr
    col_dims = [None] * nc
    exact = True
    for i in range(nr):
        for j in range(nc):
            b = blocks[i][j]
            if b is not None:
                row_dims[i] = b.rows
                col_dims[j] = b.cols
                exact = exact and b.is_exact
    if any(d is None for d in row_dims) or any(d is None for d in col_dims):
        raise ValueError("block grid has an undetermined row/column size")
    out = Matrix.zeros(sum(row_dims), sum(col_dims), exact)
    r0 = 0
    for i in range(nr):
        c0 = 0
        for j in range(nc):
            b = blocks[i][j]
            if b is not None:
                for r in range(b.rows):
                    out.data[r0 + r][c0:c0 + b.cols] = b.data[r][:]
            c0 += col_dims[j]
        r0 += row_dims[i]
    return out


def direct_sum(mats: Iterable[Matrix]):
    mats = list(mats)
    grid = [[mats[i] if i == j else None for j in range(len(mats))] for i in range(len(mats))]
    if not mats:
        return Matrix.zeros(0, 0)
    return block_matrix(grid)


class Subspace:
    """Subspace of C^n given by a reduced column-echelon basis."""

    __slots__ = ("ambient", "basis")

    def __init__(self, ambient: int, basis: Matrix):
        self.ambient = ambient
        self.basis = basis  # ambient x dim, reduced

    @staticmethod
    def from_matrix(m: Matrix, tol=FLOAT_TOL):
        red, piv = m.transpose().rref(tol)
        rows = [red.data[i] for i in range(len(piv))]
        basis = Matrix.from_rows(rows).transpose() if rows else Matrix.zeros(m.rows, 0, m.is_exact)
        return Subspace(m.rows, basis)

    @staticmethod
    def full(n, exact=True):
        return Subspace(n, Matrix.identity(n, exact))

    @staticmethod
    def zero(n, exact=True):
        return Subspace(n, Matrix.zeros(n, 0, exact))

    @property
    def dim(self):
        return self.basis.cols

    def contains(self, vec, tol=FLOAT_TOL):
        if self.ambient == 0:
            return True
        try:
            self.basis.solve(Matrix(self.ambient, 1, [[v] for v in vec]), tol)
            return True
        except ValueError:
            return False

    def coords(self, vec, tol=FLOAT_TOL):
        """Coordinates of vec in the basis (raises if not contained)."""
        if self.ambient == 0:
            return []
        sol = self.basis.solve(Matrix(self.ambient, 1, [[v] for v in vec]), tol)
        return [sol.data[i][0] for i in range(sol.rows)]

    def contains_space(self, other: "Subspace", tol=FLOAT_TOL) -> bool:
        if other.dim == 0:
            return True
        joint = Matrix(self.ambient, self.dim + other.dim,
                       [a + b for a, b in zip(self.basis.data, other.basis.data)])
        return joint.rank(tol) == self.dim

    def __eq__(self, other):
        return (self.ambient == other.ambient and self.dim == other.dim
                and self.contains_space(other))

    def intersect(self, other: "Subspace", tol=FLOAT_TOL) -> "Subspace":
        if self.dim == 0 or other.dim == 0:
            return Subspace.zero(self.ambient, self.basis.is_exact)
        joint = Matrix(self.ambient, self.dim + other.dim,
                       [a + b for a, b in zip(self.basis.data, other.basis.data)])
        null = joint.nullspace(tol)
        zero = QI_ZERO if self.basis.is_exact else 0j
        cols = []
        for j in range(null.cols):
            coeff = [null.data[i][j] for i in range(self.dim)]
            col = []
            for r in range(self.ambient):
                acc = zero
                for i in range(self.dim):
                    if coeff[i] and self.basis.data[r][i]:
                        acc = acc + self.basis.data[r][i] * coeff[i]
                col.append(acc)
            cols.append(col)
        m = Matrix.from_rows(list(map(list, zip(*cols)))) if cols else Matrix.zeros(self.ambient, 0, self.basis.is_exact)
        return Subspace.from_matrix(m, tol)

    def add(self, other: "Subspace", tol=FLOAT_TOL) -> "Subspace":
        joint = Matrix(self.ambient, self.dim + other.dim,
                       [a + b for a, b in zip(self.basis.data, other.basis.data)])
        return Subspace.from_matrix(joint, tol)


@dataclass(frozen=True)
class GradedSpace:
    """Finite ordered list of labels with dimensions."""

    labels: tuple
    dims: tuple

    def __post_init__(self):
        assert len(self.labels) == len(self.dims)

    @property
    def total(self):
        return sum(self.dims)

    def offset(self, label):
        i = self.labels.index(label)
        return sum(self.dims[:i])

    def slice(self, label):
        o = self.offset(label)
        return o, o + self.dims[self.labels.index(label)]

    def piece(self, label, exact=True) -> Subspace:
        a, b = self.slice(label)
        m = Matrix.zeros(self.total, b - a, exact)
        one = QI_ONE if exact else 1 + 0j
        for j, r in enumerate(range(a, b)):
            m.data[r][j] = one
        return Subspace(self.total, m)

    def restrict_matrix(self, m: Matrix, out_labels, in_labels) -> Matrix:
        """Extract the block of m with the given output/input label lists."""
        rsel = []
        for lab in out_labels:
            a, b = self.slice(lab)
            rsel.extend(range(a, b))
        csel = []
        for lab in in_labels:
            a, b = self.slice(lab)
            csel.extend(range(a, b))
        return Matrix(len(rsel), len(csel), [[m.data[r][c] for c in csel] for r in rsel])


def block_of(m: Matrix, out_space: GradedSpace, in_space: GradedSpace, out_label, in_label) -> Matrix:
    ra, rb = out_space.slice(out_label)
    ca, cb = in_space.slice(in_label)
    return Matrix(rb - ra, cb - ca, [[m.data[r][c] for c in range(ca, cb)] for r in range(ra, rb)])


def set_block(m: Matrix, out_space: GradedSpace, in_space: GradedSpace, out_label, in_label, blk: Matrix):
    ra, rb = out_space.slice(out_label)
    ca, cb = in_space.slice(in_label)
    assert blk.rows == rb - ra and blk.cols == cb - ca
    for i in range(blk.rows):
        m.data[ra + i][ca:cb] = blk.data[i][:]


def is_block_supported(m: Matrix, out_space: GradedSpace, in_space: GradedSpace, allowed, tol=FLOAT_TOL):
    """True when every nonzero block (out_label, in_label) satisfies `allowed`."""
    for il in in_space.labels:
        for ol in out_space.labels:
            if allowed(ol, il):
                continue
            if not block_of(m, out_space, in_space, ol, il).is_zero(tol):
                return False
    return True


def common_splitting(space: GradedSpace, filtrations, exact=True, tol=FLOAT_TOL):
    """Simultaneous splitting of a family of filtrations.

    `filtrations` is a list of pairs (leq, filt) where `leq(a, b)` is the
    partial order at the sample direction and `filt[a]` is the filtration
    step at label `a`, as a Subspace of the ambient space.  Returns a dict
    label -> Subspace with V = (+) V_a and filt[a] = (+)_{b leq a} V_b for
    every member of the family.

    The splitting is computed as V_a = cap_theta F^theta_a, which is the
    unique common splitting whenever the family comes from a Stokes
    structure sampled densely enough (every pair of labels must fail to be
    comparable-with-constant-sign somewhere in the family).
    """
    n = space.total
    pieces = {}
    for a in space.labels:
        v = Subspace.full(n, exact)
        for _, filt in filtrations:
            v = v.intersect(filt[a], tol)
        pieces[a] = v
    total = sum(p.dim for p in pieces.values())
    if total < n:
        raise ValueError("no common splitting: intersections too small (family not a valid Stokes restriction)")
    joint = Matrix(n, total, [sum((pieces[a].basis.data[r] for a in space.labels), [])
                              for r in range(n)])
    if joint.rank(tol) != n:
        raise ValueError("no common splitting: pieces are not independent")
    # verify every filtration identity
    for leq, filt in filtrations:
        for a in space.labels:
            target = Subspace.zero(n, exact)
            for b in space.labels:
                if leq(b, a):
                    target = target.add(pieces[b], tol)
            if not (target.dim == filt[a].dim and target.contains_space(filt[a], tol)):
                raise ValueError("no common splitting: filtration identity fails")
    return pieces
