"""Sparse symmetric storage, fill-reducing ordering and Cholesky kernels.

A :class:`SparseSymMatrix` stores the lower triangle of a symmetric
matrix in compressed-sparse-column form with every diagonal entry
structurally present. Factorization is simplicial up-looking Cholesky
with a separate symbolic phase (elimination tree plus column counts), so
fill counts are available before any numerics run. Ordering is a
quotient-graph minimum-degree with approximate external degrees; ties
break on the smallest original index, and the natural order is kept
whenever it symbolically fills less.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionTooLarge, NotPositiveDefinite

__all__ = [
    "SparseSymMatrix",
    "Permutation",
    "CholeskyFactor",
    "Symbolic",
    "amd_order",
    "symbolic_analyze",
    "factorize",
    "factorize_with_jitter",
    "solve_lower",
    "solve_upper",
    "sparsity_percent",
    "precision_to_cov",
    "dense_cholesky",
]


class SparseSymMatrix:
    """Lower triangle of a symmetric matrix in CSC form.

    Row indices within each column are strictly increasing and start at
    the (structurally required) diagonal. Numeric zeros are kept; the
    stored pattern is the structural one.
    """

    __slots__ = ("dim", "indptr", "indices", "data")

    def __init__(self, dim, indptr, indices, data, validate=True):
        self.dim = int(dim)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if validate:
            self._validate()

    def _validate(self):
        n = self.dim
        if n < 1:
            raise ValueError("dim must be >= 1")
        if self.indptr.shape[0] != n + 1 or self.indptr[0] != 0:
            raise ValueError("bad column pointers")
        if self.indices.shape[0] != self.indptr[n] or self.data.shape[0] != self.indptr[n]:
            raise ValueError("index/value count does not match pointers")
        for j in range(n):
            p0, p1 = self.indptr[j], self.indptr[j + 1]
            if p1 <= p0 or self.indices[p0] != j:
                raise ValueError(f"column {j} is missing its diagonal entry")
            col = self.indices[p0:p1]
            if np.any(np.diff(col) <= 0) or col[-1] >= n:
                raise ValueError(f"column {j} rows not strictly increasing in range")

    @property
    def nnz(self):
        return int(self.indptr[-1])

    @classmethod
    def from_coo(cls, dim, rows, cols, vals):
        """Build from triplets; entries may be given in either triangle
        and duplicates are summed. Missing diagonal entries are added as
        structural zeros."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        r = np.maximum(rows, cols)
        c = np.minimum(rows, cols)
        # append structural diagonal
        r = np.concatenate([r, np.arange(dim, dtype=np.int64)])
        c = np.concatenate([c, np.arange(dim, dtype=np.int64)])
        v = np.concatenate([vals, np.zeros(dim)])
        key = c * dim + r
        order = np.argsort(key, kind="stable")
        key, r, v = key[order], r[order], v[order]
        uniq, start = np.unique(key, return_index=True)
        summed = np.add.reduceat(v, start)
        rr = r[start]
        cc = (uniq // dim).astype(np.int64)
        indptr = np.zeros(dim + 1, dtype=np.int64)
        np.add.at(indptr, cc + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(dim, indptr, rr, summed)

    @classmethod
    def from_dense(cls, a):
        """Take the structural pattern from the nonzeros of a dense
        symmetric matrix (diagonal always kept)."""
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        tri = np.tril(a)
        rows, cols = np.nonzero(tri)
        return cls.from_coo(n, rows, cols, tri[rows, cols])

    @classmethod
    def identity(cls, dim, scale=1.0):
        idx = np.arange(dim, dtype=np.int64)
        return cls(dim, np.arange(dim + 1, dtype=np.int64), idx, np.full(dim, float(scale)))

    def to_dense(self):
        a = np.zeros((self.dim, self.dim))
        for j in range(self.dim):
            p0, p1 = self.indptr[j], self.indptr[j + 1]
            a[self.indices[p0:p1], j] = self.data[p0:p1]
            a[j, self.indices[p0:p1]] = self.data[p0:p1]
        return a

    def diagonal(self):
        return self.data[self.indptr[:-1]].copy()

    def matvec(self, v):
        v = np.ascontiguousarray(v, dtype=np.float64)
        return _kernels.symm_matvec(self.indptr, self.indices, self.data, v)

    def with_data(self, data):
        """Same pattern, new values (no revalidation)."""
        return SparseSymMatrix(self.dim, self.indptr, self.indices, data, validate=False)

    def add_diagonal(self, tau):
        data = self.data.copy()
        data[self.indptr[:-1]] += tau
        return self.with_data(data)

    def strict_lower_coo(self):
        """Triplets of the strictly-lower entries."""
        mask = np.ones(self.nnz, dtype=bool)
        mask[self.indptr[:-1]] = False
        cols = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        return self.indices[mask], cols[mask], self.data[mask]

    def pattern_key(self):
        return (self.dim, self.indptr.tobytes(), self.indices.tobytes())

    # -- text fixture format ------------------------------------------------

    def export_text(self, path):
        """Write ``%%sparse-sym dim nnz`` followed by 0-based
        ``row col value`` triplets."""
        cols = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        with open(path, "w") as fh:
            fh.write(f"%%sparse-sym {self.dim} {self.nnz}\n")
            for r, c, v in zip(self.indices, cols, self.data):
                fh.write(f"{r} {c} {v!r}\n")

    @classmethod
    def import_text(cls, path):
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3 or header[0] != "%%sparse-sym":
                raise ValueError("not a sparse-sym file")
            dim, nnz = int(header[1]), int(header[2])
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz)
            for k in range(nnz):
                r, c, v = fh.readline().split()
                rows[k], cols[k], vals[k] = int(r), int(c), float(v)
        return cls.from_coo(dim, rows, cols, vals)


@dataclass(frozen=True)
class Permutation:
    """Forward map ``p`` acts as ``(Pq)[i] = q[p[i]]``."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward):
        forward = np.ascontiguousarray(forward, dtype=np.int64)
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(forward.shape[0], dtype=np.int64)
        return cls(forward, inverse)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=np.int64)
        return cls(idx, idx.copy())

    @property
    def dim(self):
        return self.forward.shape[0]

    def is_identity(self):
        return bool(np.all(self.forward == np.arange(self.dim)))

    def apply(self, q):
        return np.asarray(q)[self.forward]

    def apply_inverse(self, q):
        return np.asarray(q)[self.inverse]


class CholeskyFactor:
    """Sparse lower factor L with fill-reducing permutation P.

    Satisfies ``L L^T = P A P^T``. Columns store the diagonal entry
    first, then strictly increasing rows.
    """

    __slots__ = ("n", "indptr", "indices", "data", "perm", "fill")

    def __init__(self, n, indptr, indices, data, perm):
        self.n = n
        self.indptr = indptr
        self.indices = indices
        self.data = data
        self.perm = perm
        self.fill = int(indptr[-1])

    def solve_lower(self, b):
        b = np.ascontiguousarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError("dimension mismatch")
        return _kernels.lsolve(self.indptr, self.indices, self.data, b)

    def solve_upper(self, b):
        b = np.ascontiguousarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError("dimension mismatch")
        return _kernels.ltsolve(self.indptr, self.indices, self.data, b)

    def lt_matvec(self, v):
        """Return L^T v."""
        v = np.ascontiguousarray(v, dtype=np.float64)
        return _kernels.ltmul(self.indptr, self.indices, self.data, v)

    def logdet(self):
        """log det of the factored matrix (2 sum log diag L)."""
        return 2.0 * float(np.sum(np.log(self.data[self.indptr[:-1]])))

    def solve(self, b):
        """Solve A x = b for the original (unpermuted) matrix."""
        y = self.solve_lower(b[self.perm.forward])
        x = self.solve_upper(y)
        return x[self.perm.inverse]

    def to_dense(self):
        a = np.zeros((self.n, self.n))
        for j in range(self.n):
            p0, p1 = self.indptr[j], self.indptr[j + 1]
            a[self.indices[p0:p1], j] = self.data[p0:p1]
        return a


# -- symbolic phase ----------------------------------------------------------


def _permuted_upper(a: SparseSymMatrix, perm: Permutation):
    """CSC of the upper triangle of P A P^T, rows ascending (diagonal
    last in each column) — the layout the up-looking numeric kernel
    wants. Also returns the gather that maps the matrix values onto the
    upper layout, so a numeric refactor is a single fancy-index."""
    rows, cols, _ = a.strict_lower_coo()
    inv = perm.inverse
    r = inv[rows]
    c = inv[cols]
    lo = np.minimum(r, c)
    hi = np.maximum(r, c)
    n = a.dim
    # upper triangle entries (lo, hi) by column hi, plus diagonal
    cols_u = np.concatenate([hi, np.arange(n, dtype=np.int64)])
    rows_u = np.concatenate([lo, np.arange(n, dtype=np.int64)])
    key = cols_u * n + rows_u
    order = np.argsort(key, kind="stable")
    rows_u = rows_u[order]
    cols_u = cols_u[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, cols_u + 1, 1)
    # positions of [strict lower entries..., diagonal entries...] in a.data
    strict_pos = np.flatnonzero(~_diag_mask(a))
    diag_pos = a.indptr[:-1][perm.forward]
    value_gather = np.concatenate([strict_pos, diag_pos])[order]
    return np.cumsum(indptr), rows_u, value_gather


def _diag_mask(a: SparseSymMatrix):
    mask = np.zeros(a.nnz, dtype=bool)
    mask[a.indptr[:-1]] = True
    return mask


def _etree(n, Up, Ui):
    """Elimination tree from the upper-triangle CSC pattern."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for p in range(Up[i], Up[i + 1]):
            k = Ui[p]
            while k != -1 and k < i:
                knext = ancestor[k]
                ancestor[k] = i
                if knext == -1:
                    parent[k] = i
                k = knext
    return parent


def _symbolic_pattern(n, Up, Ui, parent):
    """Row-subtree traversal giving the factor pattern (Lp, Li)."""
    counts = np.ones(n, dtype=np.int64)  # diagonal entries
    marker = np.full(n, -1, dtype=np.int64)
    row_patterns = []
    for i in range(n):
        marker[i] = i
        pat = []
        for p in range(Up[i], Up[i + 1]):
            k = Ui[p]
            while marker[k] != i:
                marker[k] = i
                pat.append(k)
                k = parent[k]
        row_patterns.append(pat)
        for j in pat:
            counts[j] += 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=Lp[1:])
    Li = np.empty(Lp[n], dtype=np.int64)
    nxt = Lp[:-1].copy()
    Li[nxt] = np.arange(n)  # diagonals first
    nxt += 1
    for i, pat in enumerate(row_patterns):
        for j in pat:
            Li[nxt[j]] = i
            nxt[j] += 1
    return Lp, Li


class Symbolic:
    """Reusable symbolic factorization for a fixed pattern + ordering."""

    def __init__(self, a: SparseSymMatrix, perm: Permutation):
        if perm.dim != a.dim:
            raise ValueError("permutation dimension mismatch")
        self.n = a.dim
        self.perm = perm
        Up, Ui, gather = _permuted_upper(a, perm)
        self.Up, self.Ui = Up, Ui
        self._value_gather = gather
        self.parent = _etree(self.n, Up, Ui)
        self.Lp, self.Li = _symbolic_pattern(self.n, Up, Ui, self.parent)
        self.fill = int(self.Lp[-1])
        self._pattern_key = a.pattern_key()

    def refactor(self, a: SparseSymMatrix) -> CholeskyFactor:
        """Numeric phase for a matrix with the same pattern."""
        if a.pattern_key() != self._pattern_key:
            raise ValueError("pattern changed; rebuild the symbolic factor")
        Ux = np.ascontiguousarray(a.data[self._value_gather])
        Lx, fail = _kernels.chol_numeric(
            self.n, self.Up, self.Ui, Ux, self.parent, self.Lp, self.Li
        )
        if fail >= 0:
            raise NotPositiveDefinite(int(fail))
        return CholeskyFactor(self.n, self.Lp, self.Li, Lx, self.perm)


def symbolic_analyze(a: SparseSymMatrix, perm: Permutation) -> Symbolic:
    return Symbolic(a, perm)


def factorize(a: SparseSymMatrix, perm: Permutation | None = None) -> CholeskyFactor:
    """Sparse Cholesky of ``P A P^T``; raises :class:`NotPositiveDefinite`
    on a nonpositive pivot."""
    if perm is None:
        perm = Permutation.identity(a.dim)
    return Symbolic(a, perm).refactor(a)


def factorize_with_jitter(a, perm=None, taus=(1e-8, 1e-6, 1e-4)):
    """Factorize, escalating diagonal jitter on failure.

    Returns ``(factor, tau)`` where ``tau`` is the absolute jitter added
    (0.0 when none was needed). Jitter is deliberately not part of
    :func:`factorize`: silent regularization would mask modeling errors.
    """
    if perm is None:
        perm = Permutation.identity(a.dim)
    sym = Symbolic(a, perm)
    try:
        return sym.refactor(a), 0.0
    except NotPositiveDefinite:
        pass
    scale = float(np.max(np.abs(a.diagonal()))) or 1.0
    last = None
    for tau in taus:
        try:
            return sym.refactor(a.add_diagonal(tau * scale)), tau * scale
        except NotPositiveDefinite as exc:
            last = exc
    raise last


def solve_lower(f: CholeskyFactor, b):
    return f.solve_lower(b)


def solve_upper(f: CholeskyFactor, b):
    return f.solve_upper(b)


# -- fill-reducing ordering ---------------------------------------------------


def _minimum_degree(a: SparseSymMatrix):
    """Quotient-graph minimum degree with approximate external degrees
    (elements absorb the pivot's adjacency; degree bounds use the
    |Le \\ Lp| correction). Ties break on the smallest original index."""
    import heapq

    n = a.dim
    rows, cols, _ = a.strict_lower_coo()
    adj = [set() for _ in range(n)]
    for r, c in zip(rows.tolist(), cols.tolist()):
        if r != c:
            adj[r].add(c)
            adj[c].add(r)
    degree = [len(s) for s in adj]
    elems_of = [set() for _ in range(n)]  # elements adjacent to each variable
    boundary = {}  # element id -> set of adjacent variables
    alive = np.ones(n, dtype=bool)
    heap = [(degree[i], i) for i in range(n)]
    heapq.heapify(heap)
    order = []
    for _ in range(n):
        while True:
            d, p = heapq.heappop(heap)
            if alive[p] and d == degree[p]:
                break
        # element boundary: direct neighbours plus absorbed element boundaries
        bnd = set(adj[p])
        for e in elems_of[p]:
            bnd |= boundary.pop(e)
        bnd.discard(p)
        absorbed = elems_of[p]
        alive[p] = False
        order.append(p)
        boundary[p] = bnd
        # |Le \ Lp| for surviving elements touching the new boundary
        shrink = {}
        for v in bnd:
            for e in elems_of[v]:
                if e not in absorbed:
                    shrink[e] = shrink.get(e, len(boundary[e])) - 1
        lp_size = len(bnd)
        for v in bnd:
            adj[v].discard(p)
            adj[v] -= bnd  # covered by the new element
            elems_of[v] -= absorbed
            elems_of[v].add(p)
            d = len(adj[v]) + lp_size - 1
            for e in elems_of[v]:
                if e != p:
                    d += max(0, shrink.get(e, len(boundary[e])))
            degree[v] = d
            heapq.heappush(heap, (d, v))
    return Permutation.from_forward(np.array(order, dtype=np.int64))


def amd_order(a: SparseSymMatrix) -> Permutation:
    """Fill-reducing ordering; falls back to the natural order when that
    symbolically fills less (so the result never loses to it)."""
    if a.dim == 1:
        return Permutation.identity(1)
    cand = _minimum_degree(a)
    ident = Permutation.identity(a.dim)
    fill_cand = Symbolic(a, cand).fill
    fill_nat = Symbolic(a, ident).fill
    return ident if fill_nat < fill_cand else cand


# -- derived operations -------------------------------------------------------


def sparsity_percent(a: SparseSymMatrix) -> float:
    """Percentage of structural zeros in the strict lower triangle."""
    n = a.dim
    if n == 1:
        return 0.0
    total = n * (n - 1) / 2
    off = a.nnz - n
    return 100.0 * (total - off) / total


def precision_to_cov(q: SparseSymMatrix, cap: int = 5000) -> np.ndarray:
    """Dense covariance from a sparse precision via column solves."""
    n = q.dim
    if n > cap:
        raise DimensionTooLarge(f"dim {n} exceeds dense cap {cap}")
    factor = factorize(q, amd_order(q))
    cov = np.empty((n, n))
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        cov[:, i] = factor.solve(e)
        e[i] = 0.0
    return 0.5 * (cov + cov.T)


def dense_cholesky(s) -> np.ndarray:
    """Dense lower Cholesky factor; same error contract as factorize."""
    s = np.asarray(s, dtype=np.float64)
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(-1, str(exc)) from exc
