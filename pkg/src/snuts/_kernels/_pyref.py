"""Pure-python reference implementations of the numeric kernels.

Semantics match the compiled extension exactly; only speed differs. All
sparse arguments use compressed-sparse-column storage of a lower
triangle with the diagonal entry first in every column.
"""

import numpy as np


def lsolve(Lp, Li, Lx, b):
    """Solve L x = b in place of a copy of b."""
    x = np.array(b, dtype=np.float64)
    n = Lp.shape[0] - 1
    for j in range(n):
        p0 = Lp[j]
        p1 = Lp[j + 1]
        xj = x[j] / Lx[p0]
        x[j] = xj
        if p1 > p0 + 1:
            x[Li[p0 + 1 : p1]] -= Lx[p0 + 1 : p1] * xj
    return x


def ltsolve(Lp, Li, Lx, b):
    """Solve L^T x = b."""
    x = np.array(b, dtype=np.float64)
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        p0 = Lp[j]
        p1 = Lp[j + 1]
        s = x[j]
        if p1 > p0 + 1:
            s -= np.dot(Lx[p0 + 1 : p1], x[Li[p0 + 1 : p1]])
        x[j] = s / Lx[p0]
    return x


def ltmul(Lp, Li, Lx, v):
    """Return L^T v."""
    n = Lp.shape[0] - 1
    y = np.empty(n, dtype=np.float64)
    for j in range(n):
        p0 = Lp[j]
        p1 = Lp[j + 1]
        y[j] = np.dot(Lx[p0:p1], v[Li[p0:p1]])
    return y


def symm_matvec(Ap, Ai, Ax, v):
    """Return A v for symmetric A stored as its lower triangle."""
    n = Ap.shape[0] - 1
    y = np.zeros(n, dtype=np.float64)
    for j in range(n):
        p0 = Ap[j]
        p1 = Ap[j + 1]
        y[j] += Ax[p0] * v[j]
        if p1 > p0 + 1:
            rows = Ai[p0 + 1 : p1]
            vals = Ax[p0 + 1 : p1]
            y[rows] += vals * v[j]
            y[j] += np.dot(vals, v[rows])
    return y


def chol_numeric(n, Up, Ui, Ux, parent, Lp, Li):
    """Up-looking Cholesky numeric phase.

    ``Up/Ui/Ux`` hold the upper triangle of the (already permuted) input
    by columns with the diagonal last, ``parent`` its elimination tree and
    ``Lp/Li`` the precomputed factor pattern (diagonal first per column,
    then strictly increasing rows).

    Returns ``(Lx, fail_col)`` where ``fail_col`` is -1 on success or the
    index of the column with a nonpositive pivot.
    """
    Lx = np.zeros(Lp[n], dtype=np.float64)
    c = np.array(Lp[:n], dtype=np.int64) + 1  # next free slot per column
    x = np.zeros(n, dtype=np.float64)
    flag = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    for i in range(n):
        # scatter row i of A and collect its reach in the etree
        top = n
        d = 0.0
        flag[i] = i
        for p in range(Up[i], Up[i + 1]):
            k = Ui[p]
            if k == i:
                d = Ux[p]
                continue
            x[k] = Ux[p]
            length = 0
            while flag[k] != i:
                stack[length] = k
                length += 1
                flag[k] = i
                k = parent[k]
            while length > 0:
                length -= 1
                top -= 1
                stack[top] = stack[length]
        # sparse triangular solve over the pattern, in topological order
        for pp in range(top, n):
            j = stack[pp]
            lki = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            h0 = Lp[j] + 1
            h1 = c[j]
            if h1 > h0:
                x[Li[h0:h1]] -= Lx[h0:h1] * lki
            d -= lki * lki
            Lx[h1] = lki
            c[j] = h1 + 1
        if d <= 0.0 or not np.isfinite(d):
            return Lx, i
        Lx[Lp[i]] = np.sqrt(d)
    return Lx, -1
