"""Exact integer linear algebra on small matrices (python ints, no overflow).

Matrices are lists of lists (rows). Sizes here are at most ~6x6, so the
classic textbook algorithms are plenty fast and stay exact.
"""

from math import gcd


def _mat_copy(a):
    return [list(row) for row in a]


def identity(n):
    return [[1 if i == j else 0 for j in range(n)] for i in range(n)]


def mat_mul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    assert len(a[0]) == k
    out = [[0] * m for _ in range(n)]
    for i in range(n):
        ai = a[i]
        for j in range(m):
            out[i][j] = sum(ai[t] * b[t][j] for t in range(k))
    return out


def smith_normal_form(a):
    """Return (u, s, v) with u*a*v = s diagonal, u, v unimodular.

    Invariant factors appear on the diagonal of s in divisibility order.
    """
    s = _mat_copy(a)
    n = len(s)
    m = len(s[0]) if n else 0
    u = identity(n)
    v = identity(m)

    def swap_rows(i, j):
        s[i], s[j] = s[j], s[i]
        u[i], u[j] = u[j], u[i]

    def swap_cols(i, j):
        for row in s:
            row[i], row[j] = row[j], row[i]
        for row in v:
            row[i], row[j] = row[j], row[i]

    def add_row(src, dst, c):
        s[dst] = [x + c * y for x, y in zip(s[dst], s[src])]
        u[dst] = [x + c * y for x, y in zip(u[dst], u[src])]

    def add_col(src, dst, c):
        for row in s:
            row[dst] += c * row[src]
        for row in v:
            row[dst] += c * row[src]

    t = 0
    while t < min(n, m):
        # find a pivot with minimal nonzero magnitude
        piv = None
        for i in range(t, n):
            for j in range(t, m):
                if s[i][j] != 0 and (piv is None or abs(s[i][j]) < abs(s[piv[0]][piv[1]])):
                    piv = (i, j)
        if piv is None:
            break
        swap_rows(t, piv[0])
        swap_cols(t, piv[1])
        dirty = True
        while dirty:
            dirty = False
            for i in range(t + 1, n):
                if s[i][t]:
                    add_row(t, i, -(s[i][t] // s[t][t]))
                    if s[i][t]:
                        swap_rows(t, i)
                        dirty = True
            for j in range(t + 1, m):
                if s[t][j]:
                    add_col(t, j, -(s[t][j] // s[t][t]))
                    if s[t][j]:
                        swap_cols(t, j)
                        dirty = True
        # enforce divisibility of later entries by the pivot
        fixed = False
        for i in range(t + 1, n):
            for j in range(t + 1, m):
                if s[i][j] % s[t][t]:
                    add_row(i, t, 1)
                    fixed = True
                    break
            if fixed:
                break
        if fixed:
            continue
        if s[t][t] < 0:
            s[t] = [-x for x in s[t]]
            u[t] = [-x for x in u[t]]
        t += 1
    return u, s, v


def invariant_factors(a):
    _, s, _ = smith_normal_form(a)
    return [s[i][i] for i in range(min(len(s), len(s[0]))) if s[i][i] != 0]


def rank(a):
    return len(invariant_factors(a))


def is_primitive(cols):
    """cols: n x l integer matrix whose columns span a rank-l subgroup.

    The subgroup is primitive in Z^n iff every invariant factor is 1.
    """
    facs = invariant_factors(cols)
    return len(facs) == (len(cols[0]) if cols else 0) and all(f == 1 for f in facs)


def saturate(cols):
    """Return a basis (columns) of the primitive closure of the column span.

    Uses u^-1 applied to the first r unit columns of the Smith form: if
    u*a*v = s, the closure is spanned by the first r columns of u^-1.
    """
    n = len(cols)
    u, s, _ = smith_normal_form(cols)
    r = sum(1 for i in range(min(n, len(cols[0]))) if s[i][i] != 0)
    uinv = mat_inverse_unimodular(u)
    return [[uinv[i][j] for j in range(r)] for i in range(n)]


def mat_inverse_unimodular(a):
    """Exact inverse of a unimodular integer matrix via adjugate."""
    n = len(a)
    d = int_det(a)
    assert abs(d) == 1
    cof = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[a[r][c] for c in range(n) if c != j] for r in range(n) if r != i]
            cof[j][i] = ((-1) ** (i + j)) * int_det(minor) * d
    return cof


def int_det(a):
    """Exact determinant by fraction-free Gaussian elimination (Bareiss)."""
    n = len(a)
    if n == 0:
        return 1
    m = _mat_copy(a)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for i in range(k + 1, n):
                if m[i][k] != 0:
                    m[k], m[i] = m[i], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def integer_kernel(a):
    """Basis (columns) of {x in Z^m : a x = 0} via the Smith form."""
    n = len(a)
    m = len(a[0]) if n else 0
    u, s, v = smith_normal_form(a)
    r = sum(1 for i in range(min(n, m)) if s[i][i] != 0)
    return [[v[i][j] for j in range(r, m)] for i in range(m)]


def column_stack(a, b):
    return [ra + rb for ra, rb in zip(a, b)]


def subgroup_sum(a, b):
    """Basis of the subgroup generated by the columns of a and b together."""
    stacked = column_stack(a, b)
    u, s, _ = smith_normal_form(stacked)
    r = sum(1 for i in range(min(len(s), len(s[0]))) if s[i][i] != 0)
    uinv = mat_inverse_unimodular(u)
    # columns of uinv scaled by the invariant factors span the same group
    return [[uinv[i][j] * s[j][j] for j in range(r)] for i in range(len(a))]


def subgroup_intersection(a, b):
    """Basis of the intersection of the column spans of a and b."""
    la = len(a[0])
    neg_b = [[-x for x in row] for row in b]
    ker = integer_kernel(column_stack(a, neg_b))
    if not ker or not ker[0]:
        return [[] for _ in range(len(a))]
    # first la rows of each kernel vector give coefficients in a
    coeff = [row[:] for row in ker[:la]]
    gens = mat_mul(a, coeff)
    u, s, _ = smith_normal_form(gens)
    r = sum(1 for i in range(min(len(s), len(s[0]))) if s[i][i] != 0)
    uinv = mat_inverse_unimodular(u)
    return [[uinv[i][j] * s[j][j] for j in range(r)] for i in range(len(a))]


def primitive_gcd_vector(c):
    """Divide a nonzero integer vector by the gcd of its entries."""
    g = 0
    for x in c:
        g = gcd(g, abs(x))
    assert g > 0
    return [x // g for x in c]
