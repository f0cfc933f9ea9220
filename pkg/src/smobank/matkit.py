"""Dense matrix kernel sized for small observer-design problems (n <= ~20).

All routines work on 64-bit float ndarrays and are pure functions of their
inputs.  Matrices are treated as immutable values; nothing here mutates an
argument.
"""

import numpy as np

from .errors import BadQ, EigFailure, NotHurwitz, SingularMatrix

#: relative pivot threshold used by solve_linear
SOLVE_PIVOT_TOL = 1e-12

#: default relative tolerance for numerical rank decisions
RANK_TOL = 1e-9


def as_matrix(m, name="matrix"):
    """Validate and return a 2-D float64 array with all entries finite."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def frozen(m, name="matrix"):
    """Copy of *m* as a read-only 2-D float64 array."""
    a = as_matrix(m, name).copy()
    a.flags.writeable = False
    return a


def solve_linear(a, b):
    """Solve a @ x = b for square a by LU factorization with partial pivoting.

    Raises SingularMatrix when a pivot falls below 1e-12 * ||a||_F.  b may be
    a vector or a matrix of right-hand sides; the result has b's shape.
    """
    a = as_matrix(a, "a")
    b_in = np.asarray(b, dtype=float)
    vector_rhs = b_in.ndim == 1
    b = b_in[:, None] if vector_rhs else as_matrix(b_in, "b")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"a must be square, got {a.shape}")
    if b.shape[0] != n:
        raise ValueError(f"b has {b.shape[0]} rows, expected {n}")
    if n == 0:
        return b_in.copy()

    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    u = a.copy()
    x = b.copy()
    for k in range(n):
        piv = k + int(np.argmax(np.abs(u[k:, k])))
        if abs(u[piv, k]) <= SOLVE_PIVOT_TOL * scale:
            raise SingularMatrix(f"pivot {u[piv, k]:.3e} at column {k}")
        if piv != k:
            u[[k, piv]] = u[[piv, k]]
            x[[k, piv]] = x[[piv, k]]
        if k + 1 < n:
            mult = u[k + 1:, k] / u[k, k]
            u[k + 1:, k:] -= mult[:, None] * u[k, k:]
            x[k + 1:] -= mult[:, None] * x[k]
    for k in range(n - 1, -1, -1):
        x[k] -= u[k, k + 1:] @ x[k + 1:]
        x[k] /= u[k, k]
    return x[:, 0] if vector_rhs else x


def inv(a):
    """Matrix inverse via solve_linear against the identity."""
    a = as_matrix(a, "a")
    return solve_linear(a, np.eye(a.shape[0]))


def rank(m, tol=RANK_TOL):
    """Numerical rank: pivots of magnitude > tol * ||m||_F under row reduction
    with partial pivoting."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    work = as_matrix(m, "m").copy()
    rows, cols = work.shape
    scale = float(np.linalg.norm(work))
    if scale == 0.0 or rows == 0 or cols == 0:
        return 0
    thresh = tol * scale
    r = 0
    row = 0
    for col in range(cols):
        if row >= rows:
            break
        piv = row + int(np.argmax(np.abs(work[row:, col])))
        if abs(work[piv, col]) <= thresh:
            continue
        if piv != row:
            work[[row, piv]] = work[[piv, row]]
        below = work[row + 1:, col] / work[row, col]
        work[row + 1:, col:] -= below[:, None] * work[row, col:]
        r += 1
        row += 1
    return r


def eig(m):
    """Eigenvalues with multiplicity, sorted by (real, imag) for reproducibility.

    Backed by LAPACK's Hessenberg + shifted-QR path; non-convergence maps to
    EigFailure.
    """
    m = as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"m must be square, got {m.shape}")
    if m.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    try:
        vals = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(str(exc)) from exc
    order = np.lexsort((vals.imag, vals.real))
    return vals[order]


def is_hurwitz(m, margin=0.0):
    """True when every eigenvalue of m satisfies Re < -margin."""
    return bool(np.max(eig(m).real) < -margin)


def solve_lyapunov(a_stable, q):
    """Solve P @ a_stable + a_stable.T @ P = -q for symmetric P > 0.

    Requires a_stable Hurwitz and q symmetric positive definite.  Solved by
    vectorizing to an (n^2 x n^2) linear system; exactness matters more than
    asymptotics at these sizes.
    """
    a = as_matrix(a_stable, "a_stable")
    q = as_matrix(q, "q")
    n = a.shape[0]
    if a.shape[1] != n or q.shape != (n, n):
        raise ValueError("dimension mismatch")
    if not is_hurwitz(a):
        raise NotHurwitz("a_stable has an eigenvalue with Re >= 0")
    if np.linalg.norm(q - q.T) > 1e-10 * (1.0 + np.linalg.norm(q)):
        raise BadQ("q is not symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) <= 0:
        raise BadQ("q is not positive definite")

    # row-major vec: vec(P A) = kron(I, A.T) vec(P), vec(A.T P) = kron(A.T, I) vec(P)
    eye = np.eye(n)
    k = np.kron(eye, a.T) + np.kron(a.T, eye)
    p = solve_linear(k, -q.ravel()).reshape(n, n)
    return 0.5 * (p + p.T)


def spectral_norm(m, tol=1e-10, max_iter=10_000):
    """Largest singular value by power iteration on m.T @ m."""
    m = as_matrix(m, "m")
    if m.size == 0:
        return 0.0
    # iterate on the smaller Gram matrix
    g = m.T @ m if m.shape[1] <= m.shape[0] else m @ m.T
    k = g.shape[0]
    if np.linalg.norm(g) == 0.0:
        return 0.0
    # deterministic, generic start vector
    v = 1.0 + np.arange(k) / (2.0 * k)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = g @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            # start vector landed in the null space; restart shifted
            v = np.roll(v, 1) + 1e-3
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        lam_new = float(v @ (g @ v))
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-300):
            return float(np.sqrt(max(lam_new, 0.0)))
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))
