"""Existence checks, canonical coordinates, and observer gain synthesis.

The design pipeline for a plant with unknown input is:

    sys = UncertainSystem(A, B, C, D, xi_bar)
    check_existence(sys)                  # rank and invariant-zero conditions
    cf = to_canonical(sys, poles)         # output-coordinate form, stable A11
    gains = design_gains(cf, A22s, Q2, rho, delta)

In canonical coordinates the output is the last p states, the unknown input
enters only through the output subsystem (D2), and the gain choice decouples
the internal error dynamics from the output error.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import matkit
from .errors import (
    BadTransform,
    InsufficientGain,
    NotHurwitz,
    PlacementFailure,
)

#: magnitude above which a generalized eigenvalue counts as infinite
_ZERO_INF_CUTOFF = 1e8


@dataclass(frozen=True, eq=False)
class UncertainSystem:
    """LTI plant x' = A x + B u + D xi, y = C x with ||xi|| <= xi_bar.

    B, C and D must have full rank and p >= q.  A plant without a control
    input is represented with an n x 0 matrix B.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    xi_bar: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "A", matkit.frozen(self.A, "A"))
        object.__setattr__(self, "B", matkit.frozen(self.B, "B"))
        object.__setattr__(self, "C", matkit.frozen(self.C, "C"))
        object.__setattr__(self, "D", matkit.frozen(self.D, "D"))
        object.__setattr__(self, "xi_bar", float(self.xi_bar))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n or self.D.shape[0] != n:
            raise ValueError("B, C, D row/column counts must match A")
        if self.xi_bar < 0:
            raise ValueError("xi_bar must be >= 0")
        if self.p < self.q:
            raise ValueError(f"need p >= q, got p={self.p}, q={self.q}")
        if self.m and matkit.rank(self.B) < min(n, self.m):
            raise ValueError("B must have full rank")
        if matkit.rank(self.C) < self.p:
            raise ValueError("C must have full row rank")
        if self.q and matkit.rank(self.D) < self.q:
            raise ValueError("D must have full column rank")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.D.shape[1]


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    """Outcome of the observer existence conditions for (A, D, C)."""

    rank_cd: int
    q: int
    observable: bool
    invariant_zeros: np.ndarray  # complex, finite zeros only
    passed: bool

    def as_dict(self):
        return {
            "rank_cd": self.rank_cd,
            "q": self.q,
            "observable": self.observable,
            "invariant_zeros": [
                {"re": float(z.real), "im": float(z.imag)}
                for z in self.invariant_zeros
            ],
            "pass": self.passed,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.as_dict(), **kwargs)


def observability_matrix(a, c):
    """Kalman observability matrix [C; CA; ...; CA^(n-1)]."""
    a = matkit.as_matrix(a, "a")
    c = matkit.as_matrix(c, "c")
    blocks = [c]
    for _ in range(a.shape[0] - 1):
        blocks.append(blocks[-1] @ a)
    return np.vstack(blocks)


def invariant_zeros(a, d, c, tol=matkit.RANK_TOL, seed=0):
    """Finite invariant zeros of (A, D, C): values where the system matrix
    [[sI - A, D], [C, 0]] loses column rank.

    For p == q the pencil is square and a single QZ sweep suffices.  For
    p > q the pencil is squared up twice with independent random input
    columns; only eigenvalues common to both completions are genuine zeros.
    """
    a = matkit.as_matrix(a, "a")
    d = matkit.as_matrix(d, "d")
    c = matkit.as_matrix(c, "c")
    n = a.shape[0]
    p, q = c.shape[0], d.shape[1]

    def finite_pencil_eigs(d_aug):
        k = d_aug.shape[1]
        f = np.block([[a, d_aug], [c, np.zeros((p, k))]])
        g = np.zeros_like(f)
        g[:n, :n] = np.eye(n)
        vals = scipy.linalg.eigvals(f, g)
        return vals[np.isfinite(vals) & (np.abs(vals) < _ZERO_INF_CUTOFF)]

    if p == q:
        return np.sort_complex(finite_pencil_eigs(d))

    rng = np.random.default_rng(seed)
    scale = max(np.linalg.norm(a), 1.0)
    first = finite_pencil_eigs(
        np.hstack([d, scale * rng.standard_normal((n, p - q))]))
    second = finite_pencil_eigs(
        np.hstack([d, scale * rng.standard_normal((n, p - q))]))
    zeros = [z for z in first
             if second.size and np.min(np.abs(second - z)) < 1e-6 * (1 + abs(z))]
    return np.sort_complex(np.asarray(zeros, dtype=complex))


def check_existence(sys, tol=matkit.RANK_TOL):
    """Evaluate the observer existence conditions for *sys*.

    Passes when rank(C D) == q and every invariant zero of (A, D, C) has
    negative real part.  An observable (A, C) pair has no invariant zeros,
    so the zero test is vacuous in that case and is skipped.
    """
    rank_cd = matkit.rank(sys.C @ sys.D, tol) if sys.q else 0
    observable = matkit.rank(observability_matrix(sys.A, sys.C), tol) == sys.n
    if observable:
        zeros = np.zeros(0, dtype=complex)
        zeros_ok = True
    else:
        zeros = invariant_zeros(sys.A, sys.D, sys.C, tol)
        zeros_ok = bool(np.all(zeros.real < 0))
    return FeasibilityReport(
        rank_cd=rank_cd,
        q=sys.q,
        observable=observable,
        invariant_zeros=zeros,
        passed=bool(rank_cd == sys.q and zeros_ok),
    )


@dataclass(frozen=True, eq=False)
class CanonicalForm:
    """Blocks of the system in output coordinates z = J x.

    The transformed state splits as (x_I, y) with x_I the first n-p
    components.  J D has zero top block, C J^-1 = [0 | I_p], and A11 is
    Hurwitz.
    """

    system: UncertainSystem
    J: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    D2: np.ndarray

    @property
    def J_inv(self):
        return matkit.inv(self.J)

    @property
    def A_blocks(self):
        return np.block([[self.A11, self.A12], [self.A21, self.A22]])


def _conjugate_closed(poles, tol=1e-9):
    key = lambda z: (z.real, z.imag)
    left = sorted((complex(z) for z in poles), key=key)
    right = sorted((complex(z).conjugate() for z in poles), key=key)
    return all(abs(a - b) <= tol * (1 + abs(a)) for a, b in zip(left, right))


def _match_spectra(got, want, tol):
    """Greedy nearest matching of two eigenvalue multisets."""
    got = list(np.asarray(got, dtype=complex))
    for w in want:
        if not got:
            return False
        j = int(np.argmin([abs(g - w) for g in got]))
        if abs(got[j] - w) > tol * (1.0 + abs(w)):
            return False
        got.pop(j)
    return not got


def _split_repeated(poles):
    """Perturb repeated targets by +-1e-6i steps so the assignment system is
    nonsingular; conjugate closure is preserved and the perturbation is
    removed by verifying against the original request."""
    out = []
    seen = {}
    for z in poles:
        z = complex(z)
        key = (round(z.real, 9), round(z.imag, 9))
        count = seen.get(key, 0)
        seen[key] = count + 1
        if count == 0:
            out.append(z)
        else:
            step = 1e-6 * ((count + 1) // 2)
            sign = 1.0 if count % 2 else -1.0
            out.append(complex(z.real, z.imag + sign * step))
    return out


def stabilize(a11, a21, poles, seed=0, tol=1e-6):
    """Gain L with eig(a11 + L @ a21) equal to *poles* (to 1e-6).

    Assignment runs on the dual pair (a11.T, a21.T): pick a diagonal target,
    draw a random seed matrix, solve the resulting Sylvester system column
    by column, and invert.  Conjugate pole pairs share a real seed column so
    the gain comes out real.
    """
    a11 = matkit.as_matrix(a11, "a11")
    a21 = matkit.as_matrix(a21, "a21")
    k = a11.shape[0]
    r = a21.shape[0]
    if a11.shape[1] != k or a21.shape[1] != k:
        raise ValueError("a11 must be square and a21 must have n-p columns")
    poles = [complex(z) for z in poles]
    if len(poles) != k:
        raise PlacementFailure(f"need {k} poles, got {len(poles)}")
    if not _conjugate_closed(poles):
        raise PlacementFailure("pole set is not closed under conjugation")

    current = matkit.eig(a11)
    if _match_spectra(current, poles, 1e-9):
        return np.zeros((k, r))
    if r == 0:
        raise PlacementFailure("no injection freedom and poles do not match")

    targets = _split_repeated(poles)
    # nudge targets that collide with the existing spectrum
    targets = [
        z if np.min(np.abs(current - z)) > 1e-8 * (1 + abs(z))
        else z + 1e-6 * (1 + abs(z))
        for z in targets
    ]
    ad, bd = a11.T, a21.T
    rng = np.random.default_rng(seed)
    for _ in range(12):
        g = rng.standard_normal((r, k))
        # conjugate pairs reuse the seed column of their partner
        for i, zi in enumerate(targets):
            for j in range(i):
                if abs(targets[j] - zi.conjugate()) < 1e-12 * (1 + abs(zi)):
                    g[:, i] = g[:, j]
                    break
        try:
            # Sylvester system with a diagonal target decouples columnwise;
            # targets may be complex, so solve outside the float-only kernel
            x = np.column_stack([
                np.linalg.solve(ad - z * np.eye(k), (bd @ g[:, j]).astype(complex))
                for j, z in enumerate(targets)
            ])
        except np.linalg.LinAlgError:
            continue
        if np.linalg.cond(x) > 1e12:
            continue
        gain = -g @ np.linalg.inv(x)
        if np.max(np.abs(gain.imag)) > 1e-6 * (1 + np.max(np.abs(gain.real))):
            continue
        ell = gain.real.T
        if _match_spectra(matkit.eig(a11 + ell @ a21), poles, tol):
            return ell
    raise PlacementFailure("pole assignment did not converge; the pair is "
                           "likely unassignable on the requested modes")


def _extract_blocks(sys, j):
    j_inv = matkit.inv(j)
    a_t = j @ sys.A @ j_inv
    b_t = j @ sys.B
    d_t = j @ sys.D
    k = sys.n - sys.p
    return a_t, b_t, d_t, k


def _verify_canonical(sys, j, tol=1e-9):
    a_t, b_t, d_t, k = _extract_blocks(sys, j)
    scale = 1.0 + float(np.linalg.norm(sys.D))
    if np.max(np.abs(d_t[:k])) > tol * scale:
        raise BadTransform("J D has a nonzero top block")
    c_t = sys.C @ matkit.inv(j)
    target = np.hstack([np.zeros((sys.p, k)), np.eye(sys.p)])
    if np.max(np.abs(c_t - target)) > tol * (1.0 + np.linalg.norm(sys.C)):
        raise BadTransform("C J^-1 is not [0 | I]")
    if k and not matkit.is_hurwitz(a_t[:k, :k]):
        raise BadTransform("transformed A11 is not Hurwitz")
    if sys.q and matkit.rank(d_t[k:]) < sys.q:
        raise BadTransform("transformed D2 lost column rank")
    return CanonicalForm(
        system=sys,
        J=matkit.frozen(j, "J"),
        A11=matkit.frozen(a_t[:k, :k]),
        A12=matkit.frozen(a_t[:k, k:]),
        A21=matkit.frozen(a_t[k:, :k]),
        A22=matkit.frozen(a_t[k:, k:]),
        B1=matkit.frozen(b_t[:k]),
        B2=matkit.frozen(b_t[k:]),
        D2=matkit.frozen(d_t[k:]),
    )


def to_canonical(sys, desired_a11_poles=None, j_override=None, seed=0):
    """Construct the output-coordinate form of *sys*.

    With *j_override* the matrix is used verbatim and only verified.
    Otherwise J is built in two stages: an orthonormal completion of C that
    sends the output to the last p states, then a block transform
    [[I, L], [0, I]] whose L simultaneously removes the unknown input from
    the internal subsystem and places the A11 poles at
    *desired_a11_poles*.
    """
    if j_override is not None:
        j = matkit.as_matrix(j_override, "j_override")
        if j.shape != (sys.n, sys.n):
            raise BadTransform(f"J must be {sys.n} x {sys.n}")
        try:
            matkit.inv(j)
        except matkit.SingularMatrix as exc:
            raise BadTransform("J is singular") from exc
        return _verify_canonical(sys, j)

    k = sys.n - sys.p
    if desired_a11_poles is None:
        raise ValueError("desired_a11_poles required when J is generated")
    poles = [complex(z) for z in desired_a11_poles]
    if len(poles) != k:
        raise ValueError(f"need {k} poles for the internal subsystem")
    if any(z.real >= 0 for z in poles):
        raise ValueError("A11 poles must have negative real part")
    if not _conjugate_closed(poles):
        raise ValueError("pole set is not closed under conjugation")

    # stage 1: send C to [0 | I_p]
    identity_tail = np.hstack([np.zeros((sys.p, k)), np.eye(sys.p)])
    if np.array_equal(sys.C, identity_tail):
        null_rows = np.hstack([np.eye(k), np.zeros((k, sys.p))])
    else:
        null_rows = scipy.linalg.null_space(sys.C).T
    j1 = np.vstack([null_rows, sys.C])
    a_t, _, d_t, _ = _extract_blocks(sys, j1)
    a11, a21 = a_t[:k, :k], a_t[k:, :k]
    d_top, d_bot = d_t[:k], d_t[k:]

    if k == 0:
        return _verify_canonical(sys, j1)

    # stage 2: L must cancel the top block of J D and place the A11 poles.
    # Any admissible L is L0 + Z N', with L0 a particular solution of
    # L d_bot = -d_top and N a basis of the columns d_bot annihilates.
    if sys.q:
        l0 = -d_top @ matkit.solve_linear(d_bot.T @ d_bot, d_bot.T)
        n_free = scipy.linalg.null_space(d_bot.T)
    else:
        l0 = np.zeros((k, sys.p))
        n_free = np.eye(sys.p)
    try:
        z = stabilize(a11 + l0 @ a21, n_free.T @ a21, poles, seed=seed)
    except PlacementFailure as exc:
        raise PlacementFailure(
            "cannot place the internal poles while keeping the unknown input "
            f"out of the internal subsystem: {exc}") from exc
    ell = l0 + z @ n_free.T
    j = np.block([[np.eye(k), ell], [np.zeros((sys.p, k)), np.eye(sys.p)]]) @ j1
    return _verify_canonical(sys, j)


@dataclass(frozen=True, eq=False)
class ObserverGains:
    """Observer gain set with its Lyapunov certificate and decay envelope.

    A0 = A - Gl C is Hurwitz; P2 solves the output-subsystem Lyapunov
    equation for A22s and Q2; (k, lam) bound the state transition norm as
    ||exp(A0 t)|| <= k exp(-lam t).
    """

    Gl: np.ndarray
    Gn: np.ndarray
    P2: np.ndarray
    Q2: np.ndarray
    A22s: np.ndarray
    rho: float
    delta: float
    k: float
    lam: float
    A0: np.ndarray

    @property
    def gamma0(self):
        """Injection margin above the disturbance bound (set at design time)."""
        return getattr(self, "_gamma0", self.rho)

    def with_delta(self, delta):
        """Copy of the gain set with a different smoothing constant."""
        new = dataclasses.replace(self, delta=float(delta))
        object.__setattr__(new, "_gamma0", self.gamma0)
        return new


def convergence_diagnostics(a0):
    """Decay envelope constants (k, lam) for a Hurwitz a0.

    P0 solves P0 a0 + a0' P0 = -I; then k = sqrt(n * lmax(P0) / lmin(P0))
    and lam = 1 / (2 lmax(P0)).
    """
    a0 = matkit.as_matrix(a0, "a0")
    n = a0.shape[0]
    p0 = matkit.solve_lyapunov(a0, np.eye(n))
    evs = np.linalg.eigvalsh(p0)
    lmin, lmax = float(evs[0]), float(evs[-1])
    if lmin <= 0:
        raise NotHurwitz("Lyapunov certificate is not positive definite")
    return float(np.sqrt(n * lmax / lmin)), float(1.0 / (2.0 * lmax))


def design_gains(cf, a22s=None, q2=None, rho=None, delta=0.01):
    """Synthesize the linear and injection gains for a canonical form.

    Defaults: a22s = -10 I_p, q2 = 20 I_p, rho = xi_bar + 0.1.  The linear
    gain cancels the output coupling of the internal error and replaces the
    output block with a22s; the injection gain scales the output identity by
    ||D2||.
    """
    sys = cf.system
    p = sys.p
    a22s = matkit.as_matrix(-10.0 * np.eye(p) if a22s is None else a22s, "a22s")
    q2 = matkit.as_matrix(20.0 * np.eye(p) if q2 is None else q2, "q2")
    rho = sys.xi_bar + 0.1 if rho is None else float(rho)
    delta = float(delta)
    if a22s.shape != (p, p) or q2.shape != (p, p):
        raise ValueError("a22s and q2 must be p x p")
    if not matkit.is_hurwitz(a22s):
        raise NotHurwitz("a22s must be Hurwitz")
    if rho <= sys.xi_bar:
        raise InsufficientGain(
            f"rho = {rho} must exceed the disturbance bound {sys.xi_bar}")
    if delta <= 0:
        raise ValueError("delta must be positive")

    p2 = matkit.solve_lyapunov(a22s, q2)
    d2_norm = matkit.spectral_norm(cf.D2)
    gl_blocks = np.vstack([cf.A12, cf.A22 - a22s])
    j_inv = cf.J_inv
    gl = j_inv @ gl_blocks
    gn = d2_norm * (j_inv @ np.vstack([np.zeros((sys.n - p, p)), np.eye(p)]))
    a0 = sys.A - gl @ sys.C
    k, lam = convergence_diagnostics(a0)
    gains = ObserverGains(
        Gl=matkit.frozen(gl),
        Gn=matkit.frozen(gn),
        P2=matkit.frozen(p2),
        Q2=matkit.frozen(q2),
        A22s=matkit.frozen(a22s),
        rho=rho,
        delta=delta,
        k=k,
        lam=lam,
        A0=matkit.frozen(a0),
    )
    object.__setattr__(gains, "_gamma0", rho - sys.xi_bar)
    return gains
