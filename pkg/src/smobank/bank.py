"""Runtime of the N-observer bank with shared injection and RLS weight fusion.

The bank runs N copies of the observer from the same gain set, each from its
own initial state.  A combination-weight vector is adapted online by a
modified recursive least squares law driven by the observer differences, and
the published estimate is the convex-style combination of the N individual
estimates (weights always sum to one; they are not projected onto the
simplex, and excursions outside [0, 1] are only recorded).
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import matkit
from .errors import DegenerateBank, HullViolation

#: residual above which a hull-membership witness is rejected
HULL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class BankConfig:
    """Static bank parameters: initial states (columns), initial reduced
    weights, and the RLS covariance scale mu (R(0) = mu I)."""

    initial_states: np.ndarray  # n x N, one column per observer
    alpha0: np.ndarray          # length N-1
    mu: float

    def __post_init__(self):
        states = matkit.frozen(self.initial_states, "initial_states")
        alpha0 = np.asarray(self.alpha0, dtype=float).copy()
        alpha0.flags.writeable = False
        object.__setattr__(self, "initial_states", states)
        object.__setattr__(self, "alpha0", alpha0)
        object.__setattr__(self, "mu", float(self.mu))
        n, n_obs = states.shape
        if n_obs < n + 1:
            raise ValueError(f"need at least n+1 = {n + 1} observers, got {n_obs}")
        if alpha0.shape != (n_obs - 1,):
            raise ValueError(f"alpha0 must have length {n_obs - 1}")
        if not np.all(np.isfinite(alpha0)):
            raise ValueError("alpha0 contains non-finite entries")
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    @property
    def n_observers(self):
        return self.initial_states.shape[1]


@dataclass(eq=False)
class BankState:
    """Snapshot of the bank: observer states as columns, reduced weights,
    RLS covariance, and time."""

    xhat: np.ndarray       # n x N
    alpha_bar: np.ndarray  # N-1
    R: np.ndarray          # (N-1) x (N-1)
    t: float = 0.0

    @property
    def weights(self):
        """Full weight vector (alpha_bar, 1 - sum alpha_bar); sums to 1."""
        w = np.empty(self.alpha_bar.size + 1)
        w[:-1] = self.alpha_bar
        w[-1] = 1.0 - self.alpha_bar.sum()
        return w


@dataclass(eq=False)
class BankDerivative:
    """Time derivatives of every bank component plus the shared injection."""

    xhat_dot: np.ndarray
    alpha_dot: np.ndarray
    r_dot: np.ndarray
    nu: np.ndarray


def hull_witness(initial_states, x0):
    """Best simplex combination of the columns of *initial_states* matching x0.

    Solves min ||V a - x0|| subject to a >= 0, sum(a) = 1 by nonnegative
    least squares on the sum-augmented system.  Returns (alpha, residual);
    x0 lies in the convex hull of the columns exactly when the residual is
    (numerically) zero.
    """
    v = matkit.as_matrix(initial_states, "initial_states")
    x0 = np.asarray(x0, dtype=float)
    scale = max(1.0, float(np.abs(v).max()), float(np.abs(x0).max()))
    weight = 1e6 * scale
    a_aug = np.vstack([v, weight * np.ones((1, v.shape[1]))])
    b_aug = np.concatenate([x0, [weight]])
    alpha, _ = scipy.optimize.nnls(a_aug, b_aug)
    total = alpha.sum()
    if total > 0:
        alpha = alpha / total
    residual = float(np.linalg.norm(v @ alpha - x0))
    return alpha, residual


def init_bank(sys, cfg, x0_hint=None, check_rank=True):
    """Initial BankState for *cfg*; R starts at mu I.

    The difference matrix of the initial states must have rank n so that the
    weight regression is well posed; pass check_rank=False to run a
    deliberately degenerate bank.  When *x0_hint* is given, hull membership
    is checked and a HullViolation warning is issued if no simplex witness
    reproduces the hint (simulation remains allowed).
    """
    if cfg.initial_states.shape[0] != sys.n:
        raise ValueError("initial states must have n rows")
    state = BankState(
        xhat=cfg.initial_states.copy(),
        alpha_bar=cfg.alpha0.copy(),
        R=cfg.mu * np.eye(cfg.n_observers - 1),
        t=0.0,
    )
    e0 = e_matrix(state)
    if check_rank and matkit.rank(e0) < sys.n:
        raise DegenerateBank(
            "initial observer differences are rank deficient; the weight "
            "regression E(0) E(0)' is singular")
    if x0_hint is not None:
        _, residual = hull_witness(cfg.initial_states, x0_hint)
        if residual > HULL_TOL:
            warnings.warn(HullViolation(
                f"x(0) is outside the hull of the observer initial states "
                f"(best simplex residual {residual:.3g}); transient-free "
                f"estimation cannot be guaranteed"))
    return state


def combined_estimate(state):
    """Weighted combination of the observer states (weights sum to 1)."""
    return state.xhat @ state.weights


def e_matrix(state):
    """Difference matrix: column i is xhat_i - xhat_N."""
    return state.xhat[:, :-1] - state.xhat[:, -1:]


def injection(p2, y_tilde_combined, rho, delta):
    """Output-error injection term, bounded by rho in norm.

    delta > 0 gives the continuous approximation -rho P2 y / (||P2 y|| + delta);
    delta = 0 gives the discontinuous unit-vector form (zero at y = 0).
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    p2y = np.asarray(p2, dtype=float) @ np.asarray(y_tilde_combined, dtype=float)
    norm = float(np.linalg.norm(p2y))
    if delta == 0.0:
        if norm == 0.0:
            return np.zeros_like(p2y)
        return -rho * p2y / norm
    return -rho * p2y / (norm + delta)


def bank_derivative(state, gains, sys, u, y):
    """Time derivatives of the bank at *state* for measurement y and input u.

    The injection is evaluated once from the combined output error and
    shared by every observer.  The weight and covariance derivatives
    implement the modified RLS law on the regression built from the
    difference matrix.
    """
    y = np.asarray(y, dtype=float)
    xhat = state.xhat
    w = state.weights
    c_xhat = sys.C @ xhat
    y_tilde_combined = c_xhat @ w - y
    nu = injection(gains.P2, y_tilde_combined, gains.rho, gains.delta)

    drive = gains.Gl @ y + gains.Gn @ nu
    if sys.m:
        drive = drive + sys.B @ np.asarray(u, dtype=float)
    xhat_dot = gains.A0 @ xhat + drive[:, None]

    ce = c_xhat[:, :-1] - c_xhat[:, -1:]
    y_tilde_last = c_xhat[:, -1] - y
    residual = ce @ state.alpha_bar + y_tilde_last
    alpha_dot = -state.R @ (ce.T @ residual)
    r_dot = -state.R @ (ce.T @ ce) @ state.R
    return BankDerivative(xhat_dot=xhat_dot, alpha_dot=alpha_dot,
                          r_dot=r_dot, nu=nu)
