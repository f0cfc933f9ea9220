"""Sliding-motion detection and unknown-input reconstruction.

Once the output error slides on C x_err = 0, the smoothed injection equals
the signal that keeps it there, and the unknown input can be read off
through the disturbance distribution block D2.  Two forms are emitted: the
least-squares form (dimension q, the natural fault estimate) and the
projected form (dimension p, the raw range-space reconstruction).
"""

from dataclasses import dataclass

import numpy as np

from . import matkit
from .errors import SingularD2


@dataclass(eq=False)
class FaultEstimate:
    t: float
    nu_eq: np.ndarray
    xi_hat_ls: np.ndarray         # length q
    xi_hat_projected: np.ndarray  # length p; equals D2 @ xi_hat_ls
    sliding: bool = False


def equivalent_signal(nu_delta, tau_f=0.0, dt=None):
    """Equivalent injection from the smoothed injection stream.

    With tau_f = 0 the stream is passed through unchanged (the smoothing
    constant already continuizes the injection).  A positive tau_f applies a
    first-order low pass per component, mainly for plotting.
    """
    nu = np.asarray(nu_delta, dtype=float)
    if tau_f < 0:
        raise ValueError("tau_f must be >= 0")
    if tau_f == 0.0:
        return nu.copy()
    if dt is None or dt <= 0:
        raise ValueError("dt required for a positive tau_f")
    decay = float(np.exp(-dt / tau_f))
    out = np.empty_like(nu)
    out[0] = nu[0]
    for k in range(1, nu.shape[0]):
        out[k] = decay * out[k - 1] + (1.0 - decay) * nu[k]
    return out


def reconstruction_maps(d2):
    """(W_ls, d2) with W_ls = ||D2|| (D2'D2)^-1 D2'; raises SingularD2."""
    d2 = matkit.as_matrix(d2, "d2")
    q = d2.shape[1]
    if matkit.rank(d2) < q:
        raise SingularD2("D2 must have full column rank")
    d2_norm = matkit.spectral_norm(d2)
    w_ls = d2_norm * matkit.solve_linear(d2.T @ d2, d2.T)
    return w_ls, d2


def reconstruct_fault(cf, nu_eq, t=0.0, sliding=False):
    """Fault estimate from one equivalent-signal sample.

    xi_hat_ls = ||D2|| (D2'D2)^-1 D2' nu_eq and xi_hat_projected =
    D2 @ xi_hat_ls; the projected form is the range-space reconstruction
    and collapses to ||D2|| nu_eq when D2 is square.
    """
    w_ls, d2 = reconstruction_maps(cf.D2)
    nu_eq = np.asarray(nu_eq, dtype=float)
    xi_ls = w_ls @ nu_eq
    return FaultEstimate(
        t=float(t),
        nu_eq=nu_eq.copy(),
        xi_hat_ls=xi_ls,
        xi_hat_projected=d2 @ xi_ls,
        sliding=bool(sliding),
    )


def detect_sliding(t, y_tilde_norm, threshold=1e-2, dwell=0.5):
    """Earliest time from which ||y_err|| stays at or below *threshold* for a
    full dwell interval; None when no such window exists."""
    if threshold <= 0 or dwell <= 0:
        raise ValueError("threshold and dwell must be positive")
    t = np.asarray(t, dtype=float)
    norms = np.asarray(y_tilde_norm, dtype=float)
    if t.shape != norms.shape or t.size == 0:
        raise ValueError("t and y_tilde_norm must be equal-length 1-D arrays")
    below = norms <= threshold
    if t.size == 1:
        return float(t[0]) if below[0] else None
    dt = t[1] - t[0]
    window = int(round(dwell / dt))
    if window >= t.size:
        return None
    # prefix sums give O(1) per-window "all below" tests
    counts = np.concatenate([[0], np.cumsum(below)])
    full = window + 1
    for k in range(t.size - window):
        if counts[k + full] - counts[k] == full:
            return float(t[k])
    return None
