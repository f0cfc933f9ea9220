"""Coupled plant/bank integration, the MCK benchmark plant, and the
bank-versus-single-observer comparison.

Integration is fixed step (rk4 or euler) over the joint state

    [ x | xhat columns | b | S | x_single ]

where the weight-adaptation law is propagated in information form:
S = R^-1 grows linearly along the trajectory (S' = (C E)'(C E)) and
b = S alpha_bar obeys b' = -(C E)' y_err_N.  This is algebraically the same
trajectory as the covariance form but stays non-stiff for arbitrarily large
mu, where explicit integration of R' = -R M R blows up immediately.  The
covariance is recovered as R = S^-1 wherever it is reported.
"""

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bank as bank_mod
from . import faultrec, matkit
from .design import UncertainSystem
from .errors import NumericalBlowup

#: spacing of the covariance snapshots kept on the trace, in seconds
R_SAMPLE_SPACING = 0.1

#: windows used by the report metrics, in seconds
TRANSIENT_WINDOW = 2.0
STEADY_WINDOW = 2.0


def mck_system(xi_bar=0.4):
    """The MCK hyperchaotic circuit benchmark plant.

    Four states, two outputs, one unknown-input channel, no control input.
    The default disturbance bound covers the piecewise-linear unknown input
    over the simulated attractor and is configurable.
    """
    a = np.array([[0.0, -1.0, 0.0, 0.0],
                  [1.0, 0.7, 0.0, 0.0],
                  [0.0, 0.0, 0.0, -10.0],
                  [0.0, 0.0, 1.5, 0.0]])
    d = np.array([[-1.0], [0.0], [10.0], [0.0]])
    c = np.array([[1.0, 0.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 1.0]])
    return UncertainSystem(A=a, B=np.zeros((4, 0)), C=c, D=d, xi_bar=xi_bar)


def mck_fault(x):
    """Piecewise-linear unknown input of the MCK circuit, continuous at the
    breakpoints s = +-1 where s = x1 - x3.  Accepts a single state vector or
    an array of them (last axis = state)."""
    x = np.asarray(x, dtype=float)
    s = x[..., 0] - x[..., 2]
    out = np.where(s < -1.0, 0.2 + 3.0 * (s + 1.0),
                   np.where(s > 1.0, -0.2 + 3.0 * (s - 1.0), -0.2 * s))
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class Scenario:
    """Everything needed for one simulation run."""

    system: UncertainSystem
    gains: object                 # ObserverGains
    bank: bank_mod.BankConfig
    x0: np.ndarray
    fault: object = None          # callable(x) -> xi, or None for no input
    u: object = None              # callable(t) -> (m,), or None for zero
    t_end: float = 10.0
    dt: float = 1e-4
    method: str = "rk4"
    compare_single: bool = False
    mu_list: list = field(default_factory=list)
    allow_degenerate: bool = False
    canonical: object = None      # CanonicalForm behind the gain design

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end <= self.dt:
            raise ValueError("t_end must exceed dt")
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown method {self.method!r}")

    def with_mu(self, mu):
        return dataclasses.replace(
            self, bank=dataclasses.replace(self.bank, mu=float(mu)))


@dataclass(eq=False)
class SimTrace:
    """Time-indexed record of one run; all series share the grid t."""

    scenario: Scenario
    t: np.ndarray
    x: np.ndarray             # (T, n) plant
    xo: np.ndarray            # (T, n) combined estimate
    xhat: np.ndarray          # (T, n, N) individual observers
    alpha: np.ndarray         # (T, N) full weight vectors
    nu: np.ndarray            # (T, p) shared injection
    xi_true: np.ndarray       # (T, q)
    xi_hat: np.ndarray        # (T, q) least-squares reconstruction
    ytilde_norm: np.ndarray   # (T,)
    x_single: np.ndarray = None   # (T, n) when comparing
    r_sample_t: np.ndarray = None
    r_samples: np.ndarray = None  # (K, N-1, N-1) covariance snapshots
    weights_left_unit_interval: bool = False
    runtime_s: float = 0.0

    @property
    def error_norm(self):
        return np.linalg.norm(self.xo - self.x, axis=1)

    @property
    def single_error_norm(self):
        if self.x_single is None:
            return None
        return np.linalg.norm(self.x_single - self.x, axis=1)


def _single_injection_series(trace):
    """Injection the standalone observer applied, recomputed from its trace."""
    sc = trace.scenario
    ytil = (trace.x_single - trace.x) @ sc.system.C.T
    p2y = ytil @ sc.gains.P2.T
    norms = np.linalg.norm(p2y, axis=1, keepdims=True)
    if sc.gains.delta == 0.0:
        with np.errstate(invalid="ignore"):
            return np.where(norms > 0.0, -sc.gains.rho * p2y / norms, 0.0)
    return -sc.gains.rho * p2y / (norms + sc.gains.delta)


def integrate(scenario):
    """Run the coupled plant + bank (+ optional standalone observer) ODEs.

    Deterministic fixed-step integration: identical inputs give bit-identical
    traces.  Raises NumericalBlowup (with the partial trace attached) if the
    state leaves the finite range.
    """
    sys = scenario.system
    gains = scenario.gains
    if gains.delta == 0.0 and scenario.method != "euler":
        raise ValueError("delta = 0 requires method='euler'")
    state0 = bank_mod.init_bank(sys, scenario.bank, x0_hint=scenario.x0,
                                check_rank=not scenario.allow_degenerate)

    n, p, q = sys.n, sys.p, sys.q
    n_obs = scenario.bank.n_observers
    n_red = n_obs - 1
    dt = float(scenario.dt)
    steps = int(round(scenario.t_end / dt))
    mu = scenario.bank.mu

    a = np.asarray(sys.A)
    c = np.asarray(sys.C)
    d = np.asarray(sys.D)
    a0 = np.asarray(gains.A0)
    gl = np.asarray(gains.Gl)
    gn = np.asarray(gains.Gn)
    p2 = np.asarray(gains.P2)
    b_in = np.asarray(sys.B)
    rho, delta = gains.rho, gains.delta
    fault = scenario.fault
    u_of_t = scenario.u
    d_col = d[:, 0] if q == 1 else None

    i_x = slice(0, n)
    i_xh = slice(n, n + n * n_obs)
    i_b = slice(n + n * n_obs, n + n * n_obs + n_red)
    i_s = slice(i_b.stop, i_b.stop + n_red * n_red)
    dim = i_s.stop + (n if scenario.compare_single else 0)
    i_xs = slice(i_s.stop, dim)

    # work buffers shared by the (sequential) stage evaluations
    buf_w = np.empty(n_obs)
    buf_cxh = np.empty((p, n_obs))
    buf_ce = np.empty((p, n_red))
    compare = scenario.compare_single

    def rhs(t, z, out):
        x = z[i_x]
        xh = z[i_xh].reshape(n, n_obs)
        s_info = z[i_s].reshape(n_red, n_red)
        y = c @ x
        alpha = np.linalg.solve(s_info, z[i_b])
        buf_w[:n_red] = alpha
        buf_w[n_red] = 1.0 - alpha.sum()
        np.dot(c, xh, out=buf_cxh)
        ytil_o = buf_cxh @ buf_w
        ytil_o -= y
        p2y = p2 @ ytil_o
        nrm = np.sqrt(p2y @ p2y)
        if nrm == 0.0 and delta == 0.0:
            nu = np.zeros(p)
        else:
            nu = (-rho / (nrm + delta)) * p2y
        drive = gl @ y
        drive += gn @ nu
        if u_of_t is not None:
            drive += b_in @ np.asarray(u_of_t(t), dtype=float)
        # plant
        out_x = out[i_x]
        np.dot(a, x, out=out_x)
        if fault is not None:
            if q == 1:
                out_x += d_col * float(fault(x))
            else:
                out_x += d @ np.asarray(fault(x), dtype=float)
        # bank
        out_xh = out[i_xh].reshape(n, n_obs)
        np.dot(a0, xh, out=out_xh)
        out_xh += drive[:, None]
        np.subtract(buf_cxh[:, :n_red], buf_cxh[:, n_red:], out=buf_ce)
        ytil_last = buf_cxh[:, n_red] - y
        out_b = out[i_b]
        np.dot(ce_t := buf_ce.T, ytil_last, out=out_b)
        out_b *= -1.0
        np.dot(ce_t, buf_ce, out=out[i_s].reshape(n_red, n_red))
        # standalone observer with its own injection
        if compare:
            xs = z[i_xs]
            ys = c @ xs
            ys -= y
            p2ys = p2 @ ys
            nrs = np.sqrt(p2ys @ p2ys)
            if nrs == 0.0 and delta == 0.0:
                nus = np.zeros(p)
            else:
                nus = (-rho / (nrs + delta)) * p2ys
            out_xs = out[i_xs]
            np.dot(a0, xs, out=out_xs)
            out_xs += gl @ y
            out_xs += gn @ nus
            if u_of_t is not None:
                out_xs += b_in @ np.asarray(u_of_t(t), dtype=float)
        return out

    z = np.empty(dim)
    z[i_x] = scenario.x0
    z[i_xh] = state0.xhat.ravel()
    z[i_b] = state0.alpha_bar / mu          # b(0) = S(0) alpha(0) = alpha0 / mu
    z[i_s] = (np.eye(n_red) / mu).ravel()
    if scenario.compare_single:
        z[i_xs] = state0.xhat @ state0.weights

    history = np.empty((steps + 1, dim))
    history[0] = z
    k1, k2, k3, k4 = (np.empty(dim) for _ in range(4))
    ztmp = np.empty(dim)
    started = time.perf_counter()
    t = 0.0
    try:
        if scenario.method == "euler":
            for k in range(steps):
                rhs(t, z, k1)
                z += dt * k1
                t = (k + 1) * dt
                if not np.all(np.isfinite(z)):
                    raise NumericalBlowup(t)
                history[k + 1] = z
        else:
            half = 0.5 * dt
            sixth = dt / 6.0
            for k in range(steps):
                rhs(t, z, k1)
                np.multiply(k1, half, out=ztmp)
                ztmp += z
                rhs(t + half, ztmp, k2)
                np.multiply(k2, half, out=ztmp)
                ztmp += z
                rhs(t + half, ztmp, k3)
                np.multiply(k3, dt, out=ztmp)
                ztmp += z
                rhs(t + dt, ztmp, k4)
                k2 += k3
                k2 *= 2.0
                k1 += k4
                k1 += k2
                z += sixth * k1
                t = (k + 1) * dt
                if not np.all(np.isfinite(z)):
                    raise NumericalBlowup(t)
                history[k + 1] = z
    except NumericalBlowup as blowup:
        partial = _build_trace(scenario, history[:k + 1], dt,
                               time.perf_counter() - started)
        blowup.trace = partial
        raise
    runtime = time.perf_counter() - started
    return _build_trace(scenario, history, dt, runtime)


def _build_trace(scenario, history, dt, runtime):
    sys = scenario.system
    n, p, q = sys.n, sys.p, sys.q
    n_obs = scenario.bank.n_observers
    n_red = n_obs - 1
    t_count = history.shape[0]
    t = np.arange(t_count) * dt

    x = history[:, :n]
    xhat = history[:, n:n + n * n_obs].reshape(t_count, n, n_obs)
    b_h = history[:, n + n * n_obs:n + n * n_obs + n_red]
    s_h = history[:, n + n * n_obs + n_red:
                  n + n * n_obs + n_red + n_red * n_red].reshape(
                      t_count, n_red, n_red)
    alpha = np.linalg.solve(s_h, b_h[..., None])[..., 0]
    weights = np.concatenate(
        [alpha, 1.0 - alpha.sum(axis=1, keepdims=True)], axis=1)
    xo = np.einsum("tij,tj->ti", xhat, weights)
    ytilde = (xo - x) @ sys.C.T
    ynorm = np.linalg.norm(ytilde, axis=1)

    p2y = ytilde @ scenario.gains.P2.T
    p2n = np.linalg.norm(p2y, axis=1, keepdims=True)
    if scenario.gains.delta == 0.0:
        with np.errstate(invalid="ignore"):
            nu = np.where(p2n > 0.0, -scenario.gains.rho * p2y / p2n, 0.0)
    else:
        nu = -scenario.gains.rho * p2y / (p2n + scenario.gains.delta)

    if scenario.fault is None:
        xi_true = np.zeros((t_count, q))
    else:
        vals = scenario.fault(x)
        xi_true = np.asarray(vals, dtype=float).reshape(t_count, q)
    w_ls, _ = faultrec.reconstruction_maps(_canonical_d2(scenario))
    xi_hat = nu @ w_ls.T

    stride = max(1, int(round(R_SAMPLE_SPACING / dt)))
    idx = np.arange(0, t_count, stride)
    s_snap = 0.5 * (s_h[idx] + np.transpose(s_h[idx], (0, 2, 1)))
    r_samples = np.linalg.inv(s_snap)
    r_samples = 0.5 * (r_samples + np.transpose(r_samples, (0, 2, 1)))

    x_single = history[:, -n:] if scenario.compare_single else None
    left = bool(np.any(weights < 0.0) or np.any(weights > 1.0))
    return SimTrace(
        scenario=scenario, t=t, x=x, xo=xo, xhat=xhat, alpha=weights,
        nu=nu, xi_true=xi_true, xi_hat=xi_hat, ytilde_norm=ynorm,
        x_single=x_single, r_sample_t=t[idx], r_samples=r_samples,
        weights_left_unit_interval=left, runtime_s=runtime,
    )


def _canonical_d2(scenario):
    """Transformed disturbance block used by the fault reconstruction maps."""
    if scenario.canonical is None:
        raise ValueError("scenario is missing its canonical form; build "
                         "scenarios through smobank.scenario or pass "
                         "canonical= explicitly")
    return scenario.canonical.D2


def estimator_metrics(trace, estimator="bank", threshold=1e-2, dwell=0.5):
    """Report metrics for one estimator on a finished trace.

    Returns transient/steady/full RMS of the estimation error norm, ITAE,
    sliding onset, the post-onset fault reconstruction RMS ratio, and the
    final error.
    """
    t = trace.t
    if estimator == "bank":
        err = trace.error_norm
        ynorm = trace.ytilde_norm
        xi_hat = trace.xi_hat
    elif estimator == "single":
        if trace.x_single is None:
            raise ValueError("trace has no standalone-observer series")
        err = trace.single_error_norm
        ytil = (trace.x_single - trace.x) @ trace.scenario.system.C.T
        ynorm = np.linalg.norm(ytil, axis=1)
        nu_s = _single_injection_series(trace)
        w_ls, _ = faultrec.reconstruction_maps(_canonical_d2(trace.scenario))
        xi_hat = nu_s @ w_ls.T
    else:
        raise ValueError(f"unknown estimator {estimator!r}")

    transient = t <= TRANSIENT_WINDOW
    steady = t >= t[-1] - STEADY_WINDOW
    onset = faultrec.detect_sliding(t, ynorm, threshold, dwell)
    ratio = None
    if onset is not None:
        window = t >= onset + 1.0
        denom = float(np.sqrt(np.mean(trace.xi_true[window] ** 2)))
        if denom > 0:
            num = float(np.sqrt(np.mean(
                (xi_hat[window] - trace.xi_true[window]) ** 2)))
            ratio = num / denom
    return {
        "transient_rms": float(np.sqrt(np.mean(err[transient] ** 2))),
        "steady_rms": float(np.sqrt(np.mean(err[steady] ** 2))),
        "full_rms": float(np.sqrt(np.mean(err ** 2))),
        "itae": float(np.trapezoid(t * err, t)),
        "sliding_onset": onset,
        "fault_rms_ratio": ratio,
        "final_error": float(err[-1]),
    }


@dataclass(eq=False)
class ComparisonRun:
    mu: float
    bank: dict
    single: dict
    winner: dict


@dataclass(eq=False)
class ComparisonReport:
    runs: list

    def as_dict(self):
        return {
            "runs": [
                {"mu": r.mu, "bank": r.bank, "single": r.single,
                 "winner": r.winner}
                for r in self.runs
            ],
            "bank_transient_rms_nonincreasing_in_mu":
                self.mu_trend_nonincreasing(),
        }

    def mu_trend_nonincreasing(self, slack=0.0):
        vals = [r.bank["transient_rms"] for r in self.runs]
        return all(b <= a * (1 + slack) + 1e-12
                   for a, b in zip(vals, vals[1:]))


def _compare_one(scenario):
    trace = integrate(scenario)
    bank_metrics = estimator_metrics(trace, "bank")
    single_metrics = estimator_metrics(trace, "single")
    winner = {}
    for key in ("transient_rms", "steady_rms", "full_rms", "itae",
                "fault_rms_ratio", "final_error"):
        a, b = bank_metrics[key], single_metrics[key]
        if a is None or b is None:
            winner[key] = "n/a"
        else:
            winner[key] = "bank" if a < b else ("single" if b < a else "tie")
    return ComparisonRun(mu=scenario.bank.mu, bank=bank_metrics,
                         single=single_metrics, winner=winner), trace


def run_comparison(scenario, keep_traces=False):
    """Bank versus a standalone observer started at the combined initial
    state, across the scenario's mu sweep (sorted ascending).

    Independent runs execute in parallel; SMOBANK_THREADS caps the pool.
    """
    if not scenario.compare_single:
        raise ValueError("scenario must set compare_single")
    mus = sorted(scenario.mu_list) if scenario.mu_list else [scenario.bank.mu]
    variants = [scenario.with_mu(mu) for mu in mus]
    max_workers = int(os.environ.get("SMOBANK_THREADS", 0)) or len(variants)
    if len(variants) == 1:
        results = [_compare_one(variants[0])]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_compare_one, variants))
    report = ComparisonReport(runs=[r for r, _ in results])
    if keep_traces:
        return report, [tr for _, tr in results]
    return report
