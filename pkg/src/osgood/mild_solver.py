"""Forward integration of the mild formulation

    u(t) = S(t) a + int_0^t S(t - s) f(u(s)) ds

with an adaptive exponential integrator, plus a posteriori checks.

One step of size h uses the exponential Euler value

    u_E = S(h) u + Phi(h) f(u),       Phi(h) = int_0^h S(s) ds,

and the exponential midpoint value

    U   = S(h/2) u + Phi(h/2) f(u)
    u_M = S(h) u + Phi(h) f(U).

The linear part is exact, only the nonlinearity is approximated. The
difference u_M - u_E estimates the local error of the first order value
and u_M is propagated.

Blow-up is declared once the sup norm passes a divergence threshold. The
existence time is then estimated from E(t) = t + F(||u(t)||_inf): at the
vertex carrying the maximum the diffusion term is nonpositive, so
u_max' <= f(u_max) and E is nondecreasing with limit T_max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .source_term import SourceTerm

__all__ = [
    "SolverError",
    "StepControls",
    "SolutionTrace",
    "ResidualReport",
    "DiagnosticSeries",
    "solve",
    "check_residual",
    "diagnostics",
    "REACHED_HORIZON",
    "BLOWUP_DETECTED",
    "STEP_FAILURE",
]

REACHED_HORIZON = "reached-horizon"
BLOWUP_DETECTED = "blow-up-detected"
STEP_FAILURE = "step-failure"


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class StepControls:
    """Step size control.

    Parameters
    ----------
    rtol, atol : float
        Local error target, measured in the sup norm.
    threshold : float
        Divergence threshold for ||u||_inf.
    h0 : float, optional
        First trial step; defaults to 1e-4 * horizon.
    h_min_factor : float
        Steps below h_min_factor * horizon count as a failure.
    p : float
        Exponent of the l^p(m) norms recorded in the trace.
    max_steps : int
    """

    rtol: float = 1e-6
    atol: float = 1e-12
    threshold: float = 1e8
    h0: Optional[float] = None
    h_min_factor: float = 1e-14
    p: float = 2.0
    max_steps: int = 2_000_000

    def __post_init__(self):
        for name in ("rtol", "threshold", "h_min_factor", "p"):
            if not getattr(self, name) > 0:
                raise SolverError(f"{name} must be positive")
        if self.atol < 0:
            raise SolverError("atol must be nonnegative")


@dataclass
class SolutionTrace:
    times: np.ndarray
    states: np.ndarray
    sup_norms: np.ndarray
    p_norms: np.ndarray
    status: str
    threshold: float
    p: float = 2.0
    T_emp: Optional[float] = None
    T_emp_error: Optional[float] = None
    reason: Optional[str] = None
    rejected_steps: int = 0
    info: dict = field(default_factory=dict)

    @property
    def blew_up(self) -> bool:
        return self.status == BLOWUP_DETECTED

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise SolverError(f"t = {t} is not a trace time")
        return k

    def truncated(self, t_end: float) -> "SolutionTrace":
        keep = self.times <= t_end
        return SolutionTrace(self.times[keep], self.states[keep], self.sup_norms[keep],
                             self.p_norms[keep], self.status, self.threshold, self.p,
                             self.T_emp, self.T_emp_error, self.reason, self.rejected_steps, self.info)

    def status_block(self) -> dict:
        return {
            "status": self.status,
            "T_emp": self.T_emp,
            "T_emp_error": self.T_emp_error,
            "reason": self.reason,
            "threshold": self.threshold,
            "steps": int(len(self.times) - 1),
            "rejected_steps": self.rejected_steps,
            "t_final": float(self.times[-1]),
            "sup_norm_final": float(self.sup_norms[-1]),
            **self.info,
        }

    def write_csv(self, path) -> None:
        data = np.column_stack([self.times, self.sup_norms, self.p_norms])
        np.savetxt(path, data, delimiter=",", header="t,sup_norm,p_norm", comments="", fmt="%.17g")

    def dump_states(self, path) -> None:
        np.savez_compressed(path, times=self.times, states=self.states)


def _divergence_level(f: SourceTerm, threshold: float) -> float:
    """``threshold``, lowered to where f(u) stays below 1e250 if f overflows first."""
    cap = 1e250
    with np.errstate(over="ignore", invalid="ignore"):
        if float(f.f_array(np.array([threshold]))[0]) < cap:
            return threshold
        lo, hi = 1.0, threshold
        if not float(f.f_array(np.array([lo]))[0]) < cap:
            return threshold
        for _ in range(200):
            mid = math.sqrt(lo * hi)
            if float(f.f_array(np.array([mid]))[0]) < cap:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1 + 1e-12:
                break
    return lo


def _p_norm(u, m, p):
    return float(np.dot(np.abs(u) ** p, m) ** (1.0 / p))


def _extrapolate_T(times, sups, f: SourceTerm, rtol: float):
    """Blow-up time from E_k = t_k + F(||u_k||) on the final accepted steps.

    E approaches T_max like a power of F(||u||). Three points whose F values
    are roughly geometric (ratio about 10) give an Aitken / Richardson
    estimate of the limit without assuming the order.
    """
    x = np.asarray(f.F(np.asarray(sups, dtype=float)), dtype=float)
    E = np.asarray(times, dtype=float) + x
    c = len(E) - 1
    b = int(np.searchsorted(-x, -10.0 * x[c]))  # first point with F <= 10 F_c
    a = int(np.searchsorted(-x, -100.0 * x[c]))
    estimate = E[c]
    if a < b < c:
        d1, d2 = E[b] - E[a], E[c] - E[b]
        denom = d1 - d2
        if d1 > 0 and d2 > 0 and d2 < d1 and denom > 0:
            estimate = E[c] + d2 * d2 / denom
    # the drift of E over the last decade of F is what the fit cannot see;
    # the rtol term accounts for the accumulated local errors
    drift = abs(E[c] - E[b]) if b < c else 0.0
    err = abs(estimate - E[c]) + drift + 100.0 * rtol * max(estimate, times[-1])
    return float(estimate), float(err)


def _make_stepper(sg, f: SourceTerm):
    """step(u, h) -> (midpoint value, midpoint minus Euler value)."""
    eig = getattr(sg, "_eigen", None)
    if eig is not None and sg.n == 1:
        # a single vertex has no edges, so S(h) = 1 and Phi(h) = h
        fa = f.f_array

        def step(u, h):
            fu = fa(u)
            fU = fa(u + 0.5 * h * fu)
            d = h * (fU - fu)
            return u + h * fu + d, d

        return step
    if getattr(sg, "method", None) == "eigen" and eig is not None:
        # work in the eigenbasis of the symmetrized generator: five dense
        # products per step and no per-call validation
        lam, q = eig()
        qT = np.ascontiguousarray(q.T)
        s = np.sqrt(sg.measure)
        zero = lam == 0
        lam_safe = np.where(zero, 1.0, lam)
        fa = f.f_array

        def coefs(h):
            x = -h * lam
            p = np.expm1(x)
            e = p + 1.0
            p /= -lam_safe
            p[zero] = h
            return e, p

        def step(u, h):
            cu = qT @ (s * u)
            cf = qT @ (s * fa(u))
            e2, p2 = coefs(0.5 * h)
            U = np.maximum(q @ (e2 * cu + p2 * cf) / s, 0.0)
            cU = qT @ (s * fa(U))
            e, p = coefs(h)
            return q @ (e * cu + p * cU) / s, q @ (p * (cU - cf)) / s

        return step

    def step(u, h):
        fu = f.f_array(u)
        U = np.maximum(sg.apply(0.5 * h, u) + sg.integral(0.5 * h, fu), 0.0)
        I = sg.integral(h, np.column_stack([fu, f.f_array(U)]))
        u_mid = sg.apply(h, u) + I[:, 1]
        return u_mid, I[:, 1] - I[:, 0]

    return step


def solve(sg, f: SourceTerm, a, horizon: float, controls: StepControls = StepControls(),
          store_states: bool = True) -> SolutionTrace:
    """Integrate the mild formulation on [0, horizon].

    Returns a trace whose status is ``reached-horizon``, ``blow-up-detected``
    (with ``T_emp`` and ``T_emp_error``) or ``step-failure`` (with a reason).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (sg.n,):
        raise SolverError(f"initial value must have length {sg.n}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise SolverError("initial value must be finite and nonnegative")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise SolverError("horizon must be positive and finite")
    m = sg.measure
    c = controls
    h = c.h0 if c.h0 else 1e-4 * horizon
    h_min = c.h_min_factor * horizon

    if sg.n == 0:
        raise SolverError("empty state space")
    t = 0.0
    u = a.copy()
    times, states, sups = [0.0], [u.copy()], [float(u.max())]
    pnorms = [_p_norm(u, m, c.p)]
    status, reason, rejected = REACHED_HORIZON, None, 0
    rtol, atol = c.rtol, c.atol
    threshold = _divergence_level(f, c.threshold)

    step = _make_stepper(sg, f)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(c.max_steps):
            if t >= horizon:
                break
            h = min(h, horizon - t)
            u_mid, delta = step(u, h)
            top, low = float(u_mid.max()), float(u_mid.min())
            diff = float(abs(delta).max())
            if not (math.isfinite(top) and math.isfinite(low) and math.isfinite(diff)):
                err = math.inf
            elif low < -1e-12 * max(1.0, top):
                # the exact flow is positivity preserving; a clearly negative
                # value means the step was too long for the nonlinearity
                err = math.inf
            else:
                scale = atol + rtol * max(top, -low)
                err = diff / scale if scale > 0 else (0.0 if diff == 0 else math.inf)
            if err <= 1.0:
                t = horizon if horizon - (t + h) <= 1e-15 * horizon else t + h
                u = np.maximum(u_mid, 0.0)
                times.append(t)
                sups.append(top)
                if store_states:
                    states.append(u)
                else:
                    pnorms.append(_p_norm(u, m, c.p))
                if top > threshold:
                    status = BLOWUP_DETECTED
                    break
                h *= 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.5))
            else:
                rejected += 1
                h *= 0.2 if err == math.inf else max(0.2, 0.9 * err ** -0.5)
                if h < h_min:
                    status = STEP_FAILURE
                    reason = (f"step size {h:.3e} fell below {h_min:.3e} at t = {t:.17g} "
                              f"with ||u||_inf = {sups[-1]:.6e}")
                    break
        else:
            status = STEP_FAILURE
            reason = f"step limit {c.max_steps} reached at t = {t:.17g}"

    times_a = np.array(times)
    if store_states:
        states_a = np.array(states)
        with np.errstate(over="ignore"):
            pnorms_a = (np.abs(states_a) ** c.p @ m) ** (1.0 / c.p)
    else:
        states_a = np.empty((0, sg.n))
        pnorms_a = np.array(pnorms)
    trace = SolutionTrace(times_a, states_a, np.array(sups), pnorms_a, status,
                          threshold, c.p, reason=reason, rejected_steps=rejected)
    if threshold < c.threshold:
        trace.info["threshold_lowered_from"] = c.threshold
    if status == BLOWUP_DETECTED:
        # skip the initial transient: E is only meaningful once the maximum is large
        start = max(0, len(times) - 2000)
        trace.T_emp, trace.T_emp_error = _extrapolate_T(times_a[start:], trace.sup_norms[start:], f, c.rtol)
    return trace


@dataclass(frozen=True)
class ResidualReport:
    t: float
    residual: float
    relative: float
    flagged: bool
    note: str = ""


def check_residual(trace: SolutionTrace, sg, f: SourceTerm, a, t: float, nodes: int = 3) -> ResidualReport:
    """||u(t) - S(t) a - Q(t)||_p with Q a composite Gauss rule over the trace.

    The integrand S(t - s) f(u(s)) is evaluated at Gauss nodes of every trace
    subinterval below t, with u(s) from a cubic spline through the stored
    states.
    """
    if trace.states.shape[0] != len(trace.times):
        raise SolverError("trace was recorded without states")
    k = trace.index_of(t)
    t = float(trace.times[k])
    if trace.sup_norms[k] > trace.threshold:
        raise SolverError("t lies past the divergence threshold")
    a = np.asarray(a, dtype=float)
    m = sg.measure
    uk = trace.states[k]
    lin = sg.apply(t, a)
    if k == 0:
        r = _p_norm(uk - lin, m, trace.p)
        return ResidualReport(t, r, r / max(_p_norm(uk, m, trace.p), 1e-300), False)
    hi = min(len(trace.times), k + 4)
    ts, us = trace.times[:hi], trace.states[:hi]
    flagged, note = False, ""
    if hi < 4:
        flagged, note = True, "fewer than four trace points"
        spline = None
    else:
        spline = CubicSpline(ts, us, axis=0)
    sups = trace.sup_norms[: k + 1]
    if np.any(sups[1:] > 2.0 * np.maximum(sups[:-1], 1e-300)):
        flagged, note = True, "sup norm more than doubles between stored states"
    x, w = np.polynomial.legendre.leggauss(nodes)
    left, right = ts[:k], ts[1 : k + 1]
    half = 0.5 * (right - left)
    s = (left[:, None] + half[:, None] * (x[None, :] + 1)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    if spline is not None:
        us_nodes = np.maximum(spline(s), 0.0)
    else:
        us_nodes = np.array([np.interp(si, ts, us[:, j]) for si in s for j in range(sg.n)]).reshape(len(s), sg.n)
    integrand = f.f(us_nodes) * weights[:, None]
    if hasattr(sg, "apply_each"):
        Q = sg.apply_each(t - s, integrand).sum(axis=0)
    else:
        Q = sum(sg.apply(t - si, row) for si, row in zip(s, integrand))
    r = _p_norm(uk - lin - Q, m, trace.p)
    return ResidualReport(t, r, r / max(_p_norm(uk, m, trace.p), 1e-300), flagged, note)


@dataclass(frozen=True)
class DiagnosticSeries:
    T: float
    G: tuple
    times: np.ndarray
    values: np.ndarray
    max_decrease: float  # largest j_k - j_{k+1}, 0 when nondecreasing
    min_derivative_slack: float  # min of forward difference j' - f(j), inf if undefined

    def monotone(self, tol: float = 1e-6) -> bool:
        return self.max_decrease <= tol

    def derivative_ok(self, tol: float = 1e-4) -> bool:
        return self.min_derivative_slack >= -tol


def _apply_rows(sg, times, rows):
    if hasattr(sg, "apply_each"):
        return sg.apply_each(times, rows)
    return np.array([sg.apply(t, r) for t, r in zip(times, rows)])


def diagnostics(trace: SolutionTrace, sg, f: SourceTerm, T: float, G: Sequence) -> DiagnosticSeries:
    """j(t) = mean over G of S(T - t) u(t) on the trace grid up to T.

    j should be nondecreasing with j' >= f(j). The derivative check uses
    forward differences, which bound j' at an interior point of each step
    from below by f at the left end because f and j are nondecreasing.
    """
    if T > trace.times[-1] * (1 + 1e-14) or T < 0:
        raise SolverError(f"T = {T} lies outside the trace [0, {trace.times[-1]}]")
    if trace.states.shape[0] != len(trace.times):
        raise SolverError("trace was recorded without states")
    G = list(G)
    if not G:
        raise SolverError("G must be nonempty")
    idx = np.array([sg.index(v) for v in G], dtype=int)
    m = sg.measure[idx]
    keep = trace.times <= T
    ts = trace.times[keep]
    vals = _apply_rows(sg, np.maximum(T - ts, 0.0), trace.states[keep])
    j = vals[:, idx] @ m / m.sum()
    dec = float(np.max(j[:-1] - j[1:], initial=0.0))
    if len(j) >= 2:
        slope = np.diff(j) / np.diff(ts)
        slack = float(np.min(slope - np.asarray(f.f(np.maximum(j[:-1], 0.0)))))
    else:
        slack = math.inf
    return DiagnosticSeries(float(T), tuple(sg.labels[i] for i in idx), ts, j, max(dec, 0.0), slack)
