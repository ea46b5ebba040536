"""Heat semigroup S(t) = exp(-tL) of a finite weighted graph.

L is self-adjoint in l^2(m), so A = M^{1/2} L M^{-1/2} is a symmetric
positive semidefinite matrix and S(t) = M^{-1/2} exp(-tA) M^{1/2}. Three
routes compute the action:

``eigen``
    dense symmetric eigendecomposition of A, computed once and reused for
    every t (default for n <= 2000).
``krylov``
    Lanczos approximation of exp(-tA) w with an a posteriori error
    estimate and time substepping (default for larger graphs).
``expm``
    dense scaling-and-squaring through :func:`scipy.linalg.expm`; slow but
    independent of the other two, used to cross-check certificates.

Besides S(t) every route also provides ``integral(t, v)``, the action of
int_0^t S(s) ds, which is what an exponential integrator needs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .graph import WeightedGraph

__all__ = [
    "SemigroupError",
    "SemigroupOperator",
    "HeatKernelEntry",
    "JensenReport",
    "heat_kernel",
    "check_jensen",
    "check_chapman_kolmogorov",
    "check_semigroup_axioms",
    "SemigroupAxiomReport",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 2000


class SemigroupError(ValueError):
    pass


@dataclass(frozen=True)
class HeatKernelEntry:
    t: float
    x: object
    y: object
    value: float


def _phi1_times_t(lam, t):
    """(1 - exp(-t lam)) / lam, equal to t at lam = 0."""
    lam = np.asarray(lam, dtype=float)
    out = np.empty_like(lam)
    small = np.abs(t * lam) < 1e-8
    out[small] = t * (1.0 - 0.5 * t * lam[small])
    big = ~small
    out[big] = -np.expm1(-t * lam[big]) / lam[big]
    return out


class SemigroupOperator:
    """The sub-Markovian heat semigroup of ``graph``.

    Parameters
    ----------
    graph : WeightedGraph
    method : {"auto", "eigen", "krylov", "expm"}
    tol : float
        Relative tolerance of the Krylov action.
    """

    def __init__(self, graph: WeightedGraph, method: str = "auto", tol: float = 1e-10,
                 krylov_dim: int = 60):
        if method == "auto":
            method = "eigen" if graph.n <= DENSE_LIMIT else "krylov"
        if method not in ("eigen", "krylov", "expm"):
            raise SemigroupError(f"unknown method {method!r}")
        if method in ("eigen", "expm") and graph.n > 4 * DENSE_LIMIT:
            raise SemigroupError(f"dense method on {graph.n} vertices; use 'krylov'")
        self.graph = graph
        self.method = method
        self.tol = tol
        self.krylov_dim = krylov_dim
        self.laplacian = graph.laplacian_matrix()
        self._sym = graph.symmetric_laplacian()
        self._sqrt_m = np.sqrt(graph.measure)
        self._eig = None
        self._lock = threading.Lock()
        self._matrix_cache: dict[float, np.ndarray] = {}
        self._column_cache: dict[tuple[float, int], np.ndarray] = {}
        # ||A||_1 bounds the spectral radius; it sets the Krylov time step
        self._norm = float(abs(self._sym).sum(axis=0).max()) if graph.n else 0.0

    # -- bookkeeping -----------------------------------------------------
    @property
    def measure(self) -> np.ndarray:
        return self.graph.measure

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def labels(self) -> tuple:
        return self.graph.vertices

    def index(self, vertex) -> int:
        return self.graph.index(vertex)

    def with_method(self, method: str) -> "SemigroupOperator":
        return SemigroupOperator(self.graph, method, self.tol, self.krylov_dim)

    def alternate(self) -> "SemigroupOperator":
        """A semigroup computed by a different route, for independent rechecks."""
        if self.method == "expm":
            return self.with_method("eigen")
        if self.n <= DENSE_LIMIT:
            return self.with_method("expm")
        if self.method == "krylov":
            # a smaller basis with more substeps and a tighter tolerance
            return SemigroupOperator(self.graph, "krylov", min(self.tol, 1e-12), 30)
        return self.with_method("krylov")

    def _eigen(self):
        if self._eig is None:
            with self._lock:
                if self._eig is None:
                    lam, q = np.linalg.eigh(self._sym.toarray())
                    # L is positive semidefinite; kernel eigenvalues come out as
                    # +-1e-16 and must be exact zeros for S(t)1 = 1 at large t
                    floor = max(self.n, 1) * np.finfo(float).eps * max(abs(lam).max(initial=0), 1.0)
                    lam = np.where(lam < floor, 0.0, lam)
                    self._eig = (lam, q)
        return self._eig

    @staticmethod
    def _check_t(t):
        t = float(t)
        if not t >= 0 or not np.isfinite(t):
            raise SemigroupError(f"time must be finite and >= 0, got {t!r}")
        return t

    def _check_vec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n or v.ndim > 2:
            raise SemigroupError(f"expected {self.n} rows, got shape {v.shape}")
        return v

    # -- actions ---------------------------------------------------------
    def apply(self, t: float, phi) -> np.ndarray:
        """S(t) phi; ``phi`` may be a vector or an (n, k) block of columns."""
        t = self._check_t(t)
        phi = self._check_vec(phi)
        if t == 0.0:
            return phi.copy()
        return self._action(t, phi, integral=False)

    def integral(self, t: float, phi) -> np.ndarray:
        """int_0^t S(s) phi ds."""
        t = self._check_t(t)
        phi = self._check_vec(phi)
        if t == 0.0:
            return np.zeros_like(phi)
        return self._action(t, phi, integral=True)

    def apply_many(self, times, phi) -> np.ndarray:
        """Rows S(t_k) phi for every t_k in ``times``, shape (len(times), n)."""
        times = np.asarray(times, dtype=float)
        phi = self._check_vec(phi)
        if phi.ndim != 1:
            raise SemigroupError("apply_many takes a single vector")
        if np.any(times < 0) or not np.all(np.isfinite(times)):
            raise SemigroupError("times must be finite and >= 0")
        if self.method != "eigen":
            return np.array([self.apply(t, phi) for t in times])
        lam, q = self._eigen()
        c = q.T @ (phi * self._sqrt_m)
        return (np.exp(-np.outer(times, lam)) * c) @ q.T / self._sqrt_m

    def apply_each(self, times, rows) -> np.ndarray:
        """Rows S(t_k) phi_k for paired times and rows of ``rows`` (shape (K, n))."""
        times = np.asarray(times, dtype=float)
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape != (times.size, self.n):
            raise SemigroupError(f"expected shape ({times.size}, {self.n}), got {rows.shape}")
        if np.any(times < 0) or not np.all(np.isfinite(times)):
            raise SemigroupError("times must be finite and >= 0")
        if self.method != "eigen":
            return np.array([self.apply(t, r) for t, r in zip(times, rows)]).reshape(rows.shape)
        lam, q = self._eigen()
        c = (rows * self._sqrt_m) @ q
        return (np.exp(-np.outer(times, lam)) * c) @ q.T / self._sqrt_m

    def _action(self, t, phi, integral):
        w = phi * (self._sqrt_m if phi.ndim == 1 else self._sqrt_m[:, None])
        if self.method == "eigen":
            lam, q = self._eigen()
            coef = _phi1_times_t(lam, t) if integral else np.exp(-t * lam)
            c = q.T @ w
            out = q @ (coef * c if c.ndim == 1 else coef[:, None] * c)
        elif self.method == "krylov":
            cols = w[:, None] if w.ndim == 1 else w
            out = np.column_stack([self._krylov(t, cols[:, j], integral) for j in range(cols.shape[1])])
            out = out[:, 0] if w.ndim == 1 else out
        else:
            out = self._expm_action(t, w, integral)
        return out / (self._sqrt_m if phi.ndim == 1 else self._sqrt_m[:, None])

    def _expm_action(self, t, w, integral):
        a = self._sym.toarray()
        if not integral:
            return sla.expm(-t * a) @ w
        # exp([[-tA, I], [0, 0]]) has t * phi_1(-tA) in its upper-right block
        n = self.n
        big = np.zeros((2 * n, 2 * n))
        big[:n, :n] = -t * a
        big[:n, n:] = np.eye(n)
        return t * (sla.expm(big)[:n, n:] @ w)

    # -- Krylov ----------------------------------------------------------
    def _krylov(self, t, w, integral):
        beta = np.linalg.norm(w)
        if beta == 0.0:
            return np.zeros_like(w)
        # substep so each Lanczos solve sees a moderate t * ||A||
        nsub = max(1, int(np.ceil(t * self._norm / 400.0)))
        tau = t / nsub
        if not integral:
            v = w
            for _ in range(nsub):
                v = self._lanczos(tau, v, False)
            return v
        # int_0^{k tau} = int_0^{tau} + S(tau) int_0^{(k-1) tau}
        step = self._lanczos(tau, w, True)
        acc = step.copy()
        for _ in range(nsub - 1):
            acc = step + self._lanczos(tau, acc, False)
        return acc

    def _lanczos(self, tau, w, integral, _depth=0):
        """Lanczos approximation of exp(-tau A) w or int_0^tau exp(-sA) w ds."""
        a = self._sym
        n = self.n
        beta0 = np.linalg.norm(w)
        if beta0 == 0.0:
            return np.zeros_like(w)
        m_max = min(n, self.krylov_dim)
        basis = np.zeros((m_max + 1, n))
        alpha = np.zeros(m_max)
        beta = np.zeros(m_max)
        basis[0] = w / beta0
        result = None
        for j in range(m_max):
            r = a @ basis[j]
            alpha[j] = basis[j] @ r
            r -= alpha[j] * basis[j]
            if j > 0:
                r -= beta[j - 1] * basis[j - 1]
            # full reorthogonalization keeps the basis honest at 1e-10
            r -= basis[: j + 1].T @ (basis[: j + 1] @ r)
            beta[j] = np.linalg.norm(r)
            k = j + 1
            done = beta[j] <= 1e-14 * max(self._norm, 1.0) or k == n
            if k % 5 == 0 or done or k == m_max:
                theta, u = sla.eigh_tridiagonal(alpha[:k], beta[: k - 1])
                theta = np.maximum(theta, 0.0)
                g = _phi1_times_t(theta, tau) if integral else np.exp(-tau * theta)
                y = u @ (g * u[0])
                scale = tau if integral else 1.0
                err = beta0 * beta[j] * abs(y[-1])
                result = beta0 * (basis[:k].T @ y)
                if done or err <= self.tol * beta0 * scale:
                    return result
            basis[j + 1] = r / beta[j]
        if _depth > 30:
            raise SemigroupError("Krylov iteration failed to converge")
        # not converged: halve the time step
        half = tau / 2.0
        if not integral:
            return self._lanczos(half, self._lanczos(half, w, False, _depth + 1), False, _depth + 1)
        first = self._lanczos(half, w, True, _depth + 1)
        return first + self._lanczos(half, first, False, _depth + 1)

    # -- kernel ----------------------------------------------------------
    def matrix(self, t: float) -> np.ndarray:
        """Dense matrix of S(t) (memoized per t)."""
        t = self._check_t(t)
        if self.n > DENSE_LIMIT:
            raise SemigroupError(f"refusing to materialize a {self.n}x{self.n} kernel; use kernel_column")
        with self._lock:
            cached = self._matrix_cache.get(t)
        if cached is not None:
            return cached
        mat = self.apply(t, np.eye(self.n))
        mat.setflags(write=False)
        with self._lock:
            self._matrix_cache[t] = mat
        return mat

    def kernel(self, t: float) -> np.ndarray:
        """p_t(x, y) for all pairs: column y of S(t) divided by m(y)."""
        return self.matrix(t) / self.measure[None, :]

    def kernel_column(self, t: float, y) -> np.ndarray:
        """p_t(., y) = S(t) 1_y / m(y)."""
        t = self._check_t(t)
        j = self.index(y)
        key = (t, j)
        with self._lock:
            cached = self._column_cache.get(key)
        if cached is not None:
            return cached
        if self.n <= DENSE_LIMIT and t in self._matrix_cache:
            col = self._matrix_cache[t][:, j] / self.measure[j]
        else:
            e = np.zeros(self.n)
            e[j] = 1.0
            col = self.apply(t, e) / self.measure[j]
        col.setflags(write=False)
        with self._lock:
            self._column_cache[key] = col
        return col

    def heat_kernel(self, t: float, x, y) -> HeatKernelEntry:
        if not t > 0:
            raise SemigroupError("heat kernel needs t > 0")
        value = float(self.kernel_column(t, y)[self.index(x)])
        return HeatKernelEntry(float(t), x, y, value)


def heat_kernel(sg: SemigroupOperator, t: float, x, y) -> HeatKernelEntry:
    return sg.heat_kernel(t, x, y)


@dataclass
class JensenReport:
    t: float
    slack: np.ndarray  # S(t) f(phi) - f(S(t) phi)
    min_slack: float
    passed: bool
    tolerance: float = 1e-9

    def to_dict(self):
        return {"t": self.t, "min_slack": self.min_slack, "passed": self.passed}


def check_jensen(sg, f, t: float, phi, tol: float = 1e-9) -> JensenReport:
    """Componentwise slack of f(S(t) phi) <= S(t) f(phi)."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise SemigroupError("Jensen check needs a nonnegative phi")
    lhs_arg = np.maximum(sg.apply(t, phi), 0.0)
    slack = sg.apply(t, f.f(phi)) - f.f(lhs_arg)
    min_slack = float(slack.min()) if slack.size else 0.0
    return JensenReport(float(t), slack, min_slack, min_slack >= -tol, tol)


def check_chapman_kolmogorov(sg: SemigroupOperator, t: float, s: float, columns: Optional[list] = None) -> float:
    """max |p_{t+s}(x, y) - sum_z p_t(x, z) p_s(z, y) m(z)|.

    With ``columns`` only those y are checked (needed above the dense limit).
    """
    if not (t > 0 and s > 0):
        raise SemigroupError("Chapman-Kolmogorov check needs t, s > 0")
    m = sg.measure
    if columns is None and sg.n <= DENSE_LIMIT:
        pt, ps, pts = sg.kernel(t), sg.kernel(s), sg.kernel(t + s)
        return float(np.max(np.abs(pts - pt @ (m[:, None] * ps))))
    cols = columns if columns is not None else list(range(min(sg.n, 8)))
    worst = 0.0
    for y in cols:
        ps_col = sg.kernel_column(s, y)
        comp = sg.apply(t, ps_col)  # sum_z p_t(x,z) m(z) p_s(z,y) = S(t) p_s(., y)
        worst = max(worst, float(np.max(np.abs(sg.kernel_column(t + s, y) - comp))))
    return worst


@dataclass
class SemigroupAxiomReport:
    """Worst residuals of the structural properties on sampled inputs."""

    chapman_kolmogorov: float
    semigroup_law: float
    positivity: float  # largest negative excursion of S(t) phi for phi >= 0
    sub_markov: float  # largest excursion of S(t) phi outside [0, 1] for phi in [0, 1]
    symmetry: float  # max |p_t(x, y) - p_t(y, x)|
    tolerances: dict

    @property
    def passed(self) -> bool:
        return all(getattr(self, k) <= v for k, v in self.tolerances.items())

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.tolerances}
        out.update(passed=self.passed, tolerances=self.tolerances)
        return out


AXIOM_TOLERANCES = {
    "chapman_kolmogorov": 1e-8,
    "semigroup_law": 1e-8,
    "positivity": 1e-12,
    "sub_markov": 1e-12,
    "symmetry": 1e-10,
}


def check_semigroup_axioms(sg: SemigroupOperator, times, rng: np.random.Generator, samples: int = 4,
                           tolerances: Optional[dict] = None) -> SemigroupAxiomReport:
    """Chapman-Kolmogorov, semigroup law, positivity, sub-Markov bound and kernel symmetry.

    Every pair t <= s from ``times`` is tested; random test vectors come from ``rng``.
    """
    times = sorted(float(t) for t in times)
    tol = dict(AXIOM_TOLERANCES if tolerances is None else tolerances)
    ck = law = neg = markov = sym = 0.0
    cols = None if sg.n <= DENSE_LIMIT else sorted(rng.choice(sg.n, size=min(sg.n, 8), replace=False).tolist())
    for i, t in enumerate(times):
        phi = rng.random((sg.n, samples))
        st = sg.apply(t, phi)
        neg = max(neg, float(-st.min()))
        markov = max(markov, float(-st.min()), float(st.max() - 1.0))
        if sg.n <= DENSE_LIMIT:
            k = sg.kernel(t)
            sym = max(sym, float(np.max(np.abs(k - k.T))))
        else:
            for y in cols:
                col = sg.kernel_column(t, y)
                row = np.array([sg.kernel_column(t, x)[y] for x in cols])
                sym = max(sym, float(np.max(np.abs(col[cols] - row))))
        for s in times[i:]:
            ck = max(ck, check_chapman_kolmogorov(sg, t, s, cols))
            law = max(law, float(np.max(np.abs(sg.apply(t + s, phi) - sg.apply(t, sg.apply(s, phi))))))
    return SemigroupAxiomReport(ck, law, max(neg, 0.0), max(markov, 0.0), sym, tol)
