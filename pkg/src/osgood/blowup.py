"""Blow-up certificates and the asymptotic blow-up criteria.

A certificate is a time T and a set G of positive finite measure with

    mean_G S(T) a  >  F^{-1}(T),

i.e. the average over G of the purely diffusive evolution of the initial
value exceeds the level from which the reaction alone explodes within
time T. Any such pair rules out a global nonnegative mild solution, and T
bounds the existence time from above.

The certificate search below (a geometric grid in T and superlevel sets of
S(T) a as candidate sets) is a numerical strategy only: grid resolution is
not part of the mathematical statement.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .source_term import SourceTerm

__all__ = [
    "BlowupError",
    "CertificateRejected",
    "BlowupCertificate",
    "CriterionVerdict",
    "verify_certificate",
    "search_certificate",
    "recheck_certificate",
    "criterion_graph",
    "criterion_mms",
    "on_diagonal_fit",
    "time_grid",
    "MARGIN_FLOOR",
]

#: strict inequality is enforced with this absolute slack
MARGIN_FLOOR = 1e-12


class BlowupError(ValueError):
    pass


class CertificateRejected(Exception):
    """The pair (T, G) does not satisfy the blow-up inequality."""

    def __init__(self, reason: str, mean: float = math.nan, threshold: float = math.nan):
        super().__init__(reason)
        self.reason = reason
        self.mean = mean
        self.threshold = threshold


@dataclass(frozen=True)
class BlowupCertificate:
    T: float
    G: tuple
    mean_value: float
    threshold: float
    margin: float
    form: str  # "mean" or "pointwise"

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "G": list(self.G),
            "mean": self.mean_value,
            "threshold": self.threshold,
            "margin": self.margin,
            "form": self.form,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BlowupCertificate":
        return cls(float(data["T"]), tuple(data["G"]), float(data["mean"]),
                   float(data["threshold"]), float(data["margin"]), data.get("form", "mean"))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _nonneg_initial(a, n):
    a = np.asarray(a, dtype=float)
    if a.shape != (n,):
        raise BlowupError(f"initial value must have length {n}, got shape {a.shape}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise BlowupError("initial value must be finite and nonnegative")
    return a


def verify_certificate(sg, f: SourceTerm, a, T: float, G: Sequence) -> BlowupCertificate:
    """Check mean_G S(T) a > F^{-1}(T) from scratch.

    Raises :class:`CertificateRejected` when the inequality fails and
    :class:`BlowupError` for malformed input.
    """
    a = _nonneg_initial(a, sg.n)
    if not T > 0:
        raise BlowupError(f"T must be positive, got {T}")
    G = list(G)
    if not G:
        raise BlowupError("G must be nonempty")
    idx = np.array([sg.index(v) for v in G], dtype=int)
    if len(set(idx.tolist())) != len(idx):
        raise BlowupError("G lists a vertex twice")
    m = sg.measure[idx]
    if not m.sum() > 0:
        raise BlowupError("G must have positive measure")
    threshold = float(f.F_inv(T))
    if not np.any(a > 0):
        raise CertificateRejected("trivial initial value", 0.0, threshold)
    values = sg.apply(T, a)[idx]
    mean = float(values @ m / m.sum())
    margin = mean - threshold
    if not margin > MARGIN_FLOOR:
        raise CertificateRejected(
            f"mean {mean:.12g} does not exceed F^-1(T) = {threshold:.12g}", mean, threshold
        )
    form = "pointwise" if float(values.min()) - threshold > MARGIN_FLOOR else "mean"
    labels = tuple(sg.labels[i] for i in idx)
    return BlowupCertificate(float(T), labels, mean, threshold, margin, form)


def recheck_certificate(sg, f: SourceTerm, a, cert: BlowupCertificate, rtol: float = 1e-9) -> BlowupCertificate:
    """Re-verify ``cert`` and require the recomputed mean to match within ``rtol``."""
    fresh = verify_certificate(sg, f, a, cert.T, cert.G)
    if abs(fresh.mean_value - cert.mean_value) > rtol * abs(cert.mean_value):
        raise BlowupError(
            f"recomputed mean {fresh.mean_value!r} differs from certified {cert.mean_value!r}"
        )
    return fresh


def time_grid(t_min: float, t_max: float, grid_size: Optional[int] = None, per_decade: int = 200) -> np.ndarray:
    if not (0 < t_min < t_max) or not math.isfinite(t_max):
        raise BlowupError(f"need 0 < t_min < t_max, got ({t_min}, {t_max})")
    if grid_size is None:
        grid_size = max(2, int(math.ceil(per_decade * math.log10(t_max / t_min))) + 1)
    if grid_size < 2:
        raise BlowupError("grid_size must be at least 2")
    return np.geomspace(t_min, t_max, grid_size)


def _values_on_grid(sg, times, a):
    if hasattr(sg, "apply_many"):
        return sg.apply_many(times, a)
    return np.array([sg.apply(t, a) for t in times])


def search_certificate(sg, f: SourceTerm, a, t_range: tuple[float, float], grid_size: Optional[int] = None,
                       per_decade: int = 200, recheck: bool = True) -> Optional[BlowupCertificate]:
    """Smallest grid time T admitting a certificate, or None.

    At each T the candidates are the superlevel sets of S(T) a. Among the
    certifying candidates at the smallest such T the one with the largest
    margin is returned, after an independent recomputation of S(T) a.
    """
    a = _nonneg_initial(a, sg.n)
    times = time_grid(t_range[0], t_range[1], grid_size, per_decade)
    if not np.any(a > 0):
        return None
    thresholds = np.asarray(f.F_inv(times), dtype=float)
    m = sg.measure
    # process the grid in blocks so large graphs do not hold every S(T) a at once
    block = max(1, int(2e6 // max(sg.n, 1)))
    for start in range(0, len(times), block):
        ts = times[start : start + block]
        vals = _values_on_grid(sg, ts, a)
        for k, T in enumerate(ts):
            v = vals[k]
            thr = thresholds[start + k]
            if v.max() - thr <= MARGIN_FLOOR:
                continue
            order = np.argsort(-v, kind="stable")
            vs = v[order]
            means = np.cumsum(vs * m[order]) / np.cumsum(m[order])
            # a superlevel set {v >= lambda} ends where the next value is strictly smaller
            ends = np.flatnonzero(np.append(vs[1:] < vs[:-1], True))
            margins = means[ends] - thr
            ok = margins > MARGIN_FLOOR
            if not np.any(ok):
                continue
            best = ends[ok][int(np.argmax(margins[ok]))]
            G = [sg.labels[i] for i in order[: best + 1]]
            cert = verify_certificate(sg, f, a, float(T), G)
            if recheck:
                other = sg.alternate() if hasattr(sg, "alternate") else sg
                recheck_certificate(other, f, a, cert)
            return cert
    return None


@dataclass(frozen=True)
class CriterionVerdict:
    product: float
    bound: float
    verdict: str  # "blow-up-predicted" or "theorem-silent"
    inputs: dict

    @property
    def predicts_blowup(self) -> bool:
        return self.verdict == "blow-up-predicted"

    def to_dict(self):
        return asdict(self)


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise BlowupError(f"{k} must be positive and finite, got {v}")


def criterion_graph(theta: float, gamma: float) -> CriterionVerdict:
    """Polynomial volume growth of degree theta against F(1/t) <= kappa t^gamma: blow-up iff theta*gamma < 2."""
    _positive(theta=theta, gamma=gamma)
    product = theta * gamma
    verdict = "blow-up-predicted" if product < 2 else "theorem-silent"
    return CriterionVerdict(product, 2.0, verdict, {"theta": theta, "gamma": gamma})


def criterion_mms(alpha: float, beta: float, gamma: float) -> CriterionVerdict:
    """Kernel lower bound with exponents (alpha, beta): blow-up iff alpha*gamma < beta."""
    _positive(alpha=alpha, beta=beta, gamma=gamma)
    product = alpha * gamma
    verdict = "blow-up-predicted" if product < beta else "theorem-silent"
    return CriterionVerdict(product, beta, verdict, {"alpha": alpha, "beta": beta, "gamma": gamma})


def on_diagonal_fit(sg, x, theta: float, t_grid: Sequence[float]) -> tuple[float, float]:
    """c = min over the grid of p_t(x, x) (sqrt(t) log t)^theta, and the minimizing t."""
    ts = np.asarray(t_grid, dtype=float)
    if ts.size == 0 or np.any(ts <= 1) or np.any(np.diff(ts) <= 0):
        raise BlowupError("t_grid must be increasing and lie in (1, inf)")
    if theta < 0:
        raise BlowupError("theta must be nonnegative")
    diag = np.array([sg.heat_kernel(t, x, x).value for t in ts])
    scaled = diag * (np.sqrt(ts) * np.log(ts)) ** theta
    k = int(np.argmin(scaled))
    return float(scaled[k]), float(ts[k])
