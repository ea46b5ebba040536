"""Reaction terms f and their Osgood functional F(t) = int_t^inf ds / f(s).

Every source term here is convex, vanishes at zero, is strictly positive on
(0, inf) and has an integrable reciprocal at infinity. Those properties are
what make F a decreasing bijection of (0, inf) onto itself, so F and its
inverse are always well defined.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SourceTermError",
    "NonOsgoodError",
    "ConvexityError",
    "SourceTerm",
    "Power",
    "ExpMinusOne",
    "PowerOverExp",
    "Tabulated",
    "OsgoodFunctional",
    "AsymptoticsReport",
    "eval_f",
    "eval_F",
    "eval_F_inv",
    "invert_decreasing",
    "check_asymptotics",
    "source_from_spec",
]


class SourceTermError(ValueError):
    """Invalid reaction term or argument outside its domain."""


class NonOsgoodError(SourceTermError):
    """The reciprocal 1/f is not integrable at infinity."""


class ConvexityError(SourceTermError):
    """Tabulated samples do not describe a convex increasing function."""


def _check_positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise SourceTermError(f"{name} must be positive, got {value!r}")


class SourceTerm:
    """Base class of the reaction families.

    Subclasses implement ``f``, ``F`` and, where a closed form exists,
    ``F_inv``. The default ``F_inv`` inverts ``F`` numerically.
    """

    #: optional (kappa, gamma) with F(1/t) <= kappa * t**gamma for large t
    osgood_asymptotics: Optional[tuple[float, float]] = None
    kind: str = "abstract"

    def f(self, t):
        raise NotImplementedError

    def F(self, t):
        raise NotImplementedError

    def f_array(self, u: np.ndarray) -> np.ndarray:
        """f on a float array already known to be nonnegative, without checks."""
        return np.asarray(self.f(u), dtype=float)

    def F_inv(self, y):
        y = np.asarray(y, dtype=float)
        _domain(y, "F_inv")
        if y.ndim == 0:
            return invert_decreasing(self.F, self.f, float(y))
        return np.array([invert_decreasing(self.F, self.f, float(v)) for v in y.ravel()]).reshape(y.shape)

    def __call__(self, t):
        return self.f(t)

    def to_spec(self) -> dict:
        raise NotImplementedError


def _domain(t, what, strict=True):
    t = np.asarray(t)
    bad = t <= 0 if strict else t < 0
    if np.any(bad) or np.any(np.isnan(t)):
        rel = ">" if strict else ">="
        raise SourceTermError(f"{what}: argument must be {rel} 0, got {t!r}")


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class Power(SourceTerm):
    """f(t) = t**(1 + alpha)."""

    alpha: float
    kind = "power"

    def __post_init__(self):
        if not self.alpha > 0:
            # alpha = 0 is the linear source: the solution is e^t times the
            # heat flow and never blows up.
            raise NonOsgoodError(f"power source needs alpha > 0, got {self.alpha}")

    @property
    def osgood_asymptotics(self):
        return (1.0 / self.alpha, self.alpha)

    def f(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "f", strict=False)
        return _scalar_or_array(t ** (1.0 + self.alpha))

    def f_array(self, u):
        return u ** (1.0 + self.alpha)

    def F(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "F")
        return _scalar_or_array(1.0 / (self.alpha * t**self.alpha))

    def F_inv(self, y):
        y = np.asarray(y, dtype=float)
        _domain(y, "F_inv")
        return _scalar_or_array((1.0 / (self.alpha * y)) ** (1.0 / self.alpha))

    def to_spec(self):
        return {"kind": "power", "alpha": self.alpha}


@dataclass(frozen=True)
class ExpMinusOne(SourceTerm):
    """f(t) = e**t - 1, for which F(t) = -log(1 - e**-t) is its own inverse."""

    kind = "exp_minus_one"

    def f(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "f", strict=False)
        with np.errstate(over="ignore"):
            return _scalar_or_array(np.expm1(t))

    def f_array(self, u):
        return np.expm1(u)

    @staticmethod
    def _involution(t):
        # -log(1 - e^-t), split at log 2 to keep full precision at both ends
        small = t < math.log(2.0)
        with np.errstate(divide="ignore"):
            a = -np.log(-np.expm1(-np.where(small, t, 1.0)))
            b = -np.log1p(-np.exp(-np.where(small, 1.0, t)))
        return np.where(small, a, b)

    def F(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "F")
        return _scalar_or_array(self._involution(t))

    def F_inv(self, y):
        y = np.asarray(y, dtype=float)
        _domain(y, "F_inv")
        return _scalar_or_array(self._involution(y))

    def to_spec(self):
        return {"kind": "exp_minus_one"}


@dataclass(frozen=True)
class PowerOverExp(SourceTerm):
    """f(t) = t**2 * exp(-1/t): F(t) = e**(1/t) - 1, F_inv(y) = 1 / log(1 + y)."""

    kind = "power_over_exp"

    def f(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "f", strict=False)
        with np.errstate(divide="ignore"):
            out = np.where(t > 0, t * t * np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        return _scalar_or_array(out)

    def F(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "F")
        with np.errstate(over="ignore"):
            return _scalar_or_array(np.expm1(1.0 / t))

    def F_inv(self, y):
        y = np.asarray(y, dtype=float)
        _domain(y, "F_inv")
        return _scalar_or_array(1.0 / np.log1p(y))

    def to_spec(self):
        return {"kind": "power_over_exp"}


@dataclass(frozen=True, eq=False)
class Tabulated(SourceTerm):
    """Piecewise-linear interpolant of samples (t_i, f(t_i)).

    Below the first sample the interpolant runs linearly to the origin.
    Beyond the last sample it is continued by the power law through the
    last two samples, f(s) = f_n (s / t_n)**p, whose exponent must exceed 1
    for 1/f to be integrable. F is integrated exactly segment by segment:
    on a linear piece with slope k, int ds / f = log(f_b / f_a) / k.
    """

    t: np.ndarray
    values: np.ndarray
    osgood_asymptotics: Optional[tuple[float, float]] = None
    source_path: Optional[str] = None
    kind = "tabulated"
    _tail_exponent: float = field(init=False, repr=False)
    _slopes: np.ndarray = field(init=False, repr=False)
    _suffix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.shape != v.shape or t.size < 2:
            raise SourceTermError("tabulated source needs at least two (t, f) samples of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise SourceTermError("tabulated samples must be finite")
        if t[0] < 0:
            raise SourceTermError("tabulated t must be nonnegative")
        if t[0] == 0:
            if v[0] != 0:
                raise SourceTermError(f"f(0) must be 0, got {v[0]}")
        else:
            t = np.concatenate([[0.0], t])
            v = np.concatenate([[0.0], v])
        dt = np.diff(t)
        if np.any(dt <= 0):
            row = int(np.argmax(dt <= 0)) + 1
            raise SourceTermError(f"tabulated t must be strictly increasing (sample {row})")
        dv = np.diff(v)
        if np.any(dv <= 0):
            raise ConvexityError("tabulated f must be strictly increasing and positive on (0, inf)")
        slopes = dv / dt
        # slopes of a convex function are nondecreasing; tolerate rounding
        drop = slopes[:-1] - slopes[1:]
        if np.any(drop > 1e-12 * np.maximum(np.abs(slopes[1:]), 1.0)):
            i = int(np.argmax(drop > 1e-12 * np.maximum(np.abs(slopes[1:]), 1.0)))
            raise ConvexityError(f"tabulated f is not convex near t = {t[i + 1]:g}")
        p = math.log(v[-1] / v[-2]) / math.log(t[-1] / t[-2]) if t[-2] > 0 else 1.0
        if not p > 1.0:
            raise NonOsgoodError(
                f"tail exponent {p:.6g} <= 1 through the last two samples: 1/f is not integrable"
            )
        if p * v[-1] / t[-1] < slopes[-1] * (1 - 1e-12):
            raise ConvexityError("power-law continuation beyond the last sample breaks convexity")
        pieces = np.log(v[2:] / v[1:-1]) / slopes[1:]
        suffix = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_tail_exponent", p)
        object.__setattr__(self, "_slopes", slopes)
        # _suffix[i] = int_{t_i}^{t_n} ds / f for i >= 1
        object.__setattr__(self, "_suffix", np.concatenate([[np.inf], suffix]))

    @classmethod
    def from_function(cls, func, grid, **kw):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.asarray(func(grid), dtype=float), **kw)

    @classmethod
    def from_csv(cls, path, **kw):
        path = Path(path)
        ts, fs = [], []
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["t", "f"]:
                raise SourceTermError(f"{path}:1: expected header 't,f', got {header!r}")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise SourceTermError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
                try:
                    ts.append(float(row[0]))
                    fs.append(float(row[1]))
                except ValueError:
                    raise SourceTermError(f"{path}:{lineno}: non-numeric entry {row!r}") from None
        try:
            return cls(np.array(ts), np.array(fs), source_path=str(path), **kw)
        except SourceTermError as exc:
            raise type(exc)(f"{path}: {exc}") from None

    @property
    def tail_exponent(self) -> float:
        return self._tail_exponent

    def f(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "f", strict=False)
        tn, vn = self.t[-1], self.values[-1]
        inside = np.interp(np.minimum(t, tn), self.t, self.values)
        out = np.where(t <= tn, inside, vn * (np.maximum(t, tn) / tn) ** self._tail_exponent)
        return _scalar_or_array(out)

    def _F_scalar(self, s: float) -> float:
        tn, vn, p = self.t[-1], self.values[-1], self._tail_exponent
        if s >= tn:
            return tn / (vn * (p - 1.0)) * (tn / s) ** (p - 1.0)
        i = int(np.searchsorted(self.t, s, side="right")) - 1
        k = self._slopes[i]
        fs = self.values[i] + k * (s - self.t[i])
        partial = math.log(self.values[i + 1] / fs) / k
        return partial + self._suffix[i + 1] + tn / (vn * (p - 1.0))

    def F(self, t):
        t = np.asarray(t, dtype=float)
        _domain(t, "F")
        if t.ndim == 0:
            return self._F_scalar(float(t))
        return np.array([self._F_scalar(float(s)) for s in t.ravel()]).reshape(t.shape)

    def to_spec(self):
        if self.source_path is not None:
            return {"kind": "tabulated", "path": self.source_path}
        return {"kind": "tabulated", "t": self.t.tolist(), "f": self.values.tolist()}


def invert_decreasing(F, f, y: float, rtol: float = 1e-12, max_iter: int = 200) -> float:
    """Solve F(x) = y for a decreasing bijection F with F' = -1/f.

    The bracket starts at x = 1 and expands geometrically; bisection on
    log(x) shrinks it until Newton steps (with F' = -1/f) stay inside.
    """
    if not y > 0:
        raise SourceTermError(f"F_inv: argument must be > 0, got {y!r}")
    lo = hi = 1.0
    if F(1.0) > y:
        while F(hi) > y:
            lo, hi = hi, hi * 4.0
            if hi > 1e300:
                raise SourceTermError(f"F_inv: no bracket found for y={y!r}")
    else:
        while F(lo) < y:
            lo, hi = lo / 4.0, lo
            if lo < 1e-300:
                raise SourceTermError(f"F_inv: no bracket found for y={y!r}")
    x = math.sqrt(lo * hi)
    for _ in range(max_iter):
        r = F(x) - y
        if abs(r) <= rtol * y:
            return x
        if r > 0:
            lo = x
        else:
            hi = x
        step = r * f(x)  # Newton: x - r / F'(x)
        xn = x + step
        if not (lo < xn < hi) or abs(step) > 0.5 * (hi - lo):
            xn = math.sqrt(lo * hi)
        if hi / lo - 1.0 < 1e-15:
            return xn
        x = xn
    return x


@dataclass(frozen=True)
class OsgoodFunctional:
    """F(t) = int_t^inf ds / f(s) bound to a source term."""

    owner: SourceTerm
    rtol: float = 1e-10

    def __call__(self, t):
        return self.owner.F(t)

    def inverse(self, y):
        return self.owner.F_inv(y)

    def derivative(self, t):
        return -1.0 / np.asarray(self.owner.f(t))


def eval_f(f: SourceTerm, t):
    return f.f(t)


def eval_F(F, t):
    if isinstance(F, SourceTerm):
        F = OsgoodFunctional(F)
    return F(t)


def eval_F_inv(F, y):
    if isinstance(F, SourceTerm):
        F = OsgoodFunctional(F)
    return F.inverse(y)


@dataclass
class AsymptoticsReport:
    kappa: float
    gamma: float
    holds: bool
    last_violation: Optional[float]
    grid: list = field(repr=False)
    values: list = field(repr=False)  # F(1/t) on the grid

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "gamma": self.gamma,
            "holds_on_grid": self.holds,
            "last_violation": self.last_violation,
            "t_grid": list(self.grid),
            "F_of_inverse_t": list(self.values),
        }


def check_asymptotics(f: SourceTerm, kappa: float, gamma: float, t_grid: Sequence[float]) -> AsymptoticsReport:
    """Compare F(1/t) with kappa * t**gamma on a grid.

    Reports the largest grid point violating the bound, or ``None`` when
    the bound holds at every grid point.
    """
    _check_positive("kappa", kappa)
    _check_positive("gamma", gamma)
    grid = np.asarray(t_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
        raise SourceTermError("t_grid must be a nonempty increasing list of positive reals")
    values = np.asarray(f.F(1.0 / grid), dtype=float)
    # one ulp of slack so that exact identities such as F(1/t) = t / alpha pass
    bound = kappa * grid**gamma
    bad = values > bound * (1 + 4 * np.finfo(float).eps)
    last = float(grid[bad][-1]) if np.any(bad) else None
    return AsymptoticsReport(kappa, gamma, last is None, last, grid.tolist(), values.tolist())


def source_from_spec(spec: dict, base_dir: Optional[Path] = None) -> SourceTerm:
    """Build a source term from its run-config entry."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise SourceTermError(f"source spec needs a 'kind', got {spec!r}")
    kind = spec["kind"]
    extra = set(spec) - {"kind", "alpha", "path", "t", "f", "kappa", "gamma"}
    if extra:
        raise SourceTermError(f"unknown source keys: {sorted(extra)}")
    if kind == "power":
        return Power(float(spec["alpha"]))
    if kind == "exp_minus_one":
        return ExpMinusOne()
    if kind == "power_over_exp":
        return PowerOverExp()
    if kind == "tabulated":
        asym = None
        if "kappa" in spec or "gamma" in spec:
            asym = (float(spec["kappa"]), float(spec["gamma"]))
        if "path" in spec:
            path = Path(spec["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return Tabulated.from_csv(path, osgood_asymptotics=asym)
        return Tabulated(np.asarray(spec["t"]), np.asarray(spec["f"]), osgood_asymptotics=asym)
    raise SourceTermError(f"unknown source kind {kind!r}")
