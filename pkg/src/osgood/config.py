"""Run configuration for the command line front end.

A run config is a JSON object::

    {
      "problem":  {"graph": {...}}  or  {"kernel": {...}},
      "source":   {"kind": "power", "alpha": 1.0},
      "initial":  {"kind": "point-mass", "vertex": 0, "height": 4.0},
      "analysis": {"t_min": 0.01, "t_max": 100.0, "horizon": 2.0},
      "output":   "out",
      "seed":     0
    }

Relative file paths are resolved against the directory of the config file.
Unknown keys are rejected at every level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import GraphError, WeightedGraph, graph_from_spec
from .kernel_models import KernelError, KernelModel, KernelSemigroup, kernel_model_from_spec
from .semigroup import SemigroupOperator
from .source_term import SourceTerm, SourceTermError, source_from_spec

__all__ = ["ConfigError", "RunConfig", "Problem", "ANALYSIS_DEFAULTS"]


class ConfigError(ValueError):
    pass


ANALYSIS_DEFAULTS = {
    # certificate search
    "t_min": 1e-3,
    "t_max": 1e4,
    "t_grid": None,  # number of grid points; None means per_decade
    "per_decade": 200,
    # simulation
    "horizon": None,
    "rtol": 1e-6,
    "atol": 1e-12,
    "threshold": 1e8,
    "p": 2.0,
    "dump_states": False,
    # criteria
    "basepoint": None,
    "r_max": None,
    "kappa": None,
    "gamma": None,
    "asymptotics_grid": [1.0, 1e6, 200],  # start, stop, points (geometric)
    # validation
    "validate_times": [0.01, 0.1, 1.0],
    "sample_points": 8,
    "axiom_tol": 5e-3,
    "jensen_cases": 50,
    "jensen_times": [0.1, 1.0, 10.0],
}

_TOP_KEYS = {"problem", "source", "initial", "analysis", "output", "seed"}
_POSITIVE = {"t_min", "t_max", "per_decade", "rtol", "threshold", "p", "axiom_tol"}


def _base(path: Optional[Path]) -> Optional[Path]:
    return None if path is None else path.parent


@dataclass
class Problem:
    """The resolved problem: a semigroup plus whatever it was built from."""

    kind: str  # "graph" or "kernel"
    semigroup: object
    graph: Optional[WeightedGraph] = None
    model: Optional[KernelModel] = None


@dataclass
class RunConfig:
    problem: dict
    source: dict
    initial: dict = field(default_factory=lambda: {"kind": "constant", "c": 1.0})
    analysis: dict = field(default_factory=dict)
    output: str = "out"
    seed: int = 0
    path: Optional[Path] = None

    # -- parsing ---------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, path: Optional[Path] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("problem", "source"):
            if key not in data:
                raise ConfigError(f"config needs a {key!r} section")
        problem = data["problem"]
        if not isinstance(problem, dict) or len(problem) != 1 or next(iter(problem)) not in ("graph", "kernel"):
            raise ConfigError("problem must be {'graph': {...}} or {'kernel': {...}}")
        analysis = dict(data.get("analysis", {}))
        unknown = set(analysis) - set(ANALYSIS_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown analysis keys: {sorted(unknown)}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        cfg = cls(problem, data["source"], data.get("initial", {"kind": "constant", "c": 1.0}),
                  analysis, str(data.get("output", "out")), seed, path)
        cfg._check_analysis()
        cfg._check_files()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        return cls.from_dict(data, path)

    def to_dict(self) -> dict:
        return {"problem": self.problem, "source": self.source, "initial": self.initial,
                "analysis": self.analysis, "output": self.output, "seed": self.seed}

    def option(self, key):
        return self.analysis.get(key, ANALYSIS_DEFAULTS[key])

    def with_analysis(self, **overrides) -> "RunConfig":
        analysis = dict(self.analysis)
        analysis.update({k: v for k, v in overrides.items() if v is not None})
        cfg = RunConfig(self.problem, self.source, self.initial, analysis, self.output, self.seed, self.path)
        cfg._check_analysis()
        return cfg

    def _check_analysis(self):
        for key in _POSITIVE:
            v = self.option(key)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"analysis.{key} must be a positive number, got {v!r}")
        for key in ("horizon", "t_grid", "r_max", "kappa", "gamma"):
            v = self.option(key)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"analysis.{key} must be positive, got {v!r}")
        if not self.option("t_min") < self.option("t_max"):
            raise ConfigError("analysis.t_min must be below analysis.t_max")

    def _resolve(self, p) -> Path:
        p = Path(p)
        base = _base(self.path)
        return base / p if base is not None and not p.is_absolute() else p

    def _check_files(self):
        refs = []
        spec = self.problem.get("graph", {})
        refs += [spec[k] for k in ("edges", "measure") if isinstance(spec.get(k), str)]
        if "path" in self.source:
            refs.append(self.source["path"])
        if self.initial.get("kind") == "file":
            refs.append(self.initial.get("path", ""))
        for ref in refs:
            if not self._resolve(ref).is_file():
                raise ConfigError(f"referenced file does not exist: {ref}")

    # -- building --------------------------------------------------------
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def build_source(self) -> SourceTerm:
        try:
            return source_from_spec(self.source, _base(self.path))
        except (SourceTermError, KeyError, TypeError) as exc:
            raise ConfigError(f"source: {exc}") from None

    def build_problem(self) -> Problem:
        try:
            if "graph" in self.problem:
                spec = dict(self.problem["graph"])
                method = spec.pop("method", "auto")
                g = graph_from_spec(spec, _base(self.path), self.rng())
                return Problem("graph", SemigroupOperator(g, method), graph=g)
            model = kernel_model_from_spec(self.problem["kernel"])
            return Problem("kernel", KernelSemigroup(model), model=model)
        except (GraphError, KernelError, KeyError, TypeError) as exc:
            raise ConfigError(f"problem: {exc}") from None

    def build_initial(self, problem: Problem) -> np.ndarray:
        sg = problem.semigroup
        spec = dict(self.initial)
        kind = spec.pop("kind", None)
        try:
            if kind == "constant":
                a = np.full(sg.n, float(spec.pop("c")))
            elif kind == "point-mass":
                a = np.zeros(sg.n)
                a[sg.index(spec.pop("vertex"))] = float(spec.pop("height"))
            elif kind == "values":
                a = np.asarray(spec.pop("values"), dtype=float)
            elif kind == "file":
                a = self._read_initial(self._resolve(spec.pop("path")), sg)
            else:
                raise ConfigError(f"unknown initial kind {kind!r}")
        except (KeyError, IndexError) as exc:
            raise ConfigError(f"initial: missing or invalid entry {exc}") from None
        except (GraphError, KernelError) as exc:
            raise ConfigError(f"initial: {exc}") from None
        if spec:
            raise ConfigError(f"unknown initial keys: {sorted(spec)}")
        if a.shape != (sg.n,):
            raise ConfigError(f"initial value has {a.size} entries, the problem has {sg.n}")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ConfigError("initial value must be finite and nonnegative")
        return a

    @staticmethod
    def _read_initial(path: Path, sg) -> np.ndarray:
        """CSV with header ``vertex,value``; unlisted vertices start at zero."""
        a = np.zeros(sg.n)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["vertex", "value"]:
                raise ConfigError(f"{path}:1: expected header 'vertex,value'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 2 columns")
                label = row[0].strip()
                try:
                    idx = sg.index(label)
                except Exception:
                    try:
                        idx = sg.index(int(label))
                    except Exception:
                        raise ConfigError(f"{path}:{lineno}: unknown vertex {label!r}") from None
                try:
                    a[idx] = float(row[1])
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: value {row[1]!r} is not a number") from None
        return a
