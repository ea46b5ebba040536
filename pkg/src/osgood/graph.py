"""Finite weighted graphs over discrete measure spaces.

A graph is a symmetric nonnegative weight matrix ``b`` with zero diagonal
together with a strictly positive vertex measure ``m``. The formal
Laplacian acts as

    (L phi)(x) = 1/m(x) * sum_y b(x, y) * (phi(x) - phi(y)).
"""

from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph  # noqa: F401  (registers sp.csgraph)

__all__ = [
    "GraphError",
    "WeightedGraph",
    "VolumeGrowthFit",
    "DistanceResult",
    "apply_laplacian",
    "weighted_degree",
    "combinatorial_distance",
    "fit_volume_growth",
    "path_graph",
    "cycle_graph",
    "grid_graph",
    "torus_graph",
    "star_graph",
    "empty_graph",
    "random_connected_graph",
    "graph_from_spec",
]


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    vertices: tuple
    weights: sp.csr_matrix
    measure: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.vertices)
        b = sp.csr_matrix(self.weights, dtype=float)
        m = np.asarray(self.measure, dtype=float).ravel()
        if b.shape != (n, n):
            raise GraphError(f"weight matrix shape {b.shape} does not match {n} vertices")
        if m.shape != (n,):
            raise GraphError(f"measure has {m.size} entries for {n} vertices")
        if np.any(~np.isfinite(m)) or np.any(m <= 0):
            raise GraphError("measure must be finite and strictly positive (full support)")
        b.eliminate_zeros()
        if b.nnz and (np.any(b.data < 0) or np.any(~np.isfinite(b.data))):
            raise GraphError("edge weights must be finite and nonnegative")
        if np.any(b.diagonal() != 0):
            raise GraphError("b(x, x) must vanish (no self-loops)")
        if (b - b.T).count_nonzero() and abs(b - b.T).max() > 0:
            raise GraphError("edge weights must be symmetric")
        if len(set(self.vertices)) != n:
            raise GraphError("vertex ids must be unique")
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "weights", b)
        object.__setattr__(self, "measure", m)
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.vertices)})
        m.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index(self, vertex) -> int:
        if isinstance(vertex, (int, np.integer)) and vertex not in self._index:
            if 0 <= vertex < self.n:
                return int(vertex)
        try:
            return self._index[vertex]
        except KeyError:
            raise GraphError(f"unknown vertex {vertex!r}") from None

    def indices(self, vertices) -> np.ndarray:
        return np.array([self.index(v) for v in vertices], dtype=int)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=1)).ravel()

    def laplacian_matrix(self) -> sp.csr_matrix:
        """Sparse matrix of L, i.e. M^{-1} (D - B)."""
        deg = self.row_sums()
        lap = sp.diags(deg) - self.weights
        return sp.csr_matrix(sp.diags(1.0 / self.measure) @ lap)

    def symmetric_laplacian(self) -> sp.csr_matrix:
        """M^{1/2} L M^{-1/2}, symmetric and similar to L."""
        s = 1.0 / np.sqrt(self.measure)
        lap = sp.diags(self.row_sums()) - self.weights
        return sp.csr_matrix(sp.diags(s) @ lap @ sp.diags(s))

    def mass(self, subset=None) -> float:
        if subset is None:
            return float(self.measure.sum())
        return float(self.measure[self.indices(subset)].sum())

    def components(self) -> np.ndarray:
        _, labels = sp.csgraph.connected_components(self.weights, directed=False)
        return labels

    def is_connected(self) -> bool:
        return self.n == 0 or int(self.components().max()) == 0


def apply_laplacian(g: WeightedGraph, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (g.n,):
        raise GraphError(f"expected a vector of length {g.n}, got shape {phi.shape}")
    b = g.weights
    return (g.row_sums() * phi - b @ phi) / g.measure


def weighted_degree(g: WeightedGraph) -> tuple[np.ndarray, float]:
    """Deg(x) = sum_y b(x, y) / m(x), with its supremum."""
    deg = g.row_sums() / g.measure
    return deg, float(deg.max(initial=0.0))


@dataclass
class DistanceResult:
    distances: np.ndarray  # float so that unreachable vertices can be inf
    connected: bool

    def __iter__(self):
        return iter((self.distances, self.connected))


def combinatorial_distance(g: WeightedGraph, x) -> DistanceResult:
    """Breadth-first hop distances from ``x``; unreachable vertices get inf."""
    src = g.index(x)
    b = g.weights
    dist = np.full(g.n, np.inf)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        nbrs = b.indices[b.indptr[u] : b.indptr[u + 1]]
        for v in nbrs:
            if dist[v] == np.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return DistanceResult(dist, bool(np.all(np.isfinite(dist))))


@dataclass
class VolumeGrowthFit:
    basepoint: object
    theta: float
    d: float
    r0: float
    radii: np.ndarray
    volumes: np.ndarray
    residuals: np.ndarray  # d * r**theta - V_r on the window

    def to_dict(self):
        return {
            "basepoint": self.basepoint,
            "theta": self.theta,
            "d": self.d,
            "r0": self.r0,
            "radii": self.radii.tolist(),
            "volumes": self.volumes.tolist(),
            "residuals": self.residuals.tolist(),
        }


def ball_volumes(g: WeightedGraph, x, r_max: int) -> np.ndarray:
    dist, _ = combinatorial_distance(g, x)
    radii = np.arange(1, r_max + 1)
    finite = np.isfinite(dist)
    order = np.argsort(dist[finite], kind="stable")
    d_sorted = dist[finite][order]
    cum = np.cumsum(g.measure[finite][order])
    idx = np.searchsorted(d_sorted, radii, side="right") - 1
    return cum[idx]


def fit_volume_growth(g: WeightedGraph, x, r_max: int) -> VolumeGrowthFit:
    """Least-squares log-log slope of V_r(x) over radii in [r_max/2, r_max].

    ``d`` is the smallest constant with V_r <= d r^theta on that window.
    """
    if r_max < 2:
        raise GraphError("r_max must be at least 2")
    vols = ball_volumes(g, x, r_max)
    radii = np.arange(1, r_max + 1, dtype=float)
    lo = int(np.ceil(r_max / 2))
    win = radii >= lo
    lr, lv = np.log(radii[win]), np.log(vols[win])
    if np.ptp(lv) == 0:
        theta = 0.0
    else:
        theta = float(np.polyfit(lr, lv, 1)[0])
    d = float(np.max(vols[win] / radii[win] ** theta))
    return VolumeGrowthFit(
        basepoint=x,
        theta=theta,
        d=d,
        r0=float(lo - 1),
        radii=radii[win],
        volumes=vols[win],
        residuals=d * radii[win] ** theta - vols[win],
    )


# ---------------------------------------------------------------------------
# generators


def _from_edges(vertices, edges, weights=None, measure=None) -> WeightedGraph:
    n = len(vertices)
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=float)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    b = sp.coo_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n)).tocsr()
    m = np.ones(n) if measure is None else np.broadcast_to(np.asarray(measure, float), (n,)).copy()
    return WeightedGraph(tuple(vertices), b, m)


def empty_graph(n: int = 1, measure=None) -> WeightedGraph:
    """Edgeless graph: L = 0 and the semigroup is the identity."""
    return _from_edges(list(range(n)), np.zeros((0, 2), int), measure=measure)


def path_graph(n: int, weight: float = 1.0, measure=None, centered: bool = False) -> WeightedGraph:
    """Path on n vertices; ``centered`` labels them -(n//2) .. n//2."""
    labels = list(range(-(n // 2), n - n // 2)) if centered else list(range(n))
    edges = [(i, i + 1) for i in range(n - 1)]
    return _from_edges(labels, edges, np.full(len(edges), weight), measure)


def cycle_graph(n: int, weight: float = 1.0, measure=None) -> WeightedGraph:
    if n < 3:
        raise GraphError("a cycle needs at least 3 vertices")
    edges = [(i, (i + 1) % n) for i in range(n)]
    return _from_edges(list(range(n)), edges, np.full(n, weight), measure)


def _lattice(shape: Sequence[int], periodic: bool, weight: float, measure) -> WeightedGraph:
    shape = tuple(int(s) for s in shape)
    coords = list(itertools.product(*(range(s) for s in shape)))
    idx = {c: i for i, c in enumerate(coords)}
    edges = []
    for c in coords:
        for axis, size in enumerate(shape):
            nxt = list(c)
            nxt[axis] += 1
            if nxt[axis] == size:
                if not periodic or size < 3:
                    continue
                nxt[axis] = 0
            edges.append((idx[c], idx[tuple(nxt)]))
    labels = [",".join(map(str, c)) for c in coords]
    return _from_edges(labels, edges, np.full(len(edges), weight), measure)


def grid_graph(shape: Sequence[int], weight: float = 1.0, measure=None) -> WeightedGraph:
    """Rectangular patch of Z^d; vertex ids are 'i,j,...'."""
    return _lattice(shape, False, weight, measure)


def torus_graph(shape: Sequence[int], weight: float = 1.0, measure=None) -> WeightedGraph:
    """Discrete torus (Z/n1) x ... x (Z/nd)."""
    return _lattice(shape, True, weight, measure)


def star_graph(k: int, weight: float = 1.0, center_mass: float = 1.0, leaf_mass: float = 1.0) -> WeightedGraph:
    edges = [(0, i) for i in range(1, k + 1)]
    m = np.full(k + 1, float(leaf_mass))
    m[0] = center_mass
    return _from_edges(list(range(k + 1)), edges, np.full(k, weight), m)


def random_connected_graph(n: int, rng: np.random.Generator, extra_edges: Optional[int] = None,
                           weight_range=(0.1, 2.0), mass_range=(0.5, 2.0)) -> WeightedGraph:
    """Random spanning tree plus extra random edges, random weights and masses."""
    if n == 1:
        return empty_graph(1, measure=rng.uniform(*mass_range, size=1))
    perm = rng.permutation(n)
    edges = {tuple(sorted((int(perm[i]), int(perm[rng.integers(0, i)])))) for i in range(1, n)}
    extra = n if extra_edges is None else extra_edges
    for _ in range(extra):
        u, v = rng.choice(n, size=2, replace=False)
        edges.add(tuple(sorted((int(u), int(v)))))
    edges = sorted(edges)
    w = rng.uniform(*weight_range, size=len(edges))
    m = rng.uniform(*mass_range, size=n)
    return _from_edges(list(range(n)), edges, w, m)


_GENERATORS = {"path", "cycle", "grid", "torus", "star", "empty", "random"}


def graph_from_spec(spec: dict, base_dir: Optional[Path] = None,
                    rng: Optional[np.random.Generator] = None) -> WeightedGraph:
    """Graph from a config entry: a built-in generator or edge/measure CSV files.

    The ``random`` generator uses ``spec["seed"]`` if given, else ``rng``.
    """
    spec = dict(spec)
    if "generator" in spec:
        kind = spec.pop("generator")
        weight = float(spec.pop("weight", 1.0))
        measure = spec.pop("measure", None)
        if kind == "path":
            g = path_graph(int(spec.pop("n")), weight, measure, bool(spec.pop("centered", False)))
        elif kind == "cycle":
            g = cycle_graph(int(spec.pop("n")), weight, measure)
        elif kind in ("grid", "torus"):
            shape = spec.pop("shape")
            g = (grid_graph if kind == "grid" else torus_graph)(shape, weight, measure)
        elif kind == "star":
            g = star_graph(int(spec.pop("k")), weight, float(spec.pop("center_mass", 1.0)),
                           float(spec.pop("leaf_mass", 1.0)))
        elif kind == "empty":
            g = empty_graph(int(spec.pop("n", 1)), measure)
        elif kind == "random":
            if measure is not None:
                raise GraphError("random graphs draw their own measure")
            seed = spec.pop("seed", None)
            if seed is not None:
                rng = np.random.default_rng(int(seed))
            elif rng is None:
                rng = np.random.default_rng(0)
            extra = spec.pop("extra_edges", None)
            g = random_connected_graph(int(spec.pop("n")), rng, None if extra is None else int(extra))
        else:
            raise GraphError(f"unknown generator {kind!r}; choose from {sorted(_GENERATORS)}")
        if spec:
            raise GraphError(f"unknown graph keys: {sorted(spec)}")
        return g
    edges = spec.pop("edges", None)
    if edges is None:
        raise GraphError("graph spec needs 'generator' or 'edges'")
    measure = spec.pop("measure", None)
    if spec:
        raise GraphError(f"unknown graph keys: {sorted(spec)}")

    def resolve(p):
        p = Path(p)
        return base_dir / p if base_dir is not None and not p.is_absolute() else p

    return load_graph(resolve(edges), resolve(measure) if measure else None)


def _read_csv(path: Path, header: list[str]):
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or [h.strip() for h in got] != header:
            raise GraphError(f"{path}:1: expected header {','.join(header)!r}, got {got!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise GraphError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def load_graph(edges_path, measure_path=None) -> WeightedGraph:
    """Read ``src,dst,weight`` edges (each undirected edge once) and ``vertex,mass``."""
    edges_path = Path(edges_path)
    vertices: dict[str, int] = {}
    rows, cols, ws = [], [], []

    def vid(name):
        return vertices.setdefault(name, len(vertices))

    seen = set()
    for lineno, (src, dst, w) in _read_csv(edges_path, ["src", "dst", "weight"]):
        try:
            weight = float(w)
        except ValueError:
            raise GraphError(f"{edges_path}:{lineno}: weight {w!r} is not a number") from None
        if not np.isfinite(weight) or weight < 0:
            raise GraphError(f"{edges_path}:{lineno}: weight must be finite and nonnegative")
        if src == dst:
            raise GraphError(f"{edges_path}:{lineno}: self-loop at {src!r}")
        key = frozenset((src, dst))
        if key in seen:
            raise GraphError(f"{edges_path}:{lineno}: edge {src}-{dst} listed twice")
        seen.add(key)
        i, j = vid(src), vid(dst)
        rows += [i, j]
        cols += [j, i]
        ws += [weight, weight]
    masses = {}
    if measure_path is not None:
        measure_path = Path(measure_path)
        for lineno, (v, mass) in _read_csv(measure_path, ["vertex", "mass"]):
            try:
                mv = float(mass)
            except ValueError:
                raise GraphError(f"{measure_path}:{lineno}: mass {mass!r} is not a number") from None
            if not (np.isfinite(mv) and mv > 0):
                raise GraphError(f"{measure_path}:{lineno}: mass must be positive")
            vid(v)
            masses[v] = mv
    n = len(vertices)
    b = sp.coo_matrix((ws, (rows, cols)), shape=(n, n)).tocsr()
    names = sorted(vertices, key=vertices.get)
    m = np.array([masses.get(v, 1.0) for v in names])
    return WeightedGraph(tuple(names), b, m)
