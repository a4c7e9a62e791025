"""Weighted point-cloud discretizations of compact sets.

Clouds carry one weight per point: the measure of the cell the point stands
for. Spheres and cubes are weighted by d-dimensional Hausdorff measure, IFS
attractors by their natural self-similar probability measure.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import unit_sphere_area

DEFAULT_POINT_CAP = 2**20
BRUTE_FORCE_LIMIT = 10_000


@dataclass
class PointCloud:
    points: np.ndarray
    weights: np.ndarray
    n: int
    d: float
    label: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        if self.points.shape[0] < 1:
            raise ValueError("a cloud needs at least one point")
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points and weights differ in length")
        if self.points.shape[1] != self.n:
            raise ValueError(f"points have dimension {self.points.shape[1]}, expected n={self.n}")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if not self.weights.sum() > 0:
            raise ValueError("total weight must be positive")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def probability(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def dilate(self, s: float) -> "PointCloud":
        """The cloud of ``s * E`` with weights scaled by ``s**d`` (Hausdorff scaling)."""
        if not s > 0:
            raise ValueError("dilation factor must be positive")
        return PointCloud(s * self.points, self.weights * s**self.d, self.n, self.d,
                          f"{self.label}*{s:g}", self.seed, dict(self.meta))

    def with_weights(self, weights) -> "PointCloud":
        return PointCloud(self.points, weights, self.n, self.d, self.label, self.seed, dict(self.meta))


def _embed(points: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((points.shape[0], n))
    out[:, : points.shape[1]] = points
    return out


def sample_sphere(d: int, n: int, N: int, seed: int = 0) -> PointCloud:
    """N points on the unit sphere S^d (in the first d+1 coordinates of R^n).

    d = 1 uses equally spaced points; d >= 2 uses normalized Gaussian vectors.
    Every point gets weight |S^d| / N.
    """
    if d < 1 or n < d + 1 or N < 2:
        raise ValueError(f"need d >= 1, n >= d+1, N >= 2; got d={d}, n={n}, N={N}")
    if d == 1:
        theta = 2.0 * np.pi * np.arange(N) / N
        pts = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((N, d + 1))
        pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    area = unit_sphere_area(d + 1)
    return PointCloud(_embed(pts, n), np.full(N, area / N), n, d,
                      f"sphere(d={d},N={N})", seed, {"kind": "sphere", "N": N})


def sample_cube(d: int, n: int, m: int, offset=None) -> PointCloud:
    """Midpoint grid with m points per axis on [0,1]^d, each of weight m^-d.

    ``offset`` is either a full n-vector added to every point or an
    (n-d)-vector placed in the trailing coordinates.
    """
    if d < 1 or n < d or m < 1:
        raise ValueError(f"need 1 <= d <= n and m >= 1; got d={d}, n={n}, m={m}")
    axis = (np.arange(m) + 0.5) / m
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = _embed(grid, n)
    if offset is not None:
        off = np.asarray(offset, dtype=float).ravel()
        if off.size == n - d and off.size != n:
            off = np.concatenate([np.zeros(d), off])
        if off.size != n:
            raise ValueError(f"offset must have length {n} or {n - d}")
        pts = pts + off
    return PointCloud(pts, np.full(m**d, float(m) ** (-d)), n, d,
                      f"cube(d={d},m={m})", 0, {"kind": "cube", "m": m})


def union(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate clouds that share n and d."""
    clouds = list(clouds)
    if not clouds:
        raise ValueError("union of no clouds")
    n, d = clouds[0].n, clouds[0].d
    for c in clouds[1:]:
        if c.n != n or c.d != d:
            raise ValueError(f"cannot unite clouds with (n, d) = ({c.n}, {c.d}) and ({n}, {d})")
    if len(clouds) == 1:
        return clouds[0]
    label = "union(" + ",".join(c.label for c in clouds) + ")"
    return PointCloud(np.vstack([c.points for c in clouds]),
                      np.concatenate([c.weights for c in clouds]),
                      n, d, label, clouds[0].seed, {"kind": "union"})


class Similarity(NamedTuple):
    ratio: float
    rotation: np.ndarray
    offset: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.ratio * x @ self.rotation.T + self.offset


@dataclass
class IfsSpec:
    """Contracting similarities x -> L U x + b with pairwise disjoint images."""

    maps: list
    n: int

    def __post_init__(self):
        if not self.maps:
            raise ValueError("an IFS needs at least one map")
        maps = []
        for L, U, b in self.maps:
            U = np.atleast_2d(np.asarray(U, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if not 0 < L < 1:
                raise ValueError(f"contraction ratio {L} outside (0, 1)")
            if U.shape != (self.n, self.n) or b.shape != (self.n,):
                raise ValueError("rotation/offset shapes do not match n")
            if np.max(np.abs(U @ U.T - np.eye(self.n))) > 1e-12:
                raise ValueError("map part is not orthogonal")
            maps.append(Similarity(float(L), U, b))
        self.maps = maps

    @property
    def ratios(self) -> np.ndarray:
        return np.array([m.ratio for m in self.maps])

    def fixed_point(self, i: int = 0) -> np.ndarray:
        L, U, b = self.maps[i]
        return np.linalg.solve(np.eye(self.n) - L * U, b)

    def bounding_ball(self) -> tuple[np.ndarray, float]:
        """A ball B(c, R) mapped into itself by every map, hence containing the attractor."""
        c = np.mean([self.fixed_point(i) for i in range(len(self.maps))], axis=0)
        R = max(np.linalg.norm(m(c[None])[0] - c) / (1.0 - m.ratio) for m in self.maps)
        return c, float(R)

    def check_disjoint(self) -> None:
        c, R = self.bounding_ball()
        centers = [m(c[None])[0] for m in self.maps]
        for i in range(len(self.maps)):
            for j in range(i + 1, len(self.maps)):
                gap = np.linalg.norm(centers[i] - centers[j]) - (self.maps[i].ratio + self.maps[j].ratio) * R
                if gap <= 1e-12 * max(R, 1.0):
                    raise ValueError(f"images of maps {i} and {j} may overlap; "
                                     "the IFS is not strictly self-similar")


def cantor_spec() -> IfsSpec:
    """Middle-thirds Cantor set."""
    one = np.eye(1)
    return IfsSpec([(1 / 3, one, [0.0]), (1 / 3, one, [2 / 3])], n=1)


def cantor_dust_spec() -> IfsSpec:
    """Four maps of ratio 1/4 at the corners of the unit square (dimension 1)."""
    I2 = np.eye(2)
    corners = [(0.0, 0.0), (0.75, 0.0), (0.0, 0.75), (0.75, 0.75)]
    return IfsSpec([(0.25, I2, c) for c in corners], n=2)


def similarity_dimension(spec: IfsSpec) -> float:
    """Root d of sum_i L_i^d = 1 by bisection, run until the bracket stops shrinking."""
    L = spec.ratios
    if L.size == 1:
        warnings.warn("single-map IFS is degenerate (attractor is a point); dimension 0")
        return 0.0

    def f(d):
        return math.fsum(L**d) - 1.0

    lo, hi = 0.0, 1.0
    while f(hi) > 0:
        hi *= 2.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


def ifs_attractor(spec: IfsSpec, depth: int, base_point=None, cap: int = DEFAULT_POINT_CAP) -> PointCloud:
    """One point per word of length ``depth``, weighted by the natural measure.

    Points are in lexicographic word order, so the descendants of a depth-k
    cell form a contiguous block of length N**(depth - k).
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    N = len(spec.maps)
    if N**depth > cap:
        raise ValueError(f"{N}^{depth} points exceeds the cap of {cap}")
    spec.check_disjoint()
    d = similarity_dimension(spec)
    x0 = spec.fixed_point(0) if base_point is None else np.asarray(base_point, dtype=float)
    pts = x0.reshape(1, spec.n)
    w = np.ones(1)
    for _ in range(depth):
        pts = np.vstack([m(pts) for m in spec.maps])
        w = np.concatenate([m.ratio**d * w for m in spec.maps])
    return PointCloud(pts, w, spec.n, d, f"ifs(N={N},depth={depth})", 0,
                      {"kind": "ifs", "depth": depth, "maps": N})


def local_spacing(cloud: PointCloud) -> np.ndarray:
    """Distance from every point to its nearest distinct neighbour."""
    pts = cloud.points
    N = pts.shape[0]
    if N < 2:
        raise ValueError("local spacing needs at least two points")
    if N <= BRUTE_FORCE_LIMIT:
        out = np.empty(N)
        chunk = max(1, 4_000_000 // N)
        for s in range(0, N, chunk):
            D = np.linalg.norm(pts[s:s + chunk, None, :] - pts[None, :, :], axis=-1)
            D[D == 0.0] = np.inf
            out[s:s + chunk] = D.min(axis=1)
    else:
        tree = cKDTree(pts)
        k = 2
        while True:
            dist, _ = tree.query(pts, k=k)
            dist = np.where(dist == 0.0, np.inf, dist)
            out = dist.min(axis=1)
            if np.all(np.isfinite(out)) or k >= N:
                break
            k = min(2 * k, N)
    if not np.all(np.isfinite(out)):
        raise ValueError("all points coincide; no distinct neighbour")
    return out


# --- serialization -------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_cloud_csv(cloud: PointCloud, path, header: str | None = None) -> Path:
    """Write ``x1..xn,weight`` rows plus a ``.meta`` sidecar next to ``path``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"x{i + 1}" for i in range(cloud.n)] + ["weight"])
        for p, w in zip(cloud.points, cloud.weights):
            wr.writerow([_fmt(v) for v in p] + [_fmt(w)])
    meta = configparser.ConfigParser()
    meta["cloud"] = {"n": str(cloud.n), "d": _fmt(cloud.d), "label": cloud.label,
                     "seed": str(cloud.seed)}
    with open(_meta_path(path), "w") as fh:
        meta.write(fh)
    return path


def _meta_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".meta")


def load_cloud_csv(path) -> PointCloud:
    path = Path(path)
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    head, body = rows[0], rows[1:]
    n = len(head) - 1
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(-1, n + 1)
    meta = configparser.ConfigParser()
    if not meta.read(_meta_path(path)):
        raise FileNotFoundError(f"missing metadata sidecar {_meta_path(path)}")
    m = meta["cloud"]
    if int(m["n"]) != n:
        raise ValueError("sidecar n does not match CSV columns")
    return PointCloud(data[:, :n], data[:, n], n, float(m["d"]), m.get("label", ""), int(m.get("seed", 0)))


def cloud_to_json(cloud: PointCloud, header: str | None = None) -> str:
    """JSON has no comments, so the header travels as a list of lines."""
    return json.dumps({
        "header": header.splitlines() if header else [],
        "n": cloud.n, "d": cloud.d, "label": cloud.label, "seed": cloud.seed,
        "points": cloud.points.tolist(), "weights": cloud.weights.tolist(),
    })


def cloud_from_json(text: str) -> PointCloud:
    obj = json.loads(text)
    return PointCloud(np.array(obj["points"], dtype=float).reshape(-1, obj["n"]),
                      np.array(obj["weights"], dtype=float), obj["n"], obj["d"],
                      obj.get("label", ""), obj.get("seed", 0))


def save_cloud(cloud: PointCloud, path, header: str | None = None) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(cloud_to_json(cloud, header))
        return path
    return save_cloud_csv(cloud, path, header)


def load_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix == ".json":
        return cloud_from_json(path.read_text())
    return load_cloud_csv(path)


def diameter(cloud: PointCloud) -> float:
    pts = cloud.points
    if len(pts) <= 4096:
        return float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=-1)))
    # the diameter is attained between hull vertices; fall back to a bound otherwise
    try:
        from scipy.spatial import ConvexHull
        hull = pts[ConvexHull(pts).vertices] if cloud.n >= 2 else pts[[pts.argmin(), pts.argmax()]]
    except Exception:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(math.dist(lo, hi))
    return float(np.max(np.linalg.norm(hull[:, None] - hull[None], axis=-1)))
