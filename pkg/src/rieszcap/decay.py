"""Capacity sweeps as p increases to d, decay ratios and their limits."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import energy
from .core import unit_sphere_area
from .energy import DiagPolicy, KernelMatrix, capacity, kernel_matrix
from .geometry import IfsSpec, PointCloud, ifs_attractor, local_spacing

log = logging.getLogger(__name__)

SCHEMES = ("last", "linear_in_gap", "richardson")


@dataclass
class CapacityCurve:
    d: float
    p_grid: np.ndarray
    cap_values: np.ndarray
    bound_direction: list
    label: str = ""
    method: str = ""
    diag_c: float | None = None
    converged: list = field(default_factory=list)

    def __post_init__(self):
        self.p_grid = np.asarray(self.p_grid, dtype=float)
        self.cap_values = np.asarray(self.cap_values, dtype=float)
        if self.p_grid.size != self.cap_values.size or len(self.bound_direction) != self.p_grid.size:
            raise ValueError("curve columns differ in length")
        if np.any(np.diff(self.p_grid) <= 0):
            raise ValueError("p grid must be strictly increasing")
        if np.any(self.p_grid >= self.d):
            raise ValueError("p grid must lie below d")
        if np.any(self.cap_values <= 0):
            raise ValueError("capacities must be positive")
        if not self.converged:
            self.converged = [True] * self.p_grid.size

    def __len__(self):
        return self.p_grid.size

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.cap_values) <= 0))


@dataclass
class SolverConfig:
    """Equilibrium solve settings for numeric curves."""

    policy: DiagPolicy
    tol: float = 1e-8
    max_iter: int = 100_000


def default_p_grid(d: float, g0: float = 0.5, min_gap: float | None = 0.02, K: int = 30) -> np.ndarray:
    """p_k = d - g0 2^-k, stopping before the gap falls below ``min_gap``."""
    gaps = [g0 * 2.0**-k for k in range(K + 1)]
    if min_gap is not None:
        gaps = [g for g in gaps if g >= min_gap]
    gaps = [g for g in gaps if d - g > 0]
    return np.array([d - g for g in gaps])


def geometric_p_grid(d: float, p_lo: float, p_hi: float, count: int) -> np.ndarray:
    """``count`` points whose gaps to d are geometrically spaced from d-p_lo to d-p_hi."""
    gaps = np.geomspace(d - p_lo, d - p_hi, count)
    return d - gaps


def exact_sphere_curve(d: int, p_grid) -> CapacityCurve:
    p_grid = np.asarray(p_grid, dtype=float)
    caps = [energy.sphere_capacity_exact(d, p) for p in p_grid]
    return CapacityCurve(float(d), p_grid, caps, ["exact"] * p_grid.size,
                         f"sphere(d={d})", "exact")


def capacity_curve(cloud: PointCloud, p_grid, config: SolverConfig) -> CapacityCurve:
    """One equilibrium capacity per p; the matrix is rebuilt for each p."""
    p_grid = np.asarray(p_grid, dtype=float)
    if p_grid.size == 0:
        return CapacityCurve(cloud.d, p_grid, [], [], cloud.label, "equilibrium", config.policy.c)
    spacing = local_spacing(cloud)
    caps, dirs, ok = [], [], []
    for p in p_grid:
        if not 0 < p < cloud.d:
            raise ValueError(f"p={p} outside (0, d={cloud.d})")
        K = kernel_matrix(cloud, p, config.policy, spacing=spacing)
        eq = energy.solve_equilibrium(K, config.tol, config.max_iter)
        caps.append(capacity(eq.estimate))
        dirs.append(eq.estimate.bound_direction)
        ok.append(eq.converged)
        log.info("p=%.6g cap=%.10g iterations=%d converged=%s", p, caps[-1], eq.iterations, eq.converged)
    return CapacityCurve(cloud.d, p_grid, caps, dirs, cloud.label,
                         f"equilibrium[{config.policy}]", config.policy.c, ok)


def decay_ratio(curve: CapacityCurve) -> list[tuple[float, float]]:
    """(p, cap_p^p / (d - p)) for every entry."""
    return [(float(p), float(c**p / (curve.d - p))) for p, c in zip(curve.p_grid, curve.cap_values)]


def _neville_at_zero(x: np.ndarray, y: np.ndarray) -> float:
    P = list(map(float, y))
    n = len(x)
    for k in range(1, n):
        for i in range(n - k):
            P[i] = (x[i + k] * P[i] - x[i] * P[i + 1]) / (x[i + k] - x[i])
    return P[0]


def extrapolate_limit(ratios: Sequence[tuple[float, float]], d: float,
                      scheme: str = "richardson") -> tuple[float, dict]:
    """Estimate the p -> d limit of a sampled ratio sequence.

    ``last``           the entry closest to d.
    ``linear_in_gap``  least-squares a + b (d - p); returns a.
    ``richardson``     polynomial extrapolation to zero gap through the three
                       entries closest to d (Richardson for geometric gaps).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    need = {"last": 1, "linear_in_gap": 2, "richardson": 3}[scheme]
    if len(ratios) < need:
        raise ValueError(f"scheme {scheme} needs at least {need} ratios, got {len(ratios)}")
    arr = np.array(sorted(ratios), dtype=float).reshape(-1, 2)
    gaps = d - arr[:, 0]
    vals = arr[:, 1]
    diag: dict = {"scheme": scheme, "gaps": gaps.tolist(), "values": vals.tolist()}
    if scheme == "last":
        limit = float(vals[-1])
        diag["residuals"] = [0.0]
    elif scheme == "linear_in_gap":
        A = np.column_stack([np.ones_like(gaps), gaps])
        coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
        limit = float(coef[0])
        diag["slope"] = float(coef[1])
        diag["residuals"] = (vals - A @ coef).tolist()
    else:
        g, v = gaps[-3:], vals[-3:]
        limit = _neville_at_zero(g, v)
        two = _neville_at_zero(g[-2:], v[-2:])
        diag["residuals"] = [0.0, 0.0, 0.0]
        diag["error_estimate"] = abs(limit - two)
        diag["gap_ratios"] = (g[1:] / g[:-1]).tolist()
    return limit, diag


def hausdorff_from_decay(limit: float, d: float) -> float:
    """H^d estimate limit * |S^(d-1)|."""
    if limit < 0:
        raise ValueError("limit must be nonnegative")
    return limit * unit_sphere_area(d)


def rectifiable_target(h_measure: float, d: float) -> float:
    if not (h_measure > 0 and d > 0):
        raise ValueError("inputs must be positive")
    return h_measure / unit_sphere_area(d)


def fractal_target(h_measure: float, d: float, sigma: float) -> float:
    if not (h_measure > 0 and d > 0 and sigma > 0):
        raise ValueError("inputs must be positive")
    return h_measure / (d * sigma)


def sphere_decay_limit(d: int) -> float:
    """|S^d| / |S^(d-1)|, the limit for the unit d-sphere with H^d = |S^d|."""
    return unit_sphere_area(d + 1) / unit_sphere_area(d)


# --- self-similar probe ------------------------------------------------------

def ifs_kernel_matrix(spec: IfsSpec, depth: int, p: float, fine: PointCloud | None = None) -> KernelMatrix:
    """Cell interaction matrix for measures sum_u a_u (phi_u)_* mu on depth-``depth`` cells.

    Off-diagonal entries are representative-point interactions; a cell's self
    interaction is L_u^-p I, where the natural-measure energy I solves the
    self-similarity relation I = cross + I sum_u w_u^2 L_u^-p.
    """
    cloud = ifs_attractor(spec, depth) if fine is None else fine
    d = cloud.d
    if not 0 < p < d:
        raise ValueError(f"need 0 < p < d={d}")
    D = energy.pairwise_distances(cloud.points)
    N = len(cloud)
    off = ~np.eye(N, dtype=bool)
    K = np.where(off, D, 1.0) ** (-p)
    np.fill_diagonal(K, 0.0)
    w = cloud.weights
    size = w ** (1.0 / d)  # cell contraction factor L_u, since w_u = L_u^d
    cross = float(w @ K @ w)
    contraction = float(np.sum(w**2 * size ** (-p)))
    if contraction >= 1.0:
        raise ValueError("self-similar energy diverges at this p")
    I = cross / (1.0 - contraction)
    np.fill_diagonal(K, size ** (-p) * I)
    return KernelMatrix(K, p, DiagPolicy("explicit"), cloud)


def aggregate(K: np.ndarray, weights: np.ndarray, block: int) -> tuple[np.ndarray, np.ndarray]:
    """Coarsen to parent cells of ``block`` contiguous children, weighting children by mass."""
    N = K.shape[0]
    m = N // block
    cw = weights.reshape(m, block)
    tot = cw.sum(axis=1)
    q = cw / tot[:, None]
    Kc = np.einsum("ia,iajb,jb->ij", q, K.reshape(m, block, m, block), q, optimize=True)
    return Kc, tot


@dataclass
class FractalDecayEntry:
    depth: int
    p: float
    cap: float
    ratio: float
    bound_direction: str
    iterations: int
    gap: float


def fractal_decay_table(spec: IfsSpec, depths: Sequence[int], p_grid, tol: float = 1e-9,
                        max_iter: int = 200_000) -> list[FractalDecayEntry]:
    """Capacity lower bounds from nested trial families on IFS cells.

    For each p the finest-depth matrix is built once and coarsened to every
    requested depth. The depth-k family is contained in the depth-(k+1) one
    and each solve starts from the lifted coarser optimum, so the capacities
    are nondecreasing in depth by construction.
    """
    depths = sorted(depths)
    N = len(spec.maps)
    fine_depth = depths[-1]
    fine = ifs_attractor(spec, fine_depth)
    d = fine.d
    out: list[FractalDecayEntry] = []
    for p in np.asarray(p_grid, dtype=float):
        Kf = ifs_kernel_matrix(spec, fine_depth, p, fine).entries
        mats = {}
        for k in depths:
            block = N ** (fine_depth - k)
            mats[k] = aggregate(Kf, fine.weights, block) if block > 1 else (Kf, fine.weights)
        prev_w, prev_k = None, None
        for k in depths:
            G, cw = mats[k]
            init = None
            if prev_w is not None:
                # lift the coarse optimum: split each parent by child mass fractions
                b = N ** (k - prev_k)
                frac = cw.reshape(-1, b) / cw.reshape(-1, b).sum(axis=1, keepdims=True)
                init = (prev_w[:, None] * frac).ravel()
                init /= init.sum()
            w, f, it, gap, _ = energy.minimize_simplex_quadratic(G, tol, max_iter, init)
            cap = f ** (-1.0 / p)
            out.append(FractalDecayEntry(k, float(p), cap, cap**p / (d - p), "lower", it, gap))
            prev_w, prev_k = w, k
    return out


# --- CSV export ----------------------------------------------------------------

def curve_rows(curve: CapacityCurve) -> list[dict]:
    rows = []
    for p, c, b in zip(curve.p_grid, curve.cap_values, curve.bound_direction):
        rows.append({"p": p, "cap": c, "cap_pow_p": c**p, "ratio": c**p / (curve.d - p),
                     "bound_direction": b})
    return rows


def curve_to_csv(curve: CapacityCurve, header: str | None = None, extra: dict | None = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    cols = ["p", "cap", "cap_pow_p", "ratio", "bound_direction"]
    extra = extra or {}
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(list(extra) + cols)
    for r in curve_rows(curve):
        wr.writerow([str(v) for v in extra.values()]
                    + [format(r[c], ".17g") if c != "bound_direction" else r[c] for c in cols])
    return buf.getvalue()


def figure_curves(dims=(1, 2, 3), samples: int = 200, floor: float = 1e-3) -> dict[int, CapacityCurve]:
    """Exact sphere curves on p in (0, d) for the capacity and capacity^p plots."""
    out = {}
    for d in dims:
        p = np.linspace(0, d, samples + 2)[1:-1]
        p = p[(p > floor) & (p < d - floor)]
        out[d] = exact_sphere_curve(d, p)
    return out


def write_figure_data(out_dir, header: str | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d, curve in figure_curves().items():
        path = out_dir / f"sphere_d{d}.csv"
        path.write_text(curve_to_csv(curve, header, {"d": d}))
        paths.append(path)
    return paths
