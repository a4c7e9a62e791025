"""First- and second-order densities of weighted point clouds.

Ball masses mu(B(x, r)) of a cloud are step functions of r, so every
integral below is evaluated in closed form segment by segment.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decay import extrapolate_limit
from .geometry import PointCloud, diameter, local_spacing

FLOOR_FACTOR = 3.0
FLOOR_QUANTILE = 0.5
DEFAULT_CENTERS = 256
# the default first-order grid starts this many floors out
FIRST_ORDER_SPAN = 3.0
# relative fit scatter above which a first-order limit is treated as absent
EXISTENCE_SCATTER = 0.05


@dataclass
class BallCountingFunction:
    """mu(B(x, r)) as a right-continuous step function of r."""

    center: np.ndarray
    sorted_distances: np.ndarray
    cumulative_weights: np.ndarray

    @property
    def atom(self) -> float:
        """Mass sitting exactly at the center."""
        k = np.searchsorted(self.sorted_distances, 0.0, side="right")
        return float(self.cumulative_weights[k - 1]) if k else 0.0

    def __call__(self, r) -> np.ndarray:
        """Closed-ball mass mu(B(x, r))."""
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self.sorted_distances, r, side="right")
        cw = np.concatenate([[0.0], self.cumulative_weights])
        return cw[k]

    def power_integral(self, lo: float, hi: float, s: float, include_atom: bool = True) -> float:
        """int_lo^hi mu(B(x, r)) r^(-s-1) dr for s != 0, exactly."""
        return self._integral(lo, hi, lambda a, b: (a ** (-s) - b ** (-s)) / s, include_atom)

    def log_integral(self, lo: float, hi: float, d: float, include_atom: bool = True) -> float:
        """int_lo^hi mu(B(x, r)) r^-d dr / r."""
        return self.power_integral(lo, hi, d, include_atom)

    def _integral(self, lo, hi, seg, include_atom) -> float:
        if not 0 < lo < hi:
            raise ValueError("need 0 < lo < hi")
        dist = self.sorted_distances
        cum = self.cumulative_weights
        if not include_atom:
            k0 = np.searchsorted(dist, 0.0, side="right")
            dist, cum = dist[k0:], cum[k0:] - (cum[k0 - 1] if k0 else 0.0)
        inside = dist[(dist > lo) & (dist < hi)]
        edges = np.concatenate([[lo], inside, [hi]])
        k = np.searchsorted(dist, edges[:-1], side="right")
        mass = np.concatenate([[0.0], cum])[k]
        return float(np.sum(mass * seg(edges[:-1], edges[1:])))


@dataclass
class DensityEstimate:
    kind: str
    value: float
    center: object
    schedule: list
    d: float
    scatter: float = 0.0
    spread: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("first", "second_p_form", "second_log_form", "second_upper"):
            raise ValueError(f"unknown density kind {self.kind!r}")


def ball_counting(cloud: PointCloud, x) -> BallCountingFunction:
    x = np.asarray(x, dtype=float).reshape(-1)
    dist = np.linalg.norm(cloud.points - x, axis=1)
    order = np.argsort(dist, kind="stable")
    return BallCountingFunction(x, dist[order], np.cumsum(cloud.weights[order]))


def resolution_floor(cloud: PointCloud, factor: float = FLOOR_FACTOR,
                     quantile: float = FLOOR_QUANTILE) -> float:
    """Smallest radius trusted by the estimators: factor x a spacing quantile."""
    if len(cloud) < 2:
        return 0.0
    return factor * float(np.quantile(local_spacing(cloud), quantile))


def _center(cloud: PointCloud, x):
    if isinstance(x, (int, np.integer)):
        return cloud.points[int(x)]
    return np.asarray(x, dtype=float)


def first_order_density(cloud: PointCloud, x, d: float, r_grid=None, floor: float | None = None,
                        r_max: float = 1.0, bcf: BallCountingFunction | None = None) -> DensityEstimate:
    """Fit mu(B(x, r)) / r^d = a + b r over the radius grid and report a.

    ``scatter`` is the residual RMS relative to a; values above
    ``EXISTENCE_SCATTER`` mean the limit probably does not exist.
    """
    floor = resolution_floor(cloud) if floor is None else floor
    if r_grid is None:
        r_grid = np.geomspace(r_max, min(FIRST_ORDER_SPAN * floor, r_max / 2), 40)
    r = np.asarray(r_grid, dtype=float)
    r = r[(r > floor) & (r <= r_max)]
    if r.size == 0:
        raise ValueError("every radius lies below the resolution floor")
    bcf = ball_counting(cloud, _center(cloud, x)) if bcf is None else bcf
    ratio = bcf(r) / r**d
    if r.size >= 2:
        A = np.column_stack([np.ones_like(r), r])
        coef, *_ = np.linalg.lstsq(A, ratio, rcond=None)
        a = float(coef[0])
        resid = ratio - A @ coef
    else:
        a, resid = float(ratio[0]), np.zeros(1)
    scatter = float(np.sqrt(np.mean(resid**2)) / abs(a)) if a else math.inf
    spread = float((ratio.max() - ratio.min()) / abs(a)) if a else math.inf
    return DensityEstimate("first", max(a, 0.0), _label(x), r.tolist(), d, scatter, spread,
                           {"ratios": ratio.tolist(), "exists": scatter <= EXISTENCE_SCATTER})


def second_order_density_p(cloud: PointCloud, x, d: float, p: float, r_min: float = 0.0,
                           bcf: BallCountingFunction | None = None) -> float:
    """(d - p) int_0^1 mu(B(x, r)) r^(-p-1) dr for the cloud's step function.

    With ``r_min = 0`` the formula is literal and mass at the center is left
    out (it would make the integral diverge); see ``BallCountingFunction.atom``.
    With ``r_min > 0`` only [r_min, 1] is integrated, the center's own cell is
    counted, and the unresolved part [0, r_min] is closed by assuming the
    same average density there, i.e. the result is divided by 1 - r_min^(d-p).
    """
    if not 0 < p < d:
        raise ValueError(f"need 0 < p < d, got p={p}, d={d}")
    bcf = ball_counting(cloud, _center(cloud, x)) if bcf is None else bcf
    if r_min <= 0:
        dist = bcf.sorted_distances
        w = np.diff(np.concatenate([[0.0], bcf.cumulative_weights]))
        sel = (dist > 0) & (dist < 1.0)
        return float((d - p) * np.sum(w[sel] * (dist[sel] ** (-p) - 1.0) / p))
    if r_min >= 1.0:
        raise ValueError("r_min must be below the unit cutoff")
    val = (d - p) * bcf.power_integral(r_min, 1.0, p)
    return float(val / (1.0 - r_min ** (d - p)))


def default_p_schedule(d: float, g0: float = 0.5, K: int = 7) -> np.ndarray:
    gaps = [g0 * 2.0**-k for k in range(K)]
    return np.array([d - g for g in gaps if d - g > 0])


def default_eta_schedule(floor: float, count: int = 6, span: float = 30.0) -> np.ndarray:
    """Geometric eta values from floor * span down to floor, kept below 1/2."""
    if not 0 < floor < 0.5:
        raise ValueError(f"resolution floor {floor:g} leaves no room for a log average")
    return np.geomspace(min(floor * span, 0.5), floor, count)


def second_order_density(cloud: PointCloud, x, d: float, p_schedule=None, scheme: str = "richardson",
                         kind: str = "second_p_form", r_min: float | None = None,
                         bcf: BallCountingFunction | None = None) -> DensityEstimate:
    """Extrapolate the p-form to p -> d.

    ``kind="second_upper"`` reports the largest of the last three terms and
    the extrapolated limit, a finite-schedule stand-in for the limsup.
    """
    if kind not in ("second_p_form", "second_upper"):
        raise ValueError(f"kind must be second_p_form or second_upper, got {kind!r}")
    p_schedule = default_p_schedule(d) if p_schedule is None else np.asarray(p_schedule, dtype=float)
    if p_schedule.size < 3 and scheme == "richardson":
        raise ValueError("schedule too short for richardson")
    if np.any(np.diff(p_schedule) <= 0):
        raise ValueError("p schedule must increase toward d")
    r_min = resolution_floor(cloud) if r_min is None else r_min
    bcf = ball_counting(cloud, _center(cloud, x)) if bcf is None else bcf
    vals = [second_order_density_p(cloud, x, d, p, r_min, bcf) for p in p_schedule]
    limit, diag = extrapolate_limit(list(zip(p_schedule, vals)), d, scheme)
    limit = max(limit, 0.0)
    value = max(vals[-3:] + [limit]) if kind == "second_upper" else limit
    diag.update(r_min=r_min, terms=vals)
    return DensityEstimate(kind, value, _label(x), p_schedule.tolist(), d, diagnostics=diag)


def _label(x):
    return x.tolist() if isinstance(x, np.ndarray) else x


def log_average(bcf: BallCountingFunction, d: float, eta: float) -> float:
    """(1/|log eta|) int_eta^1 mu(B(x, r)) r^-d dr / r."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    return bcf.log_integral(eta, 1.0, d) / abs(math.log(eta))


def second_order_density_log(cloud: PointCloud, x, d: float, eta_schedule=None,
                             bcf: BallCountingFunction | None = None) -> DensityEstimate:
    """Log-averaged density per eta, extrapolated linearly in 1/|log eta| to eta -> 0."""
    if eta_schedule is None:
        eta_schedule = default_eta_schedule(resolution_floor(cloud))
    eta = np.asarray(eta_schedule, dtype=float)
    if np.any(eta <= 0) or np.any(eta >= 1):
        raise ValueError("eta values must lie in (0, 1)")
    if np.any(np.diff(eta) >= 0):
        raise ValueError("eta schedule must decrease")
    bcf = ball_counting(cloud, _center(cloud, x)) if bcf is None else bcf
    vals = np.array([log_average(bcf, d, e) for e in eta])
    t = 1.0 / np.abs(np.log(eta))
    if eta.size >= 2:
        A = np.column_stack([np.ones_like(t), t])
        coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
        value = float(coef[0])
        resid = (vals - A @ coef).tolist()
    else:
        value, resid = float(vals[0]), [0.0]
    return DensityEstimate("second_log_form", max(value, 0.0), _label(x), eta.tolist(), d,
                           diagnostics={"terms": vals.tolist(), "residuals": resid})


def sample_centers(cloud: PointCloud, M: int, seed: int = 0) -> np.ndarray:
    """M cloud indices drawn with probability proportional to weight."""
    if M < 1:
        raise ValueError("need at least one center")
    rng = np.random.default_rng(seed)
    return rng.choice(len(cloud), size=M, replace=True, p=cloud.probability)


def average_second_order_density(cloud: PointCloud, d: float, M: int = DEFAULT_CENTERS, seed: int = 0,
                                 schedule=None, form: str = "p", centers=None) -> DensityEstimate:
    """Mean of per-center second-order densities over mu-sampled centers.

    Centers are drawn from the weights, so the plain mean estimates the
    mu-average; ``spread`` is the across-center standard deviation.
    """
    idx = sample_centers(cloud, M, seed) if centers is None else np.asarray(centers)
    floor = resolution_floor(cloud)
    per = []
    for i in idx:
        bcf = ball_counting(cloud, cloud.points[i])
        if form == "p":
            est = second_order_density(cloud, int(i), d, schedule, r_min=floor, bcf=bcf)
        elif form == "log":
            sched = default_eta_schedule(floor) if schedule is None else schedule
            est = second_order_density_log(cloud, int(i), d, sched, bcf=bcf)
        else:
            raise ValueError(f"form must be 'p' or 'log', got {form!r}")
        per.append(est.value)
    per = np.array(per)
    kind = "second_p_form" if form == "p" else "second_log_form"
    return DensityEstimate(kind, float(per.mean()), "averaged",
                           est.schedule, d, spread=float(per.std()),
                           diagnostics={"centers": idx.tolist(), "values": per.tolist(), "floor": floor})


def ahlfors_constant(cloud: PointCloud, d: float, r_grid=None, floor: float | None = None,
                     centers=None) -> float:
    """max over centers and radii of mu(B(x, r)) / r^d, radii in (floor, diam]."""
    floor = resolution_floor(cloud) if floor is None else floor
    diam = diameter(cloud) if len(cloud) > 1 else 1.0
    if r_grid is None:
        lo = floor * 1.0001 if floor > 0 else diam * 1e-3
        r_grid = np.geomspace(lo, diam, 48)
    r = np.asarray(r_grid, dtype=float)
    r = r[(r > floor) & (r <= diam * (1 + 1e-12))]
    idx = range(len(cloud)) if centers is None else centers
    best = 0.0
    for i in idx:
        bcf = ball_counting(cloud, cloud.points[i])
        best = max(best, float(np.max(bcf(r) / r**d)))
    return best


def traces_to_csv(rows: Sequence[tuple], header: str | None = None) -> str:
    """``center_index, p_or_eta, value`` rows."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["center_index", "p_or_eta", "value"])
    for c, s, v in rows:
        wr.writerow([c, format(float(s), ".17g"), format(float(v), ".17g")])
    return buf.getvalue()
