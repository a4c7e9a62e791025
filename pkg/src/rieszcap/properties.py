"""Executable checks of the structural properties of Riesz energy and capacity.

Every check returns a PropertyReport whose margin is nonnegative exactly
when the check passes, plus a digest of the instance so failures replay.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import decay, density, energy
from .core import unit_ball_volume
from .geometry import PointCloud, cantor_spec, ifs_attractor, sample_cube, sample_sphere

EXACT_CURVE_TOL = 1e-10
SCALING_TOL = 1e-9
GOTZ_TOL = 1e-12
DENSITY_TOL = 0.05


@dataclass
class PropertyReport:
    name: str
    passed: bool
    margin: float
    digest: str
    tolerance: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)
        if not math.isnan(self.margin) and self.passed != (self.margin >= 0):
            raise ValueError(f"{self.name}: margin {self.margin} inconsistent with pass={self.passed}")

    def to_text(self) -> str:
        lines = [f"[{self.name}]",
                 f"  status    = {'PASS' if self.passed else 'FAIL'}",
                 f"  margin    = {self.margin:.6g}",
                 f"  tolerance = {self.tolerance:.3g}",
                 f"  digest    = {self.digest}"]
        for k, v in self.details.items():
            if isinstance(v, (list, dict)):
                continue
            lines.append(f"  {k} = {v}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return asdict(self)


def digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        if isinstance(a, np.ndarray):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        else:
            h.update(json.dumps(a, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def reports_to_json(reports: Sequence[PropertyReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, default=float)


# --- subadditivity -------------------------------------------------------------

@dataclass
class SubadditivityInstance:
    G: np.ndarray
    parts: list
    seed: int = 0

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        N = self.G.shape[0]
        if self.G.shape != (N, N) or np.any(self.G < 0) or not np.allclose(self.G, self.G.T, atol=0):
            raise ValueError("G must be square, symmetric and nonnegative")
        self.parts = [sorted(set(int(i) for i in part)) for part in self.parts]
        covered = set().union(*self.parts) if self.parts else set()
        if covered != set(range(N)):
            raise ValueError("parts must cover every index")


def energy_of(G: np.ndarray, idx: Sequence[int]) -> float:
    """W of an index set; sets supporting no probability measure have W = inf."""
    if len(idx) == 0:
        return math.inf
    _, val = energy.exact_simplex_quadratic_min(G[np.ix_(idx, idx)])
    return val


def _recip(W: float) -> float:
    return 0.0 if math.isinf(W) else (math.inf if W == 0 else 1.0 / W)


def check_subadditivity(inst: SubadditivityInstance, tol: float = 1e-9) -> PropertyReport:
    """1/W(union) <= sum_i 1/W(E_i) + tol with every W solved exactly."""
    N = inst.G.shape[0]
    if N > energy.EXACT_MAX:
        raise ValueError(f"exact solver limited to {energy.EXACT_MAX} points")
    W_union = energy_of(inst.G, list(range(N)))
    W_parts = [energy_of(inst.G, part) for part in inst.parts]
    lhs = _recip(W_union)
    rhs = sum(_recip(W) for W in W_parts)
    margin = rhs + tol - lhs if not (math.isinf(lhs) and math.isinf(rhs)) else 0.0
    return PropertyReport("subadditivity", margin >= 0, margin,
                          digest(inst.G, inst.parts, inst.seed), tol,
                          {"W_union": W_union, "W_parts": W_parts, "lhs": lhs, "rhs": rhs})


def random_instance(rng: np.random.Generator, max_size: int = 8) -> SubadditivityInstance:
    """A random nonnegative positive-definite kernel with an overlapping cover.

    Shapes cycle through the adversarial cases: singleton parts, a part equal
    to the union, heavy overlaps and nearly singular kernels.
    """
    N = int(rng.integers(1, max_size + 1))
    shape = int(rng.integers(0, 4))
    # near-singular shape: a rank-deficient Gram matrix lifted by a tiny ridge
    rows = max(1, N - 2) if shape == 3 else N + 2
    B = rng.random((rows, N))
    G = B.T @ B
    eps = 1e-9 if shape == 3 else rng.uniform(0.01, 1.0)
    G = G + eps * np.eye(N)
    G = 0.5 * (G + G.T)
    idx = np.arange(N)
    parts = []
    if shape == 0:
        parts = [[int(i)] for i in idx]
    elif shape == 1:
        parts = [list(map(int, idx))] + [[int(i)] for i in rng.choice(N, size=min(2, N), replace=False)]
    else:
        for _ in range(int(rng.integers(1, 4))):
            k = int(rng.integers(1, N + 1))
            parts.append(sorted(map(int, rng.choice(N, size=k, replace=False))))
        missing = set(range(N)) - set().union(*map(set, parts))
        if missing:
            parts.append(sorted(missing))
        if rng.random() < 0.5:
            parts.append([])
    return SubadditivityInstance(G, parts, 0)


def subadditivity_suite(instances: int = 200, seed: int = 7, tol: float = 1e-9,
                        max_size: int = 8) -> PropertyReport:
    rng = np.random.default_rng(seed)
    worst, worst_digest, fails = math.inf, "", 0
    for k in range(instances):
        inst = random_instance(rng, max_size)
        inst.seed = seed * 1_000_003 + k
        rep = check_subadditivity(inst, tol)
        fails += not rep.passed
        if rep.margin < worst:
            worst, worst_digest = rep.margin, rep.digest
    return PropertyReport("subadditivity_suite", fails == 0 and worst >= 0, worst,
                          digest(instances, seed, max_size), tol,
                          {"instances": instances, "seed": seed, "failures": fails,
                           "worst_instance": worst_digest})


def equality_instance(g1: float = 2.0, g2: float = 3.0) -> SubadditivityInstance:
    """Two singletons with a diagonal kernel: subadditivity holds with equality."""
    return SubadditivityInstance(np.diag([g1, g2]), [[0], [1]], 0)


# --- capacity curves -------------------------------------------------------------

def check_capacity_monotonic(curve: decay.CapacityCurve, tol: float = EXACT_CURVE_TOL) -> PropertyReport:
    """cap nonincreasing in p up to ``tol`` (relative to the larger value)."""
    caps = curve.cap_values
    if caps.size < 2:
        margin = 0.0
    else:
        rises = (caps[1:] - caps[:-1]) / np.maximum(caps[:-1], caps[1:])
        margin = float(tol - rises.max())
    return PropertyReport("capacity_monotonic", margin >= 0, margin,
                          digest(curve.p_grid, curve.cap_values), tol,
                          {"label": curve.label, "entries": int(caps.size)})


def check_scaling(cloud: PointCloud, s: float, p: float,
                  policy: energy.DiagPolicy | None = None, tol: float = SCALING_TOL) -> PropertyReport:
    """cap_p(sE) = s cap_p(E) for trial energies of the cloud's normalized weights."""
    if not s > 0:
        raise ValueError("s must be positive")
    policy = energy.cell_ball(0.5) if policy is None else policy
    if len(cloud) < 2:
        policy = energy.OMIT

    def cap_of(c: PointCloud) -> float:
        K = energy.kernel_matrix(c, p, policy)
        return energy.capacity(energy.trial_energy(K, c.probability))

    base = cap_of(cloud)
    scaled = cap_of(cloud.dilate(s))
    ratio = scaled / base
    err = abs(ratio / s - 1.0)
    return PropertyReport("scaling", err <= tol, tol - err, digest(cloud.points, s, p), tol,
                          {"ratio": ratio, "s": s, "p": p})


def check_gotz_identity(cloud: PointCloud, weights, p: float,
                        policy: energy.DiagPolicy = energy.OMIT, tol: float = GOTZ_TOL) -> PropertyReport:
    direct = energy.trial_energy(energy.kernel_matrix(cloud, p, policy), weights).value
    gotz = energy.gotz_energy(cloud, weights, p, math.inf, policy)
    err = abs(gotz - direct)
    bound = tol * abs(direct)
    return PropertyReport("gotz_identity", err <= bound, (bound - err) / max(abs(direct), 1e-300),
                          digest(cloud.points, np.asarray(weights), p), tol,
                          {"direct": direct, "gotz": gotz})


def gotz_suite(count: int = 50, seed: int = 0) -> PropertyReport:
    rng = np.random.default_rng(seed)
    worst, fails = math.inf, 0
    for _ in range(count):
        n = int(rng.integers(1, 4))
        N = int(rng.integers(2, 60))
        pts = rng.random((N, n)) * rng.uniform(0.5, 5.0)
        w = rng.random(N)
        w /= w.sum()
        cloud = PointCloud(pts, w, n, float(n))
        p = float(rng.uniform(0.1, 3.0))
        policy = energy.OMIT if rng.random() < 0.5 else energy.cell_ball(float(rng.uniform(0.1, 1.0)))
        rep = check_gotz_identity(cloud, w, p, policy)
        fails += not rep.passed
        worst = min(worst, rep.margin)
    return PropertyReport("gotz_suite", fails == 0, worst, digest(count, seed), GOTZ_TOL,
                          {"instances": count, "failures": fails})


# --- densities -------------------------------------------------------------------

def check_density_lemmas(cloud: PointCloud, centers=None, r_max: float = 1.0,
                         tol: float = DENSITY_TOL) -> PropertyReport:
    """First-order density equals the unit-ball volume and matches the second-order one.

    Clouds without a first-order limit (large fit scatter, e.g. fractals) are
    skipped: the report passes with NaN margin and ``skipped=True``.
    """
    d = cloud.d
    centers = [0] if centers is None else list(centers)
    target = unit_ball_volume(d)
    worst = math.inf
    rows = []
    for c in centers:
        rho = density.first_order_density(cloud, c, d, r_max=r_max)
        if not rho.diagnostics["exists"]:
            return PropertyReport("density_lemmas", True, math.nan, digest(cloud.points), tol,
                                  {"skipped": True, "reason": "first-order limit absent",
                                   "scatter": rho.scatter})
        sig = density.second_order_density(cloud, c, d)
        e1 = abs(rho.value / target - 1.0)
        e2 = abs(rho.value - sig.value) / rho.value
        worst = min(worst, tol - max(e1, e2))
        rows.append({"center": c, "rho": rho.value, "sigma": sig.value})
    return PropertyReport("density_lemmas", worst >= 0, worst, digest(cloud.points, centers), tol,
                          {"skipped": False, "target": target, "rows": rows})


def check_measure_scaling(cloud: PointCloud, factor: float = 3.0, centers=(0,)) -> PropertyReport:
    """Scaling the weights by c scales every density by c; H/(d sigma) is unchanged."""
    d = cloud.d
    scaled = cloud.with_weights(cloud.weights * factor)
    worst = 0.0
    for c in centers:
        a = density.second_order_density(cloud, c, d).value
        b = density.second_order_density(scaled, c, d).value
        worst = max(worst, abs(b / (factor * a) - 1.0))
        t0 = decay.fractal_target(cloud.total_weight, d, a)
        t1 = decay.fractal_target(scaled.total_weight, d, b)
        worst = max(worst, abs(t1 / t0 - 1.0))
    tol = 1e-12
    return PropertyReport("measure_scaling", worst <= tol, tol - worst,
                          digest(cloud.points, factor), tol, {"max_rel_error": worst})


def check_ifs_weights(spec=None, depths: Sequence[int] = tuple(range(0, 11)),
                      tol: float = 1e-12) -> PropertyReport:
    """Natural weights sum to 1 and refine consistently from depth k to k+1."""
    spec = cantor_spec() if spec is None else spec
    N = len(spec.maps)
    worst = 0.0
    prev = None
    for k in depths:
        w = ifs_attractor(spec, k).weights
        worst = max(worst, abs(w.sum() - 1.0))
        if prev is not None and k == prev[0] + 1:
            worst = max(worst, float(np.max(np.abs(w.reshape(-1, N).sum(axis=1) - prev[1]))))
        prev = (k, w)
    return PropertyReport("ifs_weights", worst <= tol, tol - worst, digest(list(depths)), tol,
                          {"max_error": worst})


# --- suites used by ``verify`` ------------------------------------------------------

def monotonic_suite(dims=(1, 2, 3), samples: int = 50) -> list[PropertyReport]:
    out = []
    for d in dims:
        p = np.linspace(0.05, d - 0.01, samples)
        out.append(check_capacity_monotonic(decay.exact_sphere_curve(d, p)))
    return out


def scaling_suite(seed: int = 0) -> list[PropertyReport]:
    two = PointCloud(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]), 1, 1.0, "two-point")
    circle = sample_sphere(1, 2, 100, seed)
    return [check_scaling(two, 2.0, 1.0, energy.OMIT),
            check_scaling(circle, 0.5, 0.5),
            check_scaling(sample_sphere(2, 3, 200, seed), 3.0, 1.5),
            check_scaling(sample_cube(2, 2, 10), 1.0, 1.0)]


def invariant_suite(seed: int = 0) -> list[PropertyReport]:
    """Capacity monotonicity, dilation scaling, measure scaling and IFS weight conservation."""
    reps = monotonic_suite()
    reps += scaling_suite(seed)
    reps.append(check_measure_scaling(ifs_attractor(cantor_spec(), 8), 3.0, centers=(0, 37, 200)))
    reps.append(check_measure_scaling(sample_sphere(1, 2, 500), 0.25))
    reps.append(check_ifs_weights())
    return reps
