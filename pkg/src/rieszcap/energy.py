"""Riesz kernel matrices, discrete energies and equilibrium measures."""

from __future__ import annotations

import itertools
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special
from scipy.spatial.distance import cdist

from .core import INF, unit_ball_volume
from .geometry import PointCloud, local_spacing, sample_sphere

log = logging.getLogger(__name__)

MAX_DENSE = 2**14
EXACT_MAX = 12
SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class DiagPolicy:
    """How the (infinite) self-interaction of a point is replaced.

    ``omit``       diagonal is 0.
    ``cell_ball``  diagonal is (c h_i)^-p, h_i the local spacing.
    ``self_ball``  diagonal is the mean Riesz self-energy of a uniform flat
                   d-ball of radius c h_i; this keeps the 1/(d-p) blow-up of
                   the near field as p approaches d.
    ``explicit``   diagonal supplied by the caller (e.g. self-similar cells).
    """

    kind: str = "omit"
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("omit", "cell_ball", "self_ball", "explicit"):
            raise ValueError(f"unknown diagonal policy {self.kind!r}")
        if self.kind in ("cell_ball", "self_ball") and not self.c > 0:
            raise ValueError(f"{self.kind} needs c > 0")

    def __str__(self):
        return self.kind if self.kind in ("omit", "explicit") else f"{self.kind}({self.c:.12g})"


OMIT = DiagPolicy("omit")


def cell_ball(c: float) -> DiagPolicy:
    return DiagPolicy("cell_ball", c)


def self_ball(c: float | None = None, d: float = 1) -> DiagPolicy:
    """Self-ball policy; the default radius gives each ball the volume h^d."""
    if c is None:
        c = unit_ball_volume(d) ** (-1.0 / d)
    return DiagPolicy("self_ball", c)


def ball_self_energy(d: float, p: float) -> float:
    """E|X - Y|^-p for X, Y independent uniform in the unit d-ball (0 < p < d).

    Uses the chord-length density d r^(d-1) I_{1-r^2/4}((d+1)/2, 1/2) on [0, 2];
    the r^(d-1-p) factor is handed to quad as an algebraic endpoint weight.
    """
    if not 0 < p < d:
        raise ValueError(f"ball self-energy needs 0 < p < d, got p={p}, d={d}")
    a = (d + 1.0) / 2.0

    def f(r):
        return special.betainc(a, 0.5, max(0.0, 1.0 - r * r / 4.0))

    val, _ = integrate.quad(f, 0.0, 2.0, weight="alg", wvar=(d - 1.0 - p, 0.0),
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return d * val


@dataclass(frozen=True)
class KernelMatrix:
    entries: np.ndarray
    p: float
    diag_policy: DiagPolicy
    source: PointCloud | None = None

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class EnergyEstimate:
    value: float
    p: float
    bound_direction: str = "heuristic"
    method: str = ""
    cloud_label: str = ""

    def __post_init__(self):
        if self.bound_direction not in ("upper", "lower", "heuristic"):
            raise ValueError(f"bad bound direction {self.bound_direction!r}")


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    return cdist(points, points)


def diagonal_values(cloud: PointCloud, p: float, policy: DiagPolicy, spacing=None) -> np.ndarray:
    N = len(cloud)
    if policy.kind == "omit":
        return np.zeros(N)
    if policy.kind == "explicit":
        raise ValueError("explicit diagonals are supplied by the caller")
    h = local_spacing(cloud) if spacing is None else np.asarray(spacing, dtype=float)
    base = (policy.c * h) ** (-p)
    if policy.kind == "self_ball":
        base = base * ball_self_energy(cloud.d, p)
    return base


def kernel_matrix(cloud: PointCloud, p: float, diag_policy: DiagPolicy = OMIT,
                  spacing=None, max_size: int = MAX_DENSE) -> KernelMatrix:
    """Dense Riesz matrix |x_i - x_j|^-p with the chosen diagonal."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    N = len(cloud)
    if N > max_size:
        raise ValueError(f"{N} points exceeds the dense cap of {max_size}")
    D = pairwise_distances(cloud.points)
    off = ~np.eye(N, dtype=bool)
    if np.any(D[off] == 0.0):
        raise ValueError("cloud has duplicate points (infinite off-diagonal entries); deduplicate first")
    with np.errstate(divide="ignore"):
        K = np.where(off, D, 1.0) ** (-p)
    K[~off] = diagonal_values(cloud, p, diag_policy, spacing)
    K = 0.5 * (K + K.T)
    return KernelMatrix(K, p, diag_policy, cloud)


def _check_simplex(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("weights must be nonnegative and sum to 1")
    return w


def trial_energy(K: KernelMatrix, w, bound_direction: str = "heuristic") -> EnergyEstimate:
    """w^T K w for a fixed probability vector.

    Any fixed measure bounds the minimum energy from above, so callers whose
    diagonal over-estimates (or exactly models) self-interaction pass
    ``bound_direction="upper"``; the value is recorded, never inferred.
    """
    w = _check_simplex(w)
    if w.shape[0] != K.size:
        raise ValueError("weight vector does not match matrix size")
    val = float(w @ K.entries @ w)
    label = K.source.label if K.source is not None else ""
    return EnergyEstimate(val, K.p, bound_direction, f"trial[{K.diag_policy}]", label)


def gotz_energy(cloud: PointCloud, w, p: float, r_max: float = INF,
                diag_policy: DiagPolicy = OMIT, spacing=None) -> float:
    """Energy through the ball-indicator radial integral.

    Each pair contributes p * int_{D}^{r_max} r^(-p-1) dr = D^-p - r_max^-p
    (0 when D >= r_max); a diagonal entry e_ii enters through its effective
    distance e_ii^(-1/p).
    """
    w = _check_simplex(w)
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    pts = cloud.points
    tail = 0.0 if math.isinf(r_max) else r_max ** (-p)
    total = 0.0
    diag = diagonal_values(cloud, p, diag_policy, spacing)
    eff = np.full(len(cloud), np.inf)
    pos = diag > 0
    eff[pos] = diag[pos] ** (-1.0 / p)
    chunk = max(1, 2_000_000 // max(1, len(cloud)))
    for s in range(0, len(cloud), chunk):
        blk = np.linalg.norm(pts[s:s + chunk, None, :] - pts[None, :, :], axis=-1)
        rows = np.arange(s, min(s + chunk, len(cloud)))
        blk[rows - s, rows] = eff[rows]
        with np.errstate(divide="ignore"):
            contrib = np.where(blk < r_max, blk ** (-p) - tail, 0.0)
        total += float(w[rows] @ contrib @ w)
    return total


@dataclass
class Equilibrium:
    weights: np.ndarray
    estimate: EnergyEstimate
    iterations: int
    gap: float
    converged: bool
    history: list = field(default_factory=list)

    def __iter__(self):
        # allows ``w, est = solve_equilibrium(...)``
        return iter((self.weights, self.estimate))


def minimize_simplex_quadratic(G: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000,
                               init=None) -> tuple[np.ndarray, float, int, float, bool]:
    """Away-step Frank-Wolfe with exact line search for min w^T G w on the simplex.

    Stops once the Frank-Wolfe gap is at most ``tol * value``.
    """
    N = G.shape[0]
    w = np.full(N, 1.0 / N) if init is None else _check_simplex(init).copy()
    Gw = G @ w
    f = float(w @ Gw)
    gap = INF
    for it in range(max_iter):
        grad = 2.0 * Gw
        s = int(np.argmin(grad))
        gap = float(grad @ w - grad[s])
        if gap <= tol * f:
            return w, f, it, gap, True
        supp = np.flatnonzero(w > 0)
        v = int(supp[np.argmax(grad[supp])])
        away_gap = float(grad[v] - grad @ w)
        if gap >= away_gap or w[v] >= 1.0:
            # toward vertex s: d = e_s - w
            Gd = G[:, s] - Gw
            wGd = float(w @ Gd)
            dGd = float(G[s, s] - 2.0 * Gw[s] + f)
            gmax = 1.0
            step_dir = ("fw", s)
        else:
            # away from vertex v: d = w - e_v
            Gd = Gw - G[:, v]
            wGd = float(w @ Gd)
            dGd = float(f - 2.0 * Gw[v] + G[v, v])
            gmax = w[v] / (1.0 - w[v])
            step_dir = ("away", v)
        if dGd > 0:
            gam = min(max(-wGd / dGd, 0.0), gmax)
        else:
            gam = gmax
        if gam <= 0.0:
            return w, f, it, gap, False
        kind, idx = step_dir
        if kind == "fw":
            w *= 1.0 - gam
            w[idx] += gam
        else:
            w *= 1.0 + gam
            w[idx] -= gam
            if gam == gmax:
                w[idx] = 0.0
        w[w < 0] = 0.0
        Gw = Gw + gam * Gd
        f_new = f + 2.0 * gam * wGd + gam * gam * dGd
        if (it + 1) % 500 == 0:
            # refresh to bound drift from the incremental updates
            w /= w.sum()
            Gw = G @ w
            f_new = float(w @ Gw)
        f = f_new
    grad = 2.0 * Gw
    gap = float(grad @ w - grad.min())
    return w, f, max_iter, gap, gap <= tol * f


def solve_equilibrium(K: KernelMatrix, tol: float = 1e-8, max_iter: int = 100_000,
                      init=None) -> Equilibrium:
    """Discrete equilibrium measure: minimize w^T K w over the simplex.

    Starts from the uniform vector unless ``init`` is given; deterministic.
    The energy is a heuristic estimate because the diagonal is a model.
    """
    if K.diag_policy.kind == "omit":
        raise ValueError("omit policy admits the degenerate vertex minimum; use cell_ball or self_ball")
    if not np.all(np.isfinite(K.entries)):
        raise ValueError("kernel matrix has non-finite entries")
    w, f, it, gap, ok = minimize_simplex_quadratic(K.entries, tol, max_iter, init)
    if not ok:
        log.warning("Frank-Wolfe did not converge: gap %.3g after %d iterations", gap, it)
    label = K.source.label if K.source is not None else ""
    est = EnergyEstimate(f, K.p, "heuristic", f"equilibrium[{K.diag_policy}]", label)
    return Equilibrium(w, est, it, gap, ok)


def exact_simplex_quadratic_min(G, max_size: int = EXACT_MAX) -> tuple[np.ndarray, float]:
    """Global minimum of w^T G w on the simplex by enumerating supports.

    On every face the stationarity system [G_SS 1; 1^T 0] is solved; feasible
    candidates are kept, vertices always included.
    """
    G = np.asarray(G, dtype=float)
    N = G.shape[0]
    if N > max_size:
        raise ValueError(f"exact solver limited to {max_size} points, got {N}")
    if N == 0:
        raise ValueError("empty matrix")
    best_w, best = None, INF
    for k in range(1, N + 1):
        for S in itertools.combinations(range(N), k):
            idx = list(S)
            if k == 1:
                ws = np.ones(1)
            else:
                A = np.zeros((k + 1, k + 1))
                A[:k, :k] = G[np.ix_(idx, idx)]
                A[:k, k] = 1.0
                A[k, :k] = 1.0
                rhs = np.zeros(k + 1)
                rhs[k] = 1.0
                sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
                ws = sol[:k]
                if np.any(ws < -1e-12) or abs(ws.sum() - 1.0) > 1e-9:
                    continue
                ws = np.clip(ws, 0.0, None)
                ws /= ws.sum()
            val = float(ws @ G[np.ix_(idx, idx)] @ ws)
            if val < best:
                best = val
                best_w = np.zeros(N)
                best_w[idx] = ws
    return best_w, best


def sphere_capacity_exact(d: int, p: float) -> float:
    """Riesz p-capacity of the unit sphere S^d, 0 < p < d."""
    if not 0 < p < d:
        raise ValueError(f"sphere capacity formula needs 0 < p < d, got p={p}, d={d}")
    # log-gamma keeps large d stable
    lg = (math.lgamma(d - p / 2) + math.lgamma(d / 2) - math.lgamma((d - p) / 2) - math.lgamma(d))
    return 2.0 * math.exp(lg / p)


def sphere_energy_exact(d: int, p: float) -> float:
    return sphere_capacity_exact(d, p) ** (-p)


def capacity(v: EnergyEstimate | float, p: float | None = None) -> float:
    """Capacity V^(-1/p); infinite energy gives capacity 0."""
    if isinstance(v, EnergyEstimate):
        value, p = v.value, v.p
    else:
        value = float(v)
    if p is None:
        raise ValueError("p is required for a bare energy value")
    if math.isinf(value):
        return 0.0
    if not value > 0:
        raise ValueError("energy must be positive")
    return value ** (-1.0 / p)


class CalibrationError(RuntimeError):
    pass


def calibrate_diag(d: int, p_ref: float, N: int, kind: str = "cell_ball", seed: int = 0,
                   bracket=(0.01, 10.0), rtol: float = 1e-4, tol: float = 1e-10,
                   cloud: PointCloud | None = None) -> float:
    """Constant c for which the N-point S^d equilibrium reproduces the exact capacity at p_ref.

    Bisection in log c; capacity increases with c because the diagonal shrinks.
    """
    if not 0 < p_ref < d:
        raise ValueError(f"need 0 < p_ref < d, got p_ref={p_ref}, d={d}")
    if N < 50:
        raise ValueError("calibration requires N >= 50")
    cloud = sample_sphere(d, d + 1, N, seed) if cloud is None else cloud
    target = sphere_capacity_exact(d, p_ref)
    h = local_spacing(cloud)
    D = pairwise_distances(cloud.points)
    off = ~np.eye(N, dtype=bool)
    base = np.where(off, D, 1.0) ** (-p_ref)
    unit_diag = h ** (-p_ref)
    if kind == "self_ball":
        unit_diag = unit_diag * ball_self_energy(d, p_ref)
    elif kind != "cell_ball":
        raise ValueError(f"cannot calibrate policy {kind!r}")

    def err(c):
        G = base.copy()
        G[~off] = unit_diag * c ** (-p_ref)
        _, f, _, _, _ = minimize_simplex_quadratic(G, tol)
        return f ** (-1.0 / p_ref) / target - 1.0

    lo, hi = map(float, bracket)
    e_lo, e_hi = err(lo), err(hi)
    if e_lo > 0 or e_hi < 0:
        raise CalibrationError(f"bracket [{lo}, {hi}] gives relative errors [{e_lo:.4g}, {e_hi:.4g}]; "
                               "no sign change")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        e = err(mid)
        if abs(e) <= rtol:
            return mid
        if e < 0:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"bisection stalled at c={mid:.6g}, error {e:.3g}")


# --- binary / CSV export -----------------------------------------------------

MATRIX_MAGIC = b"RZKM"


def write_matrix(K, path) -> Path:
    """Little-endian dump: 4-byte magic, uint32 N, then N*N float64 row-major."""
    A = np.ascontiguousarray(K.entries if isinstance(K, KernelMatrix) else K, dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<I", A.shape[0]))
        fh.write(A.tobytes(order="C"))
    return path


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MATRIX_MAGIC:
        raise ValueError("not a kernel matrix dump")
    (N,) = struct.unpack("<I", raw[4:8])
    A = np.frombuffer(raw[8:], dtype="<f8")
    if A.size != N * N:
        raise ValueError("truncated matrix dump")
    return A.reshape(N, N).copy()


def write_weights_csv(weights, path, header: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        fh.write("index,weight\n")
        for i, w in enumerate(weights):
            fh.write(f"{i},{format(float(w), '.17g')}\n")
    return path
