import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rieszcap import decay as D
from rieszcap import energy as E
from rieszcap.core import unit_sphere_area
from rieszcap.geometry import cantor_spec, ifs_attractor, sample_sphere

CANTOR_DIM = math.log(2) / math.log(3)


def test_default_grid():
    g = D.default_p_grid(2.0)
    np.testing.assert_allclose(2.0 - g, [0.5, 0.25, 0.125, 0.0625, 0.03125])
    exact = D.default_p_grid(2.0, min_gap=None, K=10)
    assert exact.size == 11 and 2.0 - exact[-1] == pytest.approx(0.5 / 1024)
    small = D.default_p_grid(0.3)
    assert np.all(small > 0)


def test_geometric_grid():
    g = D.geometric_p_grid(1.0, 0.5, 0.98, 8)
    assert g[0] == pytest.approx(0.5) and g[-1] == pytest.approx(0.98)
    r = (1 - g[1:]) / (1 - g[:-1])
    np.testing.assert_allclose(r, r[0])


def test_exact_curve_matches_formula():
    p = np.array([0.25, 0.5, 1.0, 1.5, 1.9])
    c = D.exact_sphere_curve(2, p)
    np.testing.assert_allclose(c.cap_values, 2 * (1 - p / 2) ** (1 / p), rtol=1e-10)
    assert c.bound_direction == ["exact"] * 5 and c.monotone


def test_numeric_curve_single_entry():
    circle = sample_sphere(1, 2, 500)
    c = D.capacity_curve(circle, [0.5], D.SolverConfig(E.self_ball(None, 1)))
    assert len(c) == 1
    assert abs(c.cap_values[0] / E.sphere_capacity_exact(1, 0.5) - 1) <= 0.02
    assert c.bound_direction == ["heuristic"] and c.converged == [True]


def test_empty_curve():
    c = D.capacity_curve(sample_sphere(1, 2, 50), [], D.SolverConfig(E.cell_ball(0.5)))
    assert len(c) == 0 and D.decay_ratio(c) == []


def test_curve_validation():
    with pytest.raises(ValueError):
        D.CapacityCurve(1.0, [0.5, 0.4], [1, 1], ["exact"] * 2)
    with pytest.raises(ValueError):
        D.CapacityCurve(1.0, [0.5, 1.0], [1, 1], ["exact"] * 2)
    with pytest.raises(ValueError):
        D.capacity_curve(sample_sphere(1, 2, 50), [1.2], D.SolverConfig(E.cell_ball(0.5)))


def test_decay_ratio_two_sphere():
    c = D.exact_sphere_curve(2, [1.0, 1.9, 1.999999])
    r = dict(D.decay_ratio(c))
    assert r[1.0] == pytest.approx(1.0, rel=1e-12)
    assert r[1.9] == pytest.approx(2**0.9, rel=1e-12)
    assert r[1.9] == pytest.approx(1.86607, abs=1e-5)
    assert r[1.999999] == pytest.approx(2.0, rel=1e-6)


@given(st.floats(0.01, 1.99))
def test_two_sphere_ratio_identity(p):
    (_, ratio), = D.decay_ratio(D.exact_sphere_curve(2, [p]))
    assert ratio == pytest.approx(2 ** (p - 1), rel=1e-11)


@pytest.mark.parametrize("scheme", D.SCHEMES)
def test_constant_ratios(scheme):
    limit, _ = D.extrapolate_limit([(0.5, 3.0), (0.75, 3.0), (0.9, 3.0)], 1.0, scheme)
    assert limit == pytest.approx(3.0, rel=1e-14)


def test_richardson_two_sphere():
    ratios = D.decay_ratio(D.exact_sphere_curve(2, [1.9, 1.95, 1.975]))
    limit, diag = D.extrapolate_limit(ratios, 2.0, "richardson")
    assert abs(limit - 2.0) <= 1e-3
    assert diag["error_estimate"] >= abs(limit - 2.0)


def test_richardson_exact_on_quadratics():
    f = lambda g: 1.5 - 0.3 * g + 2.0 * g**2
    ratios = [(1 - g, f(g)) for g in (0.4, 0.1, 0.05, 0.02)]
    assert D.extrapolate_limit(ratios, 1.0, "richardson")[0] == pytest.approx(1.5, rel=1e-12)
    lin = [(1 - g, 1.5 - 0.3 * g) for g in (0.4, 0.1, 0.05)]
    assert D.extrapolate_limit(lin, 1.0, "linear_in_gap")[0] == pytest.approx(1.5, rel=1e-12)


def test_extrapolate_guards():
    with pytest.raises(ValueError):
        D.extrapolate_limit([(0.5, 1.0)], 1.0, "linear_in_gap")
    with pytest.raises(ValueError):
        D.extrapolate_limit([(0.5, 1.0), (0.6, 1.0)], 1.0, "richardson")
    with pytest.raises(ValueError):
        D.extrapolate_limit([(0.5, 1.0)], 1.0, "spline")


def test_hausdorff_from_decay():
    assert D.hausdorff_from_decay(2.0, 2.0) == pytest.approx(4 * math.pi)
    assert D.hausdorff_from_decay(0.0, 2.0) == 0.0
    assert D.hausdorff_from_decay(1.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        D.hausdorff_from_decay(-1.0, 1.0)


def test_targets():
    assert D.rectifiable_target(4 * math.pi, 2.0) == pytest.approx(2.0)
    # Cantor with H^d = 1 and sigma = 2^d * 0.62344
    sigma = 2**CANTOR_DIM * 0.62344
    assert CANTOR_DIM * sigma == pytest.approx(0.6091, abs=1e-4)
    assert D.fractal_target(1.0, CANTOR_DIM, sigma) == pytest.approx(1 / 0.6091, rel=2e-4)
    assert unit_sphere_area(CANTOR_DIM) == pytest.approx(1.0113, abs=1e-4)
    assert 1 / D.rectifiable_target(1.0, CANTOR_DIM) == pytest.approx(1.0113, abs=1e-4)
    with pytest.raises(ValueError):
        D.fractal_target(1.0, 1.0, 0.0)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_exact_decay_limit_and_hausdorff(d):
    curve = D.exact_sphere_curve(d, D.default_p_grid(d, min_gap=None, K=8))
    limit, _ = D.extrapolate_limit(D.decay_ratio(curve), d, "richardson")
    assert limit == pytest.approx(D.sphere_decay_limit(d), abs=1e-3)
    H = D.hausdorff_from_decay(limit, d)
    assert abs(H / unit_sphere_area(d + 1) - 1) <= 5e-3


@pytest.mark.parametrize("d", [1, 2, 3])
def test_exact_capacity_vanishes_linearly(d):
    p = np.linspace(d - 0.5, d, 51)[:-1]
    c = D.exact_sphere_curve(d, p)
    C = 1.1 * D.sphere_decay_limit(d)
    assert np.all(c.cap_values**p <= C * (d - p))


def test_aggregate_preserves_energy(rng):
    spec = cantor_spec()
    fine = ifs_attractor(spec, 6)
    K = D.ifs_kernel_matrix(spec, 6, 0.4, fine).entries
    Kc, cw = D.aggregate(K, fine.weights, 4)
    assert cw.sum() == pytest.approx(1.0)
    # a coarse measure lifted by child masses has the same energy on both levels
    a = rng.random(cw.size)
    a /= a.sum()
    lifted = (a[:, None] * (fine.weights.reshape(-1, 4) / cw[:, None])).ravel()
    assert lifted @ K @ lifted == pytest.approx(a @ Kc @ a, rel=1e-12)


def test_ifs_self_energy_fixed_point():
    # the natural measure's energy I on the fine matrix reproduces itself
    spec = cantor_spec()
    fine = ifs_attractor(spec, 7)
    p = 0.5
    K = D.ifs_kernel_matrix(spec, 7, p, fine).entries
    w = fine.weights
    size = w ** (1 / fine.d)
    I = K[0, 0] / size[0] ** (-p)
    assert w @ K @ w == pytest.approx(I, rel=1e-12)


def test_fractal_table_nondecreasing_and_lower():
    spec = cantor_spec()
    grid = [0.3, 0.5, 0.6]
    table = D.fractal_decay_table(spec, [4, 5, 6], grid)
    assert all(e.bound_direction == "lower" for e in table)
    for p in grid:
        caps = [e.cap for e in table if e.p == p]
        assert len(caps) == 3 and all(b >= a for a, b in zip(caps, caps[1:]))
    again = D.fractal_decay_table(spec, [4, 5, 6], grid)
    assert [e.cap for e in again] == [e.cap for e in table]


def test_curve_csv_and_figures(tmp_path):
    c = D.exact_sphere_curve(2, [0.5, 1.0])
    text = D.curve_to_csv(c, header="h")
    lines = text.splitlines()
    assert lines[0] == "# h" and lines[1] == "p,cap,cap_pow_p,ratio,bound_direction"
    assert lines[3].startswith("1,") and lines[3].endswith(",exact")
    paths = D.write_figure_data(tmp_path, "hdr")
    assert [p.name for p in paths] == ["sphere_d1.csv", "sphere_d2.csv", "sphere_d3.csv"]
    body = paths[1].read_text().splitlines()
    assert body[0] == "# hdr" and body[1].startswith("d,p,cap")
    assert len(body) - 2 == 200
