import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from rieszcap import density as De
from rieszcap.geometry import PointCloud, sample_cube

CANTOR_DIM = math.log(2) / math.log(3)


def points_1d(xs, ws):
    return PointCloud(np.asarray(xs, dtype=float)[:, None], ws, 1, 1.0)


def test_ball_counting_steps():
    cloud = points_1d([0.2, -0.7], [0.5, 0.5])
    f = De.ball_counting(cloud, [0.0])
    np.testing.assert_array_equal(f([0.1, 0.2, 0.5, 0.7, 2.0]), [0, 0.5, 0.5, 1.0, 1.0])
    assert f.atom == 0.0


def test_ball_counting_center_on_point():
    cloud = points_1d([0.0, 1.0], [0.3, 0.7])
    f = De.ball_counting(cloud, [0.0])
    assert f.atom == pytest.approx(0.3)
    assert f(0.0) == pytest.approx(0.3)


def test_first_order_circle(circle_4000):
    est = De.first_order_density(circle_4000, 0, 1.0)
    assert abs(est.value - 2.0) <= 0.05 * 2.0
    assert est.diagnostics["exists"] and est.scatter < 0.05


def test_first_order_square():
    sq = sample_cube(2, 2, 200)
    center = int(np.argmin(np.linalg.norm(sq.points - 0.5, axis=1)))
    est = De.first_order_density(sq, center, 2.0, r_max=0.4)
    assert abs(est.value / math.pi - 1) <= 0.05


def test_first_order_cantor_oscillates(cantor_clouds):
    cloud = cantor_clouds[10]
    est = De.first_order_density(cloud, 0, cloud.d)
    assert not est.diagnostics["exists"]
    assert est.scatter > 2 * De.EXISTENCE_SCATTER


def test_first_order_rejects_grid_below_floor():
    sq = sample_cube(1, 1, 100)
    with pytest.raises(ValueError):
        De.first_order_density(sq, 0, 1.0, r_grid=[1e-4, 2e-4])


def test_second_p_single_mass():
    cloud = points_1d([0.5], [1.0])
    val = De.second_order_density_p(cloud, [0.0], 1.0, 0.5)
    assert val == pytest.approx(math.sqrt(2) - 1, rel=1e-14)
    assert val == pytest.approx(0.41421, abs=1e-5)


def test_second_p_far_mass_and_guards():
    far = points_1d([1.0, -3.0], [0.5, 0.5])
    assert De.second_order_density_p(far, [0.0], 1.0, 0.5) == 0.0
    for p in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            De.second_order_density_p(far, [0.0], 1.0, p)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.floats(0.05, 0.95), st.integers(0, 10_000), st.floats(0.001, 0.3))
def test_second_p_matches_quadrature(N, frac, seed, r_min):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.3, 1.3, N)
    w = rng.random(N) + 0.01
    cloud = points_1d(xs, w)
    d = 1.0
    p = frac * d
    bcf = De.ball_counting(cloud, [0.0])
    breaks = sorted(set(np.abs(xs[(np.abs(xs) > r_min) & (np.abs(xs) < 1)])))
    edges = [r_min, *breaks, 1.0]
    num = sum(integrate.quad(lambda r: float(bcf(r)) * r ** (-p - 1), a, b, epsabs=0, epsrel=1e-13)[0]
              for a, b in zip(edges[:-1], edges[1:]))
    expect = (d - p) * num / (1 - r_min ** (d - p))
    got = De.second_order_density_p(cloud, [0.0], d, p, r_min=r_min)
    assert got == pytest.approx(expect, rel=1e-12, abs=1e-14)


def test_literal_form_excludes_center_atom():
    cloud = points_1d([0.0, 0.5], [0.4, 0.6])
    val = De.second_order_density_p(cloud, 0, 1.0, 0.5)
    assert val == pytest.approx(0.6 * (math.sqrt(2) - 1), rel=1e-14)


def test_second_order_circle(circle_4000):
    est = De.second_order_density(circle_4000, 0, 1.0)
    assert abs(est.value - 2.0) <= 0.05 * 2.0
    up = De.second_order_density(circle_4000, 0, 1.0, kind="second_upper")
    assert up.value >= est.value


def test_second_order_far_point_mass():
    cloud = points_1d([5.0, 5.1], [0.5, 0.5])
    est = De.second_order_density(cloud, [0.0], 1.0)
    assert est.value == 0.0


def test_second_order_guards(circle_4000):
    with pytest.raises(ValueError):
        De.second_order_density(circle_4000, 0, 1.0, p_schedule=[0.9, 0.8, 0.95])
    with pytest.raises(ValueError):
        De.second_order_density(circle_4000, 0, 1.0, p_schedule=[0.8, 0.9])
    with pytest.raises(ValueError):
        De.second_order_density(circle_4000, 0, 1.0, kind="first")


def test_log_form_constant_integrand():
    # mu(B(x, r)) = r on a fine grid of steps, d = 1: every log average is ~1
    r = np.linspace(0, 1, 2_000_001)[1:]
    bcf = De.BallCountingFunction(np.zeros(1), r, r.copy())
    for eta in (1e-1, 1e-2, 1e-3):
        assert De.log_average(bcf, 1.0, eta) == pytest.approx(1.0, abs=1e-3 / abs(math.log(eta)) + 1e-6)


def test_log_form_matches_p_form_circle(circle_4000):
    a = De.second_order_density(circle_4000, 0, 1.0).value
    b = De.second_order_density_log(circle_4000, 0, 1.0).value
    assert abs(b - 2.0) <= 0.1 and abs(a - b) <= 0.05 * a


def test_log_form_guards(circle_4000):
    with pytest.raises(ValueError):
        De.second_order_density_log(circle_4000, 0, 1.0, eta_schedule=[0.01, 0.1])
    with pytest.raises(ValueError):
        De.second_order_density_log(circle_4000, 0, 1.0, eta_schedule=[1.5, 0.1])


def test_averaged_circle(circle_4000):
    est = De.average_second_order_density(circle_4000, 1.0, M=32, seed=3)
    assert abs(est.value - 2.0) <= 0.1 and est.spread < 1e-6


def test_averaged_single_center_matches(circle_4000):
    est = De.average_second_order_density(circle_4000, 1.0, M=1, seed=11)
    c = est.diagnostics["centers"][0]
    single = De.second_order_density(circle_4000, c, 1.0)
    assert est.value == single.value


def test_averaged_cantor_forms_agree(cantor_clouds):
    cloud = cantor_clouds[10]
    a = De.average_second_order_density(cloud, cloud.d, M=64, seed=0, form="p").value
    b = De.average_second_order_density(cloud, cloud.d, M=64, seed=0, form="log").value
    assert abs(a - b) <= 0.05 * a
    assert abs(a - 0.9654) <= 0.03 * 0.9654


def test_averaged_is_deterministic(cantor_clouds):
    cloud = cantor_clouds[8]
    a = De.average_second_order_density(cloud, cloud.d, M=16, seed=5)
    b = De.average_second_order_density(cloud, cloud.d, M=16, seed=5)
    assert a.value == b.value and a.diagnostics["centers"] == b.diagnostics["centers"]


def test_measure_scaling_exact(cantor_clouds):
    cloud = cantor_clouds[8]
    scaled = cloud.with_weights(cloud.weights * 3.0)
    a = De.second_order_density(cloud, 5, cloud.d).value
    b = De.second_order_density(scaled, 5, cloud.d).value
    assert b == pytest.approx(3 * a, rel=1e-13)


def test_ahlfors_interval():
    # interior balls just above the floor hold at most 2r + h of mass
    cube = sample_cube(1, 1, 400)
    C = De.ahlfors_constant(cube, 1.0)
    assert 2.0 <= C <= 2.0 + 1.0 / De.FLOOR_FACTOR + 1e-9


def test_ahlfors_cantor_stable(cantor_clouds):
    vals = [De.ahlfors_constant(c, c.d) for c in cantor_clouds.values()]
    assert max(vals) / min(vals) - 1 <= 1e-6
    assert all(np.isfinite(vals))


def test_ahlfors_point_mass():
    dot = PointCloud(np.zeros((1, 1)), [0.7], 1, 1.0)
    assert De.ahlfors_constant(dot, 1.0, r_grid=[0.1, 0.2, 0.4], floor=0.05) == pytest.approx(7.0)


def test_traces_csv():
    text = De.traces_to_csv([(0, 0.5, 1.25)], header="h")
    assert text == "# h\ncenter_index,p_or_eta,value\n0,0.5,1.25\n"
