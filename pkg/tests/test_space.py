import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsedom.generators import geometric_mass_line, planar_grid, random_cloud, single_point, uniform_line
from sparsedom.space import (
    Ball, DominatingFunction, MetricMeasureSpace, SpaceError, UnknownPointError, ball_points,
    breakpoint_radii, check_geometric_doubling, check_upper_doubling, default_dominating, dump_space,
    measure, parse_space, validated,
)


def test_ball_points_closed(line):
    assert ball_points(line, Ball(5, 2.5)) == {3, 4, 5, 6, 7}
    assert ball_points(line, Ball(5, 0)) == {5}
    assert ball_points(line, Ball(0, 100)) == set(range(10))


def test_ball_points_unknown_center(line):
    with pytest.raises(UnknownPointError):
        ball_points(line, Ball(42, 1.0))


def test_negative_radius_rejected():
    with pytest.raises(ValueError):
        Ball(0, -1.0)


def test_measure_sums_masses(line):
    assert measure(line, {3, 4, 5, 6, 7}) == 5
    assert measure(line, set()) == 0
    sp = MetricMeasureSpace.from_coords([0.0, 1.0, 2.0], [1.0, 2.0, 4.0])
    assert measure(sp, range(3)) == 7


def test_upper_doubling_examples(line, line_lambda):
    assert check_upper_doubling(line, line_lambda).ok
    assert measure(line, ball_points(line, Ball(5, 2.5))) <= line_lambda(5, 2.5)
    bad = DominatingFunction.from_callable(lambda x, r: r, c_lambda=2.0)
    rep = check_upper_doubling(line, bad)
    assert not rep.ok
    assert {"x": 5, "r": 1.0, "mu": 3.0, "lam": 1.0} in rep.witnesses("domination")


def test_upper_doubling_geometric_mass():
    sp = geometric_mass_line(8)
    assert check_upper_doubling(sp, default_dominating(sp)).ok


def test_oversized_mass_breaks_upper_doubling(fixtures):
    for name, sp in fixtures.items():
        lam = default_dominating(sp)
        assert check_upper_doubling(sp, lam).ok, name
        heavy = sp.mass.copy()
        heavy[0] = 10 * lam.c
        bumped = MetricMeasureSpace(sp.ids, sp.dist, heavy, sp.coords)
        assert not check_upper_doubling(bumped, lam).ok, name


def test_geometric_doubling_examples(line):
    assert check_geometric_doubling(single_point(), 1.0, 1.0).ok
    assert check_geometric_doubling(line, 1.0, 3.0).ok
    rep = check_geometric_doubling(planar_grid(3), 0.5, 1.0)
    assert rep.kinds() == {"cardinality"}
    assert rep.witnesses("cardinality")[0]["count"] > rep.witnesses("cardinality")[0]["bound"]


def test_breakpoints(line):
    assert list(breakpoint_radii(line, 5)) == [0, 1, 2, 3, 4, 5]
    assert list(breakpoint_radii(single_point())) == [0]
    sp = random_cloud(12, seed=1)
    assert len(breakpoint_radii(sp)) <= 12 * 11 // 2 + 1


def test_triangle_violation_names_witness():
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    with pytest.raises(SpaceError, match="triangle"):
        validated(["a", "b", "c"], d, [1, 1, 1])


def test_asymmetric_file_rejected():
    text = "space v1\npoint a mass=1\npoint b mass=1\ndist a b 1\ndist b a 2\n"
    with pytest.raises(SpaceError, match="asymmetric"):
        parse_space(text)


def test_space_round_trip(fixtures):
    for sp in fixtures.values():
        again = parse_space(dump_space(sp))
        assert dump_space(again) == dump_space(sp)
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    sp = validated(["a", "b", "c"], d, [1, 0.5, 0])
    assert dump_space(parse_space(dump_space(sp))) == dump_space(sp)
    assert list(sp.support) == [0, 1]


@given(st.integers(0, 10**6), st.integers(2, 20))
def test_balls_monotone_in_radius(seed, n):
    sp = random_cloud(n, seed=seed)
    for x in range(sp.n):
        radii = breakpoint_radii(sp, x)
        sets = [ball_points(sp, Ball(x, r)) for r in radii]
        assert all(a <= b for a, b in zip(sets, sets[1:]))


@given(st.integers(0, 10**6))
def test_measure_additive(seed):
    rng = np.random.default_rng(seed)
    sp = random_cloud(16, seed=seed, mass_spread=2.0)
    labels = rng.integers(0, 3, sp.n)
    parts = [set(np.flatnonzero(labels == k).tolist()) for k in range(3)]
    assert sum(measure(sp, p) for p in parts) == pytest.approx(measure(sp, range(sp.n)), rel=1e-12)


@given(st.integers(0, 10**6))
def test_ball_measure_sup_at_breakpoints(seed):
    # any ball functional constant between breakpoints: a dense sweep never beats them
    sp = random_cloud(10, seed=seed)
    lam = default_dominating(sp)
    for x in range(sp.n):
        radii = breakpoint_radii(sp, x)
        at_bp = max(measure(sp, ball_points(sp, Ball(x, r))) / float(lam(x, r)) for r in radii)
        dense = np.linspace(0, radii[-1] * 1.5, 200)
        swept = max(measure(sp, ball_points(sp, Ball(x, r))) / float(lam(x, r)) for r in dense)
        assert swept <= at_bp
