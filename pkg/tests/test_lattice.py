import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsedom.generators import cantor_like_mass, geometric_mass_line, random_cloud, single_point, uniform_line
from sparsedom.lattice import (
    MONOTONE, Lattice, build_lattice, check_lattice, classify_doubling, dump_lattice, parse_lattice, theta,
    theta_decay_check,
)
from sparsedom.space import Ball, DominatingFunction, ball_points, default_dominating, measure


def _replace_cell(lat, cid, **changes):
    cells = list(lat.cells)
    cells[cid] = dataclasses.replace(cells[cid], **changes)
    return Lattice(lat.C0, lat.A0, lat.mode, lat.k_min, lat.k_max, tuple(cells))


def test_single_point_lattice():
    sp = single_point()
    lat = build_lattice(sp, k_min=-1, k_max=2)
    assert [len(lat.at_level(k)) for k in lat.levels()] == [1, 1, 1, 1]
    assert all(c.is_doubling and c.members == {0} for c in lat.cells)
    assert check_lattice(lat, sp).ok


def test_lab_line_example():
    sp = uniform_line(10)
    lat = build_lattice(sp, C0=2, A0=4, k_min=-2, k_max=2)
    assert check_lattice(lat, sp).ok
    assert len(lat.top()) == 1


def test_strict_line_example():
    sp = uniform_line(10)
    lat = build_lattice(sp, mode="strict")
    assert lat.A0 == 20002
    assert check_lattice(lat, sp).ok
    level0 = lat.at_level(0)
    assert len(level0) == 1 and level0[0].members == set(range(10))


def test_strict_requires_scale_gap():
    with pytest.raises(ValueError):
        build_lattice(uniform_line(4), C0=2, A0=100, mode="strict")


def test_shared_point_is_partition_violation(line):
    lat = build_lattice(line)
    k = max(lat.levels())
    a, b = lat.at_level(k)[:2]
    bad = _replace_cell(lat, b.id, members=b.members | a.members)
    assert "partition" in check_lattice(bad, line).kinds()


def test_oversized_radius_is_band_violation(line):
    lat = build_lattice(line)
    c = lat.at_level(max(lat.levels()))[0]
    bad = _replace_cell(lat, c.id, radius=2 * lat.C0 * lat.scale(c.level))
    assert "radius band" in check_lattice(bad, line).kinds()


def test_classify_doubling_examples(line):
    sp = single_point()
    lat = build_lattice(sp, k_min=0, k_max=1)
    assert all(c.is_doubling for c in classify_doubling(lat, sp, 1.0).cells)
    lat = build_lattice(line)
    for c in lat.cells:
        if ball_points(line, Ball(c.center, c.radius)) == set(range(10)):
            assert c.is_doubling


def test_doubling_flags_match_direct_sums():
    sp = geometric_mass_line(8)
    lat = build_lattice(sp)
    for c in lat.cells:
        small = measure(sp, ball_points(sp, Ball(c.center, c.radius)))
        big = measure(sp, ball_points(sp, Ball(c.center, 100 * c.radius)))
        assert c.is_doubling == (big <= lat.C0 * small)


def test_theta_examples():
    sp = single_point()
    lam = DominatingFunction.power(3.0, 1.0)
    lat = build_lattice(sp, k_min=0, k_max=0)
    cell = dataclasses.replace(lat.cells[0], radius=1.0)
    assert theta(cell, sp, lam, 200.0, m=2) == pytest.approx(1 / 36)


def test_theta_matches_direct_evaluation(line):
    lam = default_dominating(line)
    lat = build_lattice(line)
    for c in lat.cells:
        mu = sum(line.mass[y] for y in range(10) if abs(y - c.center) <= 30.0 * c.radius)
        assert theta(c, line, lam, 30.0, 2) == pytest.approx((mu / (lam.c * (1 + c.radius))) ** 2, rel=1e-12)


def test_theta_decay_report():
    sp = geometric_mass_line(8)
    lat = build_lattice(sp)
    rep = theta_decay_check(lat, sp, default_dominating(sp), 30.0, comparability=10.0)
    assert rep.stats["chains"] > 0
    assert np.isfinite(rep.stats["worst_ratio_over_bound"])
    all_doubling = build_lattice(single_point(), k_min=0, k_max=2)
    assert theta_decay_check(all_doubling, single_point(), default_dominating(single_point()), 30.0).stats["chains"] == 0


def test_lattice_round_trip_and_determinism(fixtures):
    for sp in fixtures.values():
        a, b = build_lattice(sp), build_lattice(sp)
        assert dump_lattice(a, sp) == dump_lattice(b, sp)
        again = parse_lattice(dump_lattice(a, sp), sp)
        assert dump_lattice(again, sp) == dump_lattice(a, sp)


def test_cantor_fixture_lab(fixtures):
    sp = cantor_like_mass(3)
    assert check_lattice(build_lattice(sp), sp).ok


@given(st.integers(0, 10**6), st.integers(2, 40), st.integers(1, 3))
def test_random_clouds_nest_and_partition(seed, n, dim):
    sp = random_cloud(n, seed=seed, dim=dim, mass_spread=1.0)
    lat = build_lattice(sp)
    assert check_lattice(lat, sp).ok
    for c in lat.cells:
        if c.children:
            assert frozenset().union(*(lat.cell(k).members for k in c.children)) == c.members
        if c.parent is not None:
            P = lat.cell(c.parent)
            inner = set(np.flatnonzero(sp.dist[c.center] <= MONOTONE * c.radius).tolist())
            outer = set(np.flatnonzero(sp.dist[P.center] <= MONOTONE * P.radius).tolist())
            assert inner <= outer
