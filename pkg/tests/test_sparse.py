import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsedom import oracle
from sparsedom.generators import random_cloud, single_point, uniform_line
from sparsedom.lattice import build_lattice
from sparsedom.operators import maximal_T_star
from sparsedom.space import default_dominating
from sparsedom.sparse import (
    DominationError, SparseFamily, bilinear_average_A, build_sparse_domination, check_sparseness,
    choose_root, dump_domination, parse_domination, sparse_operator, sparse_operator_all,
    stopping_time_decompose, stopping_time_decompose_maximal, verify_domination,
)

from conftest import kernel_for


def _root(lat, sp):
    return choose_root(lat, sp, sp.support_mask)


def test_average_examples(line, rng):
    lat = build_lattice(line)
    top = lat.top()[0]
    assert bilinear_average_A(line, np.ones((2, 10)), top, 30.0) == pytest.approx(1.0)
    f = rng.random((2, 10))
    f[0] = 0
    assert bilinear_average_A(line, f, top, 30.0) == 0.0
    g = rng.random((2, 10))
    for c in lat.cells:
        assert bilinear_average_A(line, g, c, 30.0) == pytest.approx(oracle.brute_A(line, g, c, 30.0), rel=1e-12)


def test_sparse_operator_examples(line):
    lat = build_lattice(line)
    top = lat.top()[0]
    empty = SparseFamily(lat, (), {})
    assert sparse_operator(empty, np.ones((2, 10)), 3, line) == 0.0
    one = SparseFamily(lat, (top.id,), {top.id: top.members})
    assert sparse_operator(one, np.ones((2, 10)), 3, line) == pytest.approx(1.0)


def test_sparseness_examples(line):
    lat = build_lattice(line)
    level = lat.at_level(lat.levels()[-1])
    fam = SparseFamily(lat, tuple(c.id for c in level), {c.id: c.members for c in level}, eta=1.0)
    assert check_sparseness(fam, line).ok
    a, b = level[0], level[1]
    bad = SparseFamily(lat, (a.id, b.id), {a.id: a.members, b.id: a.members}, eta=0.0)
    rep = check_sparseness(bad, line)
    assert rep.kinds() == {"disjointness", "containment"}
    assert rep.witnesses("disjointness")[0]["point"] in a.members


@pytest.mark.parametrize("maximal", [False, True])
def test_stopping_time_examples(line, rng, maximal):
    k = kernel_for(line)
    lam = default_dominating(line)
    lat = build_lattice(line)
    Q0 = _root(lat, line)

    def run(f, **kw):
        if maximal:
            return stopping_time_decompose_maximal(f, Q0, lat, line, lam, **kw)
        return stopping_time_decompose(k, f, Q0, lat, line, lam, **kw)

    zero = run(np.zeros((2, 10)))
    assert not zero.omega and not zero.F and not zero.C
    f = rng.random((2, 10))
    huge = run(f, M_init=1e300)
    assert not huge.omega and huge.constant <= 1e300


@pytest.mark.parametrize("maximal", [False, True])
def test_concentrated_input_stops(fixtures, maximal):
    grid = fixtures["planar-grid"]
    lam = default_dominating(grid)
    lat = build_lattice(grid)
    Q0 = _root(lat, grid)
    spike = np.full((2, grid.n), 1e-3)
    spike[:, 0] = 50.0
    if maximal:
        st_ = stopping_time_decompose_maximal(spike, Q0, lat, grid, lam)
    else:
        st_ = stopping_time_decompose(kernel_for(grid), spike, Q0, lat, grid, lam)
    assert st_.F and all(st_.checks.values())
    assert isinstance(st_.constant, float)


def test_stopping_time_rejects_bad_input(line):
    k = kernel_for(line)
    lat = build_lattice(line)
    nd = next(c for c in lat.cells if not c.is_doubling)
    with pytest.raises(DominationError):
        stopping_time_decompose(k, np.ones((2, 10)), nd, lat, line)


def test_domination_zero_and_single_point():
    sp = uniform_line(10)
    res = build_sparse_domination(kernel_for(sp), np.zeros((2, 10)), build_lattice(sp), sp)
    assert res.C_dom == 0 and all(not fam.cells for fam in res.layers[1:])
    one = single_point()
    lat = build_lattice(one, k_min=0, k_max=0)
    f = [[2.0], [3.0]]
    res = build_sparse_domination(kernel_for(one), f, lat, one)
    assert [fam.cells for fam in res.layers] == [(lat.cells[0].id,)]
    assert sparse_operator(res.layers, f, 0, one) == pytest.approx(bilinear_average_A(one, f, lat.cells[0], 30.0))
    assert res.C_dom == verify_domination(kernel_for(one), f, res, one)["C_dom"] == 0.0


def test_domination_line_trials(line):
    k = kernel_for(line)
    lat = build_lattice(line)
    cdoms = []
    for seed in range(10):
        f = np.random.default_rng(seed).random((2, 10))
        res = build_sparse_domination(k, f, lat, line)
        for x, ts, dom, _ in res.table:
            assert ts <= res.C_dom * dom * (1 + 1e-12)
        assert verify_domination(k, f, res, line)["C_dom"] == pytest.approx(res.C_dom, rel=1e-9)
        for fam in res.layers:
            assert check_sparseness(fam, line, 0.4).ok
        assert all(all(n.checks.values()) for n in res.nodes)
        cdoms.append(res.C_dom)
    assert max(cdoms) / min(cdoms) < 10


def test_deleting_a_cell_raises_ratio(line):
    k = kernel_for(line)
    lat = build_lattice(line)
    f = np.random.default_rng(1).random((2, 10))
    res = build_sparse_domination(k, f, lat, line)
    first = res.layers[0]
    keep = tuple(c for c in first.cells if c != res.root)
    cut = dataclasses.replace(first, cells=keep, E={c: first.E[c] for c in keep})
    trimmed = dataclasses.replace(res, layers=[cut, *res.layers[1:]])
    assert verify_domination(k, f, trimmed, line)["C_dom"] > res.C_dom


def test_layered_operator_matches_oracle(line):
    f = np.random.default_rng(2).random((2, 10))
    res = build_sparse_domination(kernel_for(line), f, build_lattice(line), line)
    fast = sparse_operator_all(res.layers, f, line)
    for x in range(10):
        assert fast[x] == pytest.approx(oracle.brute_sparse_operator(res.layers, f, x, line), rel=1e-12)
        assert sparse_operator(res.layers, f, x, line) == pytest.approx(fast[x], rel=1e-12)


def test_serialization_round_trip_and_determinism(line):
    k = kernel_for(line)
    lat = build_lattice(line)
    f = np.random.default_rng(3).random((2, 10))
    a = build_sparse_domination(k, f, lat, line)
    b = build_sparse_domination(k, f, lat, line)
    text = dump_domination(a, line)
    assert text == dump_domination(b, line)
    back = parse_domination(text, lat, line)
    assert dump_domination(back, line) == text
    assert np.allclose(sparse_operator_all(back.layers, f, line), sparse_operator_all(a.layers, f, line))


def test_support_outside_declared_set(line):
    support = np.zeros(10, dtype=bool)
    support[:5] = True
    with pytest.raises(DominationError):
        build_sparse_domination(kernel_for(line), np.ones((2, 10)), build_lattice(line), line, support=support)


@given(st.integers(0, 10**6))
def test_domination_random_cloud(seed):
    sp = random_cloud(16, seed=seed)
    k = kernel_for(sp)
    lat = build_lattice(sp)
    f = np.random.default_rng(seed).random((2, 16))
    try:
        res = build_sparse_domination(k, f, lat, sp)
    except DominationError:
        return
    dom = sparse_operator_all(res.layers, f, sp)
    for x in range(16):
        assert maximal_T_star(k, sp, f, x) <= res.C_dom * dom[x] * (1 + 1e-12)
    for fam in res.layers:
        assert check_sparseness(fam, sp, 0.4).ok
    for node in res.nodes:
        assert all(node.checks.values())
