import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsedom import oracle
from sparsedom.generators import uniform_line
from sparsedom.lattice import build_lattice
from sparsedom.sparse import SparseFamily, build_sparse_domination
from sparsedom.weights import (
    CASE1, CASE2, CASE3, ExponentTuple, WeightTuple, ap_characteristic, c_omega, check_duality_identity,
    doubling_comparison, dual_weight_tuple, dump_weights, nu_w, parse_exponents, parse_weights, power_weight,
    verify_sparse_weighted_bound, verify_T_weighted_bound,
)

from conftest import kernel_for

BIG_ALPHA = 1e6


def _power_pair(space, center=5):
    pw = power_weight(space, center, 1.0)
    return WeightTuple(np.vstack([pw, pw]))


def test_nu_examples():
    w = WeightTuple([[4.0], [9.0]])
    assert nu_w(w, ExponentTuple((2, 2)))[0] == pytest.approx(6.0)
    assert np.allclose(nu_w(WeightTuple.ones(3, 5), ExponentTuple((2, 3, 4))), 1.0)


def test_nu_matches_oracle(rng):
    w = WeightTuple(rng.uniform(0.1, 10, (3, 12)))
    ps = (1.5, 4.0, 7.0)
    assert np.allclose(nu_w(w, ExponentTuple(ps)), oracle.brute_nu_w(w, ps), rtol=1e-12)


@pytest.mark.parametrize("ps, regime, p0", [
    ((2, 2), CASE1, 2.0), ((4, 4), CASE2, 4 / 3), ((1.5, 6), CASE3, 3.0),
    ((1, 2), CASE1, math.inf), ((2, 6), CASE3, 2.0),
])
def test_regimes(ps, regime, p0):
    e = ExponentTuple(ps)
    assert e.regime == regime
    assert e.p0_prime == pytest.approx(p0)


def test_regime_boundary_goes_to_case2():
    # p = 3/2 and max p'_i = 3/2 at (3, 3)
    e = ExponentTuple((3, 3))
    assert e.p == pytest.approx(max(e.conj))
    assert e.regime == CASE2


def test_exponent_validation():
    with pytest.raises(ValueError):
        ExponentTuple((0.5, 2))
    with pytest.raises(ValueError):
        ExponentTuple((2,))
    assert parse_exponents("[1.5, 6]").ps == (1.5, 6.0)


def test_characteristic_examples(line):
    ones = WeightTuple.ones(2, 10)
    e = ExponentTuple((2, 2))
    assert ap_characteristic(ones, e, 1.0, line) == pytest.approx(1.0)
    assert ap_characteristic(ones, e, 2.0, line) == pytest.approx(1.0)
    assert oracle.brute_ap_characteristic(ones, (2, 2), 2.0, line) == pytest.approx(1.0)
    pw = _power_pair(line)
    assert ap_characteristic(pw, e, 1.0, line) == pytest.approx(1.429166666666667, rel=1e-12)
    assert oracle.brute_ap_characteristic(pw, (2, 2), 1.0, line) == pytest.approx(1.429166666666667, rel=1e-12)


def test_characteristic_with_unit_exponent(line, rng):
    w = WeightTuple(rng.uniform(0.5, 2.0, (2, 10)))
    for norm in ("plain", "lms"):
        assert ap_characteristic(w, ExponentTuple((1, 3)), 1.5, line, norm) == pytest.approx(
            oracle.brute_ap_characteristic(w, (1, 3), 1.5, line, norm), rel=1e-9)


@given(st.integers(0, 10**6), st.floats(1.0, 3.0), st.floats(1.0, 3.0))
def test_characteristic_monotone_in_rho(seed, a, b):
    rng = np.random.default_rng(seed)
    sp = uniform_line(8)
    w = WeightTuple(rng.uniform(0.2, 5.0, (2, 8)))
    e = ExponentTuple((2.5, 3.0))
    lo, hi = sorted((a, b))
    assert ap_characteristic(w, e, hi, sp) <= ap_characteristic(w, e, lo, sp) * (1 + 1e-12)


@given(st.integers(0, 10**6), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_characteristic_scale_invariant(seed, s, t):
    rng = np.random.default_rng(seed)
    sp = uniform_line(8)
    vals = rng.uniform(0.2, 5.0, (2, 8))
    e = ExponentTuple((2.0, 5.0))
    scaled = WeightTuple(vals * np.array([[s], [t]]))
    assert ap_characteristic(scaled, e, 1.0, sp) == pytest.approx(ap_characteristic(WeightTuple(vals), e, 1.0, sp),
                                                                 rel=1e-9)


def test_dual_tuple_example():
    dw, de = dual_weight_tuple(WeightTuple.ones(2, 4), ExponentTuple((4, 4)), 1)
    assert np.allclose(dw.values, 1.0)
    assert de.ps == (2.0, 4.0)
    with pytest.raises(ValueError):
        dual_weight_tuple(WeightTuple.ones(2, 4), ExponentTuple((2, 2)), 1)


def test_duality_examples(line):
    ones = check_duality_identity(WeightTuple.ones(2, 10), ExponentTuple((4, 4)), 1, 1.0, line)
    assert ones["ok"] and ones["lhs"] == pytest.approx(1.0)
    for i in (1, 2):
        rep = check_duality_identity(_power_pair(line), ExponentTuple((4, 4)), i, 1.0, line)
        assert rep["ok"] and rep["lhs"] == pytest.approx(rep["rhs"], rel=1e-9)


@given(st.integers(0, 10**6), st.sampled_from([2, 3]))
def test_duality_random(seed, m):
    rng = np.random.default_rng(seed)
    sp = uniform_line(6)
    ps = tuple(rng.uniform(1.1, 8.0, m))
    e = ExponentTuple(ps)
    if e.p <= 1:
        ps = tuple(q * m for q in ps)
        e = ExponentTuple(ps)
    w = WeightTuple(rng.uniform(0.1, 10.0, (m, 6)))
    assert check_duality_identity(w, e, int(rng.integers(1, m + 1)), 1.0, sp)["ok"]


def _four_point():
    sp = uniform_line(4)
    lat = build_lattice(sp)
    return sp, lat, lat.top()[0]


@pytest.mark.parametrize("ps, full, half", [((2, 2), 1.0, 1.0), ((4, 4), 1.0, 2.0), ((1.5, 6), 1.0, 8.0)])
def test_c_omega_hand_values(ps, full, half):
    sp, lat, top = _four_point()
    ones = WeightTuple.ones(2, 4)
    e = ExponentTuple(ps)
    for E, expect in ((top.members, full), (frozenset(sorted(top.members)[:2]), half)):
        fam = SparseFamily(lat, (top.id,), {top.id: E})
        got = c_omega(ones, e, BIG_ALPHA, sp, lat, [fam])
        assert got["value"] == pytest.approx(expect, rel=1e-12)
        assert got["value"] == pytest.approx(oracle.brute_c_omega(ones, ps, BIG_ALPHA, sp, lat, [fam]), rel=1e-12)


def test_c_omega_effective_scaling():
    sp, lat, top = _four_point()
    fam = SparseFamily(lat, (top.id,), {top.id: frozenset(sorted(top.members)[:2])})
    got = c_omega(WeightTuple.ones(2, 4), ExponentTuple((4, 4)), BIG_ALPHA, sp, lat, [fam])
    assert got["effective"] == pytest.approx(got["value"] ** 2)


def test_sparse_bound_single_cell():
    sp, lat, top = _four_point()
    fam = SparseFamily(lat, (top.id,), {top.id: top.members})
    ones = WeightTuple.ones(2, 4)
    for ps in ((2, 2), (4, 4), (1.5, 6)):
        res = verify_sparse_weighted_bound([fam], np.ones((2, 4)), ones, ExponentTuple(ps), BIG_ALPHA, sp, lat)
        assert res["lhs"] == pytest.approx(4.0)
        assert res["rhs"] == pytest.approx(4.0)
        zero = verify_sparse_weighted_bound([fam], np.zeros((2, 4)), ones, ExponentTuple(ps), BIG_ALPHA, sp, lat)
        assert zero["lhs"] == 0 and zero["ratio"] == 0


@pytest.mark.parametrize("ps", [(2, 2), (4, 4), (1.5, 6)])
def test_weighted_bounds_random(line, ps):
    k = kernel_for(line)
    lat = build_lattice(line)
    e = ExponentTuple(ps)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        f = rng.random((2, 10))
        w = WeightTuple(rng.uniform(0.5, 2.0, (2, 10)))
        res = build_sparse_domination(k, f, lat, line)
        assert verify_sparse_weighted_bound(res.layers, f, w, e, 30.0, line, lat)["ok"]
        assert verify_T_weighted_bound(k, f, w, e, lat, line, result=res)["ok"]


def test_T_bound_zero_input(line):
    k = kernel_for(line)
    res = verify_T_weighted_bound(k, np.zeros((2, 10)), WeightTuple.ones(2, 10), ExponentTuple((4, 4)),
                                  build_lattice(line), line)
    assert res["ratio"] == 0 and res["ok"]


def test_doubling_comparison_strict(line):
    lat = build_lattice(line, mode="strict")
    f = np.random.default_rng(0).random((2, 10))
    res = build_sparse_domination(kernel_for(line), f, lat, line, alpha=200.0)
    for ps in ((2, 2), (4, 4), (1.5, 3)):
        cmp_ = doubling_comparison(WeightTuple.ones(2, 10), ExponentTuple(ps), 200.0, line, lat, res.layers)
        assert cmp_["ratio"] <= 8


def test_weights_round_trip(line, rng):
    w = WeightTuple(rng.uniform(0.1, 10, (2, 10)))
    back = parse_weights(dump_weights(w, line, {"seed": 1}), line)
    assert np.array_equal(back.values, w.values)
    with pytest.raises(ValueError):
        WeightTuple([[1.0, 0.0]])
