"""Multilinear A_P weights, dual weights and the three-regime constant C_w.

Two normalizations of the per-ball weight quantity are offered.  ``"plain"``
is ``(avg nu)^(1/p) * prod_j (avg sigma_j)^(1/p'_j)``; ``"lms"`` is its p-th
power, the normalization in which the duality exponent ``p'_i / p`` holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import Cell, Lattice
from .operators import Kernel, KernelSums, as_tuple, average_A
from .space import DominatingFunction, MetricMeasureSpace

CASE1, CASE2, CASE3 = "case1", "case2", "case3"
DEFAULT_SLACK = 64.0


def conjugate(p: float) -> float:
    return math.inf if p == 1 else p / (p - 1.0)


@dataclass(frozen=True)
class ExponentTuple:
    ps: tuple

    def __post_init__(self):
        ps = tuple(float(p) for p in self.ps)
        if len(ps) < 2:
            raise ValueError("need at least two exponents")
        if any(not (1.0 <= p < math.inf) for p in ps):
            raise ValueError(f"exponents must lie in [1, inf): {ps}")
        object.__setattr__(self, "ps", ps)
        if not self.p > 1.0 / self.m:
            raise ValueError("p must exceed 1/m")

    @property
    def m(self) -> int:
        return len(self.ps)

    @property
    def p(self) -> float:
        return 1.0 / sum(1.0 / q for q in self.ps)

    @property
    def conj(self) -> tuple:
        return tuple(conjugate(q) for q in self.ps)

    @property
    def p_prime(self) -> float:
        return conjugate(self.p) if self.p > 1 else math.inf

    @property
    def regime(self) -> str:
        p = self.p
        if p <= 1:
            return CASE1
        if p >= max(self.conj):
            return CASE2
        return CASE3

    @property
    def p0_slot(self) -> int:
        """Slot (0-based) holding min p_i, equivalently max p'_i; ties go to
        the lowest slot."""
        return min(range(self.m), key=lambda i: (self.ps[i], i))

    @property
    def p0_prime(self) -> float:
        return self.conj[self.p0_slot]


@dataclass(frozen=True, eq=False)
class WeightTuple:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("weights must be an (m, N) array")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("weights must be finite and strictly positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def ones(cls, m: int, n: int) -> "WeightTuple":
        return cls(np.ones((m, n)))


def _check(weights: WeightTuple, exps: ExponentTuple):
    if weights.m != exps.m:
        raise ValueError("weight and exponent tuples differ in length")


def nu_w(weights: WeightTuple, exps: ExponentTuple) -> np.ndarray:
    _check(weights, exps)
    p = exps.p
    return np.prod([weights.values[j] ** (p / exps.ps[j]) for j in range(exps.m)], axis=0)


def sigmas(weights: WeightTuple, exps: ExponentTuple) -> np.ndarray:
    """w_i^(1 - p'_i); slots with p_i = 1 are left as NaN."""
    _check(weights, exps)
    out = np.full(weights.values.shape, np.nan)
    for j, q in enumerate(exps.conj):
        if math.isfinite(q):
            out[j] = weights.values[j] ** (1.0 - q)
    return out


def ball_table(weights: WeightTuple, exps: ExponentTuple, rho: float, space: MetricMeasureSpace,
               normalization: str = "plain") -> list:
    """(center, radius, value) for every ball; each ball set is taken at the
    smallest radius producing it, where mu(rho B) is smallest."""
    if rho < 1:
        raise ValueError("rho must be at least 1")
    if normalization not in ("plain", "lms"):
        raise ValueError(f"unknown normalization {normalization!r}")
    nu = nu_w(weights, exps)
    sig = sigmas(weights, exps)
    mass = space.mass
    rows = []
    for x in range(space.n):
        d = space.dist[x]
        for r in np.unique(d):
            inside = d <= r
            big = float(mass[d <= rho * r].sum())
            if big <= 0:
                continue
            val = (float((nu * mass)[inside].sum()) / big) ** (1.0 / exps.p)
            for j, q in enumerate(exps.conj):
                if math.isfinite(q):
                    val *= (float((sig[j] * mass)[inside].sum()) / big) ** (1.0 / q)
                else:
                    atoms = inside & (mass > 0)
                    val *= 1.0 / float(weights.values[j][atoms].min())
            if normalization == "lms":
                val = val**exps.p
            rows.append((x, float(r), val))
    return rows


def ap_characteristic(weights: WeightTuple, exps: ExponentTuple, rho: float, space: MetricMeasureSpace,
                      normalization: str = "plain") -> float:
    rows = ball_table(weights, exps, rho, space, normalization)
    return max((r[2] for r in rows), default=0.0)


def dual_weight_tuple(weights: WeightTuple, exps: ExponentTuple, i: int):
    """Replace slot i (1-based) by nu_w^(1-p') with exponent p'."""
    _check(weights, exps)
    if not 1 <= i <= exps.m:
        raise ValueError(f"slot {i} out of range 1..{exps.m}")
    if exps.p <= 1:
        raise ValueError("duality needs p > 1")
    pp = exps.p_prime
    vals = np.array(weights.values)
    vals[i - 1] = nu_w(weights, exps) ** (1.0 - pp)
    ps = list(exps.ps)
    ps[i - 1] = pp
    return WeightTuple(vals), ExponentTuple(tuple(ps))


def check_duality_identity(weights: WeightTuple, exps: ExponentTuple, i: int, rho: float,
                           space: MetricMeasureSpace, rtol: float = 1e-9) -> dict:
    dw, de = dual_weight_tuple(weights, exps, i)
    power = exps.conj[i - 1] / exps.p
    orig = ball_table(weights, exps, rho, space, "lms")
    dual = ball_table(dw, de, rho, space, "lms")
    worst = 0.0
    for (x, r, a), (_, _, b) in zip(orig, dual):
        target = a**power
        worst = max(worst, abs(b - target) / max(abs(target), 1e-300))
    lhs = max(r[2] for r in dual)
    rhs = max(r[2] for r in orig) ** power
    return {"lhs": lhs, "rhs": rhs, "max_rel_err": worst, "ok": worst <= rtol, "balls": len(orig)}


# ---------------------------------------------------------------------------
# C_w


def _family_pairs(layers) -> list:
    pairs = []
    for fam in layers:
        pairs.extend((fam.lattice.cell(cid), fam.E[cid]) for cid in fam.cells)
    return pairs


def _cell_term(regime, exps, nu, sig, mass, Q: Cell, E, big_mask, m) -> float:
    p = exps.p
    q = list(Q.members)
    nuQ = float((nu * mass)[q].sum())
    muQ = float(mass[q].sum())
    muB = float(mass[big_mask].sum())
    sB = [float((sig[j] * mass)[big_mask].sum()) for j in range(m)]
    if regime == CASE1:
        p0 = exps.p0_prime
        num = nuQ**p0 * math.prod(sB[j] ** (p * p0 / exps.conj[j]) for j in range(m))
        return num / (muB ** (m * p) * muQ ** (m * p * (p0 - 1.0)))
    e = list(E)
    nuE = float((nu * mass)[e].sum())
    sE = [float((sig[j] * mass)[e].sum()) for j in range(m)]
    if regime == CASE2:
        den = muB**m * nuE ** (1.0 / exps.p_prime) * math.prod(sE[j] ** (1.0 / exps.ps[j]) for j in range(m))
        return nuQ * math.prod(sB) / den
    p0 = max(exps.conj)
    num = nuQ**p0 * math.prod(s**p0 for s in sB)
    den = (muB ** (m * p0) * nuE ** (p0 / exps.p_prime)
           * math.prod(sE[j] ** (p0 / exps.ps[j]) for j in range(m)))
    return num / den


def c_omega(weights: WeightTuple, exps: ExponentTuple, alpha: float, space: MetricMeasureSpace,
            lattice: Lattice | None = None, layers=None) -> dict:
    """The displayed constant for the exponents' regime.

    ``effective`` is the constant multiplying the p-th power norm bound: the
    displayed value itself in cases 1 and 3, its p-th power in case 2 (the
    case-2 display bounds the norm, not its p-th power).
    """
    _check(weights, exps)
    if any(q == 1 for q in exps.ps):
        raise ValueError("C_w needs every p_i > 1")
    regime = exps.regime
    nu, sig, mass, m = nu_w(weights, exps), sigmas(weights, exps), space.mass, exps.m
    if regime == CASE1:
        if lattice is None:
            raise ValueError("case 1 needs the lattice")
        pairs = [(c, None) for c in lattice.cells]
    else:
        pairs = _family_pairs(layers or [])
        if not pairs:
            raise ValueError("cases 2 and 3 need a nonempty family")
    best, arg, skipped = 0.0, None, 0
    for Q, E in pairs:
        if float(mass[list(Q.members)].sum()) <= 0:
            skipped += 1
            continue
        big = space.dist[Q.center] <= alpha * Q.radius
        val = _cell_term(regime, exps, nu, sig, mass, Q, E, big, m)
        if val > best or arg is None:
            best, arg = val, Q.id
    eff = best**exps.p if regime == CASE2 else best
    return {"value": best, "effective": eff, "regime": regime, "argmax": arg, "skipped": skipped}


def lp_norm_p(values, density, space: MetricMeasureSpace, p: float, mask=None) -> float:
    """int |v|^p density dmu."""
    v = np.abs(np.asarray(values, dtype=float)) ** p * density * space.mass
    return float(v[mask].sum() if mask is not None else v.sum())


def _rhs_norms(f, weights: WeightTuple, exps: ExponentTuple, space) -> float:
    f = as_tuple(f)
    return math.prod(lp_norm_p(f.values[j], weights.values[j], space, exps.ps[j]) ** (exps.p / exps.ps[j])
                     for j in range(exps.m))


def verify_sparse_weighted_bound(layers, f, weights: WeightTuple, exps: ExponentTuple, alpha: float,
                                 space: MetricMeasureSpace, lattice: Lattice,
                                 c_slack: float = DEFAULT_SLACK) -> dict:
    """||sum_k 100^-k A_{S_k} f||^p in L^p(nu_w) against C_w prod ||f_i||^p."""
    from .sparse import sparse_operator_all

    dom = sparse_operator_all(layers, f, space)
    lhs = lp_norm_p(dom, nu_w(weights, exps), space, exps.p)
    cw = c_omega(weights, exps, alpha, space, lattice, layers)
    rhs = cw["effective"] * _rhs_norms(f, weights, exps, space)
    ratio = _ratio(lhs, rhs)
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio, "ok": ratio <= c_slack, "c_omega": cw}


def verify_T_weighted_bound(kernel: Kernel, f, weights: WeightTuple, exps: ExponentTuple, lattice: Lattice,
                            space: MetricMeasureSpace, lam: DominatingFunction | None = None,
                            alpha: float = 30.0, result=None, c_slack: float = DEFAULT_SLACK,
                            trunc_mode: str = "linf") -> dict:
    from .sparse import build_sparse_domination

    if result is None:
        result = build_sparse_domination(kernel, f, lattice, space, lam, alpha)
    sums = KernelSums(kernel, space, f)
    tstar = np.array([sums.star(x, trunc_mode) for x in range(space.n)])
    lhs = lp_norm_p(tstar, nu_w(weights, exps), space, exps.p, space.support_mask)
    cw = c_omega(weights, exps, alpha, space, lattice, result.layers)
    rhs = cw["effective"] * _rhs_norms(f, weights, exps, space)
    ratio = _ratio(lhs, rhs)
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio, "ok": ratio <= c_slack, "c_omega": cw,
            "C_dom": result.C_dom}


def _ratio(lhs, rhs) -> float:
    if lhs <= 0:
        return 0.0
    return lhs / rhs if rhs > 0 else math.inf


def doubling_comparison(weights: WeightTuple, exps: ExponentTuple, alpha: float, space: MetricMeasureSpace,
                        lattice: Lattice, layers) -> dict:
    """C_w^(1/p) against [w]^max(1, p'_i/p) with [w] in the lms normalization
    at rho = 1."""
    cw = c_omega(weights, exps, alpha, space, lattice, layers)
    char = ap_characteristic(weights, exps, 1.0, space, "lms")
    expo = max([1.0] + [q / exps.p for q in exps.conj])
    lhs = cw["effective"] ** (1.0 / exps.p)
    rhs = char**expo
    return {"lhs": lhs, "rhs": rhs, "ratio": _ratio(lhs, rhs), "characteristic": char,
            "exponent": expo, "regime": cw["regime"]}


# ---------------------------------------------------------------------------
# text format


def parse_weights(text: str, space: MetricMeasureSpace, m: int | None = None) -> WeightTuple:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] != "weights v1":
        raise ValueError("missing 'weights v1' header")
    entries = []
    for ln in lines[1:]:
        tag, pid, val = ln.split()
        if not tag.startswith("w"):
            raise ValueError(f"bad record {ln!r}")
        entries.append((int(tag[1:]), space.index(pid), float(val)))
    mm = max([e[0] for e in entries] + [m or 0])
    vals = np.full((mm, space.n), np.nan)
    for i, p, v in entries:
        vals[i - 1, p] = v
    if np.any(np.isnan(vals)):
        raise ValueError("every weight needs a value at every point")
    return WeightTuple(vals)


def dump_weights(weights: WeightTuple, space: MetricMeasureSpace, meta: dict | None = None) -> str:
    out = [f"# {k}={v}" for k, v in (meta or {}).items()]
    out.append("weights v1")
    for i in range(weights.m):
        for p in range(space.n):
            out.append(f"w{i + 1} {space.ids[p]} {float(weights.values[i, p])!r}")
    return "\n".join(out) + "\n"


def power_weight(space: MetricMeasureSpace, center: int, gamma: float) -> np.ndarray:
    """(1 + d(x, center))**gamma."""
    return (1.0 + space.dist[center]) ** gamma


def parse_exponents(spec: str | Sequence) -> ExponentTuple:
    if isinstance(spec, str):
        spec = [s for s in spec.strip().strip("[]").replace(",", " ").split()]
    return ExponentTuple(tuple(float(s) for s in spec))
