"""Slow reference implementations.

Everything here is plain nested loops over points, tuples and a dense grid
of radii.  Nothing is imported from ``operators``, ``sparse`` or
``weights`` beyond the data types, so agreement with those modules is
evidence rather than tautology.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

ORACLE_LIMITS = {2: 64, 3: 24}
SWEEP_DENSITY = 10


class OracleBudgetError(RuntimeError):
    pass


def _budget(space, m):
    limit = ORACLE_LIMITS.get(m, 12)
    if space.n > limit:
        raise OracleBudgetError(f"oracle limited to N <= {limit} for m = {m}, got {space.n}")


def _fvals(f):
    return np.asarray(getattr(f, "values", f), dtype=float)


def brute_kernel(kernel, space, x, ys) -> float:
    s = 0.0
    for y in ys:
        s += float(space.dist[x][y])
    if kernel.family == "power":
        return kernel.scale * s ** (-kernel.m * kernel.dim)
    return kernel.scale / float(kernel.lam(x, s)) ** kernel.m


def _terms(kernel, space, f, x):
    """(ys, contribution) for every tuple avoiding x."""
    vals = _fvals(f)
    out = []
    for ys in itertools.product(range(space.n), repeat=kernel.m):
        if x in ys:
            continue
        prod = 1.0
        for j, y in enumerate(ys):
            prod *= vals[j][y] * space.mass[y]
        if prod == 0.0:
            continue
        out.append((ys, brute_kernel(kernel, space, x, ys) * prod))
    return out


def _outside(space, x, ys, r, mode):
    if mode == "l2":
        return sum(space.dist[x][y] ** 2 for y in ys) > r * r
    return max(space.dist[x][y] for y in ys) > r


def brute_truncated_T(kernel, space, f, x, r, trunc_mode="linf") -> float:
    _budget(space, kernel.m)
    total = 0.0
    for ys, v in _terms(kernel, space, f, x):
        if _outside(space, x, ys, r, trunc_mode):
            total += v
    return total


def _sweep(points):
    """All given points, SWEEP_DENSITY interior points per gap, and one
    point beyond the last."""
    pts = sorted(set(float(p) for p in points))
    grid = list(pts)
    for a, b in zip(pts, pts[1:]):
        grid.extend(a + (b - a) * t / (SWEEP_DENSITY + 1) for t in range(1, SWEEP_DENSITY + 1))
    if pts:
        grid.append(pts[-1] * 2 + 1)
    return sorted(grid)


def brute_T_star(kernel, space, f, x, trunc_mode="linf") -> float:
    _budget(space, kernel.m)
    terms = _terms(kernel, space, f, x)
    if trunc_mode == "l2":
        keys = [math.sqrt(sum(space.dist[x][y] ** 2 for y in ys)) for ys, _ in terms]
    else:
        keys = [max(space.dist[x][y] for y in ys) for ys, _ in terms]
    radii = _sweep(keys + [0.0])
    best = 0.0
    for r in radii:
        if r <= 0:
            r = min([k for k in keys if k > 0], default=1.0) / 2
        s = 0.0
        for (ys, v), key in zip(terms, keys):
            if key > r:
                s += v
        best = max(best, abs(s))
    return best


def brute_F(kernel, space, f, x, cell) -> float:
    if x not in cell.members:
        raise ValueError("point outside the cell")
    rad = 30.0 * cell.radius
    total = 0.0
    for ys, v in _terms(kernel, space, f, x):
        if not all(space.dist[cell.center][y] <= rad for y in ys):
            total += v
    return total


def brute_grand_maximal(kernel, space, f, x, Q0, lattice) -> float:
    if x not in Q0.members:
        raise ValueError("point outside the cell")
    best = 0.0
    stack = [Q0.id]
    while stack:
        P = lattice.cell(stack.pop())
        stack.extend(P.children)
        if x not in P.members:
            continue
        for y in P.members:
            best = max(best, abs(brute_F(kernel, space, f, y, P)))
    return best


def brute_M_lambda(space, f, x, lam) -> float:
    vals = _fvals(f)
    m = vals.shape[0]
    best = 0.0
    for r in _sweep(space.dist[x]):
        prod = 1.0
        for j in range(m):
            prod *= sum(abs(vals[j][y]) * space.mass[y] for y in range(space.n) if space.dist[x][y] <= r)
        best = max(best, prod / float(lam(x, r)) ** m)
    return best


def brute_M_lambda_d(space, f, x, Q0, lattice, lam) -> float:
    vals = _fvals(f)
    best = 0.0
    stack = [Q0.id]
    while stack:
        P = lattice.cell(stack.pop())
        stack.extend(P.children)
        if x not in P.members:
            continue
        prod = 1.0
        for j in range(vals.shape[0]):
            integral = sum(abs(vals[j][y]) * space.mass[y] for y in range(space.n)
                           if space.dist[P.center][y] <= 30.0 * P.radius)
            prod *= integral / float(lam(P.center, P.radius))
        best = max(best, prod)
    return best


def brute_A(space, f, cell, alpha) -> float:
    vals = _fvals(f)
    big = sum(space.mass[y] for y in range(space.n) if space.dist[cell.center][y] <= alpha * cell.radius)
    out = 1.0
    for j in range(vals.shape[0]):
        out *= sum(abs(vals[j][y]) * space.mass[y] for y in range(space.n)
                   if space.dist[cell.center][y] <= 30.0 * cell.radius) / big
    return out


def brute_sparse_operator(layers, f, x, space) -> float:
    if not isinstance(layers, (list, tuple)):
        layers = [layers]
    total = 0.0
    for fam in layers:
        coeff = 100.0 ** (-fam.layer) if len(layers) > 1 or fam.layer else 1.0
        for cid in fam.cells:
            c = fam.lattice.cell(cid)
            if x in c.members:
                total += coeff * brute_A(space, f, c, fam.alpha)
    return total


def brute_weighted_maximal(space, f, x, density, sets) -> float:
    best = 0.0
    for S in sets:
        pts = [y for y in range(space.n) if S[y]]
        if x not in pts:
            continue
        w = sum(density[y] * space.mass[y] for y in pts)
        if w > 0:
            best = max(best, sum(abs(f[y]) * density[y] * space.mass[y] for y in pts) / w)
    return best


def brute_nu_w(weights, ps) -> np.ndarray:
    w = _fvals(weights)
    p = 1.0 / sum(1.0 / q for q in ps)
    out = np.ones(w.shape[1])
    for j, q in enumerate(ps):
        for y in range(w.shape[1]):
            out[y] *= w[j][y] ** (p / q)
    return out


def brute_ap_characteristic(weights, ps, rho, space, normalization="plain") -> float:
    w = _fvals(weights)
    p = 1.0 / sum(1.0 / q for q in ps)
    nu = brute_nu_w(w, ps)
    best = 0.0
    for x in range(space.n):
        for r in _sweep(space.dist[x]):
            ball = [y for y in range(space.n) if space.dist[x][y] <= r]
            big = sum(space.mass[y] for y in range(space.n) if space.dist[x][y] <= rho * r)
            if big <= 0:
                continue
            val = (sum(nu[y] * space.mass[y] for y in ball) / big) ** (1.0 / p)
            for j, q in enumerate(ps):
                if q == 1:
                    val /= min(w[j][y] for y in ball if space.mass[y] > 0)
                else:
                    qc = q / (q - 1.0)
                    val *= (sum(w[j][y] ** (1.0 - qc) * space.mass[y] for y in ball) / big) ** (1.0 / qc)
            best = max(best, val**p if normalization == "lms" else val)
    return best


def brute_c_omega(weights, ps, alpha, space, lattice=None, layers=None) -> float:
    """Displayed three-regime constant, written out case by case."""
    w = _fvals(weights)
    m = len(ps)
    p = 1.0 / sum(1.0 / q for q in ps)
    conj = [q / (q - 1.0) for q in ps]
    nu = brute_nu_w(w, ps)
    sig = [[w[j][y] ** (1.0 - conj[j]) for y in range(space.n)] for j in range(m)]

    def meas(dens, pts):
        return sum((dens[y] if dens is not None else 1.0) * space.mass[y] for y in pts)

    if p <= 1:
        j0 = min(range(m), key=lambda i: (ps[i], i))
        q0 = conj[j0]
        items = [(c, None) for c in lattice.cells]
    else:
        q0 = max(conj)
        items = [(fam.lattice.cell(cid), fam.E[cid]) for fam in layers for cid in fam.cells]
    best = 0.0
    for Q, E in items:
        Qp = list(Q.members)
        if meas(None, Qp) <= 0:
            continue
        big = [y for y in range(space.n) if space.dist[Q.center][y] <= alpha * Q.radius]
        if p <= 1:
            num = meas(nu, Qp) ** q0
            for j in range(m):
                num *= meas(sig[j], big) ** (p * q0 / conj[j])
            val = num / (meas(None, big) ** (m * p) * meas(None, Qp) ** (m * p * (q0 - 1)))
        elif p >= max(conj):
            pc = p / (p - 1.0)
            num = meas(nu, Qp)
            den = meas(None, big) ** m * meas(nu, E) ** (1.0 / pc)
            for j in range(m):
                num *= meas(sig[j], big)
                den *= meas(sig[j], E) ** (1.0 / ps[j])
            val = num / den
        else:
            pc = p / (p - 1.0)
            num = meas(nu, Qp) ** q0
            den = meas(None, big) ** (m * q0) * meas(nu, E) ** (q0 / pc)
            for j in range(m):
                num *= meas(sig[j], big) ** q0
                den *= meas(sig[j], E) ** (q0 / ps[j])
            val = num / den
        best = max(best, val)
    return best
