"""Multilinear kernels and the operators built from them.

Every kernel sum here skips tuples with ``x`` among the ``y_j``: the kernel
is undefined on the diagonal and an atom at ``x`` would otherwise dominate.
The resulting operator is a model operator truncated at atoms.

Suprema over truncation radii are exact: ``T_r`` changes only where ``r``
crosses a value of the truncation functional, so evaluating suffix sums
over the sorted distinct values covers every ``r > 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import MONOTONE, Cell, Lattice, theta
from .space import DominatingFunction, MetricMeasureSpace
from .validation import ValidationReport

EXHAUSTIVE_LIMIT = 10**7
SAMPLE_SIZE = 10**6
TRUNC_MODES = ("linf", "l2")


def _default_reg_const(m: int, n: float) -> float:
    # mean-value bound for lambda(x, sum_j d(x,y_j))**-m under the gate
    # d(x,x') <= max_j d(x,y_j)/2 with omega(t) = t**delta, delta <= 1
    return float(m**3 * n * 2.0 ** (m * n + 1))


@dataclass(frozen=True)
class Kernel:
    """m-linear kernel with its size and regularity metadata.

    ``lambda-sum`` (default) is ``lambda(x, sum_j d(x,y_j))**-m``; for the
    power-form lambda this is ``c**-m (1 + sum_j d(x,y_j))**(-m n)`` and it
    satisfies the size bound with constant 1.  ``power`` is the bare
    ``(sum_j d(x,y_j))**(-m n)``.
    """

    lam: DominatingFunction
    m: int = 2
    family: str = "lambda-sum"
    size_const: float = 1.0
    reg_const: float | None = None
    delta: float = 1.0
    omega: Callable | None = field(default=None, compare=False)
    scale: float = 1.0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("linearity m must be at least 2")
        if self.family not in ("lambda-sum", "power"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.reg_const is None:
            n = self.lam.n if self.lam.form == "power" else 1.0
            object.__setattr__(self, "reg_const", _default_reg_const(self.m, n))

    @property
    def dim(self) -> float:
        return self.lam.n if self.lam.form == "power" else 1.0

    def modulus(self, t):
        t = np.asarray(t, dtype=float)
        if self.omega is not None:
            return np.asarray(self.omega(t), dtype=float)
        return t**self.delta

    def _profile(self, x, s):
        s = np.asarray(s, dtype=float)
        if self.family == "lambda-sum":
            return self.scale * self.lam(x, s) ** (-self.m)
        with np.errstate(divide="ignore"):
            return self.scale * s ** (-self.m * self.dim)

    def __call__(self, space: MetricMeasureSpace, x: int, ys: Sequence[int]) -> float:
        """Pointwise value; raises on the full diagonal."""
        if all(y == x for y in ys):
            raise ValueError("kernel undefined on the diagonal")
        return float(self._profile(x, sum(space.dist[x, y] for y in ys)))

    def slice(self, space: MetricMeasureSpace, x: int) -> np.ndarray:
        """K(x, .) on X^m; entries with x among the y_j are set to 0."""
        d = space.dist[x]
        m, n = self.m, space.n
        total = np.zeros((n,) * m)
        for j in range(m):
            shape = [1] * m
            shape[j] = n
            total = total + d.reshape(shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = self._profile(x, total)
        return np.where(offdiag_mask(n, m, x), vals, 0.0)


def offdiag_mask(n: int, m: int, x: int) -> np.ndarray:
    ok = np.ones((n,) * m, dtype=bool)
    for j in range(m):
        idx = [slice(None)] * m
        idx[j] = x
        ok[tuple(idx)] = False
    return ok


def dini_norm(delta: float = 1.0, terms: int = 60) -> float:
    """sum_{j>=0} (2^-j)^delta: partial sum plus the closed-form tail."""
    head = sum(2.0 ** (-j * delta) for j in range(terms + 1))
    return head + 2.0 ** (-(terms + 1) * delta) / (1.0 - 2.0 ** (-delta))


def dini_norm_numeric(omega: Callable, terms: int = 60) -> float:
    vals = [float(omega(2.0**-j)) for j in range(terms + 1)]
    head = sum(vals)
    if vals[-1] == 0:
        return head
    q = vals[-1] / vals[-2]
    if not q < 1:
        return math.inf
    return head + vals[-1] * q / (1.0 - q)


# ---------------------------------------------------------------------------
# kernel hypotheses


def _tuples(space, m, sample_spec, seed):
    """Yield (x, ys) index arrays: exhaustive or a seeded random sample."""
    n = space.n
    total = n ** (m + 1)
    limit = EXHAUSTIVE_LIMIT if sample_spec is None else sample_spec.get("exhaustive_limit", EXHAUSTIVE_LIMIT)
    if total <= limit:
        grid = np.indices((n,) * (m + 1)).reshape(m + 1, -1)
        return grid[0], grid[1:], True
    size = SAMPLE_SIZE if sample_spec is None else sample_spec.get("size", SAMPLE_SIZE)
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, n, size=(m + 1, size))
    return pts[0], pts[1:], False


def _size_factor(kernel, space, x, ys):
    """max_j lambda(x, d(x, y_j))**m, vectorised over tuples."""
    out = np.zeros(len(x))
    for j in range(ys.shape[0]):
        out = np.maximum(out, np.array([float(kernel.lam(xi, space.dist[xi, yi])) for xi, yi in zip(x, ys[j])])
                         if kernel.lam.form != "power" else kernel.lam(0, space.dist[x, ys[j]]))
    return out ** kernel.m


def _kernel_values(kernel, space, x, ys):
    s = space.dist[x, ys].sum(axis=0)
    if kernel.lam.form == "power" or kernel.family == "power":
        with np.errstate(divide="ignore"):
            return kernel._profile(0, s)
    return np.array([float(kernel._profile(xi, si)) for xi, si in zip(x, s)])


def check_kernel_size(kernel: Kernel, space: MetricMeasureSpace, sample_spec: dict | None = None,
                      seed: int = 0) -> ValidationReport:
    rep = ValidationReport("kernel_size")
    x, ys, exhaustive = _tuples(space, kernel.m, sample_spec, seed)
    diag = np.all(ys == x, axis=0)
    x, ys = x[~diag], ys[:, ~diag]
    ratio = np.abs(_kernel_values(kernel, space, x, ys)) * _size_factor(kernel, space, x, ys)
    bad = np.flatnonzero(ratio > kernel.size_const * (1 + 1e-12))
    for i in bad[:50]:
        rep.add("size", x=int(x[i]), ys=tuple(int(v) for v in ys[:, i]), ratio=float(ratio[i]))
    rep.stats.update(worst_ratio=float(ratio.max()) if ratio.size else 0.0, tested=int(ratio.size),
                     diagonal_skipped=int(diag.sum()), exhaustive=exhaustive, failures=int(bad.size))
    return rep


def check_kernel_regularity(kernel: Kernel, space: MetricMeasureSpace, sample_spec: dict | None = None,
                            seed: int = 0) -> ValidationReport:
    """Both the x-slot and every y_j-slot smoothness bound, gated by
    ``d(perturbation) <= max_j d(x, y_j) / 2``."""
    rep = ValidationReport("kernel_regularity")
    m, n, dist = kernel.m, space.n, space.dist
    x, ys, exhaustive = _tuples(space, m, sample_spec, seed)
    keep = ~np.all(ys == x, axis=0)
    x, ys = x[keep], ys[:, keep]
    dmax = dist[x, ys].max(axis=0)
    dsum = dist[x, ys].sum(axis=0)
    base = _kernel_values(kernel, space, x, ys)
    bound0 = kernel.reg_const / _size_factor(kernel, space, x, ys)
    tested, worst = 0, 0.0
    # slot 0 is x itself; slot j >= 1 perturbs y_j
    for slot in range(m + 1):
        for p in range(n):
            moved = x if slot == 0 else ys[slot - 1]
            t = dist[moved, p]
            gate = (t > 0) & (t <= dmax / 2.0)
            if slot == 0:
                nx, nys = np.full_like(x, p), ys
            else:
                nx, nys = x, ys.copy()
                nys[slot - 1] = p
            gate &= ~np.all(nys == nx, axis=0)
            if not gate.any():
                continue
            g = np.flatnonzero(gate)
            diff = np.abs(base[g] - _kernel_values(kernel, space, nx[g], nys[:, g]))
            rhs = bound0[g] * kernel.modulus(t[g] / dsum[g])
            tested += g.size
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(rhs > 0, diff / rhs, np.where(diff > 0, np.inf, 0.0))
            worst = max(worst, float(r.max()) * kernel.reg_const)
            for i in np.flatnonzero(diff > rhs * (1 + 1e-12))[:20]:
                k = g[i]
                rep.add("regularity", slot=slot, x=int(x[k]), ys=tuple(int(v) for v in ys[:, k]),
                        moved_to=p, diff=float(diff[i]), bound=float(rhs[i]))
    rep.stats.update(tested=tested, vacuous=tested == 0, exhaustive=exhaustive,
                     worst_constant=worst)
    return rep


# ---------------------------------------------------------------------------
# function tuples


@dataclass(frozen=True, eq=False)
class FunctionTuple:
    values: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("function tuple must be an (m, N) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("function values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        sup = np.ones(v.shape[1], dtype=bool) if self.support is None else np.asarray(self.support, dtype=bool)
        if np.any((v != 0) & ~sup[None, :]):
            raise ValueError("function values outside the declared support")
        object.__setattr__(self, "support", sup)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, j):
        return self.values[j]

    def restrict(self, mask: np.ndarray) -> "FunctionTuple":
        return FunctionTuple(self.values * mask[None, :], self.support & mask)

    def abs(self) -> "FunctionTuple":
        return FunctionTuple(np.abs(self.values), self.support)

    def scaled(self, factors) -> "FunctionTuple":
        return FunctionTuple(self.values * np.asarray(factors, dtype=float)[:, None], self.support)


def as_tuple(f) -> FunctionTuple:
    return f if isinstance(f, FunctionTuple) else FunctionTuple(np.asarray(f, dtype=float))


def parse_ftuple(text: str, space: MetricMeasureSpace, m: int | None = None) -> FunctionTuple:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] != "ftuple v1":
        raise ValueError("missing 'ftuple v1' header")
    entries = []
    for ln in lines[1:]:
        tag, pid, val = ln.split()
        if not tag.startswith("f"):
            raise ValueError(f"bad record {ln!r}")
        entries.append((int(tag[1:]), space.index(pid), float(val)))
    mm = max([e[0] for e in entries] + [m or 0])
    vals = np.zeros((mm, space.n))
    for i, p, v in entries:
        if i < 1:
            raise ValueError("function slots are numbered from 1")
        vals[i - 1, p] = v
    return FunctionTuple(vals)


def dump_ftuple(f: FunctionTuple, space: MetricMeasureSpace, meta: dict | None = None) -> str:
    out = [f"# {k}={v}" for k, v in (meta or {}).items()]
    out.append("ftuple v1")
    for i in range(f.m):
        for p in range(space.n):
            if f.values[i, p] != 0:
                out.append(f"f{i + 1} {space.ids[p]} {float(f.values[i, p])!r}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# kernel sums


def weighted_slice(kernel: Kernel, space: MetricMeasureSpace, f, x: int) -> np.ndarray:
    """K(x, y) * prod_j f_j(y_j) mu(y_j) over X^m (diagonal-free)."""
    f = as_tuple(f)
    out = kernel.slice(space, x)
    n, m = space.n, kernel.m
    for j in range(m):
        shape = [1] * m
        shape[j] = n
        out = out * (f.values[j] * space.mass).reshape(shape)
    return out


def truncation_keys(space: MetricMeasureSpace, x: int, m: int, mode: str = "linf") -> np.ndarray:
    """max_j d(x,y_j) (linf) or sum_j d(x,y_j)**2 (l2) over X^m."""
    if mode not in TRUNC_MODES:
        raise ValueError(f"unknown truncation mode {mode!r}")
    d = space.dist[x]
    n = space.n
    key = np.zeros((n,) * m)
    for j in range(m):
        shape = [1] * m
        shape[j] = n
        dj = d.reshape(shape)
        key = np.maximum(key, dj) if mode == "linf" else key + dj * dj
    return key


class KernelSums:
    """Cached weighted slices for one (kernel, space, f) triple."""

    def __init__(self, kernel: Kernel, space: MetricMeasureSpace, f):
        self.kernel, self.space, self.f = kernel, space, as_tuple(f)
        if self.f.m != kernel.m:
            raise ValueError("function tuple length differs from the kernel's m")
        self.V = np.stack([weighted_slice(kernel, space, self.f, x) for x in range(space.n)])
        self._keys: dict = {}

    def keys(self, x, mode):
        if (x, mode) not in self._keys:
            self._keys[x, mode] = truncation_keys(self.space, x, self.kernel.m, mode)
        return self._keys[x, mode]

    def box_sum(self, ys_mask: np.ndarray, xs=None) -> np.ndarray:
        """sum over y in (ys_mask)^m of V[x, y] for each x in ``xs``."""
        idx = np.flatnonzero(ys_mask)
        xs = np.arange(self.space.n) if xs is None else np.asarray(xs)
        if idx.size == 0:
            return np.zeros(len(xs))
        sub = self.V[xs]
        for axis in range(1, self.kernel.m + 1):
            sub = np.take(sub, idx, axis=axis)
        return sub.reshape(len(xs), -1).sum(axis=1)

    def total(self, xs=None) -> np.ndarray:
        xs = np.arange(self.space.n) if xs is None else np.asarray(xs)
        return self.V[xs].reshape(len(xs), -1).sum(axis=1)

    def truncated(self, x: int, r: float, mode: str = "linf") -> float:
        key = self.keys(x, mode)
        thr = r if mode == "linf" else r * r
        return float(self.V[x][key > thr].sum())

    def star(self, x: int, mode: str = "linf") -> float:
        key = self.keys(x, mode).ravel()
        v = self.V[x].ravel()
        live = v != 0
        key, v = key[live], v[live]
        if v.size == 0:
            return 0.0
        order = np.argsort(key, kind="stable")
        key, v = key[order], v[order]
        # suffix sums starting at each distinct key value
        suffix = np.cumsum(v[::-1])[::-1]
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        return float(np.max(np.abs(suffix[starts])))

    def F(self, y: int, ball30: np.ndarray) -> float:
        return float(self.total([y])[0] - self.box_sum(ball30, [y])[0])


def truncated_T(kernel, space, f, x, r, trunc_mode="linf") -> float:
    if r < 0:
        raise ValueError("truncation radius must be nonnegative")
    key = truncation_keys(space, x, kernel.m, trunc_mode)
    thr = r if trunc_mode == "linf" else r * r
    return float(weighted_slice(kernel, space, f, x)[key > thr].sum())


def maximal_T_star(kernel, space, f, x, trunc_mode="linf") -> float:
    return KernelSums(kernel, space, f).star(x, trunc_mode)


def T_star_all(kernel, space, f, trunc_mode="linf", sums: KernelSums | None = None) -> np.ndarray:
    sums = sums or KernelSums(kernel, space, f)
    return np.array([sums.star(x, trunc_mode) for x in range(space.n)])


def ball30(space: MetricMeasureSpace, cell: Cell) -> np.ndarray:
    return space.dist[cell.center] <= MONOTONE * cell.radius


def cell_truncation_F(kernel, space, f, x, cell: Cell) -> float:
    """Kernel sum over tuples not all inside 30B(Q), evaluated at x in Q."""
    if x not in cell.members:
        raise ValueError(f"point {x} is not in cell {cell.id}")
    B = ball30(space, cell)
    V = weighted_slice(kernel, space, f, x)
    inner = V
    idx = np.flatnonzero(B)
    for axis in range(kernel.m):
        inner = np.take(inner, idx, axis=axis)
    return float(V.sum() - inner.sum())


def _ball_integrals(space, f, x):
    """Sorted distinct radii from x and prod_j int_{B(x,r)} |f_j| at each."""
    f = as_tuple(f)
    d = space.dist[x]
    order = np.argsort(d, kind="stable")
    ds = d[order]
    cum = np.cumsum(np.abs(f.values[:, order]) * space.mass[order], axis=1)
    last = np.flatnonzero(np.r_[ds[1:] != ds[:-1], True])
    return ds[last], np.prod(cum[:, last], axis=0)


def M_lambda(space, f, x, lam: DominatingFunction) -> float:
    radii, prods = _ball_integrals(space, f, x)
    m = as_tuple(f).m
    return float(np.max(prods / lam(x, radii) ** m))


def M_lambda_all(space, f, lam) -> np.ndarray:
    return np.array([M_lambda(space, f, x, lam) for x in range(space.n)])


def cell_grand_values(sums: KernelSums, cells: Iterable[Cell], outer: np.ndarray | None = None) -> dict:
    """max_{y in P} |F(y, P)| per cell, with f localised to ``outer``.

    When ``outer`` is given the functions are restricted to it, so
    F(y, P) = S(outer) - S(outer & 30B(P)) in terms of box sums.
    """
    space = sums.space
    out = {}
    for P in cells:
        ys = sorted(P.members)
        B = ball30(space, P)
        if outer is None:
            vals = sums.total(ys) - sums.box_sum(B, ys)
        else:
            vals = sums.box_sum(outer, ys) - sums.box_sum(outer & B, ys)
        out[P.id] = float(np.max(np.abs(vals))) if len(ys) else 0.0
    return out


def grand_maximal_M_T(kernel, space, f, x, Q0: Cell, lattice: Lattice, sums: KernelSums | None = None) -> float:
    if x not in Q0.members:
        raise ValueError(f"point {x} is not in cell {Q0.id}")
    sums = sums or KernelSums(kernel, space, f)
    cells = [P for P in lattice.descendants(Q0.id) if x in P.members]
    vals = cell_grand_values(sums, cells)
    return max(vals.values())


def grand_maximal_all(sums: KernelSums, Q0: Cell, lattice: Lattice, outer: np.ndarray | None = None) -> np.ndarray:
    """M_{T,Q0} at every point (0 outside Q0)."""
    cells = lattice.descendants(Q0.id)
    vals = cell_grand_values(sums, cells, outer)
    out = np.zeros(sums.space.n)
    for P in cells:
        idx = list(P.members)
        out[idx] = np.maximum(out[idx], vals[P.id])
    return out


def lambda_cell_values(space, f, cells: Iterable[Cell], lam) -> dict:
    """prod_j lambda(z_P, r(P))**-1 int_{30B(P)} |f_j| per cell."""
    f = as_tuple(f)
    out = {}
    for P in cells:
        B = ball30(space, P)
        ints = (np.abs(f.values[:, B]) * space.mass[B]).sum(axis=1)
        out[P.id] = float(np.prod(ints) / float(lam(P.center, P.radius)) ** f.m)
    return out


def localized_M_lambda_d(space, f, x, Q0: Cell, lattice: Lattice, lam) -> float:
    if x not in Q0.members:
        raise ValueError(f"point {x} is not in cell {Q0.id}")
    cells = [P for P in lattice.descendants(Q0.id) if x in P.members]
    return max(lambda_cell_values(space, f, cells, lam).values())


M_lambda_dyadic = localized_M_lambda_d


def weighted_dyadic_maximal(space, f, x, density, sets: Iterable[np.ndarray]) -> float:
    """sup over sets containing x of the density-weighted average of |f|."""
    f = np.abs(np.asarray(f, dtype=float))
    dens = np.asarray(density, dtype=float)
    if np.any(dens < 0):
        raise ValueError("density must be nonnegative")
    w = dens * space.mass
    best = 0.0
    for S in sets:
        S = np.asarray(S, dtype=bool)
        if not S[x]:
            continue
        tot = float(w[S].sum())
        if tot > 0:
            best = max(best, float((f[S] * w[S]).sum()) / tot)
    return best


def cell_sets(lattice: Lattice, n: int) -> list[np.ndarray]:
    return [lattice.mask(c.id, n) for c in lattice.cells]


def dilated_ball_sets(lattice: Lattice, space: MetricMeasureSpace, factor: float) -> list[np.ndarray]:
    return [space.dist[c.center] <= factor * c.radius for c in lattice.cells]


def average_A(space, f, cell: Cell, alpha: float) -> float:
    """prod_i mu(alpha B(Q))^-1 int_{30B(Q)} |f_i|."""
    f = as_tuple(f)
    denom = float(space.mass[space.dist[cell.center] <= alpha * cell.radius].sum())
    if denom <= 0:
        raise ZeroDivisionError(f"mu(alpha B(Q)) = 0 for cell {cell.id}")
    B = ball30(space, cell)
    ints = (np.abs(f.values[:, B]) * space.mass[B]).sum(axis=1)
    return float(np.prod(ints / denom))


def check_pointwise_comparison(kernel, space, f, Q0: Cell, lattice: Lattice, lam,
                               trunc_mode: str = "linf") -> dict:
    """|M_{T,Q0} - T*| / M_lambda at every point of Q0."""
    sums = KernelSums(kernel, space, f)
    grand = grand_maximal_all(sums, Q0, lattice)
    table = []
    sup = 0.0
    for x in sorted(Q0.members):
        ts = sums.star(x, trunc_mode)
        ml = M_lambda(space, f, x, lam)
        gap = abs(grand[x] - ts)
        if ml == 0 and gap == 0:
            continue
        ratio = gap / ml if ml > 0 else (math.inf if gap > 0 else 0.0)
        sup = max(sup, ratio)
        table.append((x, float(grand[x]), ts, ml, ratio))
    return {"sup_ratio": sup, "table": table}


def check_recursion(kernel, space, f, Q: Cell, Qhat: Cell, lattice: Lattice, lam, alpha: float,
                    C: float = 1.0) -> dict:
    """Both sides of the two-cell recursion at every x in Q, plus the
    smallest constant that makes it hold."""
    if Q.id not in {c.id for c in lattice.descendants(Qhat.id)}:
        raise ValueError(f"cell {Q.id} is not nested in {Qhat.id}")
    f = as_tuple(f)
    sums = KernelSums(kernel, space, f)
    hat30, q30 = ball30(space, Qhat), ball30(space, Q)
    big = grand_maximal_all(sums, Qhat, lattice, outer=hat30)
    small = grand_maximal_all(sums, Q, lattice, outer=q30)
    th = theta(Qhat, space, lam, alpha, kernel.m)
    avg = average_A(space, f, Qhat, alpha)
    need, rows, ok = 0.0, [], True
    for x in sorted(Q.members):
        lhs, tail = float(big[x]), float(small[x])
        rhs = C * th * avg + tail
        ok &= lhs <= rhs
        excess = lhs - tail
        if excess > 0:
            need = max(need, excess / (th * avg) if th * avg > 0 else math.inf)
        rows.append((x, lhs, rhs))
    return {"lhs": [r[1] for r in rows], "rhs": [r[2] for r in rows], "ok": ok, "min_C": need,
            "theta": th, "A": avg, "rows": rows}


def weak_type_constant(values, f, space, m: int | None = None) -> float:
    """sup_t t * mu{v > t}^(1/m) / prod_j ||f_j||_1."""
    f = as_tuple(f)
    m = f.m if m is None else m
    v = np.asarray(values, dtype=float)
    norms = np.prod((np.abs(f.values) * space.mass).sum(axis=1))
    if norms == 0:
        return 0.0
    best = 0.0
    for t in np.unique(v[v > 0]):
        best = max(best, t * float(space.mass[v >= t].sum()) ** (1.0 / m))
    return best / norms
