"""Sparse families, the multilinear sparse operator and the stopping-time
recursion that produces layered families dominating T*.

The recursion runs on doubling cells.  At a node ``Q0`` the stopping set
``Omega`` is the union of the cells of ``D(Q0)`` whose grand-maximal value
exceeds ``M * A(f, Q0)``; ``M`` starts at ``M_init`` and doubles until
``Omega`` carries at most half the mass of ``Q0``.  The maximal cells of
``Omega`` are split into doubling cells (recursed on) and non-doubling
chains (emitted with coefficient ``100**-n``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import Cell, Lattice
from .operators import (
    Kernel, KernelSums, as_tuple, average_A, ball30, cell_grand_values, lambda_cell_values,
)
from .space import DominatingFunction, MetricMeasureSpace
from .validation import ValidationReport

bilinear_average_A = average_A

LAB_ALPHA = 30.0
STRICT_ALPHA = 200.0
DEFAULT_ETA_MIN = 0.4
K_MAX = 12
MAX_NODES = 100_000
M_INIT = 2.0**-20


class DominationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SparseFamily:
    lattice: Lattice = field(repr=False)
    cells: tuple
    E: dict
    layer: int = 0
    eta: float = 0.5
    alpha: float = LAB_ALPHA

    @property
    def coeff(self) -> float:
        return 100.0 ** (-self.layer)

    def achieved_eta(self, space: MetricMeasureSpace) -> float:
        best = 1.0
        for cid in self.cells:
            mq = float(space.mass[list(self.lattice.cell(cid).members)].sum())
            if mq > 0:
                best = min(best, float(space.mass[list(self.E[cid])].sum()) / mq)
        return best


def sparse_operator(family_or_layers, f, x: int, space: MetricMeasureSpace) -> float:
    """Sum of A(|f|, Q) over cells containing x; layered input is weighted
    by each layer's coefficient."""
    def single(fam):
        return sum(average_A(space, f, fam.lattice.cell(c), fam.alpha)
                   for c in fam.cells if x in fam.lattice.cell(c).members)

    if isinstance(family_or_layers, SparseFamily):
        return single(family_or_layers)
    return sum(fam.coeff * single(fam) for fam in family_or_layers)


def sparse_operator_all(layers, f, space: MetricMeasureSpace) -> np.ndarray:
    out = np.zeros(space.n)
    for fam in layers:
        for cid in fam.cells:
            c = fam.lattice.cell(cid)
            out[list(c.members)] += fam.coeff * average_A(space, f, c, fam.alpha)
    return out


def check_sparseness(family: SparseFamily, space: MetricMeasureSpace, eta: float | None = None) -> ValidationReport:
    eta = family.eta if eta is None else eta
    rep = ValidationReport(f"sparseness[layer {family.layer}]")
    owner: dict[int, int] = {}
    for cid in family.cells:
        Q = family.lattice.cell(cid).members
        E = family.E[cid]
        if not E <= Q:
            rep.add("containment", cell=cid, points=sorted(E - Q))
        for p in E:
            if p in owner:
                rep.add("disjointness", cells=(owner[p], cid), point=p)
            else:
                owner[p] = cid
        mq = float(space.mass[list(Q)].sum())
        me = float(space.mass[list(E)].sum())
        if me < eta * mq:
            rep.add("measure", cell=cid, ratio=me / mq if mq else 0.0, eta=eta)
    rep.stats.update(cells=len(family.cells), eta=family.achieved_eta(space))
    return rep


# ---------------------------------------------------------------------------
# stopping time


@dataclass
class StoppingTime:
    root: int
    M: float
    A: float
    omega: frozenset
    maximal: tuple
    F: tuple
    C: dict
    constant: float
    checks: dict
    outer: np.ndarray | None = field(default=None, repr=False)

    @property
    def chains(self) -> list:
        return [c for n in sorted(self.C) for c in self.C[n]]


def _stopping_parts(lattice: Lattice, space: MetricMeasureSpace, Q0: Cell, values: dict,
                    threshold_base: float, M_init: float):
    """Adaptive threshold, Omega and its maximal cells."""
    cells = lattice.descendants(Q0.id)
    half = 0.5 * float(space.mass[list(Q0.members)].sum())
    M = float(M_init)
    while True:
        thr = M * threshold_base
        picked = [P for P in cells if values[P.id] > thr]
        omega = frozenset().union(*(P.members for P in picked)) if picked else frozenset()
        if float(space.mass[list(omega)].sum()) <= half:
            break
        M *= 2.0
    chosen = {P.id for P in picked}
    # coarse-to-fine order makes the first selected ancestor the maximal one
    maximal = [P.id for P in picked
               if not any(a.id in chosen for a in lattice.ancestors(P.id) if a.level >= Q0.level)]
    return M, omega, maximal


def _split_chains(lattice: Lattice, maximal):
    F, C = [], {}
    frontier = []
    for cid in maximal:
        (F if lattice.cell(cid).is_doubling else frontier).append(cid)
    n = 1
    while frontier:
        C[n] = tuple(frontier)
        nxt = []
        for cid in frontier:
            for ch in lattice.cell(cid).children:
                (F if lattice.cell(ch).is_doubling else nxt).append(ch)
        frontier, n = nxt, n + 1
    return tuple(F), C


def _decompose(lattice, space, f, Q0, alpha, M_init, cell_values: Callable, grand: Callable, outer=None):
    """Shared skeleton of both stopping-time decompositions.

    ``cell_values(Q, outer)`` gives the per-cell maximal value over D(Q) for
    f restricted to ``outer``; ``grand(Q, outer)`` the resulting pointwise
    maximal function.  ``outer`` is the localization inherited from the
    recursion; every stage works with f restricted to it and to 30B.
    """
    if not Q0.is_doubling:
        raise DominationError(f"cell {Q0.id} is not doubling")
    f = as_tuple(f)
    out0 = ball30(space, Q0)
    if outer is not None:
        out0 = out0 & outer
    if np.any((f.values != 0) & ~out0[None, :]):
        raise DominationError(f"function support leaves 30B of cell {Q0.id}")
    A0 = average_A(space, f, Q0, alpha)
    values = cell_values(Q0, out0)
    M, omega, maximal = _stopping_parts(lattice, space, Q0, values, A0, M_init)
    F, C = _split_chains(lattice, maximal)

    lhs = grand(Q0, out0)
    fpart = np.zeros(space.n)
    for pid in F:
        P = lattice.cell(pid)
        fpart += grand(P, out0 & ball30(space, P)) * lattice.mask(pid, space.n)
    chain = np.zeros(space.n)
    for n, cells in C.items():
        for cid in cells:
            Q = lattice.cell(cid)
            chain[list(Q.members)] += 100.0 ** (-n) * average_A(space, f, Q, alpha)
    need = 0.0
    for x in Q0.members:
        excess = lhs[x] - fpart[x]
        if excess > 0:
            denom = A0 + chain[x]
            need = max(need, float(excess / denom) if denom > 0 else math.inf)

    mq = float(space.mass[list(Q0.members)].sum())
    checks = {
        "omega_half": float(space.mass[list(omega)].sum()) <= 0.5 * mq,
        "nesting": _nested_or_disjoint(lattice, F, C),
        "pointwise_finite": math.isfinite(need),
    }
    return StoppingTime(Q0.id, M, A0, omega, tuple(maximal), F, C, need, checks, out0)


def _nested_or_disjoint(lattice, F, C) -> bool:
    fam = [lattice.cell(i).members for i in F]
    for n, cells in C.items():
        for cid in cells:
            Q = lattice.cell(cid).members
            if any(not (P <= Q or not (P & Q)) for P in fam):
                return False
    # each basket is pairwise disjoint on its own
    for group in [F, *C.values()]:
        seen: set = set()
        for cid in group:
            mem = lattice.cell(cid).members
            if seen & mem:
                return False
            seen |= mem
    return True


def stopping_time_decompose(kernel: Kernel, f, Q0: Cell, lattice: Lattice, space: MetricMeasureSpace,
                            lam: DominatingFunction | None = None, alpha: float = LAB_ALPHA,
                            M_init: float = M_INIT, sums: KernelSums | None = None,
                            outer: np.ndarray | None = None) -> StoppingTime:
    sums = sums or KernelSums(kernel, space, f)

    def values(Q, outer):
        return cell_grand_values(sums, lattice.descendants(Q.id), outer)

    def grand(Q, outer):
        return _pointwise(lattice, Q, values(Q, outer), space.n)

    return _decompose(lattice, space, f, Q0, alpha, M_init, values, grand, outer)


def stopping_time_decompose_maximal(f, Q0: Cell, lattice: Lattice, space: MetricMeasureSpace,
                                    lam: DominatingFunction, alpha: float = LAB_ALPHA,
                                    M_init: float = M_INIT, outer: np.ndarray | None = None) -> StoppingTime:
    f = as_tuple(f)

    def values(Q, outer):
        return lambda_cell_values(space, f.restrict(outer), lattice.descendants(Q.id), lam)

    def grand(Q, outer):
        return _pointwise(lattice, Q, values(Q, outer), space.n)

    return _decompose(lattice, space, f, Q0, alpha, M_init, values, grand, outer)


def _pointwise(lattice, Q, values, n) -> np.ndarray:
    out = np.zeros(n)
    for P in lattice.descendants(Q.id):
        idx = list(P.members)
        out[idx] = np.maximum(out[idx], values[P.id])
    return out


# ---------------------------------------------------------------------------
# full recursion


@dataclass
class DominationResult:
    layers: list
    C_dom: float
    root: int
    nodes: list = field(default_factory=list)
    table: list = field(default_factory=list)
    depth: int = 0
    cells_visited: int = 0
    merged_layers: int = 0

    @property
    def worst_point(self):
        if not self.table:
            return None
        return max(self.table, key=lambda r: r[3])[0]


def choose_root(lattice: Lattice, space: MetricMeasureSpace, support: np.ndarray) -> Cell:
    """Finest doubling cell holding ``support`` both in itself and in its 30B."""
    pts = set(np.flatnonzero(support).tolist())
    for k in reversed(lattice.levels()):
        for c in lattice.at_level(k):
            if c.is_doubling and pts <= c.members and np.all(ball30(space, c)[list(pts)]):
                return c
    raise DominationError("no doubling cell contains the support inside its 30B; "
                          "lower k_min so the coarsest level has a covering doubling cell")


def build_sparse_domination(kernel: Kernel, f, lattice: Lattice, space: MetricMeasureSpace,
                            lam: DominatingFunction | None = None, alpha: float = LAB_ALPHA,
                            support: np.ndarray | None = None, M_init: float = M_INIT,
                            eta: float = 0.5, k_max: int = K_MAX, max_nodes: int = MAX_NODES,
                            trunc_mode: str = "linf") -> DominationResult:
    f = as_tuple(f)
    support = space.support_mask if support is None else np.asarray(support, dtype=bool)
    if np.any((f.values != 0) & ~support[None, :]):
        raise DominationError("function support leaves the declared bounded set")
    root = choose_root(lattice, space, support)
    sums = KernelSums(kernel, space, f)

    nodes: list[StoppingTime] = []
    layer_cells: dict[int, list[int]] = {0: []}
    depth = 0
    # each node carries the intersection of the 30B balls along its path
    stack = [(root.id, 0, np.ones(space.n, dtype=bool))]
    while stack:
        cid, d, outer = stack.pop()
        if len(nodes) >= max_nodes:
            raise DominationError(f"recursion budget of {max_nodes} nodes exceeded")
        depth = max(depth, d)
        Q = lattice.cell(cid)
        outer = outer & ball30(space, Q)
        local = f.restrict(outer)
        st = stopping_time_decompose(kernel, local, Q, lattice, space, lam, alpha, M_init, sums=sums, outer=outer)
        nodes.append(st)
        layer_cells[0].append(cid)
        for n, cells in st.C.items():
            layer_cells.setdefault(min(n, k_max), []).extend(cells)
        stack.extend((p, d + 1, outer) for p in reversed(st.F))

    layers = [_layer(lattice, sorted(set(cells)), k, eta, alpha) for k, cells in sorted(layer_cells.items())]
    merged = sum(1 for st in nodes for n in st.C if n > k_max)

    tstar = np.array([sums.star(x, trunc_mode) for x in range(space.n)])
    dom = sparse_operator_all(layers, f, space)
    table, cdom = [], 0.0
    for x in np.flatnonzero(support):
        ratio = _ratio(tstar[x], dom[x])
        table.append((int(x), float(tstar[x]), float(dom[x]), ratio))
        cdom = max(cdom, ratio)
    return DominationResult(layers, cdom, root.id, nodes, table, depth,
                            sum(len(lattice.descendants(st.root)) for st in nodes), merged)


def _ratio(num: float, den: float) -> float:
    if num <= 0:
        return 0.0
    return float(num / den) if den > 0 else math.inf


def _layer(lattice: Lattice, cells: list, k: int, eta: float, alpha: float) -> SparseFamily:
    """E(Q) is Q minus every strictly smaller cell of the same layer."""
    E = {}
    for cid in cells:
        Q = lattice.cell(cid).members
        inner = [lattice.cell(o).members for o in cells if o != cid and lattice.cell(o).members < Q]
        E[cid] = Q.difference(*inner)
    return SparseFamily(lattice, tuple(cells), E, k, eta, alpha)


def verify_domination(kernel: Kernel, f, result: DominationResult, space: MetricMeasureSpace,
                      support: np.ndarray | None = None, trunc_mode: str = "linf") -> dict:
    """Recompute both sides with the reference implementations."""
    from . import oracle

    support = space.support_mask if support is None else np.asarray(support, dtype=bool)
    worst, ratio = None, 0.0
    for x in np.flatnonzero(support):
        lhs = oracle.brute_T_star(kernel, space, f, int(x), trunc_mode)
        rhs = oracle.brute_sparse_operator(result.layers, f, int(x), space)
        r = _ratio(lhs, rhs)
        if worst is None or r > ratio:
            worst, ratio = int(x), r
    return {"C_dom": ratio, "worst_point": worst}


# ---------------------------------------------------------------------------
# text format


def dump_domination(result: DominationResult, space: MetricMeasureSpace, meta: dict | None = None) -> str:
    out = [f"# {k}={v}" for k, v in (meta or {}).items()]
    out.append("domination v1")
    first = result.layers[0] if result.layers else None
    out.append(f"root {result.root} alpha={first.alpha if first else LAB_ALPHA!r} "
               f"eta={first.eta if first else 0.5!r}")
    for fam in result.layers:
        out.append(f"layer {fam.layer} coeff=1e-{2 * fam.layer}")
        for cid in fam.cells:
            pts = ",".join(space.ids[p] for p in sorted(fam.E[cid]))
            out.append(f"Q={cid} E={pts}")
    out.append(f"Cdom={result.C_dom!r} depth={result.depth}")
    return "\n".join(out) + "\n"


def parse_domination(text: str, lattice: Lattice, space: MetricMeasureSpace) -> DominationResult:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "domination v1":
        raise ValueError("missing 'domination v1' header")
    head = lines[1].split()
    root = int(head[1])
    opts = dict(tok.split("=", 1) for tok in head[2:])
    alpha, eta = float(opts["alpha"]), float(opts["eta"])
    layers, cur = [], None
    cdom, depth = 0.0, 0
    for ln in lines[2:]:
        if ln.startswith("layer "):
            cur = (int(ln.split()[1]), [], {})
            layers.append(cur)
        elif ln.startswith("Q="):
            q, e = ln.split()
            cid = int(q[2:])
            ids = e[2:]
            cur[1].append(cid)
            cur[2][cid] = frozenset(space.index(p) for p in ids.split(",") if p)
        elif ln.startswith("Cdom="):
            a, b = ln.split()
            cdom, depth = float(a[5:]), int(b[6:])
    fams = [SparseFamily(lattice, tuple(c), E, k, eta, alpha) for k, c, E in layers]
    return DominationResult(fams, cdom, root, depth=depth)
