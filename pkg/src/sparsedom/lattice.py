"""Dyadic cell hierarchies adapted to a possibly non-doubling atomic measure.

Construction runs bottom-up.  At each level ``k`` (scale ``s = A0**-k``)
centres are picked greedily from ``W`` so that the dilated balls
``5B(z, s)`` are pairwise disjoint as point sets.  A centre whose ball is
not doubling is moved to the smallest sampled dilate ``c*s`` (``c`` in
``[1, C0]``) that is doubling, when that keeps the 5B balls disjoint.
Every cell of the finer level is then attached whole to a parent: to the
parent whose ball it touches, else to the parent centre nearest to its own
centre.  Cells of a level are therefore unions of finer cells, which gives
nesting for free; the other properties are verified and repaired by
inflating radii inside ``[s, C0*s]``, or reported as ``InfeasibleConstants``.

Two modes share this code.  ``strict`` insists on ``A0 > 5000*C0`` and
checks the non-doubling cell condition; ``lab`` accepts small constants so
that a few dozen points produce more than one interesting level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .space import Ball, DominatingFunction, MetricMeasureSpace, body_digest
from .validation import ValidationReport

LAB_DEFAULTS = {"C0": 2.0, "A0": 6.0}
STRICT_DEFAULTS = {"C0": 2.0, "A0": 10001.0 * 2.0}

SANDWICH = 28.0
DISJOINT = 5.0
MONOTONE = 30.0
DOUBLING = 100.0


class InfeasibleConstants(RuntimeError):
    def __init__(self, level: int, reason: str):
        super().__init__(f"level {level}: {reason}")
        self.level = level
        self.reason = reason


@dataclass(frozen=True)
class Cell:
    id: int
    level: int
    center: int
    radius: float
    members: frozenset
    parent: int | None
    children: tuple
    is_doubling: bool

    def ball(self, c: float = 1.0) -> Ball:
        return Ball(self.center, c * self.radius)


@dataclass(frozen=True, eq=False)
class Lattice:
    C0: float
    A0: float
    mode: str
    k_min: int
    k_max: int
    cells: tuple

    def __post_init__(self):
        levels: dict[int, list[int]] = {}
        for c in self.cells:
            levels.setdefault(c.level, []).append(c.id)
        object.__setattr__(self, "_levels", {k: tuple(v) for k, v in levels.items()})

    def scale(self, k: int) -> float:
        return float(self.A0) ** (-k)

    def cell(self, cid: int) -> Cell:
        return self.cells[cid]

    def at_level(self, k: int) -> list[Cell]:
        return [self.cells[i] for i in self._levels.get(k, ())]

    def levels(self) -> list[int]:
        return sorted(self._levels)

    def top(self) -> list[Cell]:
        return self.at_level(self.k_min)

    def containing(self, x: int) -> list[Cell]:
        """Cells containing ``x``, coarsest first."""
        return [c for k in self.levels() for c in self.at_level(k) if x in c.members]

    def descendants(self, cid: int) -> list[Cell]:
        """D(Q): ``Q`` itself and every finer cell inside it, coarse to fine."""
        out, frontier = [], [cid]
        while frontier:
            out.extend(self.cells[i] for i in frontier)
            frontier = [j for i in frontier for j in self.cells[i].children]
        return out

    def ancestors(self, cid: int) -> list[Cell]:
        out = []
        p = self.cells[cid].parent
        while p is not None:
            out.append(self.cells[p])
            p = self.cells[p].parent
        return out

    def mask(self, cid: int, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[list(self.cells[cid].members)] = True
        return m


def center_order(space: MetricMeasureSpace, seed: int | None = None) -> list[int]:
    """Descending mass, then index; a seed shuffles exact mass ties."""
    W = space.support
    if seed is None:
        rank = {int(w): int(w) for w in W}
    else:
        perm = np.random.default_rng(seed).permutation(len(W))
        rank = {int(w): int(p) for w, p in zip(W, perm)}
    return sorted((int(w) for w in W), key=lambda w: (-space.mass[w], rank[w]))


def auto_levels(space: MetricMeasureSpace, C0: float, A0: float) -> tuple[int, int]:
    """Coarsest level has one cell covering W; finest has doubling singletons."""
    diam = space.diameter()
    k_min = -math.ceil(math.log(diam) / math.log(A0)) if diam > 1 else 0
    while float(A0) ** (-k_min) < diam:
        k_min -= 1
    dmin = space.min_positive_distance()
    if not math.isfinite(dmin):
        return k_min, k_min
    k_max = k_min
    while DOUBLING * C0 * float(A0) ** (-k_max) >= dmin:
        k_max += 1
    return k_min, k_max


def _c_samples(C0: float) -> list[float]:
    return sorted({float(c) for c in range(1, int(math.floor(C0)) + 1)} | {float(C0)})


def _mu_ball(space, z, r) -> float:
    return float(space.mass[space.dist[z] <= r].sum())


def is_doubling_ball(space, z, r, C0) -> bool:
    return _mu_ball(space, z, DOUBLING * r) <= C0 * _mu_ball(space, z, r)


class _Level:
    """Mutable scratch state for one level during construction."""

    def __init__(self, space, k, s, C0, centers):
        self.space, self.k, self.s, self.C0 = space, k, s, C0
        self.centers = centers
        self.radii = [s] * len(centers)
        self.members: list[set] = [set() for _ in centers]
        self.kids: list[list[int]] = [[] for _ in centers]

    def five_ok(self, i, r) -> bool:
        d = self.space.dist
        mine = d[self.centers[i]] <= DISJOINT * r
        for j, z in enumerate(self.centers):
            if j != i and np.any(mine & (d[z] <= DISJOINT * self.radii[j])):
                return False
        return True

    def sandwich_ok(self, i, r) -> bool:
        space = self.space
        inside = np.flatnonzero((space.dist[self.centers[i]] <= r) & space.support_mask)
        return set(inside.tolist()) <= self.members[i]

    def try_radius(self, i, r) -> bool:
        if r <= self.radii[i]:
            return True
        if r > self.C0 * self.s or not self.five_ok(i, r):
            return False
        if self.members[i] and not self.sandwich_ok(i, r):
            return False
        self.radii[i] = r
        return True


def build_lattice(space: MetricMeasureSpace, C0: float | None = None, A0: float | None = None,
                  k_min: int | None = None, k_max: int | None = None,
                  tie_break_seed: int | None = None, mode: str = "lab") -> Lattice:
    if mode not in ("lab", "strict"):
        raise ValueError(f"unknown mode {mode!r}")
    defaults = LAB_DEFAULTS if mode == "lab" else STRICT_DEFAULTS
    C0 = float(defaults["C0"] if C0 is None else C0)
    A0 = float(defaults["A0"] if A0 is None else A0)
    if C0 <= 1:
        raise ValueError("C0 must exceed 1")
    if mode == "strict" and not A0 > 5000 * C0:
        raise ValueError("strict mode requires A0 > 5000*C0")
    if mode == "lab" and A0 <= 1:
        raise ValueError("A0 must exceed 1")
    auto = auto_levels(space, C0, A0)
    k_min = auto[0] if k_min is None else int(k_min)
    k_max = auto[1] if k_max is None else int(k_max)
    if k_max < k_min:
        raise ValueError("k_max < k_min")

    order = center_order(space, tie_break_seed)
    dist = space.dist
    samples = _c_samples(C0)
    # the level below k_max: one pseudo-cell per atom
    below = [(w, 0.0, {w}) for w in order]
    built: dict[int, _Level] = {}

    for k in range(k_max, k_min - 1, -1):
        s = A0 ** (-k)
        centers: list[int] = []
        taken = np.zeros(space.n, dtype=bool)
        for z in order:
            ball5 = dist[z] <= DISJOINT * s
            if not np.any(ball5 & taken):
                centers.append(z)
                taken |= ball5
        lv = _Level(space, k, s, C0, centers)

        for i, z in enumerate(centers):
            for c in samples:
                if is_doubling_ball(space, z, c * s, C0):
                    if c > 1:
                        lv.try_radius(i, c * s)
                    break

        ball_masks = np.array([(dist[z] <= r) & space.support_mask for z, r in zip(centers, lv.radii)])
        center_arr = np.array(centers)
        for ci, (zc, _, mem) in enumerate(below):
            idx = list(mem)
            touched = np.flatnonzero(ball_masks[:, idx].any(axis=1))
            if len(touched) > 1:
                raise InfeasibleConstants(k, f"cell centred at {space.ids[zc]} meets two parent balls")
            if len(touched) == 1:
                i = int(touched[0])
            else:
                d = dist[zc, center_arr]
                best = d.min()
                i = min(j for j in range(len(centers)) if d[j] == best)
            lv.members[i] |= mem
            lv.kids[i].append(ci)

        for i, z in enumerate(centers):
            far = max(dist[z, list(lv.members[i])])
            if far > SANDWICH * lv.radii[i] and not lv.try_radius(i, far / SANDWICH):
                raise InfeasibleConstants(k, f"cell centred at {space.ids[z]} leaves 28B")
            if k < k_max:
                for ci in lv.kids[i]:
                    zc, rc, _ = below[ci]
                    child30 = dist[zc] <= MONOTONE * rc
                    need = float(dist[z, child30].max()) / MONOTONE
                    if need > lv.radii[i] and not lv.try_radius(i, need):
                        raise InfeasibleConstants(k, f"30B of a child escapes 30B of {space.ids[z]}")

        if mode == "strict":
            for i, z in enumerate(centers):
                r = lv.radii[i]
                if is_doubling_ball(space, z, r, C0):
                    continue
                if r != s or not all(
                    _mu_ball(space, z, c * r) <= _mu_ball(space, z, DOUBLING * c * r) / C0 for c in samples
                ):
                    raise InfeasibleConstants(k, f"non-doubling cell at {space.ids[z]} has no admissible radius")

        built[k] = lv
        below = [(z, lv.radii[i], lv.members[i]) for i, z in enumerate(centers)]

    # number the cells coarse to fine
    cells: list[dict] = []
    ids_at: dict[int, list[int]] = {}
    for k in range(k_min, k_max + 1):
        lv = built[k]
        ids_at[k] = []
        for i, z in enumerate(lv.centers):
            ids_at[k].append(len(cells))
            cells.append(dict(level=k, center=z, radius=lv.radii[i], members=frozenset(lv.members[i]),
                              parent=None, children=[]))
    for k in range(k_min, k_max):
        for i in range(len(built[k].centers)):
            pid = ids_at[k][i]
            for ci in built[k].kids[i]:
                cid = ids_at[k + 1][ci]
                cells[pid]["children"].append(cid)
                cells[cid]["parent"] = pid
    out = tuple(
        Cell(cid, c["level"], c["center"], c["radius"], c["members"], c["parent"], tuple(c["children"]),
             is_doubling_ball(space, c["center"], c["radius"], C0))
        for cid, c in enumerate(cells)
    )
    return Lattice(C0, A0, mode, k_min, k_max, out)


def classify_doubling(lattice: Lattice, space: MetricMeasureSpace, C0: float | None = None) -> Lattice:
    C0 = lattice.C0 if C0 is None else C0
    cells = tuple(replace(c, is_doubling=is_doubling_ball(space, c.center, c.radius, C0)) for c in lattice.cells)
    return replace(lattice, cells=cells)


def check_lattice(lattice: Lattice, space: MetricMeasureSpace) -> ValidationReport:
    rep = ValidationReport("lattice", mode=lattice.mode)
    dist, W = space.dist, set(space.support.tolist())
    C0 = lattice.C0
    samples = _c_samples(C0)
    for k in lattice.levels():
        s = lattice.scale(k)
        cells = lattice.at_level(k)
        seen: dict[int, int] = {}
        for c in cells:
            if not c.members:
                rep.add("partition", level=k, cell=c.id, reason="empty cell")
            for p in c.members:
                if p in seen:
                    rep.add("partition", level=k, point=p, cells=(seen[p], c.id))
                seen[p] = c.id
            if not c.members <= W:
                rep.add("partition", level=k, cell=c.id, reason="member outside W")
            if c.center not in W:
                rep.add("center", cell=c.id)
            if not (s <= c.radius <= C0 * s):
                rep.add("radius band", cell=c.id, level=k, r=c.radius, lo=s, hi=C0 * s)
            ball = set(np.flatnonzero(dist[c.center] <= c.radius).tolist()) & W
            if not ball <= c.members:
                rep.add("sandwich", cell=c.id, side="inner", points=sorted(ball - c.members))
            outer = set(np.flatnonzero(dist[c.center] <= SANDWICH * c.radius).tolist())
            if not c.members <= outer:
                rep.add("sandwich", cell=c.id, side="outer", points=sorted(c.members - outer))
            dbl = is_doubling_ball(space, c.center, c.radius, C0)
            if dbl != c.is_doubling:
                rep.add("doubling flag", cell=c.id)
            if lattice.mode == "strict" and not dbl:
                if c.radius != s:
                    rep.add("non-doubling radius", cell=c.id, r=c.radius, s=s)
                for cc in samples:
                    if _mu_ball(space, c.center, cc * c.radius) > _mu_ball(space, c.center, DOUBLING * cc * c.radius) / C0:
                        rep.add("non-doubling decay", cell=c.id, c=cc)
        if set(seen) != W:
            rep.add("partition", level=k, missing=sorted(W - set(seen)))
        for a in range(len(cells)):
            fa = dist[cells[a].center] <= DISJOINT * cells[a].radius
            for b in range(a + 1, len(cells)):
                fb = dist[cells[b].center] <= DISJOINT * cells[b].radius
                if np.any(fa & fb):
                    rep.add("5B disjoint", level=k, cells=(cells[a].id, cells[b].id))
    for c in lattice.cells:
        kids = [lattice.cell(i) for i in c.children]
        if kids:
            union: set = set()
            for q in kids:
                if q.parent != c.id or q.level != c.level + 1:
                    rep.add("nesting", cell=q.id, parent=c.id)
                if union & q.members:
                    rep.add("nesting", cell=c.id, reason="children overlap")
                union |= q.members
                own30 = dist[c.center] <= MONOTONE * c.radius
                kid30 = dist[q.center] <= MONOTONE * q.radius
                if np.any(kid30 & ~own30):
                    rep.add("30B monotone", cell=q.id, parent=c.id)
            if union != set(c.members):
                rep.add("nesting", cell=c.id, reason="children do not partition the cell")
        elif c.level < lattice.k_max:
            rep.add("nesting", cell=c.id, reason="cell without children above the finest level")
        if c.parent is not None and not c.members <= lattice.cell(c.parent).members:
            rep.add("nesting", cell=c.id, parent=c.parent)
        if c.parent is None and c.level != lattice.k_min:
            rep.add("nesting", cell=c.id, reason="orphan")
    rep.stats["cells"] = len(lattice.cells)
    rep.stats["levels"] = (lattice.k_min, lattice.k_max)
    rep.stats["single_cell_levels"] = [k for k in lattice.levels() if len(lattice.at_level(k)) == 1]
    rep.stats["doubling_cells"] = sum(c.is_doubling for c in lattice.cells)
    return rep


def theta(cell: Cell, space: MetricMeasureSpace, lam: DominatingFunction, alpha: float, m: int = 2) -> float:
    """(mu(alpha B(Q)) / lambda(z_Q, r(Q)))**m."""
    lv = float(lam(cell.center, cell.radius))
    if lv <= 0:
        raise ValueError(f"dominating function vanishes at cell {cell.id}")
    return (_mu_ball(space, cell.center, alpha * cell.radius) / lv) ** m


def decay_exponent(C0: float, alpha: float, l0: int | None = None) -> int:
    """Largest l with 100**l < C0/alpha, falling back to ``l0`` (default 1)."""
    ratio = C0 / alpha
    best = 0
    while 100.0 ** (best + 1) < ratio:
        best += 1
    if best > 0:
        return best
    return 1 if l0 is None else int(l0)


def theta_decay_check(lattice: Lattice, space: MetricMeasureSpace, lam: DominatingFunction,
                      alpha: float, m: int = 2, l0: int | None = None,
                      comparability: float = 1.0, max_chains: int = 10000) -> ValidationReport:
    """Theta along maximal chains Q0 > Q1 > ... with Q1, Q2, ... non-doubling."""
    C0 = lattice.C0
    l = decay_exponent(C0, alpha, l0)
    rep = ValidationReport("theta_decay", mode=lattice.mode)
    th = {c.id: theta(c, space, lam, alpha, m) for c in lattice.cells}
    chains = []

    def walk(path):
        if len(chains) >= max_chains:
            return
        nxt = [i for i in lattice.cell(path[-1]).children if not lattice.cell(i).is_doubling]
        if not nxt:
            if len(path) > 1:
                chains.append(tuple(path))
            return
        for i in nxt:
            walk(path + [i])

    for c in lattice.cells:
        walk([c.id])
    worst = 0.0
    for ch in chains:
        t0 = th[ch[0]]
        for step, cid in enumerate(ch[1:], start=1):
            ratio = th[cid] / t0 if t0 > 0 else 0.0
            bound = comparability * C0 ** (-step * l)
            worst = max(worst, ratio / bound)
            if ratio > bound:
                rep.add("decay", chain=ch, step=step, ratio=ratio, bound=bound)
    rep.stats.update(chains=len(chains), l0=l, worst_ratio_over_bound=worst,
                     sup_theta=max(th.values()) if th else 0.0)
    return rep


# ---------------------------------------------------------------------------
# text format


def dump_lattice(lattice: Lattice, space: MetricMeasureSpace, meta: dict | None = None) -> str:
    out = [f"# {k}={v}" for k, v in (meta or {}).items()]
    out.append("lattice v1")
    out.append(f"constants C0={lattice.C0!r} A0={lattice.A0!r} mode={lattice.mode} "
               f"k_min={lattice.k_min} k_max={lattice.k_max}")
    for c in lattice.cells:
        members = ",".join(space.ids[p] for p in sorted(c.members))
        parent = "-" if c.parent is None else str(c.parent)
        out.append(f"cell {c.id} k={c.level} z={space.ids[c.center]} r={c.radius!r} "
                   f"parent={parent} doubling={int(c.is_doubling)} members={members}")
    return "\n".join(out) + "\n"


def parse_lattice(text: str, space: MetricMeasureSpace) -> Lattice:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] != "lattice v1":
        raise ValueError("missing 'lattice v1' header")
    head = dict(p.split("=", 1) for p in lines[1].split()[1:])
    raw = []
    for ln in lines[2:]:
        parts = ln.split()
        if parts[0] != "cell":
            raise ValueError(f"unknown record {parts[0]!r}")
        kv = dict(p.split("=", 1) for p in parts[2:])
        members = frozenset(space.index(p) for p in kv["members"].split(",") if p)
        parent = None if kv["parent"] == "-" else int(kv["parent"])
        raw.append((int(parts[1]), int(kv["k"]), space.index(kv["z"]), float(kv["r"]), members,
                    parent, kv["doubling"] == "1"))
    raw.sort()
    if [r[0] for r in raw] != list(range(len(raw))):
        raise ValueError("cell ids must be 0..n-1")
    kids: dict[int, list[int]] = {}
    for r in raw:
        if r[5] is not None:
            kids.setdefault(r[5], []).append(r[0])
    cells = tuple(Cell(i, k, z, rad, mem, par, tuple(kids.get(i, ())), dbl)
                  for i, k, z, rad, mem, par, dbl in raw)
    return Lattice(float(head["C0"]), float(head["A0"]), head["mode"], int(head["k_min"]),
                   int(head["k_max"]), cells)


def lattice_digest(lattice: Lattice, space: MetricMeasureSpace) -> str:
    return body_digest(dump_lattice(lattice, space))
