"""Finite metric measure spaces with atomic measures.

Points are addressed by their integer index ``0..N-1``; the string ids from
a space file are kept only for I/O.  Balls are closed, so every supremum
over radii of a ball functional is attained on the finite set of
breakpoint radii (the distinct distances).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .validation import ValidationReport

DEFAULT_MAX_POINTS = 512
# Relative slack for the load-time triangle check only; Euclidean distances
# computed with sqrt can break collinear triangles by one ulp.
TRIANGLE_RTOL = 1e-12


class SpaceError(ValueError):
    """Malformed or non-metric space data."""


class UnknownPointError(KeyError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    ids: tuple[str, ...]
    dist: np.ndarray
    mass: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "dist", _frozen(self.dist))
        object.__setattr__(self, "mass", _frozen(self.mass))
        if self.coords is not None:
            object.__setattr__(self, "coords", _frozen(self.coords))

    @classmethod
    def from_coords(cls, coords, mass, ids=None, max_points=DEFAULT_MAX_POINTS):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=-1))
        if ids is None:
            ids = [str(i) for i in range(len(coords))]
        return validated(ids, dist, mass, coords=coords, max_points=max_points)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def support(self) -> np.ndarray:
        """Indices of W, the points of positive mass."""
        return np.flatnonzero(self.mass > 0)

    @property
    def support_mask(self) -> np.ndarray:
        return self.mass > 0

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def index(self, pid: str) -> int:
        try:
            return self.ids.index(pid)
        except ValueError:
            raise UnknownPointError(pid) from None

    def check_index(self, x: int) -> int:
        if not (isinstance(x, (int, np.integer)) and 0 <= x < self.n):
            raise UnknownPointError(x)
        return int(x)

    def ball_mask(self, center: int, radius: float) -> np.ndarray:
        return self.dist[self.check_index(center)] <= radius

    def diameter(self, mask: np.ndarray | None = None) -> float:
        if mask is None:
            mask = self.support_mask
        idx = np.flatnonzero(mask)
        if len(idx) < 2:
            return 0.0
        return float(self.dist[np.ix_(idx, idx)].max())

    def min_positive_distance(self) -> float:
        d = self.dist[self.dist > 0]
        return float(d.min()) if d.size else math.inf

    def digest(self) -> str:
        return hashlib.sha256(dump_space(self).encode()).hexdigest()


def validated(ids, dist, mass, coords=None, max_points=DEFAULT_MAX_POINTS):
    """Build a space after exhaustive metric validation (O(N^3))."""
    ids = tuple(str(i) for i in ids)
    dist = np.asarray(dist, dtype=float)
    mass = np.asarray(mass, dtype=float)
    n = len(ids)
    if n == 0:
        raise SpaceError("empty space")
    if n > max_points:
        raise SpaceError(f"{n} points exceeds the cap of {max_points}")
    if len(set(ids)) != n:
        raise SpaceError("duplicate point ids")
    if dist.shape != (n, n) or mass.shape != (n,):
        raise SpaceError("shape mismatch between ids, dist and mass")
    if not np.all(np.isfinite(dist)) or not np.all(np.isfinite(mass)):
        raise SpaceError("non-finite distance or mass")
    if np.any(mass < 0):
        raise SpaceError(f"negative mass at point {ids[int(np.argmax(mass < 0))]}")
    if mass.sum() <= 0:
        raise SpaceError("total mass must be positive")
    if np.any(np.diag(dist) != 0):
        raise SpaceError("dist(x,x) must be 0")
    if np.any(dist < 0):
        raise SpaceError("negative distance")
    asym = np.argwhere(dist != dist.T)
    if len(asym):
        i, j = asym[0]
        raise SpaceError(f"asymmetric distance between {ids[i]} and {ids[j]}")
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] == 0):
        i, j = np.argwhere((dist == 0) & off)[0]
        raise SpaceError(f"distinct points {ids[i]} and {ids[j]} at distance 0")
    tol = TRIANGLE_RTOL * max(float(dist.max()), 1.0)
    for j in range(n):
        # d(i,k) <= d(i,j) + d(j,k) for every (i,k), pivot j
        excess = dist - (dist[:, j][:, None] + dist[j][None, :])
        if np.any(excess > tol):
            i, k = np.unravel_index(int(np.argmax(excess)), excess.shape)
            raise SpaceError(
                f"triangle inequality fails for ({ids[i]}, {ids[j]}, {ids[k]}): "
                f"d={dist[i, k]!r} > {dist[i, j]!r} + {dist[j, k]!r}"
            )
    return MetricMeasureSpace(ids, dist, mass, coords)


@dataclass(frozen=True)
class Ball:
    center: int
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("ball radius must be nonnegative")

    def dilate(self, c: float) -> "Ball":
        return Ball(self.center, c * self.radius)


def ball_points(space: MetricMeasureSpace, ball: Ball) -> frozenset[int]:
    return frozenset(np.flatnonzero(space.ball_mask(ball.center, ball.radius)).tolist())


def measure(space: MetricMeasureSpace, points) -> float:
    if isinstance(points, np.ndarray) and points.dtype == bool:
        return float(space.mass[points].sum())
    idx = [space.check_index(p) for p in points]
    return float(space.mass[idx].sum()) if idx else 0.0


def breakpoint_radii(space: MetricMeasureSpace, x: int | None = None) -> np.ndarray:
    """Sorted distinct distances from ``x`` (all pairs if omitted), 0 first."""
    if x is None:
        vals = space.dist[np.triu_indices(space.n, 1)]
    else:
        vals = space.dist[space.check_index(x)]
    return np.unique(np.concatenate([[0.0], vals]))


# ---------------------------------------------------------------------------
# dominating functions


@dataclass(frozen=True)
class DominatingFunction:
    """lambda(x, r): power form ``c*(1+r)**n``, a tabulated step function, or
    an arbitrary callable ``fn(x, r)`` vectorised in ``r``."""

    form: str
    c_lambda: float
    c: float = 1.0
    n: float = 1.0
    table: dict | None = field(default=None, compare=False)
    fn: Callable | None = field(default=None, compare=False)

    @classmethod
    def power(cls, c: float, n: float, c_lambda: float | None = None):
        if c <= 0 or n < 0:
            raise ValueError("power form needs c > 0 and n >= 0")
        return cls("power", 2.0**n if c_lambda is None else c_lambda, c=c, n=n)

    @classmethod
    def tabulated(cls, table: dict, c_lambda: float):
        """``table[x] = (radii, values)``; flat extension on both sides."""
        clean = {}
        for x, (radii, values) in table.items():
            radii = np.asarray(radii, dtype=float)
            values = np.asarray(values, dtype=float)
            order = np.argsort(radii, kind="stable")
            clean[int(x)] = (radii[order], values[order])
        return cls("tabulated", c_lambda, table=clean)

    @classmethod
    def from_callable(cls, fn, c_lambda: float):
        return cls("callable", c_lambda, fn=fn)

    def __call__(self, x: int, r):
        r = np.asarray(r, dtype=float)
        if self.form == "power":
            return self.c * (1.0 + r) ** self.n
        if self.form == "tabulated":
            radii, values = self.table[int(x)]
            i = np.searchsorted(radii, r, side="right") - 1
            return values[np.clip(i, 0, len(values) - 1)]
        return np.asarray(self.fn(x, r), dtype=float)

    def describe(self) -> str:
        if self.form == "power":
            return f"power c={self.c!r} n={self.n!r} C_lambda={self.c_lambda!r}"
        return f"{self.form} C_lambda={self.c_lambda!r}"


def ball_measure_profile(space: MetricMeasureSpace, x: int, radii) -> np.ndarray:
    """mu(B(x, r)) for each r in ``radii``."""
    d = space.dist[x]
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(space.mass[order])
    k = np.searchsorted(d[order], np.asarray(radii, dtype=float), side="right")
    return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)


def default_dominating(space: MetricMeasureSpace, n: float | None = None, safety: float = 2.0):
    """Power-form lambda dominating the measure on every ball.

    ``c`` is the larger of ``safety * max mass`` and the smallest constant
    making ``mu(B(x,r)) <= c (1+r)^n`` hold on every breakpoint.
    """
    if n is None:
        n = float(space.coords.shape[1]) if space.coords is not None else 1.0
    radii = breakpoint_radii(space)
    worst = 0.0
    for x in space.support:
        prof = ball_measure_profile(space, x, radii)
        worst = max(worst, float(np.max(prof / (1.0 + radii) ** n)))
    c = max(safety * float(space.mass.max()), worst)
    return DominatingFunction.power(c, n)


def check_upper_doubling(space: MetricMeasureSpace, lam: DominatingFunction) -> ValidationReport:
    rep = ValidationReport("upper_doubling")
    radii = breakpoint_radii(space)
    C = lam.c_lambda
    W = space.support
    lam_at = {}
    for x in W:
        vals = lam(x, radii)
        lam_at[int(x)] = vals
        prof = ball_measure_profile(space, x, radii)
        for i in np.flatnonzero(np.diff(vals) < 0):
            rep.add("monotone", x=int(x), r=float(radii[i + 1]))
        for i in np.flatnonzero(prof > vals):
            rep.add("domination", x=int(x), r=float(radii[i]), mu=float(prof[i]), lam=float(vals[i]))
        half = lam(x, radii / 2.0)
        for i in np.flatnonzero(vals > C * half):
            rep.add("doubling", x=int(x), r=float(radii[i]))
    for x in W:
        for y in W:
            if x == y:
                continue
            ok_r = radii >= space.dist[x, y]
            bad = ok_r & (lam_at[int(x)] > C * lam_at[int(y)])
            for i in np.flatnonzero(bad):
                rep.add("symmetry", x=int(x), y=int(y), r=float(radii[i]))
    rep.stats["breakpoints"] = len(radii)
    return rep


def _greedy_separated(dist: np.ndarray, idx: np.ndarray, r: float) -> list[int]:
    """Maximal subset of ``idx`` with pairwise distance >= r, greedy in order."""
    chosen: list[int] = []
    for i in idx:
        if all(dist[i, j] >= r for j in chosen):
            chosen.append(int(i))
    return chosen


def check_geometric_doubling(space: MetricMeasureSpace, n: float, C: float) -> ValidationReport:
    rep = ValidationReport("geometric_doubling")
    worst = 0.0
    for x in range(space.n):
        for R in breakpoint_radii(space, x)[1:]:
            idx = np.flatnonzero(space.dist[x] <= R)
            inner = space.dist[np.ix_(idx, idx)]
            for r in np.unique(inner[inner > 0]):
                if r > R:
                    break
                count = len(_greedy_separated(space.dist, idx, r))
                bound = float(C * (R / r) ** n)
                worst = max(worst, count / bound)
                if count > bound:
                    rep.add("cardinality", center=x, R=float(R), r=float(r), count=count, bound=bound)
    rep.stats["worst_ratio"] = worst
    return rep


# ---------------------------------------------------------------------------
# text format


def parse_space(text: str, max_points: int = DEFAULT_MAX_POINTS) -> MetricMeasureSpace:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "space v1":
        raise SpaceError("missing 'space v1' header")
    ids: list[str] = []
    masses: list[float] = []
    coords: list[list[float] | None] = []
    dists: list[tuple[str, str, float]] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "point":
            if len(parts) < 3:
                raise SpaceError(f"bad point line: {ln!r}")
            ids.append(parts[1])
            kv = dict(p.split("=", 1) for p in parts[2:])
            masses.append(float(kv["mass"]))
            coords.append([float(c) for c in kv["coords"].split(",")] if "coords" in kv else None)
        elif parts[0] == "dist":
            if len(parts) != 4:
                raise SpaceError(f"bad dist line: {ln!r}")
            dists.append((parts[1], parts[2], float(parts[3])))
        else:
            raise SpaceError(f"unknown record {parts[0]!r}")
    has = [c is not None for c in coords]
    if all(has) and ids and not dists:
        return MetricMeasureSpace.from_coords(coords, masses, ids, max_points=max_points)
    if any(has) and not all(has):
        raise SpaceError("coords must be given for all points or none")
    pos = {p: i for i, p in enumerate(ids)}
    n = len(ids)
    dist = np.full((n, n), np.nan)
    np.fill_diagonal(dist, 0.0)
    for a, b, d in dists:
        if a not in pos or b not in pos:
            raise SpaceError(f"dist line names unknown point {a if a not in pos else b}")
        i, j = pos[a], pos[b]
        if not np.isnan(dist[i, j]) and dist[i, j] != d:
            raise SpaceError(f"asymmetric distance between {a} and {b}")
        dist[i, j] = d
        if not np.isnan(dist[j, i]) and dist[j, i] != d and i != j:
            raise SpaceError(f"asymmetric distance between {a} and {b}")
        dist[j, i] = d
    if np.isnan(dist).any():
        i, j = np.argwhere(np.isnan(dist))[0]
        raise SpaceError(f"missing distance between {ids[i]} and {ids[j]}")
    cs = np.array(coords, dtype=float) if all(has) and ids else None
    return validated(ids, dist, masses, coords=cs, max_points=max_points)


def dump_space(space: MetricMeasureSpace, meta: dict | None = None) -> str:
    out = [f"# {k}={v}" for k, v in (meta or {}).items()]
    out.append("space v1")
    for i, pid in enumerate(space.ids):
        line = f"point {pid} mass={float(space.mass[i])!r}"
        if space.coords is not None:
            line += " coords=" + ",".join(repr(float(c)) for c in space.coords[i])
        out.append(line)
    if space.coords is None:
        for i in range(space.n):
            for j in range(i + 1, space.n):
                out.append(f"dist {space.ids[i]} {space.ids[j]} {float(space.dist[i, j])!r}")
    return "\n".join(out) + "\n"


def read_meta(text: str) -> dict[str, str]:
    meta = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if ln.startswith("#") and "=" in ln:
            k, v = ln[1:].strip().split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def body_digest(text: str) -> str:
    """Hash of a file ignoring its ``#`` metadata lines."""
    body = "\n".join(ln for ln in text.splitlines() if not ln.strip().startswith("#"))
    return hashlib.sha256(body.encode()).hexdigest()
