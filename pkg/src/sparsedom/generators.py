"""Fixture spaces used by the tests and by ``gen-space``."""
from __future__ import annotations

import numpy as np

from .space import MetricMeasureSpace


def uniform_line(n: int = 10, spacing: float = 1.0) -> MetricMeasureSpace:
    return MetricMeasureSpace.from_coords(np.arange(n) * spacing, np.ones(n))


def geometric_mass_line(n: int = 8, ratio: float = 0.5) -> MetricMeasureSpace:
    return MetricMeasureSpace.from_coords(np.arange(n, dtype=float), ratio ** np.arange(n))


def planar_grid(rows: int = 3, cols: int | None = None, spacing: float = 1.0) -> MetricMeasureSpace:
    cols = rows if cols is None else cols
    pts = [(i * spacing, j * spacing) for i in range(rows) for j in range(cols)]
    return MetricMeasureSpace.from_coords(pts, np.ones(len(pts)))


def random_cloud(n: int = 32, seed: int = 0, dim: int = 2, scale: float = 10.0,
                 mass_spread: float = 0.0) -> MetricMeasureSpace:
    """Uniform points in ``[0, scale]^dim``; masses log-uniform in
    ``[1, e^mass_spread]`` (all ones when ``mass_spread`` is 0)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, scale, size=(n, dim))
    mass = np.exp(rng.uniform(0.0, mass_spread, size=n)) if mass_spread else np.ones(n)
    return MetricMeasureSpace.from_coords(pts, mass)


def cantor_like_mass(levels: int = 3) -> MetricMeasureSpace:
    """Left endpoints of the middle-thirds construction on ``[0, 3^levels]``
    with equal masses ``2^-levels``."""
    pts = [0]
    for lv in range(levels):
        step = 2 * 3 ** (levels - lv - 1)
        pts = [p for q in pts for p in (q, q + step)]
    pts = sorted(pts)
    return MetricMeasureSpace.from_coords(np.array(pts, dtype=float), np.full(len(pts), 2.0**-levels))


def single_point(mass: float = 1.0) -> MetricMeasureSpace:
    return MetricMeasureSpace.from_coords(np.zeros((1, 1)), [mass])


GENERATORS = {
    "uniform-line": uniform_line,
    "geometric-mass-line": geometric_mass_line,
    "planar-grid": planar_grid,
    "random-cloud": random_cloud,
    "cantor-like-mass": cantor_like_mass,
    "single-point": single_point,
}


def generate(name: str, seed: int | None = None, **params) -> MetricMeasureSpace:
    if name not in GENERATORS:
        raise KeyError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    if name == "random-cloud":
        params.setdefault("seed", 0 if seed is None else seed)
    return GENERATORS[name](**params)


def named_fixtures() -> dict[str, MetricMeasureSpace]:
    """The five bundled fixtures."""
    return {
        "uniform-line": uniform_line(10),
        "geometric-mass-line": geometric_mass_line(8),
        "planar-grid": planar_grid(3),
        "random-cloud": random_cloud(32, seed=7),
        "cantor-like-mass": cantor_like_mass(3),
    }
