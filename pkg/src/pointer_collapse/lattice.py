"""Discrete 1+1D spacetime: cells, spacelike surfaces, foliations, light cones,
and the counter-based Brownian noise field.

Conventions: natural units (c = 1), cell (i, t) sits at x1 = x1_origin + i*dx,
x0 = t*dt. A surface is a vector of per-site heights ``h``; cells with
``t < h[i]`` lie to its past. Advancing site ``i`` sweeps cell ``(i, h[i])``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple

import numpy as np

from .errors import BoundaryError, CausalityError, ConfigurationError

_SLOPE_TOL = 1e-9


@dataclass(frozen=True)
class LatticeSpec:
    L: int
    T: int
    dx: float
    dt: float
    x1_origin: float = 0.0

    def __post_init__(self):
        if self.L < 1 or self.T < 1:
            raise ConfigurationError(f"lattice needs L, T >= 1, got L={self.L}, T={self.T}")
        if not (self.dx > 0 and self.dt > 0):
            raise ConfigurationError("dx and dt must be positive")
        if self.dt > self.dx * (1 + _SLOPE_TOL):
            raise ConfigurationError(f"dt={self.dt} exceeds dx={self.dx}; lattice light cone requires dt <= dx")

    @property
    def domega(self) -> float:
        return self.dx * self.dt

    @property
    def ratio(self) -> float:
        """Time steps a light ray needs to cross one site (dx/dt)."""
        return self.dx / self.dt

    @property
    def slope(self) -> int:
        """Largest height jump between neighbouring sites on a spacelike surface."""
        return int(math.floor(self.ratio + _SLOPE_TOL))

    @property
    def n_cells(self) -> int:
        return self.L * self.T

    def x1(self, i) -> np.ndarray | float:
        return self.x1_origin + np.asarray(i) * self.dx

    def x0(self, t) -> np.ndarray | float:
        return np.asarray(t) * self.dt

    def contains(self, cell: "Cell") -> bool:
        return 0 <= cell.i < self.L and 0 <= cell.t < self.T

    def check_cell(self, cell: "Cell") -> "Cell":
        if not self.contains(cell):
            raise BoundaryError(f"cell {tuple(cell)} outside {self.L}x{self.T} lattice")
        return cell


class Cell(NamedTuple):
    i: int
    t: int


@dataclass(frozen=True)
class Surface:
    h: tuple[int, ...]

    def __init__(self, h):
        object.__setattr__(self, "h", tuple(int(v) for v in h))

    def __len__(self):
        return len(self.h)

    def __getitem__(self, i):
        return self.h[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.h, dtype=np.int64)

    def is_spacelike(self, spec: LatticeSpec) -> bool:
        if len(self.h) != spec.L:
            return False
        a = self.as_array()
        if a.min() < 0 or a.max() > spec.T:
            return False
        return bool(np.all(np.abs(np.diff(a)) <= spec.slope))

    @classmethod
    def flat(cls, spec: LatticeSpec, level: int = 0) -> "Surface":
        return cls([level] * spec.L)


def _check_same(spec: LatticeSpec, *surfaces: Surface) -> None:
    for s in surfaces:
        if len(s) != spec.L:
            raise ConfigurationError(f"surface of length {len(s)} does not match lattice L={spec.L}")


def precedes(s1: Surface, s2: Surface) -> bool:
    """``s1 ≺ s2``: no point of s1 lies to the causal future of s2."""
    if len(s1) != len(s2):
        raise ConfigurationError("surfaces belong to different lattices")
    return all(a <= b for a, b in zip(s1.h, s2.h))


def advance(spec: LatticeSpec, surface: Surface, i: int) -> Surface:
    _check_same(spec, surface)
    if not 0 <= i < spec.L:
        raise BoundaryError(f"site {i} outside lattice")
    if surface.h[i] >= spec.T:
        raise BoundaryError(f"site {i} already at final time level {spec.T}")
    h = list(surface.h)
    h[i] += 1
    s = spec.slope
    for j in (i - 1, i + 1):
        if 0 <= j < spec.L and abs(h[i] - h[j]) > s:
            raise CausalityError(f"advancing site {i} to {h[i]} breaks spacelike condition against site {j} at {h[j]}")
    return Surface(h)


def allowed_advances(spec: LatticeSpec, surface: Surface) -> list[int]:
    h = surface.as_array()
    s = spec.slope
    out = []
    for i in range(spec.L):
        if h[i] >= spec.T:
            continue
        nh = h[i] + 1
        if i > 0 and abs(nh - h[i - 1]) > s:
            continue
        if i < spec.L - 1 and abs(nh - h[i + 1]) > s:
            continue
        out.append(i)
    return out


@dataclass(frozen=True)
class Foliation:
    """A maximal chain of surfaces, stored as the sequence of advanced cells."""

    spec: LatticeSpec
    order: np.ndarray  # (n_steps, 2) integer array of (i, t)
    start: Surface = field(default=None)
    label: str = "custom"

    def __post_init__(self):
        if self.start is None:
            object.__setattr__(self, "start", Surface.flat(self.spec, 0))
        order = np.asarray(self.order, dtype=np.int64).reshape(-1, 2)
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    def __len__(self):
        return len(self.order)

    def cells(self) -> Iterator[Cell]:
        for i, t in self.order:
            yield Cell(int(i), int(t))

    def steps(self) -> Iterator[tuple[Surface, Cell]]:
        """Yield (surface before the advance, advanced cell)."""
        h = list(self.start.h)
        for i, t in self.order:
            yield Surface(h), Cell(int(i), int(t))
            h[int(i)] += 1

    @property
    def final(self) -> Surface:
        h = self.start.as_array().copy()
        np.add.at(h, self.order[:, 0], 1)
        return Surface(h)

    def validate(self) -> None:
        """Replay the chain through ``advance``; raises on any invalid step."""
        surf = self.start
        for _, cell in self.steps():
            if surf.h[cell.i] != cell.t:
                raise CausalityError(f"foliation step {tuple(cell)} does not sit on the current surface")
            surf = advance(self.spec, surf, cell.i)


def standard_foliation(spec: LatticeSpec) -> Foliation:
    """Constant-time sweep: left to right within each time level."""
    t, i = np.meshgrid(np.arange(spec.T), np.arange(spec.L), indexing="ij")
    order = np.stack([i.ravel(), t.ravel()], axis=1)
    return Foliation(spec, order, label="time")


def random_foliation(spec: LatticeSpec, seed: int) -> Foliation:
    """Maximal chain grown by picking uniformly among allowed advances."""
    from ._integrator import grow_random_foliation

    u = np.random.default_rng(seed).random(spec.L * spec.T)
    slope = min(spec.slope, spec.T + 1)
    order = grow_random_foliation(spec.L, spec.T, slope, u)
    return Foliation(spec, order, label=f"random:{seed}")


def _in_cone(spec: LatticeSpec, dt_steps, di) -> np.ndarray:
    return np.abs(di) * spec.dx <= dt_steps * spec.dt * (1 + _SLOPE_TOL)


def in_past_cone(spec: LatticeSpec, x: Cell, y: Cell) -> bool:
    """True iff y lies strictly to the past of x inside its light cone."""
    dts = x.t - y.t
    return dts > 0 and bool(_in_cone(spec, dts, y.i - x.i))


def in_future_cone(spec: LatticeSpec, x: Cell, y: Cell) -> bool:
    return in_past_cone(spec, y, x)


def past_cone_mask(spec: LatticeSpec, x: Cell) -> np.ndarray:
    """Boolean (T, L) mask of the clipped strict past cone of x."""
    t = np.arange(spec.T)[:, None]
    i = np.arange(spec.L)[None, :]
    dts = x.t - t
    return (dts > 0) & _in_cone(spec, dts, i - x.i)


def future_cone_mask(spec: LatticeSpec, x: Cell) -> np.ndarray:
    t = np.arange(spec.T)[:, None]
    i = np.arange(spec.L)[None, :]
    dts = t - x.t
    return (dts > 0) & _in_cone(spec, dts, i - x.i)


def _mask_cells(mask: np.ndarray) -> set[Cell]:
    ts, is_ = np.nonzero(mask)
    return {Cell(int(i), int(t)) for t, i in zip(ts, is_)}


def past_cone(spec: LatticeSpec, x: Cell) -> set[Cell]:
    spec.check_cell(x)
    return _mask_cells(past_cone_mask(spec, x))


def future_cone(spec: LatticeSpec, x: Cell) -> set[Cell]:
    spec.check_cell(x)
    return _mask_cells(future_cone_mask(spec, x))


def plc_surface(spec: LatticeSpec, x: Cell) -> Surface:
    """Discrete stand-in for the past light cone of x.

    Heights follow the cone, ``h[j] = max(0, x_t - ceil(|j - i| dx/dt))``.
    When dx/dt is not an integer that profile can be steeper than a
    spacelike surface allows; it is then lowered to the largest spacelike
    surface beneath it (everything below stays inside the cone).
    """
    spec.check_cell(x)
    j = np.arange(spec.L)
    steps = np.ceil(np.abs(j - x.i) * spec.ratio - _SLOPE_TOL).astype(np.int64)
    u = np.maximum(0, x.t - steps)
    s = spec.slope
    if np.any(np.abs(np.diff(u)) > s):
        u = np.min(u[None, :] + s * np.abs(j[:, None] - j[None, :]), axis=1)
        u = np.maximum(u, 0)
    return Surface(u)


# -- noise -----------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finaliser (bijective 64-bit avalanche)."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_normals(seed: int, i, t) -> np.ndarray:
    """Standard normals addressed by (seed, i, t), SplitMix64 counter mode + Box-Muller.

    Each value depends only on its own counter, never on how many or which
    other cells were drawn.
    """
    i = np.asarray(i, dtype=np.uint64)
    t = np.asarray(t, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        ctr = ((t << np.uint64(32)) | i) << np.uint64(1)
        r1 = _mix64(key + (ctr + np.uint64(1)) * _GOLDEN)
        r2 = _mix64(key + (ctr + np.uint64(2)) * _GOLDEN)
    u1 = ((r1 >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (r2 >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(seed: int, *stream: int) -> int:
    """Independent 64-bit seed for a sub-stream (e.g. one Monte Carlo path)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NoiseField:
    """Q-measure Brownian increments, one per cell, with variance dω.

    ``variance_scale`` exists only for negative controls.
    """

    seed: int
    spec: LatticeSpec
    variance_scale: float = 1.0

    @property
    def sigma(self) -> float:
        return math.sqrt(self.spec.domega * self.variance_scale)

    def increment(self, i: int, t: int) -> float:
        return float(self.sigma * counter_normals(self.seed, i, t))

    @cached_property
    def grid(self) -> np.ndarray:
        """(T, L) array of all increments; read-only."""
        t, i = np.meshgrid(np.arange(self.spec.T), np.arange(self.spec.L), indexing="ij")
        g = self.sigma * counter_normals(self.seed, i, t)
        g.setflags(write=False)
        return g


def sample_dW(noise: NoiseField, cell: Cell) -> float:
    noise.spec.check_cell(cell)
    return noise.increment(cell.i, cell.t)


@dataclass(frozen=True)
class RecordedNoise:
    """Increments replayed from a stored (T, L) grid instead of the counter hash."""

    spec: LatticeSpec
    values: np.ndarray
    seed: int = -1

    def __post_init__(self):
        g = np.array(self.values, dtype=float)
        if g.shape != (self.spec.T, self.spec.L) or not np.all(np.isfinite(g)):
            raise ConfigurationError("recorded noise must be a finite (T, L) grid")
        g.setflags(write=False)
        object.__setattr__(self, "values", g)

    @property
    def grid(self) -> np.ndarray:
        return self.values

    def increment(self, i: int, t: int) -> float:
        return float(self.values[t, i])
