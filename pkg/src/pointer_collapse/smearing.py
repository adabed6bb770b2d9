"""Smearing kernels f, g and the coherent pointer-field records they produce.

Both kernels are Gaussians in the proper separation weighted by the local
stress tensor, ``C(x) exp(-k Tbar^{mu nu} d_mu d_nu)``, supported on the
strict future cone (g) or strict past cone (f) and normalised on the
lattice-clipped cone so that ``sum_y kernel * domega == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError
from .lattice import Cell, LatticeSpec, Surface

_METRIC = np.diag([1.0, -1.0])


def rest_frame_tensor(t00: float) -> tuple[tuple[float, float], tuple[float, float]]:
    return ((float(t00), 0.0), (0.0, 0.0))


@dataclass(frozen=True)
class KernelParams:
    """Kernel inputs. ``T_static`` is the contravariant 2x2 stress tensor
    used when ``mode == "static"``; in ``"plc"`` mode a per-cell rest-frame
    T00 field is supplied by the caller instead."""

    k: float
    mode: str = "static"
    T_static: tuple = ((1.0, 0.0), (0.0, 0.0))
    truncation: float = 1e-12
    plateau_guard: float = 0.5

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigurationError(f"kernel decay constant k must be positive, got {self.k}")
        if self.mode not in ("static", "plc"):
            raise ConfigurationError(f"unknown kernel mode {self.mode!r}")
        T = np.asarray(self.T_static, dtype=float)
        if T.shape != (2, 2) or not np.allclose(T, T.T):
            raise ConfigurationError("T_static must be a symmetric 2x2 matrix")
        if T[0, 0] < 0:
            raise ConfigurationError("T00 must be non-negative")
        object.__setattr__(self, "T_static", tuple(map(tuple, T.tolist())))


@dataclass(frozen=True)
class Kernel:
    """One row of a kernel: values on the clipped cone of ``x``."""

    x: Cell
    t: np.ndarray
    i: np.ndarray
    values: np.ndarray
    boundary: bool = False

    def dense(self, spec: LatticeSpec) -> np.ndarray:
        out = np.zeros((spec.T, spec.L))
        out[self.t, self.i] = self.values
        return out


@lru_cache(maxsize=256)
def _offset_table(spec: LatticeSpec, k: float, tensor: tuple, truncation: float):
    """Unnormalised weights on cone offsets (dts >= 1, di) for one tensor.

    Returns (dts, dis, w) with negligible weights already dropped.
    """
    T = np.asarray(tensor, dtype=float)
    max_di = min(spec.L - 1, int(np.floor((spec.T - 1) * spec.dt / spec.dx + 1e-9)))
    dts = np.arange(1, spec.T)
    dis = np.arange(-max_di, max_di + 1)
    DT, DI = np.meshgrid(dts, dis, indexing="ij")
    inside = np.abs(DI) * spec.dx <= DT * spec.dt * (1 + 1e-9)
    DT, DI = DT[inside], DI[inside]
    d_up = np.stack([DT * spec.dt, DI * spec.dx])  # contravariant separation
    d_lo = _METRIC @ d_up
    expo = -k * np.einsum("mn,mk,nk->k", T, d_lo, d_lo)
    if np.any(expo > 1e-12):
        raise ConfigurationError("kernel exponent is positive inside the cone; stress tensor is not admissible")
    if len(expo) == 0:
        return DT, DI, expo
    expo = expo - expo.max()
    w = np.exp(expo)
    keep = w >= truncation
    out = DT[keep], DI[keep], w[keep]
    for a in out:
        a.setflags(write=False)
    return out


def _tensor_for(params: KernelParams, tbar) -> tuple:
    if tbar is None:
        return params.T_static
    T = np.asarray(tbar, dtype=float)
    if T.ndim == 0:
        return rest_frame_tensor(float(T))
    return tuple(map(tuple, T.tolist()))


def _kernel(spec: LatticeSpec, x: Cell, params: KernelParams, tbar, sign: int) -> Kernel:
    spec.check_cell(x)
    dts, dis, w = _offset_table(spec, params.k, _tensor_for(params, tbar), params.truncation)
    t = x.t + sign * dts
    i = x.i + dis
    ok = (t >= 0) & (t < spec.T) & (i >= 0) & (i < spec.L)
    t, i, w = t[ok], i[ok], w[ok]
    total = w.sum() * spec.domega
    if total == 0.0:
        empty = np.zeros(0, dtype=np.int64)
        return Kernel(x, empty, empty, np.zeros(0), boundary=True)
    return Kernel(x, t, i, w / total)


def kernel_g(spec: LatticeSpec, x: Cell, params: KernelParams, tbar=None) -> Kernel:
    """g(x, .) on the clipped strict future cone of x."""
    return _kernel(spec, x, params, tbar, +1)


def kernel_f(spec: LatticeSpec, x: Cell, params: KernelParams, tbar=None) -> Kernel:
    """f(x, .) on the clipped strict past cone of x."""
    return _kernel(spec, x, params, tbar, -1)


def _lookup(kern: Kernel, y: Cell) -> float:
    hit = (kern.t == y.t) & (kern.i == y.i)
    return float(kern.values[hit][0]) if hit.any() else 0.0


def eval_g(spec: LatticeSpec, x: Cell, y: Cell, params: KernelParams, tbar=None) -> float:
    return _lookup(kernel_g(spec, x, params, tbar), y)


def eval_f(spec: LatticeSpec, x: Cell, y: Cell, params: KernelParams, tbar=None) -> float:
    return _lookup(kernel_f(spec, x, params, tbar), y)


def _tbar_at(t00, cell: Cell):
    if t00 is None:
        return None
    return float(np.asarray(t00)[cell.t, cell.i])


@dataclass
class AlphaField:
    """Coherent amplitude alpha(y) of the pointer record, per cell."""

    values: np.ndarray  # complex (T, L)
    surface: Surface


@dataclass
class BranchProfile:
    """Per-cell eigenvalue profiles of one matter branch, arrays of shape (T, L)."""

    J: np.ndarray
    N: np.ndarray | None = None
    E: np.ndarray | None = None

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.E is None:
            self.E = np.abs(self.J)
        else:
            self.E = np.asarray(self.E, dtype=float)
        if self.N is not None:
            self.N = np.asarray(self.N, dtype=float)
            if np.any(self.N < 0):
                raise ConfigurationError("N profile must be non-negative")


def _segment_mask(spec: LatticeSpec, start: Surface | None, end: Surface | None) -> np.ndarray:
    t = np.arange(spec.T)[:, None]
    lo = np.zeros(spec.L, dtype=np.int64) if start is None else start.as_array()
    hi = np.full(spec.L, spec.T, dtype=np.int64) if end is None else end.as_array()
    return (t >= lo[None, :]) & (t < hi[None, :])


def accumulate_alpha(spec: LatticeSpec, J: np.ndarray, params: KernelParams,
                     start: Surface | None = None, end: Surface | None = None,
                     t00: np.ndarray | None = None) -> AlphaField:
    """alpha(y) = -i sum_x domega J(x) g(x, y) over sources between two surfaces.

    ``t00`` is a per-cell rest-frame T00 field (plc mode); None uses the
    static tensor.
    """
    J = np.asarray(J, dtype=float)
    if J.shape != (spec.T, spec.L):
        raise ConfigurationError(f"J grid has shape {J.shape}, expected {(spec.T, spec.L)}")
    acc = np.zeros((spec.T, spec.L))
    src = _segment_mask(spec, start, end) & (J != 0.0)
    for t, i in zip(*np.nonzero(src)):
        x = Cell(int(i), int(t))
        kern = kernel_g(spec, x, params, _tbar_at(t00, x))
        np.add.at(acc, (kern.t, kern.i), J[t, i] * kern.values)
    surface = end if end is not None else Surface.flat(spec, spec.T)
    return AlphaField(-1j * spec.domega * acc, surface)


def n_expectation(spec: LatticeSpec, alpha: AlphaField, x: Cell, params: KernelParams, tbar=None) -> float:
    kern = kernel_f(spec, x, params, tbar)
    return float(spec.domega * np.sum(kern.values * np.abs(alpha.values[kern.t, kern.i]) ** 2))


def n_variance(spec: LatticeSpec, alpha: AlphaField, x: Cell, params: KernelParams, tbar=None) -> float:
    kern = kernel_f(spec, x, params, tbar)
    return float(spec.domega * np.sum(kern.values ** 2 * np.abs(alpha.values[kern.t, kern.i]) ** 2))


def n_profile(spec: LatticeSpec, alpha: AlphaField, params: KernelParams,
              t00: np.ndarray | None = None) -> np.ndarray:
    """<N(x)> for every cell."""
    out = np.zeros((spec.T, spec.L))
    a2 = np.abs(alpha.values) ** 2
    for t in range(spec.T):
        for i in range(spec.L):
            x = Cell(i, t)
            kern = kernel_f(spec, x, params, _tbar_at(t00, x))
            out[t, i] = spec.domega * np.sum(kern.values * a2[kern.t, kern.i])
    return out


def correlation_length(spec: LatticeSpec, params: KernelParams, tbar=None) -> float:
    """Spatial RMS radius of f for a cell on the top row, mid-lattice."""
    x = Cell(spec.L // 2, spec.T - 1)
    kern = kernel_f(spec, x, params, tbar)
    if kern.boundary:
        return 0.0
    dx1 = (kern.i - x.i) * spec.dx
    return float(np.sqrt(spec.domega * np.sum(kern.values * dx1 ** 2)))


def min_feature_width(spec: LatticeSpec, J: np.ndarray) -> float:
    """Narrowest run of constant nonzero J along x1, over all time rows."""
    best = np.inf
    for row in np.asarray(J):
        i = 0
        while i < spec.L:
            if row[i] == 0.0:
                i += 1
                continue
            j = i
            while j + 1 < spec.L and row[j + 1] == row[i]:
                j += 1
            best = min(best, (j - i + 1) * spec.dx)
            i = j + 1
    return float(best)


def branch_image(spec: LatticeSpec, profile: BranchProfile, params: KernelParams,
                 idealization: str = "exact", start: Surface | None = None,
                 end: Surface | None = None, t00: np.ndarray | None = None) -> BranchProfile:
    """Fill in the N profile of a branch from its J profile.

    ``exact`` evaluates <alpha|N(x)|alpha> from the accumulated record;
    ``plateau`` uses N = J^2 on the support of J, valid only when the
    kernels are narrow compared with the J features.
    """
    J = profile.J
    if idealization == "plateau":
        if np.any(J != 0.0):
            corr = correlation_length(spec, params)
            width = min_feature_width(spec, J)
            if corr > params.plateau_guard * width:
                raise ConfigurationError(
                    f"plateau idealization invalid: kernel correlation length {corr:.3g} exceeds "
                    f"{params.plateau_guard} x smallest feature width {width:.3g}")
        N = np.where(J != 0.0, J ** 2, 0.0)
    elif idealization == "exact":
        alpha = accumulate_alpha(spec, J, params, start, end, t00)
        N = n_profile(spec, alpha, params, t00)
    else:
        raise ConfigurationError(f"unknown idealization {idealization!r}")
    return BranchProfile(J=J, N=N, E=profile.E)
