"""Stochastic collapse dynamics in the branch representation.

A state is ``sum_i c_i |J_i>|N_i>`` with each branch an exact joint
eigenstate of every smeared number operator, so one advance through cell x
multiplies each amplitude by a scalar that depends only on ``N_i(x)``.

Linear (Q-measure) step, exponential scheme::

    c_i <- c_i exp(-lam^2 N_i^2 domega + lam N_i dW)

which is the exact geometric solution of the Ito equation and keeps the
squared norm a Q-martingale. The Euler scheme uses the bare increment
``1 - lam^2 N_i^2 domega / 2 + lam N_i dW``. Nonlinear (P-measure) steps
replace ``N_i`` by ``N_i - <N>`` and ``dW`` by ``dB`` and then renormalise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _integrator
from .errors import BoundaryError, ConfigurationError, SequencingError, UndefinedError
from .lattice import Cell, Foliation, LatticeSpec, NoiseField, Surface, advance, plc_surface
from .smearing import BranchProfile


MUTATIONS = {None: 0, "drift": 1, "diffusion": 2, "measure": 3}


@dataclass(frozen=True)
class CollapseParams:
    lam: float
    epsilon: float = 1e-6
    integrator: str = "nonlinear"
    scheme: str = "exponential"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if not 0 < self.epsilon < 1:
            raise ConfigurationError("epsilon must lie in (0, 1)")
        if self.integrator not in ("linear", "nonlinear"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.scheme not in ("exponential", "euler"):
            raise ConfigurationError(f"unknown step scheme {self.scheme!r}")


@dataclass
class BranchState:
    """Branch amplitudes stored as complex logarithms, plus their profiles."""

    log_amp: np.ndarray
    profiles: list[BranchProfile]
    surface: Surface
    normalized: bool = False

    def __post_init__(self):
        self.log_amp = np.asarray(self.log_amp, dtype=complex)
        if len(self.log_amp) < 1 or len(self.log_amp) != len(self.profiles):
            raise ConfigurationError("need one amplitude per branch and at least one branch")
        if any(p.N is None for p in self.profiles):
            raise ConfigurationError("every branch profile needs an N grid")

    @classmethod
    def from_amplitudes(cls, c, profiles, surface: Surface, normalized: bool = False) -> "BranchState":
        c = np.asarray(c, dtype=complex)
        if normalized:
            c = c / np.sqrt(np.sum(np.abs(c) ** 2))
        with np.errstate(divide="ignore"):
            return cls(np.log(c), list(profiles), surface, normalized)

    @property
    def n_branches(self) -> int:
        return len(self.profiles)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.exp(self.log_amp)

    def log_norm2(self) -> float:
        re = 2.0 * self.log_amp.real
        mx = re.max()
        return float(mx + np.log(np.sum(np.exp(re - mx))))

    def weights(self) -> np.ndarray:
        re = 2.0 * self.log_amp.real
        w = np.exp(re - re.max())
        return w / w.sum()

    def N_at(self, cell: Cell) -> np.ndarray:
        return np.array([p.N[cell.t, cell.i] for p in self.profiles])

    def N_grid(self) -> np.ndarray:
        return np.stack([p.N for p in self.profiles])


@dataclass
class PathRecord:
    seed: int
    foliation: str
    integrator: str
    outcome: int | None
    collapse_step: int | None
    collapse_time: float | None
    final: BranchState
    level_var: np.ndarray
    level_log_norm2: np.ndarray
    level_weights: np.ndarray
    steps: dict | None = None
    grids: dict | None = None

    @property
    def path_weight(self) -> float:
        return path_weight(self.final)


def quantum_expectation_N(state: BranchState, x: Cell) -> float:
    return float(np.dot(state.weights(), state.N_at(x)))


def variance_N(state: BranchState, x: Cell) -> float:
    w, n = state.weights(), state.N_at(x)
    return float(max(np.dot(w, n * n) - np.dot(w, n) ** 2, 0.0))


def covariance_N(state: BranchState, x: Cell, y: Cell) -> float:
    w, nx, ny = state.weights(), state.N_at(x), state.N_at(y)
    return float(np.dot(w, nx * ny) - np.dot(w, nx) * np.dot(w, ny))


def var_integral(state: BranchState, spec: LatticeSpec, row: int) -> float:
    """sum_x1 Var[N(x1, row)] dx on one time row."""
    w = state.weights()
    N = state.N_grid()[:, row, :]
    var = w @ N ** 2 - (w @ N) ** 2
    return float(np.sum(np.clip(var, 0.0, None)) * spec.dx)


def _check_next(spec: LatticeSpec, state: BranchState, cell: Cell) -> Surface:
    spec.check_cell(cell)
    if state.surface.h[cell.i] != cell.t:
        raise SequencingError(f"cell {tuple(cell)} is not the next advance of site {cell.i} "
                              f"(surface height {state.surface.h[cell.i]})")
    return advance(spec, state.surface, cell.i)


def _apply(log_amp: np.ndarray, d: np.ndarray, incr: float, lam: float, domega: float, scheme: str) -> np.ndarray:
    if scheme == "exponential":
        return log_amp + (-lam ** 2 * d ** 2 * domega + lam * d * incr)
    fac = 1.0 - 0.5 * lam ** 2 * d ** 2 * domega + lam * d * incr
    with np.errstate(divide="ignore"):
        return log_amp + np.log(fac.astype(complex))


def step_linear(spec: LatticeSpec, state: BranchState, cell: Cell, dW: float, params: CollapseParams) -> BranchState:
    if state.normalized:
        raise ConfigurationError("step_linear needs an unnormalised (Q-mode) state")
    surface = _check_next(spec, state, cell)
    la = _apply(state.log_amp, state.N_at(cell), dW, params.lam, spec.domega, params.scheme)
    return replace(state, log_amp=la, surface=surface)


def step_nonlinear(spec: LatticeSpec, state: BranchState, cell: Cell, dB: float, params: CollapseParams) -> BranchState:
    if not state.normalized:
        raise ConfigurationError("step_nonlinear needs a normalised (P-mode) state")
    surface = _check_next(spec, state, cell)
    n = state.N_at(cell)
    d = n - np.dot(state.weights(), n)
    la = _apply(state.log_amp, d, dB, params.lam, spec.domega, params.scheme)
    la = la - 0.5 * BranchState(la, state.profiles, surface).log_norm2()
    return replace(state, log_amp=la, surface=surface)


def path_weight(state: BranchState) -> float:
    """Squared norm <Phi|Phi>; the Radon-Nikodym weight of a Q-sampled path."""
    return float(np.exp(state.log_norm2()))


def projector_expectation(state: BranchState, j: int) -> float:
    if not 0 <= j < state.n_branches:
        raise ConfigurationError(f"branch {j} does not exist")
    return float(state.weights()[j])


def run_path(spec: LatticeSpec, state0: BranchState, foliation: Foliation, noise: NoiseField,
             params: CollapseParams, *, start_level: int = 0, stop_at_collapse: bool = True,
             record_steps: bool = False, record_grids: bool = False,
             mutation: str | None = None) -> PathRecord:
    """Evolve one sample path over a foliation.

    In linear mode the noise field supplies dW directly; in nonlinear mode it
    supplies the P-Brownian increments dB and dW is reconstructed as
    ``dB + 2 lam <N> domega``. Cells below ``start_level`` are swept without
    collapse terms (the pure interaction stage). ``mutation`` deliberately
    drops one dynamics term ("drift", "diffusion" or "measure") and exists
    only to show that the check suite notices.
    """
    if mutation not in MUTATIONS:
        raise ConfigurationError(f"unknown mutation {mutation!r}")
    if foliation.spec != spec or noise.spec != spec:
        raise ConfigurationError("foliation, noise and run use different lattices")
    if foliation.start != state0.surface:
        raise SequencingError("foliation does not start on the state's surface")
    nonlinear = params.integrator == "nonlinear"
    if nonlinear != state0.normalized:
        raise ConfigurationError(f"{params.integrator} integrator given a state with normalized={state0.normalized}")
    N = np.ascontiguousarray(state0.N_grid())
    with np.errstate(over="raise"):
        out = _integrator.integrate(
            N, np.ascontiguousarray(foliation.order), np.ascontiguousarray(noise.grid),
            np.ascontiguousarray(state0.log_amp.real), float(params.lam), float(spec.domega),
            float(spec.dx), nonlinear, params.scheme == "euler", float(params.epsilon),
            bool(stop_at_collapse), int(start_level), bool(record_steps), bool(record_grids),
            MUTATIONS[mutation])
    (logmag, parity, level_var, level_lognorm, level_w, cstep, outcome, done,
     st_dW, st_dB, st_ln, st_m, st_var, g_dW, g_dB, g_m) = out
    if not np.all(np.isfinite(logmag)):
        raise FloatingPointError("amplitude overflow; the step size is too large for these couplings")
    h = foliation.start.as_array().copy()
    np.add.at(h, foliation.order[:done, 0], 1)
    log_amp = logmag + 1j * (state0.log_amp.imag + np.pi * parity)
    final = BranchState(log_amp, state0.profiles, Surface(h), state0.normalized)
    ctime = None
    if cstep >= 0:
        ctime = float((foliation.order[cstep, 1] + 1) * spec.dt)
    steps = None
    if record_steps:
        steps = {"i": foliation.order[:done, 0], "t": foliation.order[:done, 1],
                 "dW": st_dW[:done], "dB": st_dB[:done], "norm2": np.exp(st_ln[:done]),
                 "meanN": st_m[:done], "varIntegral": st_var[:done]}
    grids = {"dW": g_dW, "dB": g_dB, "meanN": g_m} if record_grids else None
    return PathRecord(seed=noise.seed, foliation=foliation.label, integrator=params.integrator,
                      outcome=int(outcome) if outcome >= 0 else None,
                      collapse_step=int(cstep) if cstep >= 0 else None, collapse_time=ctime,
                      final=final, level_var=level_var, level_log_norm2=level_lognorm,
                      level_weights=level_w, steps=steps, grids=grids)


@dataclass(frozen=True)
class CollapseTimeEstimate:
    tau_formula: float
    tau_closed_form: float | None
    x_ref: Cell


def collapse_time_estimate(spec: LatticeSpec, state: BranchState, params: CollapseParams,
                           row: int = 0) -> CollapseTimeEstimate:
    """Var[N(x)] / (lam^2 sum_y dx Cov^2[N(x), N(y)]) on one time row.

    The reference point x is where the variance peaks. For two branches
    with plateaus of equal height J (in J) the scaling law
    ``1 / (lam^2 V_sym J^4)`` is returned as well.
    """
    if state.n_branches < 2:
        raise UndefinedError("collapse time needs at least two branches")
    w = state.weights()
    N = state.N_grid()[:, row, :]
    mean = w @ N
    var = w @ N ** 2 - mean ** 2
    i_ref = int(np.argmax(var))
    if var[i_ref] <= 0.0:
        raise UndefinedError("zero N variance everywhere: no superposition to reduce")
    cov = (w * N[:, i_ref]) @ N - mean[i_ref] * mean
    if params.lam == 0.0:
        tau = float("inf")
    else:
        tau = float(var[i_ref] / (params.lam ** 2 * np.sum(cov ** 2) * spec.dx))
    closed = None
    if state.n_branches == 2:
        J = np.stack([p.J[row] for p in state.profiles])
        vals = np.unique(J[J != 0.0])
        if len(vals) == 1 and params.lam > 0:
            v_sym = np.count_nonzero((J[0] != 0) ^ (J[1] != 0)) * spec.dx
            if v_sym > 0:
                closed = float(1.0 / (params.lam ** 2 * v_sym * vals[0] ** 4))
    return CollapseTimeEstimate(tau, closed, Cell(i_ref, row))


@dataclass(frozen=True)
class RegionIntegral:
    W: float
    signal: float
    noise: float
    volume: float


def region_mask(spec: LatticeSpec, x1: tuple[float, float], x0: tuple[float, float]) -> np.ndarray:
    """Cells whose coordinates fall in the closed box x1 x x0."""
    t = np.arange(spec.T)[:, None]
    i = np.arange(spec.L)[None, :]
    c1 = spec.x1(i)
    c0 = spec.x0(t)
    m = (c1 >= x1[0]) & (c1 <= x1[1]) & (c0 >= x0[0]) & (c0 <= x0[1])
    if not m.any():
        raise BoundaryError(f"region {x1} x {x0} contains no lattice cells")
    return m


def beable_W_region(spec: LatticeSpec, record: PathRecord, region: np.ndarray, lam: float) -> RegionIntegral:
    """W_R = sum_R dW, split into 2 lam sum_R <N> domega and sum_R dB."""
    if record.grids is None:
        raise ConfigurationError("path was run without record_grids")
    region = np.asarray(region, dtype=bool)
    if region.shape != (spec.T, spec.L):
        raise BoundaryError("region mask does not match the lattice")
    dW = record.grids["dW"][region]
    if np.any(np.isnan(dW)):
        raise BoundaryError("path did not sweep the whole region")
    signal = 2.0 * lam * spec.domega * float(np.sum(record.grids["meanN"][region]))
    return RegionIntegral(W=float(np.sum(dW)), signal=signal,
                          noise=float(np.sum(record.grids["dB"][region])),
                          volume=float(region.sum() * spec.domega))


def replay_weights(spec: LatticeSpec, state0: BranchState, dW: np.ndarray, surface: Surface,
                   lam: float, scheme: str = "exponential") -> np.ndarray:
    """Normalised weights on ``surface`` rebuilt from the realised dW field.

    Every per-cell factor is branch-diagonal, so the order of cells is
    irrelevant and the replay is exact.
    """
    t = np.arange(spec.T)[:, None]
    lo = state0.surface.as_array()[None, :]
    hi = surface.as_array()[None, :]
    mask = (t >= lo) & (t < hi)
    N = state0.N_grid()[:, mask]
    inc = np.asarray(dW)[mask]
    if np.any(np.isnan(inc)):
        raise BoundaryError("noise record does not cover the requested surface")
    if scheme == "exponential":
        logmag = state0.log_amp.real + np.sum(-lam ** 2 * N ** 2 * spec.domega + lam * N * inc, axis=1)
    else:
        fac = 1.0 - 0.5 * lam ** 2 * N ** 2 * spec.domega + lam * N * inc
        logmag = state0.log_amp.real + np.sum(np.log(np.abs(fac)), axis=1)
    re = 2.0 * logmag
    w = np.exp(re - re.max())
    return w / w.sum()


def beable_T00(spec: LatticeSpec, x: Cell, state0: BranchState, dW: np.ndarray, lam: float,
               scheme: str = "exponential") -> float:
    """Past-light-cone stress-energy beable sum_i w_i(plc(x)) E_i(x)."""
    spec.check_cell(x)
    if x.t < state0.surface.h[x.i]:
        raise BoundaryError(f"cell {tuple(x)} lies before the initial surface")
    plc = plc_surface(spec, x)
    plc = Surface(np.maximum(plc.as_array(), state0.surface.as_array()))
    w = replay_weights(spec, state0, dW, plc, lam, scheme)
    E = np.array([p.E[x.t, x.i] for p in state0.profiles])
    return float(w @ E)
