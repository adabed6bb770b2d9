"""Truncated-Fock realisation of the pointer field on tiny lattices.

One bosonic mode per lattice cell. The lattice delta function becomes
``1/domega``, so ``a(x) = b(x) / sqrt(domega)`` with ``b`` the standard
truncated ladder operator, ``[a(x), a†(x)] = 1/domega`` away from the top
occupation level, and ``n(x) = a†(x) a(x)``.

Operators are kept as scipy sparse matrices (the spaces reach a few
thousand dimensions); states are dense vectors whose C-order reshape is the
tensor of per-mode occupations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dynamics import CollapseParams
from .errors import ConfigurationError, CutoffError
from .lattice import Cell, Foliation, LatticeSpec, NoiseField
from .smearing import Kernel, KernelParams, kernel_f, kernel_g

MAX_DIM = 10 ** 6


@dataclass(frozen=True)
class FockSpec:
    cells: tuple[Cell, ...]
    cutoff: int
    domega: float

    def __post_init__(self):
        cells = tuple(Cell(int(c[0]), int(c[1])) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if len(set(cells)) != len(cells):
            raise ConfigurationError("Fock cells must be distinct")
        if self.cutoff < 1:
            raise ConfigurationError("cutoff must be at least 1")
        if (self.cutoff + 1) ** len(cells) > MAX_DIM:
            raise CutoffError(f"Fock dimension {(self.cutoff + 1) ** len(cells)} exceeds {MAX_DIM}")

    @classmethod
    def for_lattice(cls, spec: LatticeSpec, cutoff: int) -> "FockSpec":
        cells = [Cell(i, t) for t in range(spec.T) for i in range(spec.L)]
        return cls(tuple(cells), cutoff, spec.domega)

    @property
    def levels(self) -> int:
        return self.cutoff + 1

    @property
    def n_modes(self) -> int:
        return len(self.cells)

    @property
    def dim(self) -> int:
        return self.levels ** self.n_modes

    @cached_property
    def _index(self) -> dict:
        return {c: k for k, c in enumerate(self.cells)}

    def mode(self, cell: Cell) -> int:
        try:
            return self._index[Cell(*cell)]
        except KeyError:
            raise ConfigurationError(f"cell {tuple(cell)} carries no pointer mode") from None

    @cached_property
    def occupations(self) -> np.ndarray:
        """(dim, n_modes) occupation numbers of every basis vector."""
        grids = np.indices((self.levels,) * self.n_modes).reshape(self.n_modes, -1)
        return grids.T.astype(np.int64)

    @cached_property
    def top_sector(self) -> np.ndarray:
        """Basis vectors with at least one mode at the cutoff."""
        return np.any(self.occupations == self.cutoff, axis=1)


@dataclass
class DenseOp:
    """Operator on the truncated space (sparse storage, dense semantics)."""

    mat: sp.csr_matrix
    label: str = ""

    def __post_init__(self):
        self.mat = sp.csr_matrix(self.mat)

    def __add__(self, other):
        return DenseOp(self.mat + _m(other), f"({self.label}+{getattr(other, 'label', '')})")

    def __sub__(self, other):
        return DenseOp(self.mat - _m(other), f"({self.label}-{getattr(other, 'label', '')})")

    def __matmul__(self, other):
        if isinstance(other, DenseOp):
            return DenseOp(self.mat @ other.mat, f"{self.label}{other.label}")
        return self.mat @ other

    def __mul__(self, s):
        return DenseOp(self.mat * s, self.label)

    __rmul__ = __mul__

    @property
    def H(self) -> "DenseOp":
        return DenseOp(self.mat.conj().T.tocsr(), f"{self.label}†")

    def dense(self) -> np.ndarray:
        return self.mat.toarray()

    def norm(self) -> float:
        """Frobenius norm."""
        return float(sp.linalg.norm(self.mat)) if self.mat.nnz else 0.0

    def max_abs(self) -> float:
        return float(np.abs(self.mat.data).max()) if self.mat.nnz else 0.0

    def hermiticity_error(self) -> float:
        return (self - self.H).norm()

    def expect(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.mat @ psi))


def _m(x):
    return x.mat if isinstance(x, DenseOp) else x


def commutator(A: DenseOp, B: DenseOp) -> DenseOp:
    return DenseOp(A.mat @ B.mat - B.mat @ A.mat, f"[{A.label},{B.label}]")


def anticommutator(A: DenseOp, B: DenseOp) -> DenseOp:
    return DenseOp(A.mat @ B.mat + B.mat @ A.mat, f"{{{A.label},{B.label}}}")


def identity(fspec: FockSpec) -> DenseOp:
    return DenseOp(sp.identity(fspec.dim, dtype=complex, format="csr"), "1")


def _single_b(levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, levels)), 1).astype(complex)


def _embed(fspec: FockSpec, m: int, op: np.ndarray) -> sp.csr_matrix:
    left = sp.identity(fspec.levels ** m, format="csr")
    right = sp.identity(fspec.levels ** (fspec.n_modes - m - 1), format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(op)), right, format="csr")


def build_ladder(fspec: FockSpec, cell: Cell) -> tuple[DenseOp, DenseOp]:
    """(a(x), a†(x)) scaled so that [a, a†] = 1/domega off the top sector."""
    m = fspec.mode(cell)
    a = _embed(fspec, m, _single_b(fspec.levels)) / np.sqrt(fspec.domega)
    a = DenseOp(a.astype(complex), f"a{tuple(cell)}")
    return a, a.H


def number_diag(fspec: FockSpec, weights: dict[Cell, float]) -> np.ndarray:
    """Diagonal of sum_y weights[y] * b†(y) b(y) in the occupation basis."""
    occ = fspec.occupations
    out = np.zeros(fspec.dim)
    for c, wgt in weights.items():
        out += wgt * occ[:, fspec.mode(c)]
    return out


def _kernel_weights(fspec: FockSpec, kern: Kernel) -> dict[Cell, float]:
    out = {}
    for t, i, v in zip(kern.t, kern.i, kern.values):
        c = Cell(int(i), int(t))
        fspec.mode(c)
        out[c] = float(v)
    return out


def build_N(fspec: FockSpec, kern: Kernel) -> DenseOp:
    """N(x) = sum_y domega f(x, y) n(y); diagonal in the occupation basis."""
    # domega * f * (b†b / domega) = f * b†b
    d = number_diag(fspec, _kernel_weights(fspec, kern))
    return DenseOp(sp.diags(d.astype(complex), format="csr"), f"N{tuple(kern.x)}")


def build_n(fspec: FockSpec, cell: Cell) -> DenseOp:
    d = number_diag(fspec, {Cell(*cell): 1.0 / fspec.domega})
    return DenseOp(sp.diags(d.astype(complex), format="csr"), f"n{tuple(cell)}")


def build_A(fspec: FockSpec, kern: Kernel) -> DenseOp:
    """A(x) = sum_y domega g(x, y) (a(y) + a†(y))."""
    out = sp.csr_matrix((fspec.dim, fspec.dim), dtype=complex)
    for c, v in _kernel_weights(fspec, kern).items():
        a, ad = build_ladder(fspec, c)
        out = out + fspec.domega * v * (a.mat + ad.mat)
    return DenseOp(out, f"A{tuple(kern.x)}")


def commie_kernel_sum(fspec: FockSpec, kf: Kernel, kg: Kernel) -> DenseOp:
    """sum_y domega f(x, y) g(x', y) (a†(y) - a(y)), built independently of N and A."""
    wf = _kernel_weights(fspec, kf)
    wg = _kernel_weights(fspec, kg)
    out = sp.csr_matrix((fspec.dim, fspec.dim), dtype=complex)
    for c in set(wf) & set(wg):
        a, ad = build_ladder(fspec, c)
        out = out + fspec.domega * wf[c] * wg[c] * (ad.mat - a.mat)
    return DenseOp(out, "commie")


# -- states ------------------------------------------------------------------

def vacuum(fspec: FockSpec) -> np.ndarray:
    psi = np.zeros(fspec.dim, dtype=complex)
    psi[0] = 1.0
    return psi


def apply_mode_op(fspec: FockSpec, psi: np.ndarray, m: int, op: np.ndarray) -> np.ndarray:
    """Apply a single-mode (levels x levels) matrix to mode m of psi (batched over leading axes)."""
    lead = psi.shape[:-1]
    tens = psi.reshape(lead + (fspec.levels,) * fspec.n_modes)
    ax = len(lead) + m
    out = np.moveaxis(np.tensordot(op, tens, axes=([1], [ax])), 0, ax)
    return out.reshape(psi.shape)


def _displacement(levels: int, beta: complex) -> np.ndarray:
    b = _single_b(levels)
    return scipy.linalg.expm(beta * b.conj().T - np.conj(beta) * b)


def coherent_state(fspec: FockSpec, alpha: dict[Cell, complex] | np.ndarray) -> np.ndarray:
    """Product coherent state with a(y)|alpha> ~= alpha(y)|alpha>.

    ``alpha`` is a cell -> amplitude mapping or an array aligned with
    ``fspec.cells``. Raises CutoffError when a mode's mean occupation
    domega |alpha|^2 reaches cutoff/3.
    """
    if not isinstance(alpha, dict):
        alpha = {c: complex(v) for c, v in zip(fspec.cells, np.asarray(alpha).ravel())}
    psi = vacuum(fspec)
    for c, al in alpha.items():
        if al == 0:
            continue
        m = fspec.mode(c)
        occ = fspec.domega * abs(al) ** 2
        if occ >= fspec.cutoff / 3:
            raise CutoffError(f"mean occupation {occ:.3g} at {tuple(c)} too large for cutoff {fspec.cutoff}")
        psi = apply_mode_op(fspec, psi, m, _displacement(fspec.levels, al * np.sqrt(fspec.domega)))
    return psi / np.linalg.norm(psi)


def alpha_on_cells(fspec: FockSpec, alpha_grid: np.ndarray) -> dict[Cell, complex]:
    return {c: complex(alpha_grid[c.t, c.i]) for c in fspec.cells}


def eigen_residual(fspec: FockSpec, psi: np.ndarray, cell: Cell, alpha: complex) -> float:
    a, _ = build_ladder(fspec, cell)
    return float(np.linalg.norm(a.mat @ psi - alpha * psi))


# -- exact evolution ------------------------------------------------------------

@dataclass
class FockModel:
    """Everything the exact evolution needs on one tiny lattice."""

    spec: LatticeSpec
    fspec: FockSpec
    kparams: KernelParams
    tbar: object = None

    @cached_property
    def _f(self) -> dict:
        return {c: kernel_f(self.spec, c, self.kparams, self.tbar) for c in self.fspec.cells}

    @cached_property
    def _g(self) -> dict:
        return {c: kernel_g(self.spec, c, self.kparams, self.tbar) for c in self.fspec.cells}

    def f(self, x: Cell) -> Kernel:
        return self._f[Cell(*x)]

    def g(self, x: Cell) -> Kernel:
        return self._g[Cell(*x)]

    def N(self, x: Cell) -> DenseOp:
        return build_N(self.fspec, self.f(x))

    def A(self, x: Cell) -> DenseOp:
        return build_A(self.fspec, self.g(x))

    def N_diag(self, x: Cell) -> np.ndarray:
        return number_diag(self.fspec, _kernel_weights(self.fspec, self.f(x)))

    def interact(self, psi: np.ndarray, x: Cell, J: float) -> np.ndarray:
        """exp(-i J A(x) domega) psi, one displacement per mode in the future cone."""
        if J == 0.0:
            return psi
        dw = self.fspec.domega
        for c, v in _kernel_weights(self.fspec, self.g(x)).items():
            # -i J domega * domega g (b + b†)/sqrt(domega)
            phi = J * dw ** 1.5 * v
            psi = apply_mode_op(self.fspec, psi, self.fspec.mode(c), _displacement(self.fspec.levels, -1j * phi))
        return psi

    def collapse_linear(self, psi: np.ndarray, x: Cell, dW: float, lam: float) -> np.ndarray:
        """exp(-lam^2 N^2 domega + lam N dW) psi (N is diagonal)."""
        n = self.N_diag(x)
        return psi * np.exp(-lam ** 2 * n ** 2 * self.fspec.domega + lam * n * dW)

    def advance(self, psi: np.ndarray, x: Cell, J_values, dW: float, lam: float) -> np.ndarray:
        """One Tomonaga advance through x for every matter branch (rows of psi)."""
        out = np.empty_like(psi)
        for b in range(psi.shape[0]):
            out[b] = self.collapse_linear(self.interact(psi[b], x, float(J_values[b])), x, dW, lam)
        return out


def evolve_exact(model: FockModel, amplitudes, J_grids, foliation: Foliation, noise: NoiseField,
                 params: CollapseParams, start_level: int = 0) -> np.ndarray:
    """Fully coupled linear evolution; returns branch-resolved vectors (B, dim).

    Row b holds c_b |psi_b>, so ``|row|^2`` is the (unnormalised) branch
    weight. Collapse terms are switched off for cells below ``start_level``.
    """
    c = np.asarray(amplitudes, dtype=complex)
    psi = np.stack([cb * vacuum(model.fspec) for cb in c])
    for cell in foliation.cells():
        lam = params.lam if cell.t >= start_level else 0.0
        J = [float(np.asarray(g)[cell.t, cell.i]) for g in J_grids]
        psi = model.advance(psi, cell, J, noise.grid[cell.t, cell.i], lam)
    return psi


def branch_weights(psi: np.ndarray) -> np.ndarray:
    w = np.sum(np.abs(psi) ** 2, axis=1)
    return w / w.sum()


# -- pointer energy --------------------------------------------------------------

def time_derivative_matrix(spec: LatticeSpec, fspec: FockSpec) -> np.ndarray:
    """D[y, y'] with (D a)(y) ~ d/dx0 a(y): central inside, one-sided at the ends."""
    D = np.zeros((fspec.n_modes, fspec.n_modes))
    times = {c.t for c in fspec.cells}
    if len(times) < 2:
        raise ConfigurationError("pointer Hamiltonian needs at least two time rows")
    for c in fspec.cells:
        k = fspec.mode(c)
        up = Cell(c.i, c.t + 1)
        dn = Cell(c.i, c.t - 1)
        has_up = up in fspec._index
        has_dn = dn in fspec._index
        if has_up and has_dn:
            D[k, fspec.mode(up)] += 0.5 / spec.dt
            D[k, fspec.mode(dn)] -= 0.5 / spec.dt
        elif has_up:
            D[k, fspec.mode(up)] += 1.0 / spec.dt
            D[k, k] -= 1.0 / spec.dt
        elif has_dn:
            D[k, k] += 1.0 / spec.dt
            D[k, fspec.mode(dn)] -= 1.0 / spec.dt
        else:
            raise ConfigurationError(f"cell {tuple(c)} has no time neighbour")
    return D


def build_H_pointer(spec: LatticeSpec, fspec: FockSpec) -> DenseOp:
    """H = sum_y domega a†(y) i (D_t a)(y), hermitised as (H + H†)/2."""
    D = time_derivative_matrix(spec, fspec)
    h = fspec.domega * 1j * D
    h = 0.5 * (h + h.conj().T)
    ladders = [build_ladder(fspec, c) for c in fspec.cells]
    out = sp.csr_matrix((fspec.dim, fspec.dim), dtype=complex)
    for y, yp in zip(*np.nonzero(h)):
        out = out + h[y, yp] * (ladders[y][1].mat @ ladders[yp][0].mat)
    return DenseOp(out, "H_pointer")


def time_translation_residual(spec: LatticeSpec, fspec: FockSpec, H: DenseOp, cell: Cell) -> float:
    """|| ([H, a(x)] + i (D_t a)(x)) restricted off the top sector ||."""
    D = time_derivative_matrix(spec, fspec)
    a = [build_ladder(fspec, c)[0] for c in fspec.cells]
    k = fspec.mode(cell)
    target = sp.csr_matrix((fspec.dim, fspec.dim), dtype=complex)
    for kp in np.nonzero(D[k])[0]:
        target = target + D[k, kp] * a[kp].mat
    diff = commutator(H, a[k]).mat + 1j * target
    keep = sp.diags((~fspec.top_sector).astype(float))
    return float(sp.linalg.norm(keep @ diff @ keep)) if diff.nnz else 0.0


@dataclass
class MatterFockState:
    """Normalised joint state sum_b |J_b> (x) psi_b with branch-diagonal matter."""

    psi: np.ndarray  # (B, dim)
    J: list  # per-branch (T, L) grids
    E: np.ndarray | None = None  # per-branch matter energies (H_matter eigenvalues)

    def normalized(self) -> "MatterFockState":
        return MatterFockState(self.psi / np.linalg.norm(self.psi), self.J, self.E)


def _expect(op, state: MatterFockState) -> float:
    if isinstance(op, DenseOp):
        return float(sum(np.vdot(p, op.mat @ p).real for p in state.psi))
    vals = np.asarray(op, dtype=float)
    return float(np.dot(vals, np.sum(np.abs(state.psi) ** 2, axis=1)))


def expectation_drift(model: FockModel, O, state: MatterFockState, x: Cell, params: CollapseParams):
    """(drift, diffusion) of <O> per advance through x, per unit domega / dB.

    ``O`` is a pointer-field DenseOp or an array of per-branch matter
    eigenvalues (a branch-diagonal matter observable).
    """
    lam = params.lam
    N = model.N(x)
    A = model.A(x)
    psi = state.psi
    meanN = _expect(N, state)
    if isinstance(O, DenseOp):
        OA = commutator(O, A)
        ja = sum(float(np.asarray(J)[x.t, x.i]) * np.vdot(p, OA.mat @ p) for J, p in zip(state.J, psi))
        nno = commutator(N, commutator(N, O))
        drift = float((-1j * ja).real) - 0.5 * lam ** 2 * _expect(nno, state)
        anti = _expect(anticommutator(O, N), state)
    else:
        drift = 0.0
        vals = np.asarray(O, dtype=float)
        anti = float(sum(2.0 * v * np.vdot(p, N.mat @ p).real for v, p in zip(vals, psi)))
    diffusion = lam * (anti - 2.0 * _expect(O, state) * meanN)
    return drift, diffusion


def collapse_step_samples(model: FockModel, state: MatterFockState, x: Cell, params: CollapseParams,
                          dB: np.ndarray, include_interaction: bool = False) -> np.ndarray:
    """Nonlinear one-step updates of a normalised state for a batch of dB draws.

    Returns states of shape (S, B, dim).
    """
    lam, dw = params.lam, model.fspec.domega
    psi = state.psi
    if include_interaction:
        psi = np.stack([model.interact(p, x, float(np.asarray(J)[x.t, x.i])) for J, p in zip(state.J, psi)])
    n = model.N_diag(x)
    meanN = float(np.sum(np.abs(psi) ** 2 * n[None, :]))
    d = n - meanN
    fac = np.exp(-lam ** 2 * d[None, :] ** 2 * dw + lam * d[None, :] * np.asarray(dB)[:, None])
    out = psi[None, :, :] * fac[:, None, :]
    nrm = np.sqrt(np.sum(np.abs(out) ** 2, axis=(1, 2)))
    return out / nrm[:, None, None]


def batch_expect(op, states: np.ndarray) -> np.ndarray:
    """<O> for every state in an (S, B, dim) batch."""
    if isinstance(op, DenseOp):
        S, B, dim = states.shape
        flat = states.reshape(S * B, dim)
        vals = np.einsum("kd,kd->k", flat.conj(), (op.mat @ flat.T).T).real
        return vals.reshape(S, B).sum(axis=1)
    return np.sum(np.abs(states) ** 2, axis=2) @ np.asarray(op, dtype=float)


# -- reports ----------------------------------------------------------------------

def phased_alpha(fspec: FockSpec, amp, omega: float) -> dict[Cell, complex]:
    """alpha(i, t) = amp[i] exp(-i omega t): a record with a definite time phase."""
    amp = np.asarray(amp, dtype=float)
    return {c: complex(amp[c.i] * np.exp(-1j * omega * c.t)) for c in fspec.cells}


def algebra_report(model: FockModel) -> dict:
    """Largest deviations of the pointer commutation relations over all cell pairs."""
    fs = model.fspec
    cells = fs.cells
    N = {c: model.N(c) for c in cells}
    A = {c: model.A(c) for c in cells}
    spec = model.spec
    from .lattice import in_future_cone, in_past_cone

    out = {"NN": 0.0, "AA": 0.0, "NA_spacelike": 0.0, "NA_kernel_sum": 0.0,
           "NA_timelike_max": 0.0, "hermiticity": 0.0, "N_min_eigenvalue": np.inf,
           "ladder_offtop": 0.0, "aa": 0.0}
    for x in cells:
        out["hermiticity"] = max(out["hermiticity"], N[x].hermiticity_error(), A[x].hermiticity_error())
        out["N_min_eigenvalue"] = min(out["N_min_eigenvalue"], float(N[x].mat.diagonal().real.min()))
        for y in cells:
            out["NN"] = max(out["NN"], commutator(N[x], N[y]).norm())
            out["AA"] = max(out["AA"], commutator(A[x], A[y]).norm())
            c = commutator(N[x], A[y])
            ref = commie_kernel_sum(fs, model.f(x), model.g(y))
            out["NA_kernel_sum"] = max(out["NA_kernel_sum"], (c - ref).norm())
            timelike = in_past_cone(spec, x, y) or in_future_cone(spec, x, y)
            if timelike or x == y:
                out["NA_timelike_max"] = max(out["NA_timelike_max"], c.norm())
            else:
                out["NA_spacelike"] = max(out["NA_spacelike"], c.norm())
    keep = sp.diags((~fs.top_sector).astype(float))
    eye = sp.identity(fs.dim) / fs.domega
    ladders = [build_ladder(fs, c) for c in cells]
    for k, (a, ad) in enumerate(ladders):
        for kp, (b, bd) in enumerate(ladders):
            comm = commutator(a, bd).mat - (eye if k == kp else 0)
            out["ladder_offtop"] = max(out["ladder_offtop"], float(sp.linalg.norm(keep @ comm @ keep)))
            out["aa"] = max(out["aa"], commutator(a, b).norm())
    return out


def spacelike_commutation(model: FockModel, x: Cell, y: Cell, J_values, dW: tuple[float, float],
                          lam: float, amplitudes=None) -> float:
    """|| U_y U_x psi - U_x U_y psi || for one-cell advances at spacelike x, y."""
    B = len(J_values[0])
    c = np.ones(B) / np.sqrt(B) if amplitudes is None else np.asarray(amplitudes, dtype=complex)
    psi = np.stack([cb * vacuum(model.fspec) for cb in c])
    # a nontrivial pointer state first
    for cell in model.fspec.cells:
        if cell.t == 0:
            psi = model.advance(psi, cell, [1.0 + 0.5 * b for b in range(B)], 0.3, lam)
    xy = model.advance(model.advance(psi, x, J_values[0], dW[0], lam), y, J_values[1], dW[1], lam)
    yx = model.advance(model.advance(psi, y, J_values[1], dW[1], lam), x, J_values[0], dW[0], lam)
    return float(np.linalg.norm(xy - yx))


def double_commutator_report(model: FockModel, x: Cell) -> dict:
    """[N(x), [N(x), H_pointer]] for the smeared kernel at x."""
    H = build_H_pointer(model.spec, model.fspec)
    N = model.N(x)
    dc = commutator(N, commutator(N, H))
    rows = sorted({int(t) for t in model.f(x).t})
    return {"cell": list(x), "f_time_rows": rows, "norm": dc.norm(),
            "relative": dc.norm() / max(N.max_abs() ** 2 * H.norm(), 1e-300),
            "H_hermiticity": H.hermiticity_error()}


def delta_divergence(dx_values, dt: float = 1.0, T: int = 3, cutoff: int = 3,
                     amp: float = 0.3, omega: float = 0.7) -> dict:
    """Delta-kernel double commutator at fixed dt while dx (hence domega) varies.

    ``expectation`` is taken in a fixed time-phased coherent field, so it
    isolates the lattice delta(0) = 1/domega factor; ``operator_norm`` is
    the Frobenius norm of the truncated matrix and carries an extra 1/domega
    from the field normalisation.
    """
    rows = []
    for dx in dx_values:
        spec = LatticeSpec(1, T, float(dx), dt)
        fs = FockSpec.for_lattice(spec, cutoff)
        H = build_H_pointer(spec, fs)
        x = Cell(0, T // 2)
        n = build_n(fs, x)
        dc = commutator(n, commutator(n, H))
        psi = coherent_state(fs, phased_alpha(fs, [amp], omega))
        rows.append({"dx": float(dx), "domega": spec.domega, "operator_norm": dc.norm(),
                     "expectation": dc.expect(psi).real})
    return {"rows": rows}


def energy_monte_carlo(model: FockModel, state: MatterFockState, x: Cell, params: CollapseParams,
                       n_samples: int, seed: int) -> dict:
    """One-step collapse-only changes of <H_pointer> and <H_matter> over dB draws."""
    H = build_H_pointer(model.spec, model.fspec)
    rng = np.random.default_rng(seed)
    dB = rng.normal(0.0, np.sqrt(model.fspec.domega), n_samples)
    out = collapse_step_samples(model, state, x, params, dB)
    res = {}
    for name, O in (("pointer", H), ("matter", state.E)):
        e0 = batch_expect(O, state.psi[None])[0]
        de = batch_expect(O, out) - e0
        drift, diffusion = expectation_drift(model, O, state, x, params)
        se = float(de.std(ddof=1) / np.sqrt(n_samples))
        res[name] = {"mean_change": float(de.mean()), "stderr": se,
                     "z_vs_zero": float(de.mean() / se) if se > 0 else 0.0,
                     "predicted_mean": drift * model.fspec.domega,
                     "z_vs_predicted": float((de.mean() - drift * model.fspec.domega) / se) if se > 0 else 0.0,
                     "diffusion": diffusion}
    return res


def truncation_convergence(spec: LatticeSpec, kparams: KernelParams, alpha: dict, x: Cell,
                           cutoffs=(2, 4, 6)) -> dict:
    """<N(x)> and Var N(x) in a coherent state at increasing cutoffs."""
    vals = []
    for d in cutoffs:
        fs = FockSpec(tuple(alpha), d, spec.domega)
        n = number_diag(fs, _kernel_weights_subset(fs, kernel_f(spec, x, kparams)))
        psi = coherent_state(fs, alpha)
        p = np.abs(psi) ** 2
        mean = float(p @ n)
        vals.append((mean, float(p @ n ** 2 - mean ** 2)))
    vals = np.array(vals)
    diffs = np.abs(np.diff(vals, axis=0)).max(axis=1)
    return {"cutoffs": list(cutoffs), "mean": vals[:, 0].tolist(), "var": vals[:, 1].tolist(),
            "changes": diffs.tolist()}


def _kernel_weights_subset(fspec: FockSpec, kern: Kernel) -> dict[Cell, float]:
    out = {}
    for t, i, v in zip(kern.t, kern.i, kern.values):
        c = Cell(int(i), int(t))
        if c in fspec._index:
            out[c] = float(v)
    return out


def oracle_equivalence(spec: LatticeSpec, kparams: KernelParams, cutoff: int, amplitudes, J_grids,
                       lam: float, seeds) -> dict:
    """Exact Fock evolution vs the branch integrator with exact-mode N profiles."""
    from .dynamics import BranchState, run_path
    from .lattice import Surface, standard_foliation
    from .smearing import BranchProfile, branch_image

    fs = FockSpec.for_lattice(spec, cutoff)
    model = FockModel(spec, fs, kparams)
    fol = standard_foliation(spec)
    params = CollapseParams(lam, integrator="linear")
    profiles = [branch_image(spec, BranchProfile(J), kparams) for J in J_grids]
    state0 = BranchState.from_amplitudes(amplitudes, profiles, Surface.flat(spec, 0))
    c2 = np.abs(np.asarray(amplitudes)) ** 2
    c2 = c2 / c2.sum()
    rows = []
    for s in seeds:
        noise = NoiseField(int(s), spec)
        w_exact = branch_weights(evolve_exact(model, amplitudes, J_grids, fol, noise, params))
        w_branch = run_path(spec, state0, fol, noise, params, stop_at_collapse=False).final.weights()
        rows.append({"seed": int(s), "exact": w_exact.tolist(), "branch": w_branch.tolist(),
                     "max_rel_diff": float(np.max(np.abs(w_exact - w_branch) / w_branch)),
                     "max_move": float(np.max(np.abs(w_branch - c2)))})
    return {"rows": rows, "max_rel_diff": max(r["max_rel_diff"] for r in rows),
            "mean_move": float(np.mean([r["max_move"] for r in rows]))}
