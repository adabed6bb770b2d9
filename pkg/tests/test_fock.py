import numpy as np
import pytest
import scipy.sparse as sp

from pointer_collapse import fock
from pointer_collapse.dynamics import CollapseParams
from pointer_collapse.errors import ConfigurationError, CutoffError
from pointer_collapse.lattice import (Cell, LatticeSpec, NoiseField, in_future_cone, standard_foliation)
from pointer_collapse.smearing import KernelParams, accumulate_alpha, n_expectation, AlphaField

SPEC = LatticeSpec(2, 3, 2.0, 1.0)
KP = KernelParams(k=0.5)


@pytest.fixture(scope="module")
def model():
    return fock.FockModel(SPEC, fock.FockSpec.for_lattice(SPEC, 2), KP)


def test_fockspec_guards():
    with pytest.raises(ConfigurationError):
        fock.FockSpec((Cell(0, 0), Cell(0, 0)), 2, 1.0)
    with pytest.raises(CutoffError):
        fock.FockSpec(tuple(Cell(i, 0) for i in range(21)), 1, 1.0)
    fs = fock.FockSpec((Cell(0, 0),), 2, 1.0)
    with pytest.raises(ConfigurationError):
        fs.mode(Cell(1, 0))


def test_ladder_algebra():
    fs = fock.FockSpec((Cell(0, 0), Cell(1, 0), Cell(0, 1)), 3, 0.5)
    lad = [fock.build_ladder(fs, c) for c in fs.cells]
    vac = fock.vacuum(fs)
    for k, (a, ad) in enumerate(lad):
        assert abs((ad @ a).expect(vac)) == 0.0
        assert np.linalg.norm(a @ vac) == 0.0
        for kp, (b, bd) in enumerate(lad):
            assert fock.commutator(a, b).norm() == 0.0
            c = fock.commutator(a, bd).dense()
            if k != kp:
                assert np.abs(c).max() == 0.0
                continue
            dev = c - np.eye(fs.dim) / fs.domega
            bad_rows, bad_cols = np.nonzero(np.abs(dev) > 1e-12)
            assert len(bad_rows) > 0
            assert np.all(fs.top_sector[bad_rows]) and np.all(fs.top_sector[bad_cols])


def test_algebra_report(model):
    r = fock.algebra_report(model)
    for key in ("NN", "AA", "NA_spacelike", "NA_kernel_sum", "aa", "ladder_offtop", "hermiticity"):
        assert r[key] <= 1e-12, key
    assert r["NA_timelike_max"] > 0
    assert r["N_min_eigenvalue"] >= 0


def test_NA_support_is_future_only(model):
    cells = model.fspec.cells
    for x in cells:
        for y in cells:
            c = fock.commutator(model.N(x), model.A(y)).norm()
            if not in_future_cone(SPEC, y, x):
                assert c == 0.0


def test_coherent_state_examples():
    fs = fock.FockSpec((Cell(0, 0),), 8, 2.0)
    assert np.array_equal(fock.coherent_state(fs, {Cell(0, 0): 0.0}), fock.vacuum(fs))
    alpha = np.sqrt(0.5 / fs.domega) * np.exp(0.4j)
    psi = fock.coherent_state(fs, {Cell(0, 0): alpha})
    assert abs(np.linalg.norm(psi) - 1) < 1e-14
    assert fock.eigen_residual(fs, psi, Cell(0, 0), alpha) < 1e-3
    with pytest.raises(CutoffError):
        fock.coherent_state(fs, {Cell(0, 0): np.sqrt(3.0 / fs.domega)})


def test_coherent_N_matches_smearing(model):
    fs = fock.FockSpec.for_lattice(SPEC, 5)
    m = fock.FockModel(SPEC, fs, KP)
    rng = np.random.default_rng(8)
    grid = 0.1 * (rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2)))
    psi = fock.coherent_state(fs, fock.alpha_on_cells(fs, grid))
    x = Cell(1, 2)
    ref = n_expectation(SPEC, AlphaField(grid, None), x, KP)
    assert m.N(x).expect(psi).real == pytest.approx(ref, rel=1e-6)


def test_lambda_zero_one_step_is_displacement():
    fs = fock.FockSpec.for_lattice(SPEC, 6)
    m = fock.FockModel(SPEC, fs, KP)
    x = Cell(0, 0)
    J = 0.3
    psi = m.interact(fock.vacuum(fs), x, J)
    kern = m.g(x)
    alpha = {c: 0j for c in fs.cells}
    for t, i, v in zip(kern.t, kern.i, kern.values):
        alpha[Cell(int(i), int(t))] = -1j * J * SPEC.domega * v
    ref = fock.coherent_state(fs, alpha)
    assert abs(abs(np.vdot(ref, psi)) - 1) < 1e-10


def test_lambda_zero_segment_matches_accumulate_alpha():
    fs = fock.FockSpec.for_lattice(SPEC, 4)
    m = fock.FockModel(SPEC, fs, KP)
    J = np.zeros((3, 2))
    J[0, 0], J[0, 1], J[1, 0] = 0.3, -0.2, 0.25
    out = fock.evolve_exact(m, [1.0], [J], standard_foliation(SPEC), NoiseField(1, SPEC), CollapseParams(0.0))
    alpha = accumulate_alpha(SPEC, J, KP).values
    ref = fock.coherent_state(fs, fock.alpha_on_cells(fs, alpha))
    assert abs(abs(np.vdot(ref, out[0])) - 1) < 1e-4
    for c in fs.cells:
        assert fock.eigen_residual(fs, out[0], c, alpha[c.t, c.i]) < 1e-2


def test_spacelike_advances_commute(model):
    for x, y in ((Cell(0, 1), Cell(1, 1)), (Cell(0, 1), Cell(1, 2)), (Cell(1, 0), Cell(0, 1))):
        d = fock.spacelike_commutation(model, x, y, ([2.0, -1.0], [0.5, 1.5]), (0.4, -0.7), 0.8)
        assert d <= 1e-12


def test_H_pointer_structure():
    spec = LatticeSpec(1, 5, 1.0, 1.0)
    fs = fock.FockSpec.for_lattice(spec, 2)
    H = fock.build_H_pointer(spec, fs)
    assert H.hermiticity_error() <= 1e-12
    assert fock.time_translation_residual(spec, fs, H, Cell(0, 2)) <= 1e-12
    with pytest.raises(ConfigurationError):
        fock.build_H_pointer(LatticeSpec(2, 1, 1.0, 1.0), fock.FockSpec.for_lattice(LatticeSpec(2, 1, 1.0, 1.0), 2))


def test_delta_divergence_scaling():
    rows = fock.delta_divergence((1.0, 2.0, 4.0))["rows"]
    e = [r["expectation"] for r in rows]
    for a, b in zip(e, e[1:]):
        assert a / b == pytest.approx(2.0, rel=0.05)


def test_expectation_drift_trivial_cases(model):
    fs = model.fspec
    a1 = fock.phased_alpha(fs, [0.3, 0.1], 0.6)
    psi = np.stack([np.sqrt(0.5) * fock.coherent_state(fs, a1), np.sqrt(0.5) * fock.vacuum(fs)])
    J = [np.full((3, 2), 0.7), np.zeros((3, 2))]
    st = fock.MatterFockState(psi, J, np.array([1.0, 2.0]))
    x = Cell(0, 2)
    d, s = fock.expectation_drift(model, fock.identity(fs), st, x, CollapseParams(0.9))
    assert abs(d) <= 1e-12 and abs(s) <= 1e-12
    N = model.N(x)
    assert fock.commutator(N, fock.commutator(N, N)).norm() == 0.0
    d_small, _ = fock.expectation_drift(model, N, st, x, CollapseParams(0.0))
    d_big, _ = fock.expectation_drift(model, N, st, x, CollapseParams(5.0))
    assert d_small == pytest.approx(d_big, abs=1e-12)


def test_drift_formula_matches_collapse_monte_carlo(model):
    fs = model.fspec
    a1 = fock.phased_alpha(fs, [0.4, 0.1], 0.6)
    a2 = fock.phased_alpha(fs, [0.1, 0.4], 0.6)
    psi = np.stack([np.sqrt(0.5) * fock.coherent_state(fs, a1), np.sqrt(0.5) * fock.coherent_state(fs, a2)])
    st = fock.MatterFockState(psi, [np.zeros((3, 2))] * 2, np.array([1.0, 3.0]))
    res = fock.energy_monte_carlo(model, st, Cell(0, 2), CollapseParams(0.5), 10_000, seed=77)
    assert abs(res["pointer"]["z_vs_predicted"]) <= 3
    assert abs(res["matter"]["z_vs_predicted"]) <= 3


def test_truncation_convergence_geometric():
    alpha = {Cell(0, 0): 0.3 + 0.2j, Cell(0, 1): -0.25j, Cell(1, 1): 0.35}
    ch = fock.truncation_convergence(SPEC, KP, alpha, Cell(0, 2), (2, 4, 6))["changes"]
    assert ch[0] >= 4 * ch[1]


def test_evolve_exact_norm_squared_weights():
    fs = fock.FockSpec.for_lattice(SPEC, 2)
    m = fock.FockModel(SPEC, fs, KP)
    out = fock.evolve_exact(m, [0.6, 0.8], [np.zeros((3, 2))] * 2, standard_foliation(SPEC),
                            NoiseField(3, SPEC), CollapseParams(0.0))
    assert np.allclose(fock.branch_weights(out), [0.36, 0.64], atol=1e-14)
