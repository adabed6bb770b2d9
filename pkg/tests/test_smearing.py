import numpy as np
import pytest

from pointer_collapse.errors import ConfigurationError
from pointer_collapse.fock import FockSpec, coherent_state, number_diag
from pointer_collapse.lattice import Cell, LatticeSpec, Surface, in_future_cone, in_past_cone
from pointer_collapse.smearing import (AlphaField, BranchProfile, KernelParams, accumulate_alpha, branch_image,
                                       eval_f, eval_g, kernel_f, kernel_g, n_expectation, n_profile, n_variance)

SPEC = LatticeSpec(9, 8, 1.0, 1.0)
KP = KernelParams(k=0.1)


def test_kernel_params_guards():
    with pytest.raises(ConfigurationError):
        KernelParams(k=0.0)
    with pytest.raises(ConfigurationError):
        KernelParams(k=1.0, mode="dynamic")
    with pytest.raises(ConfigurationError):
        KernelParams(k=1.0, T_static=((-1.0, 0.0), (0.0, 0.0)))


def test_support_matches_cones():
    x = Cell(4, 3)
    for t in range(SPEC.T):
        for i in range(SPEC.L):
            y = Cell(i, t)
            assert (eval_g(SPEC, x, y, KP) > 0) == in_future_cone(SPEC, x, y)
            assert (eval_f(SPEC, x, y, KP) > 0) == in_past_cone(SPEC, x, y)


def test_normalization_every_cell():
    for t in range(SPEC.T):
        for i in range(SPEC.L):
            x = Cell(i, t)
            for kern in (kernel_g(SPEC, x, KP), kernel_f(SPEC, x, KP)):
                if kern.boundary:
                    continue
                assert abs(kern.values.sum() * SPEC.domega - 1.0) < 1e-12


def test_boundary_flags():
    assert kernel_g(SPEC, Cell(2, SPEC.T - 1), KP).boundary
    assert kernel_f(SPEC, Cell(2, 0), KP).boundary
    assert not kernel_g(SPEC, Cell(2, 0), KP).boundary


def test_rest_frame_profile_depends_on_time_offset_only():
    spec = LatticeSpec(21, 6, 1.0, 0.5)
    x = Cell(10, 0)
    kern = kernel_g(spec, x, KernelParams(k=0.3, T_static=((2.0, 0.0), (0.0, 0.0))))
    dense = kern.dense(spec)
    for t in range(1, spec.T):
        row = dense[t][dense[t] > 0]
        assert np.allclose(row, row[0], rtol=1e-14)
    peaks = [dense[t].max() for t in range(1, spec.T)]
    c = peaks[0] / np.exp(-0.3 * 2.0 * 0.25)
    for t, p in zip(range(1, spec.T), peaks):
        assert p == pytest.approx(c * np.exp(-0.3 * 2.0 * (0.5 * t) ** 2), rel=1e-12)
    assert all(a >= b for a, b in zip(peaks, peaks[1:]))


def test_reflection_oracle():
    # time reflection maps the clipped past cone onto the clipped future cone
    refl = lambda c: Cell(c.i, SPEC.T - 1 - c.t)
    for x in [Cell(4, 5), Cell(0, 7), Cell(8, 3)]:
        for t in range(SPEC.T):
            for i in range(SPEC.L):
                y = Cell(i, t)
                assert eval_f(SPEC, x, y, KP) == pytest.approx(eval_g(SPEC, refl(x), refl(y), KP), rel=1e-13)


def test_positive_exponent_rejected():
    with pytest.raises(ConfigurationError):
        kernel_g(SPEC, Cell(4, 0), KernelParams(k=1.0, T_static=((0.0, 0.0), (0.0, -1.0))))


def test_accumulate_alpha_examples():
    J = np.zeros((SPEC.T, SPEC.L))
    assert np.all(accumulate_alpha(SPEC, J, KP).values == 0)
    x0 = Cell(4, 1)
    J[1, 4] = 3.0
    end = Surface([2] * SPEC.L)
    a = accumulate_alpha(SPEC, J, KP, Surface([1] * SPEC.L), end)
    expected = -1j * 3.0 * kernel_g(SPEC, x0, KP).dense(SPEC) * SPEC.domega
    assert np.allclose(a.values, expected, atol=1e-15)
    assert np.all(a.values.real == 0)
    assert a.surface == end


def test_accumulate_alpha_linear():
    rng = np.random.default_rng(0)
    J1 = np.where(rng.random((SPEC.T, SPEC.L)) < 0.2, rng.normal(size=(SPEC.T, SPEC.L)), 0.0)
    J2 = np.where(rng.random((SPEC.T, SPEC.L)) < 0.2, rng.normal(size=(SPEC.T, SPEC.L)), 0.0)
    a = accumulate_alpha(SPEC, 2.0 * J1 - J2, KP).values
    b = 2.0 * accumulate_alpha(SPEC, J1, KP).values - accumulate_alpha(SPEC, J2, KP).values
    assert np.allclose(a, b, atol=1e-13)


def test_alpha_supported_on_future_of_sources():
    J = np.zeros((SPEC.T, SPEC.L))
    J[2, 1] = 1.0
    a = accumulate_alpha(SPEC, J, KP).values
    for t, i in zip(*np.nonzero(a)):
        assert in_future_cone(SPEC, Cell(1, 2), Cell(int(i), int(t)))


def test_n_statistics_examples():
    x = Cell(4, 6)
    zero = AlphaField(np.zeros((SPEC.T, SPEC.L), dtype=complex), Surface.flat(SPEC, SPEC.T))
    assert n_expectation(SPEC, zero, x, KP) == 0.0
    assert n_variance(SPEC, zero, x, KP) == 0.0
    uniform = AlphaField(np.full((SPEC.T, SPEC.L), np.sqrt(7.0) * 1j), Surface.flat(SPEC, SPEC.T))
    assert n_expectation(SPEC, uniform, x, KP) == pytest.approx(7.0, rel=1e-12)
    rng = np.random.default_rng(1)
    al = AlphaField(rng.normal(size=(SPEC.T, SPEC.L)) + 1j * rng.normal(size=(SPEC.T, SPEC.L)),
                    Surface.flat(SPEC, SPEC.T))
    s = 2.5
    scaled = AlphaField(s * al.values, al.surface)
    assert n_expectation(SPEC, scaled, x, KP) == pytest.approx(s ** 2 * n_expectation(SPEC, al, x, KP), rel=1e-12)
    assert n_variance(SPEC, scaled, x, KP) == pytest.approx(s ** 2 * n_variance(SPEC, al, x, KP), rel=1e-12)
    fmax = kernel_f(SPEC, x, KP).values.max()
    assert n_variance(SPEC, al, x, KP) <= fmax * n_expectation(SPEC, al, x, KP) * (1 + 1e-12)


def test_n_statistics_match_fock_oracle():
    # 4x4 lattice; the pointer modes are the cells in the past cone of x, where f lives
    spec = LatticeSpec(4, 4, 2.0, 1.0)
    kp = KernelParams(k=0.5)
    x = Cell(1, 3)
    kern = kernel_f(spec, x, kp)
    cells = tuple(Cell(int(i), int(t)) for t, i in zip(kern.t, kern.i))
    rng = np.random.default_rng(3)
    grid = 0.01 * (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    alpha = AlphaField(grid, Surface.flat(spec, 4))
    fs = FockSpec(cells, 5, spec.domega)
    psi = coherent_state(fs, {c: complex(grid[c.t, c.i]) for c in cells})
    n = number_diag(fs, {c: float(v) for c, v in zip(cells, kern.values)})
    p = np.abs(psi) ** 2
    mean = p @ n
    var = p @ n ** 2 - mean ** 2
    assert mean == pytest.approx(n_expectation(spec, alpha, x, kp), rel=1e-10)
    assert var == pytest.approx(n_variance(spec, alpha, x, kp), rel=1e-10)


def test_branch_image_plateau_example():
    spec = LatticeSpec(60, 40, 0.05, 1e-6, x1_origin=-1.475)
    x1 = spec.x1(np.arange(spec.L))
    J = np.tile(np.where((x1 >= -1.0) & (x1 <= 0.0), 10.0, 0.0), (spec.T, 1))
    img = branch_image(spec, BranchProfile(J), KernelParams(k=1.0), "plateau")
    assert np.all(img.N[J != 0] == 100.0)
    assert np.all(img.N[J == 0] == 0.0)
    zero = branch_image(spec, BranchProfile(np.zeros_like(J)), KernelParams(k=1.0), "plateau")
    assert np.all(zero.N == 0)


def test_branch_image_plateau_guard():
    spec = LatticeSpec(20, 20, 1.0, 1.0)
    J = np.zeros((20, 20))
    J[:, 9:11] = 1.0
    with pytest.raises(ConfigurationError):
        branch_image(spec, BranchProfile(J), KernelParams(k=1e-4), "plateau")
    with pytest.raises(ConfigurationError):
        branch_image(spec, BranchProfile(J), KernelParams(k=1.0), "smooth")


def test_exact_vs_plateau_away_from_edges():
    spec = LatticeSpec(40, 12, 1.0, 1.0)
    kp = KernelParams(k=0.5)
    J = np.zeros((spec.T, spec.L))
    J[:, 5:35] = 3.0
    exact = branch_image(spec, BranchProfile(J), kp, "exact").N
    plateau = branch_image(spec, BranchProfile(J), kp, "plateau").N
    # away from the region edges and from the start of the interaction
    inner = np.s_[6:, 12:28]
    assert np.max(np.abs(exact[inner] - plateau[inner])) < 0.05 * 9.0


def test_n_profile_matches_pointwise():
    J = np.zeros((SPEC.T, SPEC.L))
    J[0:3, 3:6] = 2.0
    alpha = accumulate_alpha(SPEC, J, KP)
    prof = n_profile(SPEC, alpha, KP)
    for x in [Cell(4, 7), Cell(0, 5), Cell(8, 2)]:
        assert prof[x.t, x.i] == n_expectation(SPEC, alpha, x, KP)
