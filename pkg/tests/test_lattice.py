import itertools

import numpy as np
import pytest

from pointer_collapse.errors import BoundaryError, CausalityError, ConfigurationError
from pointer_collapse.lattice import (Cell, Foliation, LatticeSpec, NoiseField, RecordedNoise, Surface, advance,
                                      allowed_advances, counter_normals, future_cone, in_past_cone, past_cone,
                                      plc_surface, precedes, random_foliation, sample_dW, standard_foliation)


def test_spec_invariants():
    with pytest.raises(ConfigurationError):
        LatticeSpec(0, 3, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        LatticeSpec(3, 3, 0.5, 1.0)
    s = LatticeSpec(4, 5, 0.5, 0.25, x1_origin=-1.0)
    assert s.domega == 0.125
    assert s.x1(2) == 0.0
    assert s.x0(3) == 0.75


def test_precedes_examples():
    a, b = Surface([0, 0]), Surface([1, 0])
    assert precedes(a, a)
    assert precedes(a, b) and not precedes(b, a)
    c, d = Surface([2, 1]), Surface([1, 2])
    assert not precedes(c, d) and not precedes(d, c)
    with pytest.raises(ConfigurationError):
        precedes(Surface([0]), Surface([0, 0]))


def test_advance_examples():
    s = LatticeSpec(2, 4, 1.0, 1.0)
    assert advance(s, Surface([0, 0]), 0).h == (1, 0)
    assert advance(s, Surface([0, 1]), 0).h == (1, 1)
    with pytest.raises(CausalityError):
        advance(s, Surface([1, 0]), 0)
    with pytest.raises(BoundaryError):
        advance(s, Surface([4, 4]), 0)


def test_allowed_advances_brute_force():
    s = LatticeSpec(2, 4, 1.0, 1.0)
    for h in itertools.product(range(5), repeat=2):
        surf = Surface(h)
        if not surf.is_spacelike(s):
            continue
        brute = []
        for i in range(2):
            h2 = list(h)
            h2[i] += 1
            if h2[i] <= 4 and Surface(h2).is_spacelike(s):
                brute.append(i)
        assert allowed_advances(s, surf) == brute


def test_standard_foliation():
    s = LatticeSpec(2, 2, 1.0, 1.0)
    f = standard_foliation(s)
    assert [tuple(c) for c in f.cells()] == [(0, 0), (1, 0), (0, 1), (1, 1)]
    s = LatticeSpec(5, 7, 1.0, 1.0)
    f = standard_foliation(s)
    assert len(f) == 35
    f.validate()
    prev = None
    for surf, _ in f.steps():
        if prev is not None:
            assert precedes(prev, surf)
        prev = surf


def test_random_foliation_maximal_and_deterministic():
    s = LatticeSpec(3, 3, 1.0, 1.0)
    f1, f2 = random_foliation(s, 1), random_foliation(s, 2)
    f1.validate()
    f2.validate()
    for f in (f1, f2):
        assert sorted(map(tuple, f.order.tolist())) == sorted((i, t) for i in range(3) for t in range(3))
    assert np.array_equal(random_foliation(s, 1).order, f1.order)
    orders = {random_foliation(s, k).order.tobytes() for k in range(10)}
    assert len(orders) > 1


def test_random_foliation_single_site_unique():
    s = LatticeSpec(1, 6, 1.0, 1.0)
    assert np.array_equal(random_foliation(s, 3).order, random_foliation(s, 99).order)


def test_cones():
    s = LatticeSpec(7, 5, 1.0, 1.0)
    assert past_cone(s, Cell(3, 0)) == set()
    pc = past_cone(s, Cell(2, 2))
    assert pc == {Cell(i, 1) for i in (1, 2, 3)} | {Cell(i, 0) for i in range(5)}
    for x in [Cell(i, t) for i in range(7) for t in range(5)]:
        for y in past_cone(s, x):
            assert x in future_cone(s, y)


def test_cones_brute_force_wide_cells():
    s = LatticeSpec(6, 6, 2.0, 1.0)
    x = Cell(3, 5)
    brute = {Cell(i, t) for i in range(6) for t in range(5) if abs(i - 3) * 2.0 <= (5 - t) * 1.0}
    assert past_cone(s, x) == brute


def test_plc_surface_examples():
    s = LatticeSpec(5, 4, 1.0, 1.0)
    assert plc_surface(s, Cell(3, 0)).h == (0,) * 5
    p = plc_surface(s, Cell(2, 2))
    assert p.h == (0, 1, 2, 1, 0)
    assert p.is_spacelike(s)
    assert p.h[2] == 2


def test_plc_surface_below_is_past_or_spacelike():
    s = LatticeSpec(7, 6, 1.0, 1.0)
    for x in [Cell(i, t) for i in range(7) for t in range(6)]:
        p = plc_surface(s, x)
        assert p.is_spacelike(s)
        assert p.h[x.i] == x.t
        for j in range(7):
            for t in range(p.h[j]):
                assert in_past_cone(s, x, Cell(j, t))


def test_plc_surface_maximal_brute_force():
    # among spacelike surfaces through x whose other cells sit in the past cone (or at the
    # clipped bottom edge), plc is the largest
    s = LatticeSpec(5, 3, 1.0, 1.0)
    x = Cell(2, 2)
    best = None
    for h in itertools.product(range(4), repeat=5):
        surf = Surface(h)
        if h[2] != 2 or not surf.is_spacelike(s):
            continue
        if all(j == 2 or h[j] == 0 or in_past_cone(s, x, Cell(j, h[j])) for j in range(5)):
            if best is None or sum(h) > sum(best):
                best = h
    assert plc_surface(s, x).h == best


def test_noise_determinism_and_statistics():
    s = LatticeSpec(1000, 1000, 0.1, 0.01)
    n = NoiseField(42, s)
    assert sample_dW(n, Cell(5, 7)) == sample_dW(n, Cell(5, 7))
    assert n.grid[7, 5] == sample_dW(n, Cell(5, 7))
    g = n.grid
    dw = s.domega
    assert abs(g.mean()) < 4 * np.sqrt(dw) / 1e3
    assert abs(g.var() / dw - 1) < 0.02
    other = NoiseField(43, LatticeSpec(1000, 100, 0.1, 0.01)).grid.ravel()
    r = np.corrcoef(g[:100].ravel(), other)[0, 1]
    assert abs(r) < 0.01


def test_noise_pure_function_of_counter():
    a = counter_normals(7, np.array([1, 2, 3]), np.array([4, 4, 4]))
    b = np.array([counter_normals(7, i, 4) for i in (1, 2, 3)])
    assert np.array_equal(a, b.ravel())


def test_noise_variance_scale():
    s = LatticeSpec(300, 300, 1.0, 1.0)
    g = NoiseField(1, s, variance_scale=2.0).grid
    assert abs(g.var() / 2.0 - 1) < 0.02


def test_recorded_noise_validation():
    s = LatticeSpec(2, 2, 1.0, 1.0)
    assert RecordedNoise(s, np.ones((2, 2))).increment(1, 1) == 1.0
    with pytest.raises(ConfigurationError):
        RecordedNoise(s, np.ones((3, 2)))
