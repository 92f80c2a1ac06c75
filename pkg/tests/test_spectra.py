import math
from fractions import Fraction

import numpy as np
import pytest

from corrections import second_correction
from errors import CriticalLevelError, FrameMismatchError, RegimeError
from spectra import (
    ActionMap, ClusterRectangles, QuasiEigLattice, SphereActionSeries, TorusData, action_function,
    barrier_lattice, build_profile, cluster_rectangles, lattice_audit, quasi_lattice, s_range_on_sphere,
    sphere_torus,
)
from symbolalg import ORBIT, x

H = 1e-3
EPS = H ** 0.7


def _sphere_s():
    return x(3, 1, ORBIT) ** 2 * Fraction(3, 8) - Fraction(1, 8)


def _band_action(F: float) -> float:
    return math.sqrt((8.0 * F + 1.0) / 3.0)


@pytest.fixture(scope="module")
def action_map() -> ActionMap:
    return ActionMap(_sphere_s(), (0.0, 0.2), reference_level=0.1, nodes=9)


# ----------------------------------------------------------------------
# profiles
def test_constant_profile_round_trip():
    profile = build_profile("constant", T0=3.0)
    E = np.linspace(-2.0, 2.0, 41)
    assert profile.round_trip_error(E) <= 1e-12
    assert profile.g(1.0) == pytest.approx(3.0 / (2 * math.pi))


def test_sphere_profile_round_trip():
    profile = build_profile("sphere")
    E = np.linspace(0.25, 4.0, 41)
    assert profile.round_trip_error(E) <= 1e-12
    assert profile.period(1.0) == pytest.approx(math.pi)
    assert profile.g(1.0) == 0.0


def test_tabulated_profile_round_trip():
    energies = np.linspace(0.5, 4.0, 60)
    profile = build_profile("tabulated", energies=energies, periods=math.pi / np.sqrt(energies), anchor=1.0)
    assert profile.round_trip_error(np.linspace(0.6, 3.9, 25)) <= 1e-12
    assert float(profile.g(1.0)) == pytest.approx(0.0, abs=1e-5)
    assert float(profile.g(2.25)) == pytest.approx(0.5, abs=1e-4)
    with pytest.raises(ValueError):
        profile.f(10.0)


def test_period_derivatives():
    E = np.linspace(0.5, 3.0, 11)
    sphere = build_profile("sphere")
    assert sphere.period_derivative(E, 1) == pytest.approx(-math.pi / (2 * E ** 1.5))
    assert sphere.period_derivative(E, 2) == pytest.approx(3 * math.pi / (4 * E ** 2.5))
    assert sphere.period_derivative(E, 0) == pytest.approx(sphere.period(E))
    assert np.all(build_profile("constant", T0=3.0).period_derivative(E, 2) == 0.0)
    energies = np.linspace(0.25, 4.0, 200)
    tabulated = build_profile("tabulated", energies=energies, periods=math.pi / np.sqrt(energies), anchor=1.0)
    assert tabulated.period_derivative(E, 1) == pytest.approx(sphere.period_derivative(E, 1), rel=1e-2)


def test_profile_validation():
    with pytest.raises(ValueError):
        build_profile("elliptic")
    with pytest.raises(ValueError):
        build_profile("constant", T0=-1.0)
    with pytest.raises(ValueError):
        build_profile("tabulated", energies=[0.0, 1.0, 2.0], periods=[1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        build_profile("tabulated", energies=[0.0, 2.0, 1.0], periods=[1.0, 1.0, 1.0])


# ----------------------------------------------------------------------
# clusters
def test_sphere_torus_phases():
    torus = sphere_torus()
    xi1, xi2 = torus.xi((999, 3), H)
    assert xi1 == pytest.approx(H * 999.5 - 1.0)
    assert xi2 == pytest.approx(H * 3.5)
    assert TorusData((0.0, 0.0), (0, 0)).theta(H).tolist() == [0.0, 0.0]


def test_rectangles_are_disjoint():
    rects = cluster_rectangles(build_profile("sphere"), sphere_torus(), H, EPS, (0.9, 1.1))
    assert len(rects) > 0
    assert rects.disjoint
    assert np.all(np.diff(rects.centers()) > 0)
    for r in rects.rectangles:
        assert 0.9 <= r.center <= 1.1
        assert r.center == pytest.approx((H * (r.k1 + 0.5)) ** 2)
        assert r.half_width_re == pytest.approx(EPS ** 2 + H ** 2)
        assert r.half_width_im == pytest.approx(EPS ** 2 + EPS * H)


def test_real_symbol_tightens_imaginary_width():
    rects = cluster_rectangles(build_profile("sphere"), sphere_torus(), H, EPS, (0.99, 1.01), real_s=True)
    assert rects.rectangles[0].half_width_im == pytest.approx(EPS ** 3 + EPS * H)


def test_wide_rectangles_overlap():
    rects = cluster_rectangles(build_profile("sphere"), sphere_torus(), H, 0.1, (0.99, 1.01))
    assert not rects.disjoint


def test_rectangles_round_trip():
    rects = cluster_rectangles(build_profile("sphere"), sphere_torus(), H, EPS, (0.99, 1.01))
    assert ClusterRectangles.from_dict(rects.to_dict()) == rects
    r = rects.rectangles[0]
    assert rects.locate(complex(r.center, 0.0)) == r
    assert rects.locate(complex(r.center + 1.0, 0.0)) is None


# ----------------------------------------------------------------------
# lattices
def test_lattice_without_corrections_hits_centers():
    profile, torus = build_profile("sphere"), sphere_torus()
    rects = cluster_rectangles(profile, torus, H, EPS, (0.99, 1.01))
    lat = QuasiEigLattice(profile, torus, H, EPS)
    k1s = [r.k1 for r in rects.rectangles]
    points = quasi_lattice(lat, ((min(k1s), max(k1s)), (0, 4)))
    assert len(points) == 5 * len(k1s)
    for (k1, _), z in points:
        assert z.real == rects.by_k1(k1).center
        assert z.imag == 0.0


def test_lattice_audit():
    profile, torus = build_profile("sphere"), sphere_torus()
    rects = cluster_rectangles(profile, torus, H, EPS, (0.99, 1.01))
    k1s = [r.k1 for r in rects.rectangles]
    window = ((min(k1s), max(k1s)), (0, 2))
    inside = QuasiEigLattice(profile, torus, H, EPS, s_avg_of_xi=lambda a, b: 0.3)
    report = lattice_audit(quasi_lattice(inside, window), inside, rects, s_range=(0.0, 0.5))
    assert report["outside_rectangles"] == []
    assert report["subcluster_out_of_range"] == []
    outside = QuasiEigLattice(profile, torus, H, EPS, s_avg_of_xi=lambda a, b: 10.0)
    report = lattice_audit(quasi_lattice(outside, window), outside, rects, s_range=(0.0, 0.5))
    assert len(report["outside_rectangles"]) == report["checked"]
    assert len(report["subcluster_out_of_range"]) == report["checked"]


def test_regime_requirements():
    profile, torus = build_profile("sphere"), sphere_torus()
    with pytest.raises(RegimeError):
        QuasiEigLattice(profile, torus, H, EPS, regime="weak")
    with pytest.raises(RegimeError):
        QuasiEigLattice(profile, torus, H, 0.1, regime="strong")
    with pytest.raises(RegimeError):
        QuasiEigLattice(profile, torus, H, 0.03, t_avg_inf=0.2, regime="balanced")
    with pytest.raises(ValueError):
        QuasiEigLattice(profile, torus, 0.0, EPS)
    lat = QuasiEigLattice(profile, torus, H, 0.03, t_avg_inf=0.2, im_q1_avg_inf=-1.0, regime="balanced")
    assert lat.imaginary_shift() == pytest.approx(0.03 ** 3 * 0.2 - H * 0.03)


def test_theorem_regime_tags_are_canonical():
    profile, torus = build_profile("sphere"), sphere_torus()
    assert QuasiEigLattice(profile, torus, H, EPS).regime == "thm4.2"
    assert QuasiEigLattice(profile, torus, H, EPS, regime="subcluster").regime == "thm4.2"
    with pytest.raises(RegimeError, match="thm4.3"):
        QuasiEigLattice(profile, torus, H, 0.1, regime="thm4.3")
    with pytest.raises(RegimeError, match="thm4.4"):
        QuasiEigLattice(profile, torus, H, 0.03, t_avg_inf=0.2, regime="thm4.4")
    strong = QuasiEigLattice(profile, torus, H, 0.1, t_avg_inf=0.2, regime="thm4.3")
    assert strong.imaginary_shift() == pytest.approx(0.1 ** 3 * 0.2)
    balanced = QuasiEigLattice(profile, torus, H, 0.03, t_avg_inf=0.2, im_q1_avg_inf=-1.0, regime="thm4.4")
    assert balanced.regime == "thm4.4"
    assert balanced.imaginary_shift() == pytest.approx(0.03 ** 3 * 0.2 - H * 0.03)


def test_action_function_of_cubic_correction(flow11):
    s = second_correction(flow11, x(2, 1) ** 3)
    fn = action_function(s, (1, 1))
    assert complex(fn(0.5, 0.2)) == pytest.approx(15 / 4 * 0.04)
    with pytest.raises(ValueError):
        fn(0.1, 0.2)


def test_barrier_lattice_exclusion_zones(flow11):
    fn = action_function(second_correction(flow11, x(2, 1) ** 3), (1, 1))
    points = barrier_lattice((1, 1), fn, E0=1.0, h=1e-3, epsilon=0.1, k_window=((1, 3), (0, 3)),
                             alpha=(0, 0), critical_values=(0.0, 15 / 4))
    assert len(points) == 9
    excluded = {p.k for p in points if p.excluded}
    assert excluded == {(1, 0), (2, 0), (3, 0), (1, 1), (2, 2), (3, 3)}
    for p in points:
        assert p.E.imag == pytest.approx(-0.01 * 0.1 * p.k[0])


def test_barrier_lattice_validation():
    with pytest.raises(ValueError):
        barrier_lattice((1, 1), None, 1.0, 0.0, 0.1, ((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        barrier_lattice((0, 1), None, 1.0, 1e-3, 0.1, ((0, 1), (0, 1)))


# ----------------------------------------------------------------------
# action coordinates
def test_action_map_closed_form(action_map):
    c0 = _band_action(0.1)
    assert action_map.reference_area == pytest.approx(2 * math.pi * (1 + c0), abs=1e-8)
    for F in (0.02, 0.1, 0.17):
        assert action_map(F) == pytest.approx(_band_action(F) - c0, abs=1e-8)


def test_action_map_is_increasing(action_map):
    levels, actions = action_map.tabulate()
    assert np.all(np.diff(actions) > 0)
    assert np.allclose(actions, [_band_action(F) - _band_action(0.1) for F in levels], atol=1e-8)


def test_action_map_inverse(action_map):
    value = _band_action(0.05) - _band_action(0.1)
    assert action_map.inverse(value) == pytest.approx(0.05, abs=1e-8)
    with pytest.raises(ValueError):
        action_map.inverse(5.0)


def test_action_map_validation(action_map):
    with pytest.raises(CriticalLevelError):
        action_map.point_on_level(0.3)
    with pytest.raises(ValueError):
        ActionMap(_sphere_s(), (0.2, 0.0))
    with pytest.raises(FrameMismatchError):
        ActionMap(x(3, 1), (0.0, 0.2))


def test_sphere_action_series_at_reference(action_map):
    series = SphereActionSeries(action_map, polish=True)
    assert series(0.0, 0.0) == pytest.approx(0.1, abs=1e-8)


def test_s_range_on_sphere():
    lo, hi = s_range_on_sphere(_sphere_s())
    assert lo == pytest.approx(-1 / 8, abs=1e-3)
    assert hi == pytest.approx(1 / 4, abs=1e-3)
    with pytest.raises(FrameMismatchError):
        s_range_on_sphere(x(3, 1))
