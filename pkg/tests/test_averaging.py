import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from averaging import (
    PeriodicFlow, average, average_numeric, flow_apply, g0_weighted_average, homological_residual,
    max_residual, require_zero_average, resonant_monomials, solve_homological, time_weight,
    weighted_average_numeric,
)
from conftest import rational_cubics
from errors import DimensionMismatchError, FrameMismatchError, NonzeroAverageError
from scalars import ExactScalar
from symbolalg import YETA, PolySymbol, max_coefficient, poisson_bracket, x, xi

FLOWS = st.sampled_from([PeriodicFlow((1, 1)), PeriodicFlow((1, 2))])


def test_flow_validation():
    with pytest.raises(ValueError):
        PeriodicFlow((0, 1))
    with pytest.raises(ValueError):
        PeriodicFlow((1.5, 1))
    flow = PeriodicFlow.parse("1, 2")
    assert flow.lam == (1, 2)
    assert flow.T == pytest.approx(2 * math.pi)
    assert PeriodicFlow((2, 4)).T == pytest.approx(math.pi)


def test_minimal_resonance(flow11, flow12):
    assert flow11.k0 == (1, -1)
    assert flow12.k0 == (2, -1)
    assert PeriodicFlow((3,)).k0 is None


def test_invariant_monomial_is_fixed_by_the_flow(flow11):
    f = x(2, 1, YETA) * xi(2, 1, YETA)
    assert flow_apply(flow11, f, 0.7).allclose(f)


def test_half_period_flips_position(flow11):
    y1 = x(2, 1, YETA)
    assert flow_apply(flow11, y1, math.pi).allclose(-y1)


def test_flow_apply_needs_oscillator_frame(flow11):
    with pytest.raises(FrameMismatchError):
        flow_apply(flow11, x(2, 1), 1.0)


def test_cubic_average_vanishes_for_equal_frequencies(flow11):
    assert average(flow11, x(2, 1) ** 3) == 0
    require_zero_average(flow11, x(2, 1) ** 3)


def test_invariant_symbol_is_its_own_average(flow11):
    f = x(2, 1, YETA) * xi(2, 1, YETA)
    assert average(flow11, f) == f
    p2 = flow11.hamiltonian()
    assert average(flow11, p2) == p2


def test_nonzero_average_lists_offending_monomials(flow11):
    q = x(2, 1) ** 2 + x(2, 1) ** 3
    with pytest.raises(NonzeroAverageError) as excinfo:
        require_zero_average(flow11, q)
    assert excinfo.value.monomials == resonant_monomials(flow11, q)
    assert excinfo.value.monomials


def test_dimension_is_checked(flow11):
    with pytest.raises(DimensionMismatchError):
        average(flow11, x(3, 1))


def test_time_weights(flow12):
    assert time_weight(flow12, 0) == ExactScalar.monomial(1, pi=1)
    assert time_weight(PeriodicFlow((2, 2)), 0) == ExactScalar.monomial(Fraction(1, 2), pi=1)
    assert time_weight(flow12, 3) == ExactScalar.rational(0, Fraction(-1, 3))


def test_homological_solution_of_constant(flow11):
    f = PolySymbol.constant(2, 3)
    G = solve_homological(flow11, f)
    assert G == PolySymbol.constant(2, ExactScalar.monomial(3, pi=1))
    assert homological_residual(flow11, f, G) == 0
    assert solve_homological(flow11, f, minimal=True) == 0


@settings(max_examples=100, deadline=None)
@given(FLOWS, rational_cubics())
def test_homological_equation_holds_exactly(flow, f):
    G = solve_homological(flow, f)
    assert homological_residual(flow, f, G) == 0
    assert homological_residual(flow, f, solve_homological(flow, f, minimal=True)) == 0


@settings(max_examples=100, deadline=None)
@given(FLOWS, rational_cubics())
def test_generator_of_zero_mean_symbol_has_zero_mean(flow, f):
    q = f - average(flow, f)
    assert average(flow, solve_homological(flow, q)) == 0


@settings(max_examples=100, deadline=None)
@given(FLOWS, rational_cubics())
def test_average_is_flow_invariant(flow, f):
    assert poisson_bracket(flow.hamiltonian(), average(flow, f)) == 0


@settings(max_examples=100, deadline=None)
@given(FLOWS, rational_cubics())
def test_weighted_average_matches_homological_solution(flow, f):
    assert g0_weighted_average(flow, f) == solve_homological(flow, f)


@settings(max_examples=25, deadline=None)
@given(FLOWS, rational_cubics(max_terms=4))
def test_quadrature_oracles(flow, f):
    assert max_coefficient(average_numeric(flow, f) - average(flow, f)) <= 1e-10
    assert max_coefficient(weighted_average_numeric(flow, f) - solve_homological(flow, f)) <= 1e-9


def test_quadrature_of_invariant_symbol(flow12):
    f = flow12.hamiltonian() ** 2
    assert max_coefficient(average_numeric(flow12, f) - f) <= 1e-13


def test_panels_must_be_power_of_two(flow11):
    with pytest.raises(ValueError):
        average_numeric(flow11, x(2, 1), panels=12)


def test_max_residual_of_wrong_generator(flow11):
    f = x(2, 1) ** 3
    assert max_residual(flow11, f, solve_homological(flow11, f)) == 0.0
    assert max_residual(flow11, f, PolySymbol.zero(2)) > 0.0
