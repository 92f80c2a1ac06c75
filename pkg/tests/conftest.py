"""
Shared fixtures and hypothesis strategies
"""
import numpy as np
import pytest
from hypothesis import strategies as st

from averaging import PeriodicFlow
from symbolalg import XK, PolySymbol

small_fractions = st.fractions(min_value=-5, max_value=5, max_denominator=6)


@st.composite
def exponent_vectors(draw, width: int, degree: int):
    """Non-negative integer vector of the given length summing to degree"""
    remaining = degree
    out = []
    for _ in range(width - 1):
        e = draw(st.integers(0, remaining))
        out.append(e)
        remaining -= e
    out.append(remaining)
    order = draw(st.permutations(range(width)))
    return [out[i] for i in order]


@st.composite
def rational_polynomials(draw, n: int = 2, min_degree: int = 0, max_degree: int = 3, max_terms: int = 4,
                         frame: str = XK):
    """Random polynomial in (x, xi) with small rational coefficients"""
    count = draw(st.integers(1, max_terms))
    items = []
    for _ in range(count):
        degree = draw(st.integers(min_degree, max_degree))
        exps = draw(exponent_vectors(2 * n, degree))
        items.append((exps[:n], exps[n:], draw(small_fractions)))
    return PolySymbol.from_terms(n, items, frame)


def rational_cubics(n: int = 2, max_terms: int = 6):
    return rational_polynomials(n=n, min_degree=3, max_degree=3, max_terms=max_terms)


@pytest.fixture
def flow11() -> PeriodicFlow:
    return PeriodicFlow((1, 1))


@pytest.fixture
def flow12() -> PeriodicFlow:
    return PeriodicFlow((1, 2))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
