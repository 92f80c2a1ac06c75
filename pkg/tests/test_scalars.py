from fractions import Fraction

import math

import pytest

from scalars import (
    I, INV_SQRT2, ONE, PI, SQRT2, ZERO, ExactScalar, coerce_coefficient, coefficients_close, i_power, is_zero,
)


def test_sqrt2_squares_to_two():
    assert SQRT2 * SQRT2 == 2
    assert INV_SQRT2 * SQRT2 == ONE
    assert INV_SQRT2 ** 2 == Fraction(1, 2)


def test_imaginary_unit():
    assert I * I == -1
    assert [i_power(k) for k in range(5)] == [ONE, I, -ONE, -I, ONE]


def test_gaussian_inverse():
    z = ExactScalar.rational(1, 1)
    assert z.inverse() == ExactScalar.rational(Fraction(1, 2), Fraction(-1, 2))
    assert z * z.inverse() == ONE


def test_inverse_of_sqrt2_part():
    assert (SQRT2 * 3).inverse() == ExactScalar.monomial(Fraction(1, 6), sqrt2=1)


def test_pi_has_no_exact_inverse():
    with pytest.raises(ValueError):
        PI.inverse()
    with pytest.raises(ZeroDivisionError):
        ZERO.inverse()


def test_float_operand_promotes_to_complex():
    value = ONE * 0.5
    assert isinstance(value, complex)
    assert value == 0.5
    assert isinstance(SQRT2 + 1.0, complex)


def test_complex_value_of_mixed_parts():
    z = ExactScalar({(0, 0): (1, 0), (1, 1): (0, 2)})
    assert complex(z) == pytest.approx(1 + 2j * math.sqrt(2) * math.pi)


def test_conjugate_and_reality():
    z = ExactScalar.rational(3, -4)
    assert z.conjugate() == ExactScalar.rational(3, 4)
    assert not z.is_real()
    assert (z * z.conjugate()).is_real()
    assert (z * z.conjugate()) == 25


def test_coerce_coefficient():
    assert coerce_coefficient(3) == ExactScalar.rational(3)
    assert coerce_coefficient(Fraction(2, 3)) == ExactScalar.rational(Fraction(2, 3))
    assert coerce_coefficient(0.25) == 0.25 + 0j
    with pytest.raises(TypeError):
        coerce_coefficient("1")


def test_zero_detection_and_closeness():
    assert is_zero(ZERO)
    assert is_zero(0j)
    assert not is_zero(PI)
    assert coefficients_close(ONE, ONE, 0.0)
    assert coefficients_close(SQRT2, math.sqrt(2) + 1e-14, 1e-12)
    assert not coefficients_close(ONE, ExactScalar.rational(1, 1), 1.0)


def test_json_form_with_irrational_parts():
    z = PI * SQRT2 + Fraction(1, 3)
    data = z.to_json()
    assert "parts" in data
    assert ExactScalar.from_json(data) == z
    assert ExactScalar.rational(Fraction(-7, 2)).to_json() == {"re": "-7/2", "im": "0"}
