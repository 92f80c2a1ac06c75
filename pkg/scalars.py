"""
Exact coefficient ring for phase-space symbols

Coefficients are finite sums  sum (a + i b) * sqrt(2)^s * pi^j  with rational
a, b, s in {0, 1} and j >= 0.  This is closed under the operations the
averaging calculus needs: the oscillator substitution brings in sqrt(2),
resonant homological weights bring in pi, and non-resonant weights divide by
Gaussian integers.  Any float operand promotes the result to a Python complex.
"""
import math
from fractions import Fraction
from numbers import Rational
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

PartKey = Tuple[int, int]            # (power of sqrt 2, power of pi)
Gaussian = Tuple[Fraction, Fraction]  # (real, imaginary)


def _gmul(a: Gaussian, b: Gaussian) -> Gaussian:
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


class ExactScalar:
    """Immutable element of Q(i)[sqrt 2][pi]"""

    __slots__ = ("_parts",)

    def __init__(self, parts: Union[Mapping[PartKey, Gaussian], Iterator, tuple] = ()):
        clean: Dict[PartKey, Gaussian] = {}
        items = parts.items() if isinstance(parts, Mapping) else parts
        for (s, j), (re, im) in items:
            if s not in (0, 1) or j < 0:
                raise ValueError(f"Invalid exact part key {(s, j)}")
            re, im = Fraction(re), Fraction(im)
            if re or im:
                clean[(s, j)] = (re, im)
        self._parts: Tuple[Tuple[PartKey, Gaussian], ...] = tuple(sorted(clean.items()))

    # ------------------------------------------------------------------
    # constructors
    @classmethod
    def rational(cls, re=0, im=0) -> "ExactScalar":
        return cls({(0, 0): (Fraction(re), Fraction(im))})

    @classmethod
    def monomial(cls, re=1, im=0, sqrt2: int = 0, pi: int = 0) -> "ExactScalar":
        return cls({(sqrt2, pi): (Fraction(re), Fraction(im))})

    # ------------------------------------------------------------------
    @property
    def parts(self) -> Dict[PartKey, Gaussian]:
        return dict(self._parts)

    def is_rational(self) -> bool:
        """True when the value lies in Q(i)"""
        return all(key == (0, 0) for key, _ in self._parts)

    def is_real(self) -> bool:
        return all(im == 0 for _, (_, im) in self._parts)

    def conjugate(self) -> "ExactScalar":
        return ExactScalar({key: (re, -im) for key, (re, im) in self._parts})

    def inverse(self) -> "ExactScalar":
        """
        Exact inverse of a single-part value without pi

        Raises:
            ZeroDivisionError: for zero
            ValueError: when the inverse leaves the ring representation
        """
        if not self._parts:
            raise ZeroDivisionError("division by exact zero")
        if len(self._parts) != 1:
            raise ValueError(f"{self} has no single-term exact inverse")
        (s, j), (re, im) = self._parts[0]
        if j:
            raise ValueError(f"{self} contains pi; its inverse is not representable")
        norm = re * re + im * im
        inv = (re / norm, -im / norm)
        if s:
            # 1/sqrt2 = sqrt2/2
            return ExactScalar({(1, 0): (inv[0] / 2, inv[1] / 2)})
        return ExactScalar({(0, 0): inv})

    # ------------------------------------------------------------------
    # arithmetic
    @staticmethod
    def _coerce(other) -> Optional["ExactScalar"]:
        if isinstance(other, ExactScalar):
            return other
        if isinstance(other, (bool, np.bool_)):
            return ExactScalar.rational(int(other))
        if isinstance(other, (int, Rational, np.integer)):
            return ExactScalar.rational(Fraction(int(other)) if isinstance(other, np.integer) else Fraction(other))
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return complex(self) + complex(other) if _is_number(other) else NotImplemented
        acc = dict(self._parts)
        for key, (re, im) in o._parts:
            a = acc.get(key, (Fraction(0), Fraction(0)))
            acc[key] = (a[0] + re, a[1] + im)
        return ExactScalar(acc)

    __radd__ = __add__

    def __neg__(self):
        return ExactScalar({key: (-re, -im) for key, (re, im) in self._parts})

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return complex(self) - complex(other) if _is_number(other) else NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return complex(other) - complex(self) if _is_number(other) else NotImplemented
        return o + (-self)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return complex(self) * complex(other) if _is_number(other) else NotImplemented
        acc: Dict[PartKey, Gaussian] = {}
        for (s1, j1), g1 in self._parts:
            for (s2, j2), g2 in o._parts:
                re, im = _gmul(g1, g2)
                s = s1 + s2
                if s == 2:
                    re, im, s = 2 * re, 2 * im, 0
                key = (s, j1 + j2)
                a = acc.get(key, (Fraction(0), Fraction(0)))
                acc[key] = (a[0] + re, a[1] + im)
        return ExactScalar(acc)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return complex(self) / complex(other) if _is_number(other) else NotImplemented
        return self * o.inverse()

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return complex(other) / complex(self) if _is_number(other) else NotImplemented
        return o * self.inverse()

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return complex(self) ** n
        if n < 0:
            return self.inverse() ** (-n)
        result = ONE
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # ------------------------------------------------------------------
    # comparisons and conversion
    def __bool__(self) -> bool:
        return bool(self._parts)

    def __complex__(self) -> complex:
        total = 0j
        for (s, j), (re, im) in self._parts:
            total += complex(float(re), float(im)) * (math.sqrt(2.0) ** s) * (math.pi ** j)
        return total

    def __float__(self) -> float:
        return complex(self).real

    def __eq__(self, other) -> bool:
        o = self._coerce(other)
        if o is None:
            if _is_number(other):
                return complex(self) == complex(other)
            return NotImplemented
        return self._parts == o._parts

    def __hash__(self) -> int:
        if not self._parts:
            return hash(0)
        if self._parts[0][0] == (0, 0) and len(self._parts) == 1 and self._parts[0][1][1] == 0:
            return hash(self._parts[0][1][0])
        return hash(self._parts)

    def __repr__(self) -> str:
        return f"ExactScalar({self})"

    def __str__(self) -> str:
        if not self._parts:
            return "0"
        pieces = []
        for (s, j), (re, im) in self._parts:
            if im == 0:
                core = f"{re}"
            elif re == 0:
                core = f"{im}i"
            else:
                core = f"({re}{'+' if im > 0 else '-'}{abs(im)}i)"
            if s:
                core += "*sqrt2"
            if j == 1:
                core += "*pi"
            elif j > 1:
                core += f"*pi^{j}"
            pieces.append(core)
        return " + ".join(pieces)

    # ------------------------------------------------------------------
    def to_json(self):
        """Plain rational pair when possible, part list otherwise"""
        if self.is_rational():
            re, im = self._parts[0][1] if self._parts else (Fraction(0), Fraction(0))
            return {"re": str(re), "im": str(im)}
        return {"parts": [{"sqrt2": s, "pi": j, "re": str(re), "im": str(im)}
                          for (s, j), (re, im) in self._parts]}

    @classmethod
    def from_json(cls, data) -> "ExactScalar":
        if "parts" in data:
            return cls({(int(p["sqrt2"]), int(p["pi"])): (Fraction(p["re"]), Fraction(p["im"]))
                        for p in data["parts"]})
        return cls.rational(Fraction(data.get("re", "0")), Fraction(data.get("im", "0")))


def _is_number(value) -> bool:
    return isinstance(value, (int, float, complex, Rational, np.number))


ZERO = ExactScalar()
ONE = ExactScalar.rational(1)
I = ExactScalar.rational(0, 1)
SQRT2 = ExactScalar.monomial(1, sqrt2=1)
INV_SQRT2 = ExactScalar.monomial(Fraction(1, 2), sqrt2=1)
PI = ExactScalar.monomial(1, pi=1)

Coefficient = Union[ExactScalar, complex]


def coerce_coefficient(value) -> Coefficient:
    """Integers and fractions become exact; every other number becomes complex"""
    if isinstance(value, ExactScalar):
        return value
    if isinstance(value, (bool, int, Rational, np.integer)):
        return ExactScalar._coerce(value)
    if _is_number(value):
        return complex(value)
    raise TypeError(f"Unsupported coefficient type {type(value).__name__}")


def is_exact(value: Coefficient) -> bool:
    return isinstance(value, ExactScalar)


def is_zero(value: Coefficient) -> bool:
    if isinstance(value, ExactScalar):
        return not value
    return value == 0


def to_complex(value: Coefficient) -> complex:
    return complex(value)


def i_power(n: int) -> ExactScalar:
    return (ONE, I, -ONE, -I)[n % 4]


def coefficients_close(a: Coefficient, b: Coefficient, tol: float) -> bool:
    if isinstance(a, ExactScalar) and isinstance(b, ExactScalar):
        return a == b
    return abs(complex(a) - complex(b)) <= tol
