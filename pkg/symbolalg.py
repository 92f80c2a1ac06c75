"""
Sparse polynomial symbols on phase space

A PolySymbol is a map Monomial -> coefficient in one of three frames:

* ``xk``    real-canonical (x_1..x_n, xi_1..xi_n)
* ``yeta``  oscillator coordinates y = (x - i xi)/sqrt2, eta = (x + i xi)/(i sqrt2)
* ``orbit`` the reduced sphere of oriented great circles, variables y_1..y_3
  (stored in the position exponents, momentum exponents are zero)

Bracket convention: {f, g} = H_f g = f_xi . g_x - f_x . g_xi.  In the
oscillator frame y plays the role of x and eta the role of xi, which is the
orientation in which the oscillator substitution is symplectic.
"""
from dataclasses import dataclass
from fractions import Fraction
from types import MappingProxyType
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from colored_logger import setup_colored_logging
from config import COEFF_TOL
from errors import DimensionMismatchError, FrameMismatchError
from scalars import (
    I, INV_SQRT2, Coefficient, ExactScalar, coerce_coefficient, i_power,
    is_exact, is_zero,
)

logger = setup_colored_logging(logger_name=__name__)

XK = "xk"
YETA = "yeta"
ORBIT = "orbit"
FRAMES = (XK, YETA, ORBIT)

_LABELS = {XK: ("x", "k"), YETA: ("y", "eta"), ORBIT: ("y", "")}


@dataclass(frozen=True)
class Monomial:
    """x^xexp * xi^kexp"""
    xexp: Tuple[int, ...]
    kexp: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "xexp", tuple(int(e) for e in self.xexp))
        object.__setattr__(self, "kexp", tuple(int(e) for e in self.kexp))
        if len(self.xexp) != len(self.kexp) or not self.xexp:
            raise DimensionMismatchError(
                f"Monomial exponent vectors must share a length n >= 1, got {self.xexp} / {self.kexp}")
        if any(e < 0 for e in self.xexp + self.kexp):
            raise ValueError(f"Negative exponent in monomial {self.xexp} / {self.kexp}")

    @classmethod
    def constant(cls, n: int) -> "Monomial":
        return cls((0,) * n, (0,) * n)

    @classmethod
    def variable(cls, n: int, kind: str, j: int) -> "Monomial":
        """kind 'x' (position) or 'k' (momentum), j zero-based"""
        e = [0] * n
        e[j] = 1
        zero = (0,) * n
        return cls(tuple(e), zero) if kind == "x" else cls(zero, tuple(e))

    @property
    def n(self) -> int:
        return len(self.xexp)

    @property
    def degree(self) -> int:
        return sum(self.xexp) + sum(self.kexp)

    @property
    def kdegree(self) -> int:
        return sum(self.kexp)

    @property
    def exponents(self) -> Tuple[int, ...]:
        return self.xexp + self.kexp

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(tuple(a + b for a, b in zip(self.xexp, other.xexp)),
                        tuple(a + b for a, b in zip(self.kexp, other.kexp)))

    def divides(self, other: "Monomial") -> bool:
        return all(a <= b for a, b in zip(self.exponents, other.exponents))

    def quotient(self, divisor: "Monomial") -> "Monomial":
        return Monomial(tuple(a - b for a, b in zip(self.xexp, divisor.xexp)),
                        tuple(a - b for a, b in zip(self.kexp, divisor.kexp)))

    def sort_key(self) -> Tuple:
        # graded lexicographic, positions before momenta
        return (self.degree, self.xexp, self.kexp)

    def format(self, frame: str = XK) -> str:
        xs, ks = _LABELS[frame]
        factors = []
        for label, exps in ((xs, self.xexp), (ks, self.kexp)):
            for j, e in enumerate(exps, 1):
                if e == 1:
                    factors.append(f"{label}{j}")
                elif e > 1:
                    factors.append(f"{label}{j}^{e}")
        return "*".join(factors) if factors else "1"

    def __str__(self) -> str:
        return self.format(XK)


class PolySymbol:
    """Immutable sparse polynomial with exact or complex coefficients"""

    __slots__ = ("n", "frame", "_terms")

    def __init__(self, n: int, terms: Optional[Mapping[Monomial, object]] = None, frame: str = XK):
        if frame not in FRAMES:
            raise FrameMismatchError(f"Unknown frame '{frame}'")
        if n < 1:
            raise DimensionMismatchError(f"Dimension must be >= 1, got {n}")
        clean: Dict[Monomial, Coefficient] = {}
        for mono, coeff in (terms or {}).items():
            if mono.n != n:
                raise DimensionMismatchError(f"Monomial {mono} has dimension {mono.n}, expected {n}")
            if frame == ORBIT and mono.kdegree:
                raise FrameMismatchError("Reduced-sphere symbols carry no momentum exponents")
            c = coerce_coefficient(coeff)
            if not is_zero(c):
                clean[mono] = c
        self.n = n
        self.frame = frame
        self._terms = clean

    # ------------------------------------------------------------------
    # constructors
    @classmethod
    def zero(cls, n: int, frame: str = XK) -> "PolySymbol":
        return cls(n, {}, frame)

    @classmethod
    def constant(cls, n: int, value, frame: str = XK) -> "PolySymbol":
        return cls(n, {Monomial.constant(n): value}, frame)

    @classmethod
    def variable(cls, n: int, kind: str, j: int, frame: str = XK) -> "PolySymbol":
        return cls(n, {Monomial.variable(n, kind, j): 1}, frame)

    @classmethod
    def from_terms(cls, n: int, items: Iterable[Tuple[Sequence[int], Sequence[int], object]],
                   frame: str = XK) -> "PolySymbol":
        acc: Dict[Monomial, Coefficient] = {}
        for xexp, kexp, coeff in items:
            _accumulate(acc, Monomial(tuple(xexp), tuple(kexp)), coerce_coefficient(coeff))
        return cls(n, acc, frame)

    # ------------------------------------------------------------------
    @property
    def terms(self) -> Mapping[Monomial, Coefficient]:
        return MappingProxyType(self._terms)

    @property
    def nvars(self) -> int:
        return self.n if self.frame == ORBIT else 2 * self.n

    def sorted_terms(self) -> List[Tuple[Monomial, Coefficient]]:
        return sorted(self._terms.items(), key=lambda item: item[0].sort_key())

    def is_zero(self) -> bool:
        return not self._terms

    def is_exact(self) -> bool:
        return all(is_exact(c) for c in self._terms.values())

    def degree(self) -> int:
        return max((m.degree for m in self._terms), default=0)

    def coefficient(self, mono: Monomial) -> Coefficient:
        return self._terms.get(mono, ExactScalar())

    def map_coefficients(self, fn: Callable[[Monomial, Coefficient], object]) -> "PolySymbol":
        return PolySymbol(self.n, {m: fn(m, c) for m, c in self._terms.items()}, self.frame)

    def filter(self, keep: Callable[[Monomial], bool]) -> "PolySymbol":
        return PolySymbol(self.n, {m: c for m, c in self._terms.items() if keep(m)}, self.frame)

    def homogeneous_part(self, degree: int) -> "PolySymbol":
        return self.filter(lambda m: m.degree == degree)

    def kdegree_parts(self) -> Dict[int, "PolySymbol"]:
        parts: Dict[int, Dict[Monomial, Coefficient]] = {}
        for m, c in self._terms.items():
            parts.setdefault(m.kdegree, {})[m] = c
        return {d: PolySymbol(self.n, t, self.frame) for d, t in parts.items()}

    def to_complex(self) -> "PolySymbol":
        return self.map_coefficients(lambda m, c: complex(c))

    def conjugate_coefficients(self) -> "PolySymbol":
        return self.map_coefficients(lambda m, c: c.conjugate())

    def allclose(self, other: "PolySymbol", tol: float = COEFF_TOL) -> bool:
        _check_compatible(self, other)
        return max_coefficient(self - other) <= tol

    def derivative(self, kind: str, j: int) -> "PolySymbol":
        """Partial derivative in x_j (kind 'x') or xi_j (kind 'k'), j zero-based"""
        acc: Dict[Monomial, Coefficient] = {}
        for m, c in self._terms.items():
            exps = m.xexp if kind == "x" else m.kexp
            e = exps[j]
            if not e:
                continue
            lowered = list(exps)
            lowered[j] -= 1
            dm = Monomial(tuple(lowered), m.kexp) if kind == "x" else Monomial(m.xexp, tuple(lowered))
            _accumulate(acc, dm, c * e)
        return PolySymbol(self.n, acc, self.frame)

    # ------------------------------------------------------------------
    # arithmetic
    def _lift(self, other) -> "PolySymbol":
        if isinstance(other, PolySymbol):
            _check_compatible(self, other)
            return other
        return PolySymbol.constant(self.n, other, self.frame)

    def __add__(self, other):
        other = self._lift(other)
        acc = dict(self._terms)
        for m, c in other._terms.items():
            _accumulate(acc, m, c)
        return PolySymbol(self.n, acc, self.frame)

    __radd__ = __add__

    def __neg__(self):
        return PolySymbol(self.n, {m: -c for m, c in self._terms.items()}, self.frame)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, PolySymbol):
            c = coerce_coefficient(other)
            return PolySymbol(self.n, {m: v * c for m, v in self._terms.items()}, self.frame)
        _check_compatible(self, other)
        acc: Dict[Monomial, Coefficient] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                _accumulate(acc, m1 * m2, c1 * c2)
        return PolySymbol(self.n, acc, self.frame)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, PolySymbol):
            raise TypeError("Polynomial division is not supported")
        c = coerce_coefficient(other)
        if is_exact(c):
            return self * c.inverse()
        return self * (1.0 / complex(c))

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("Only non-negative integer powers are supported")
        result = PolySymbol.constant(self.n, 1, self.frame)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolySymbol):
            if isinstance(other, (int, Fraction)) and other == 0:
                return self.is_zero()
            return NotImplemented
        return self.n == other.n and self.frame == other.frame and self._terms == other._terms

    __hash__ = None

    def __repr__(self) -> str:
        return f"PolySymbol(n={self.n}, frame={self.frame}, {self})"

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for m, c in self.sorted_terms():
            coeff = f"({c})"
            pieces.append(coeff if m.degree == 0 else f"{coeff}*{m.format(self.frame)}")
        return " + ".join(pieces)


def _accumulate(acc: Dict[Monomial, Coefficient], mono: Monomial, coeff: Coefficient):
    if mono in acc:
        total = acc[mono] + coeff
        if is_zero(total):
            del acc[mono]
        else:
            acc[mono] = total
    elif not is_zero(coeff):
        acc[mono] = coeff


def _check_compatible(f: PolySymbol, g: PolySymbol):
    if f.frame != g.frame:
        raise FrameMismatchError(f"Frame mismatch: {f.frame} vs {g.frame}")
    if f.n != g.n:
        raise DimensionMismatchError(f"Dimension mismatch: {f.n} vs {g.n}")


def _require(f: PolySymbol, frame: str, n: Optional[int] = None):
    if f.frame != frame:
        raise FrameMismatchError(f"Expected frame '{frame}', got '{f.frame}'")
    if n is not None and f.n != n:
        raise DimensionMismatchError(f"Expected n = {n}, got {f.n}")


def max_coefficient(f: PolySymbol) -> float:
    return max((abs(complex(c)) for c in f.terms.values()), default=0.0)


# ----------------------------------------------------------------------
# named polynomials
def x(n: int, j: int, frame: str = XK) -> PolySymbol:
    """Position variable (y_j in the oscillator or reduced frame), j one-based"""
    return PolySymbol.variable(n, "x", j - 1, frame)


def xi(n: int, j: int, frame: str = XK) -> PolySymbol:
    """Momentum variable (eta_j in the oscillator frame), j one-based"""
    return PolySymbol.variable(n, "k", j - 1, frame)


def h1() -> PolySymbol:
    """|x|^2 - 1"""
    return sum((x(3, j) ** 2 for j in (1, 2, 3)), PolySymbol.constant(3, -1))


def h2() -> PolySymbol:
    """x . xi"""
    return sum((x(3, j) * xi(3, j) for j in (1, 2, 3)), PolySymbol.zero(3))


def xi_squared(n: int = 3) -> PolySymbol:
    return sum((xi(n, j) ** 2 for j in range(1, n + 1)), PolySymbol.zero(n))


def geodesic_hamiltonian() -> PolySymbol:
    """p = |x|^2 |xi|^2 on T*R^3"""
    return sum((x(3, j) ** 2 for j in (1, 2, 3)), PolySymbol.zero(3)) * xi_squared(3)


# ----------------------------------------------------------------------
# brackets
def poisson_bracket(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    """
    {f, g} = f_xi . g_x - f_x . g_xi

    Both monomial contributions at index j land on the same monomial, so the
    bracket of c x^a xi^b with d x^c xi^e is cd (b_j c_j - a_j e_j) times the
    product lowered by one in x_j and xi_j.
    """
    _check_compatible(f, g)
    if f.frame == ORBIT:
        raise FrameMismatchError("Use lie_poisson_bracket on the reduced sphere")
    n = f.n
    acc: Dict[Monomial, Coefficient] = {}
    for mf, cf in f.terms.items():
        for mg, cg in g.terms.items():
            cc = None
            for j in range(n):
                weight = mf.kexp[j] * mg.xexp[j] - mf.xexp[j] * mg.kexp[j]
                if not weight:
                    continue
                if cc is None:
                    cc = cf * cg
                    prod = mf * mg
                xe = list(prod.xexp)
                ke = list(prod.kexp)
                xe[j] -= 1
                ke[j] -= 1
                _accumulate(acc, Monomial(tuple(xe), tuple(ke)), cc * weight)
    return PolySymbol(n, acc, f.frame)


def constrained_bracket(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    """
    Poisson bracket induced on Sigma = {|x|^2 = 1, x . xi = 0} in T*R^3

        {f,g}_Sigma = {f,g} + 1/2 ({f,h2}{h1,g} - {f,h1}{h2,g})

    Correct as a function on Sigma only.
    """
    _require(f, XK, 3)
    _require(g, XK, 3)
    c1, c2 = h1(), h2()
    half = Fraction(1, 2)
    correction = poisson_bracket(f, c2) * poisson_bracket(c1, g) - poisson_bracket(f, c1) * poisson_bracket(c2, g)
    return poisson_bracket(f, g) + correction * half


_LEVI_CIVITA = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def lie_poisson_bracket(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    """
    Bracket on the reduced sphere induced by y = x cross xi:
    {f, g} = -sum eps_ijk y_k d_i f d_j g, so {y_1, y_2} = -y_3
    """
    _require(f, ORBIT, 3)
    _require(g, ORBIT, 3)
    total = PolySymbol.zero(3, ORBIT)
    for i, j, k in _LEVI_CIVITA:
        yk = PolySymbol.variable(3, "x", k, ORBIT)
        cross = f.derivative("x", i) * g.derivative("x", j) - f.derivative("x", j) * g.derivative("x", i)
        total = total - yk * cross
    return total


# ----------------------------------------------------------------------
# coordinate changes
def substitute(f: PolySymbol, images: Sequence[PolySymbol], frame: str) -> PolySymbol:
    """Replace each variable (positions then momenta) by a polynomial in ``frame``"""
    if len(images) != 2 * f.n:
        raise DimensionMismatchError(f"Need {2 * f.n} images, got {len(images)}")
    m = images[0].n
    cache: Dict[Tuple[int, int], PolySymbol] = {}

    def power(idx: int, e: int) -> PolySymbol:
        key = (idx, e)
        if key not in cache:
            cache[key] = images[idx] if e == 1 else power(idx, e - 1) * images[idx]
        return cache[key]

    acc: Dict[Monomial, Coefficient] = {}
    for mono, c in f.terms.items():
        term = PolySymbol.constant(m, c, frame)
        for idx, e in enumerate(mono.exponents):
            if e:
                term = term * power(idx, e)
        for tm, tc in term.terms.items():
            _accumulate(acc, tm, tc)
    return PolySymbol(m, acc, frame)


def to_oscillator(f: PolySymbol) -> PolySymbol:
    """x = (y + i eta)/sqrt2, xi = (eta + i y)/sqrt2"""
    _require(f, XK)
    n = f.n
    ys = [x(n, j, YETA) for j in range(1, n + 1)]
    etas = [xi(n, j, YETA) for j in range(1, n + 1)]
    images = [(ys[j] + etas[j] * I) * INV_SQRT2 for j in range(n)]
    images += [(etas[j] + ys[j] * I) * INV_SQRT2 for j in range(n)]
    return substitute(f, images, YETA)


def from_oscillator(f: PolySymbol) -> PolySymbol:
    """y = (x - i xi)/sqrt2, eta = (x + i xi)/(i sqrt2) = (xi - i x)/sqrt2"""
    _require(f, YETA)
    n = f.n
    xs = [x(n, j) for j in range(1, n + 1)]
    ks = [xi(n, j) for j in range(1, n + 1)]
    images = [(xs[j] - ks[j] * I) * INV_SQRT2 for j in range(n)]
    images += [(ks[j] - xs[j] * I) * INV_SQRT2 for j in range(n)]
    return substitute(f, images, XK)


def is_real_on_real_domain(f: PolySymbol, tol: float = COEFF_TOL) -> bool:
    """
    Reality of f on real (x, xi).  In the oscillator frame conj(y) = i eta and
    conj(eta) = i y, so reality is c_{m,k} = conj(c_{k,m}) i^{|k|+|m|}.
    """
    if f.frame in (XK, ORBIT):
        return all(abs(complex(c).imag) <= tol if not is_exact(c) else c.is_real()
                   for c in f.terms.values())
    for mono, c in f.terms.items():
        mirror = Monomial(mono.kexp, mono.xexp)
        expected = f.coefficient(mirror)
        image = c.conjugate() * i_power(mono.degree) if is_exact(c) else complex(c).conjugate() * (1j ** mono.degree)
        if is_exact(expected) and is_exact(image):
            if expected != image:
                return False
        elif abs(complex(expected) - complex(image)) > tol:
            return False
    return True


# ----------------------------------------------------------------------
# evaluation
def evaluate(f: PolySymbol, point: Sequence[complex]) -> complex:
    """Evaluate at (x, xi), (y, eta) or y, summing in graded-lex monomial order"""
    point = list(point)
    if len(point) != f.nvars:
        raise DimensionMismatchError(f"Point has length {len(point)}, expected {f.nvars}")
    total = 0j
    for mono, c in f.sorted_terms():
        value = complex(c)
        exps = mono.xexp if f.frame == ORBIT else mono.exponents
        for v, e in zip(point, exps):
            if e:
                value *= complex(v) ** e
        total += value
    return total


class NumericPolynomial:
    """Vectorised float evaluation of a PolySymbol over many points"""

    def __init__(self, f: PolySymbol):
        self.n = f.n
        self.frame = f.frame
        self.nvars = f.nvars
        items = f.sorted_terms()
        width = self.nvars
        self.exponents = np.array(
            [(m.xexp if f.frame == ORBIT else m.exponents)[:width] for m, _ in items],
            dtype=np.int64).reshape(len(items), width)
        self.coefficients = np.array([complex(c) for _, c in items], dtype=np.complex128)
        self._symbol = f

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.nvars:
            raise DimensionMismatchError(f"Points have {pts.shape[1]} coordinates, expected {self.nvars}")
        if not len(self.coefficients):
            out = np.zeros(pts.shape[0], dtype=np.complex128)
        else:
            powers = np.prod(pts[:, None, :] ** self.exponents[None, :, :], axis=2)
            out = powers @ self.coefficients
        return out[0] if single else out

    def real(self, points: np.ndarray) -> np.ndarray:
        return np.real(self(points))

    def gradient(self) -> List["NumericPolynomial"]:
        f = self._symbol
        if f.frame == ORBIT:
            parts = [f.derivative("x", j) for j in range(f.n)]
        else:
            parts = [f.derivative("x", j) for j in range(f.n)] + [f.derivative("k", j) for j in range(f.n)]
        return [NumericPolynomial(p) for p in parts]


def evaluate_many(f: PolySymbol, points: np.ndarray) -> np.ndarray:
    return NumericPolynomial(f)(points)


# ----------------------------------------------------------------------
# canonical forms on the sphere bundle
_X3XI3 = Monomial((0, 0, 1), (0, 0, 1))


def _shift(mono: Monomial, dx: Tuple[int, int, int], dk: Tuple[int, int, int]) -> Monomial:
    return Monomial(tuple(a + b for a, b in zip(mono.xexp, dx)), tuple(a + b for a, b in zip(mono.kexp, dk)))


def reduce_mod_constraints(f: PolySymbol) -> PolySymbol:
    """
    Normal form modulo (|x|^2 - 1, x . xi)

    Under graded lex with xi3 > xi2 > xi1 > x1 > x2 > x3 the leading terms
    are x1^2 and x3 xi3; they are coprime, so the two generators form a
    Groebner basis and the normal form is canonical.  Rewrites:
    x1^2 -> 1 - x2^2 - x3^2, x3 xi3 -> -x1 xi1 - x2 xi2.
    """
    _require(f, XK, 3)
    pending: Dict[Monomial, Coefficient] = dict(f.terms)
    out: Dict[Monomial, Coefficient] = {}
    while pending:
        mono, c = pending.popitem()
        if mono.xexp[0] >= 2:
            base = _shift(mono, (-2, 0, 0), (0, 0, 0))
            _accumulate(pending, base, c)
            _accumulate(pending, _shift(base, (0, 2, 0), (0, 0, 0)), -c)
            _accumulate(pending, _shift(base, (0, 0, 2), (0, 0, 0)), -c)
        elif _X3XI3.divides(mono):
            base = mono.quotient(_X3XI3)
            _accumulate(pending, _shift(base, (1, 0, 0), (1, 0, 0)), -c)
            _accumulate(pending, _shift(base, (0, 1, 0), (0, 1, 0)), -c)
        else:
            _accumulate(out, mono, c)
    return PolySymbol(3, out, XK)


def homogenize_in_xi(f: PolySymbol) -> Dict[int, PolySymbol]:
    """
    Split f by parity of the momentum degree and pad each class with powers
    of |xi|^2 up to its top degree; equal to f on |xi| = 1.
    """
    parts = f.kdegree_parts()
    rho = xi_squared(f.n)
    out: Dict[int, PolySymbol] = {}
    for parity in (0, 1):
        degrees = [d for d in parts if d % 2 == parity]
        if not degrees:
            continue
        top = max(degrees)
        out[parity] = sum((parts[d] * rho ** ((top - d) // 2) for d in degrees), PolySymbol.zero(f.n))
    return out


def reduce_on_energy_shell(f: PolySymbol) -> PolySymbol:
    """Canonical representative of f on Sigma intersected with |xi| = 1"""
    _require(f, XK, 3)
    return sum((reduce_mod_constraints(part) for part in homogenize_in_xi(f).values()), PolySymbol.zero(3))


def agree_on_shell(f: PolySymbol, g: PolySymbol, tol: float = COEFF_TOL) -> bool:
    difference = reduce_on_energy_shell(f - g)
    if difference.is_exact():
        return difference.is_zero()
    return max_coefficient(difference) <= tol


_Y3SQ = Monomial((0, 0, 2), (0, 0, 0))


def reduce_mod_unit_sphere(f: PolySymbol) -> PolySymbol:
    """Normal form modulo |y|^2 - 1 on the reduced sphere: y3^2 -> 1 - y1^2 - y2^2"""
    _require(f, ORBIT, 3)
    pending: Dict[Monomial, Coefficient] = dict(f.terms)
    out: Dict[Monomial, Coefficient] = {}
    while pending:
        mono, c = pending.popitem()
        if mono.xexp[2] >= 2:
            base = mono.quotient(_Y3SQ)
            _accumulate(pending, base, c)
            _accumulate(pending, _shift(base, (2, 0, 0), (0, 0, 0)), -c)
            _accumulate(pending, _shift(base, (0, 2, 0), (0, 0, 0)), -c)
        else:
            _accumulate(out, mono, c)
    return PolySymbol(3, out, ORBIT)


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PerturbationSeries:
    """Coefficients of p + i eps q + eps^2 r + i eps^3 w"""
    p: PolySymbol
    q: PolySymbol
    r: PolySymbol
    w: PolySymbol
    epsilon: float

    def __post_init__(self):
        for name in ("q", "r", "w"):
            _check_compatible(self.p, getattr(self, name))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def from_symbols(cls, p: PolySymbol, q: Optional[PolySymbol] = None, r: Optional[PolySymbol] = None,
                     w: Optional[PolySymbol] = None, epsilon: float = 1.0) -> "PerturbationSeries":
        zero = PolySymbol.zero(p.n, p.frame)
        return cls(p, q or zero, r or zero, w or zero, epsilon)

    def to_oscillator(self) -> "PerturbationSeries":
        return PerturbationSeries(*(to_oscillator(s) for s in (self.p, self.q, self.r, self.w)), self.epsilon)

    def full_symbol(self) -> PolySymbol:
        """p + i eps q + eps^2 r + i eps^3 w with float coefficients"""
        e = self.epsilon
        return self.p + self.q * (1j * e) + self.r * (e ** 2) + self.w * (1j * e ** 3)
