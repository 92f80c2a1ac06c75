"""
Trajectory averaging along periodic quadratic flows

p2 = sum (lam_j / 2)(x_j^2 + xi_j^2) = sum i lam_j y_j eta_j.  Its flow
multiplies y_j by e^{i t lam_j} and eta_j by e^{-i t lam_j}, so the monomial
y^k eta^m rotates with frequency lam . (k - m).  Everything exact happens
monomial by monomial; the quadrature paths are independent oracles.
"""
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.integrate import simpson

from colored_logger import setup_colored_logging
from config import MAX_PANELS, MIN_PANELS, NUMERIC_AVERAGE_TOL
from errors import (
    ConvergenceError, DimensionMismatchError, FrameMismatchError, InvariantViolation, NonzeroAverageError,
)
from scalars import ExactScalar
from symbolalg import (
    XK, YETA, Monomial, PolySymbol, from_oscillator, max_coefficient, poisson_bracket,
    to_oscillator, x, xi,
)

logger = setup_colored_logging(logger_name=__name__)


@dataclass(frozen=True)
class PeriodicFlow:
    """Flow of p2 with positive integer frequencies lam"""
    lam: Tuple[int, ...]
    _k0: Optional[Tuple[int, ...]] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        lam = tuple(int(v) for v in self.lam)
        if not lam or any(v <= 0 for v in lam) or any(v != w for v, w in zip(lam, self.lam)):
            raise ValueError(f"Frequencies must be positive integers, got {self.lam}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "_k0", _minimal_resonance(lam))

    @classmethod
    def parse(cls, text: str) -> "PeriodicFlow":
        return cls(tuple(int(tok) for tok in text.replace(";", ",").split(",") if tok.strip()))

    @property
    def n(self) -> int:
        return len(self.lam)

    @property
    def gcd(self) -> int:
        return math.gcd(*self.lam)

    @property
    def T(self) -> float:
        return 2 * math.pi / self.gcd

    @property
    def k0(self) -> Optional[Tuple[int, ...]]:
        return self._k0

    def phase(self, mono: Monomial) -> int:
        """lam . (k - m) for y^k eta^m"""
        return sum(l * (a - b) for l, a, b in zip(self.lam, mono.xexp, mono.kexp))

    def is_resonant(self, mono: Monomial) -> bool:
        return self.phase(mono) == 0

    def hamiltonian(self, frame: str = XK) -> PolySymbol:
        n = self.n
        if frame == YETA:
            return sum((x(n, j, YETA) * xi(n, j, YETA) * ExactScalar.rational(0, l)
                        for j, l in enumerate(self.lam, 1)), PolySymbol.zero(n, YETA))
        return sum(((x(n, j) ** 2 + xi(n, j) ** 2) * Fraction(l, 2)
                    for j, l in enumerate(self.lam, 1)), PolySymbol.zero(n))

    def _check(self, f: PolySymbol):
        if f.n != self.n:
            raise DimensionMismatchError(f"Flow has {self.n} frequencies, symbol has n = {f.n}")


def _minimal_resonance(lam: Tuple[int, ...]) -> Optional[Tuple[int, ...]]:
    """Smallest-norm primitive k with lam . k = 0, first nonzero entry positive"""
    n = len(lam)
    if n < 2:
        return None
    bound = 1
    while True:
        best = None
        for k in itertools.product(range(-bound, bound + 1), repeat=n):
            if not any(k) or sum(a * b for a, b in zip(lam, k)):
                continue
            if next(v for v in k if v) < 0 or math.gcd(*k) != 1:
                continue
            key = (sum(v * v for v in k), tuple(-v for v in k))
            if best is None or key < best[0]:
                best = (key, k)
        if best is not None:
            return best[1]
        bound += 1


def _in_oscillator(f: PolySymbol, fn: Callable[[PolySymbol], PolySymbol]) -> PolySymbol:
    """Run an oscillator-frame operation on a symbol of either frame"""
    if f.frame == YETA:
        return fn(f)
    return from_oscillator(fn(to_oscillator(f)))


# ----------------------------------------------------------------------
def flow_apply(flow: PeriodicFlow, f: PolySymbol, t: float) -> PolySymbol:
    """f o exp(t H_p2); oscillator frame only"""
    if f.frame != YETA:
        raise FrameMismatchError("flow_apply works in the oscillator frame")
    flow._check(f)
    if t == 0:
        return f
    return f.map_coefficients(lambda m, c: complex(c) * np.exp(1j * t * flow.phase(m)))


def average(flow: PeriodicFlow, f: PolySymbol) -> PolySymbol:
    """Trajectory average: keep the resonant monomials"""
    flow._check(f)
    return _in_oscillator(f, lambda g: g.filter(flow.is_resonant))


def resonant_monomials(flow: PeriodicFlow, f: PolySymbol) -> List[Monomial]:
    g = f if f.frame == YETA else to_oscillator(f)
    return [m for m, _ in g.filter(flow.is_resonant).sorted_terms()]


def require_zero_average(flow: PeriodicFlow, q: PolySymbol, label: str = "q"):
    offending = resonant_monomials(flow, q)
    if offending:
        raise NonzeroAverageError(f"<{label}> does not vanish for lam = {flow.lam}", offending)


def time_weight(flow: PeriodicFlow, omega: int) -> ExactScalar:
    """(1/T) int_0^T t e^{i omega t} dt: 1/(i omega), or T/2 = pi/gcd at resonance"""
    if omega == 0:
        return ExactScalar.monomial(Fraction(1, flow.gcd), pi=1)
    return ExactScalar.rational(0, Fraction(-1, omega))


def solve_homological(flow: PeriodicFlow, f: PolySymbol, minimal: bool = False) -> PolySymbol:
    """
    G with {p2, G} = f - <f>

    Resonant monomials carry the weight pi/gcd so that G is the time-weighted
    average (1/T) int t f o exp(tH) dt; ``minimal`` drops them instead.
    """
    flow._check(f)

    def solve(g: PolySymbol) -> PolySymbol:
        if minimal:
            g = g.filter(lambda m: not flow.is_resonant(m))
        return g.map_coefficients(lambda m, c: c * time_weight(flow, flow.phase(m)))

    return _in_oscillator(f, solve)


def _integral_moment(flow: PeriodicFlow, omega: int) -> ExactScalar:
    # antiderivative of t e^{i w t}: e^{i w t}(1 - i w t)/w^2, with e^{i w T} = 1
    if omega == 0:
        return ExactScalar.monomial(Fraction(1, flow.gcd), pi=1)
    if omega % flow.gcd:
        raise InvariantViolation(f"Phase {omega} is not a multiple of gcd {flow.gcd}")
    # ((1 - i w T) - 1) / (w^2 T) = -i / w
    return ExactScalar.rational(0, Fraction(-omega, omega * omega))


def g0_weighted_average(flow: PeriodicFlow, f: PolySymbol) -> PolySymbol:
    """(1/T) int_0^T t f o exp(tH_p2) dt, checked against solve_homological"""
    flow._check(f)
    G = _in_oscillator(f, lambda g: g.map_coefficients(lambda m, c: c * _integral_moment(flow, flow.phase(m))))
    if G != solve_homological(flow, f):
        raise InvariantViolation("Time-weighted average disagrees with the homological solution")
    return G


def homological_residual(flow: PeriodicFlow, f: PolySymbol, G: PolySymbol) -> PolySymbol:
    """{p2, G} - (f - <f>), in the frame of f"""
    flow._check(f)
    p2 = flow.hamiltonian(f.frame)
    return poisson_bracket(p2, G) - (f - average(flow, f))


# ----------------------------------------------------------------------
# quadrature oracles
def simpson_moments(flow: PeriodicFlow, phases: np.ndarray, panels: int, weighted: bool) -> np.ndarray:
    """Composite Simpson (1/T) int_0^T [t] e^{i w t} dt for each phase w"""
    t = np.linspace(0.0, flow.T, panels + 1)
    kernel = np.exp(1j * np.outer(phases, t))
    if weighted:
        kernel = kernel * t[None, :]
    return simpson(kernel, x=t, axis=1) / flow.T


def _numeric_transform(flow: PeriodicFlow, f: PolySymbol, panels: int, weighted: bool) -> PolySymbol:
    if panels < MIN_PANELS or panels & (panels - 1):
        raise ValueError(f"panels must be a power of two >= {MIN_PANELS}, got {panels}")
    flow._check(f)

    def transform(g: PolySymbol) -> PolySymbol:
        items = g.sorted_terms()
        if not items:
            return PolySymbol.zero(g.n, g.frame)
        phases = np.array([flow.phase(m) for m, _ in items], dtype=float)
        coeffs = np.array([complex(c) for _, c in items])
        n_panels = panels
        previous = coeffs * simpson_moments(flow, phases, n_panels, weighted)
        while True:
            n_panels *= 2
            if n_panels > MAX_PANELS:
                raise ConvergenceError(
                    f"Quadrature did not converge within {MAX_PANELS} panels for lam = {flow.lam}")
            current = coeffs * simpson_moments(flow, phases, n_panels, weighted)
            change = float(np.max(np.abs(current - previous)))
            logger.debug(f"Simpson panels={n_panels}: change {change:.3e}")
            if change < NUMERIC_AVERAGE_TOL:
                break
            previous = current
        return PolySymbol(g.n, {m: complex(v) for (m, _), v in zip(items, current)}, g.frame)

    return _in_oscillator(f, transform)


def average_numeric(flow: PeriodicFlow, f: PolySymbol, panels: int = MIN_PANELS) -> PolySymbol:
    """Composite-Simpson (1/T) int_0^T f o exp(tH) dt, panels doubled to convergence"""
    return _numeric_transform(flow, f, panels, weighted=False)


def weighted_average_numeric(flow: PeriodicFlow, f: PolySymbol, panels: int = MIN_PANELS) -> PolySymbol:
    """Composite-Simpson (1/T) int_0^T t f o exp(tH) dt"""
    return _numeric_transform(flow, f, panels, weighted=True)


def max_residual(flow: PeriodicFlow, f: PolySymbol, G: PolySymbol) -> float:
    return max_coefficient(homological_residual(flow, f, G))
