"""
The 2-sphere: constrained geometry of Sigma = {|x| = 1, x.xi = 0} in T*R^3,
geodesic flow, Radon averages over great circles and the reduction to the
space of oriented great circles y = x cross xi
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from averaging import PeriodicFlow, average, solve_homological
from colored_logger import setup_colored_logging
from config import SHELL_TOL
from corrections import LongTimeAverage, SampleGrid, double_average, fibonacci_sphere
from errors import DimensionMismatchError, FrameMismatchError, InvariantViolation, NonzeroAverageError
from scalars import I
from symbolalg import (
    ORBIT, XK, Monomial, NumericPolynomial, PolySymbol, agree_on_shell, constrained_bracket,
    evaluate_many, from_oscillator, geodesic_hamiltonian, max_coefficient, reduce_mod_constraints,
    reduce_mod_unit_sphere, reduce_on_energy_shell, substitute, to_oscillator, x, xi, xi_squared,
)

logger = setup_colored_logging(logger_name=__name__)

# on |xi| = 1 the geodesic flow exp(t H_p / 2) is the isotropic rotation
GEODESIC_FLOW = PeriodicFlow((1, 1, 1))


@dataclass(frozen=True)
class SpherePoint:
    x: Tuple[float, float, float]
    xi: Tuple[float, float, float]

    def __post_init__(self):
        xv, kv = np.asarray(self.x, dtype=float), np.asarray(self.xi, dtype=float)
        if xv.shape != (3,) or kv.shape != (3,):
            raise DimensionMismatchError("Sphere points need 3-vectors")
        if abs(xv @ xv - 1.0) > SHELL_TOL * 100 or abs(xv @ kv) > SHELL_TOL * 100:
            raise ValueError(f"Point is not on Sigma: |x|^2 = {xv @ xv}, x.xi = {xv @ kv}")
        object.__setattr__(self, "x", tuple(xv))
        object.__setattr__(self, "xi", tuple(kv))

    def as_array(self) -> np.ndarray:
        return np.array(self.x + self.xi)

    def reduced(self) -> "ReducedPoint":
        xv, kv = np.array(self.x), np.array(self.xi)
        y = np.cross(xv, kv)
        return ReducedPoint(tuple(y / np.linalg.norm(kv)))


@dataclass(frozen=True)
class ReducedPoint:
    """Oriented great circle, y = x cross xi / |xi|"""
    y: Tuple[float, float, float]

    def __post_init__(self):
        yv = np.asarray(self.y, dtype=float)
        if yv.shape != (3,) or abs(np.linalg.norm(yv) - 1.0) > SHELL_TOL * 100:
            raise ValueError(f"Reduced point must be a unit 3-vector, got {self.y}")
        object.__setattr__(self, "y", tuple(yv))


# ----------------------------------------------------------------------
# geodesic flow
def geodesic_flow_arrays(x_arr: np.ndarray, xi_arr: np.ndarray, t) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised exp(t H_p / 2) on rows of (x, xi)"""
    x_arr, xi_arr = np.atleast_2d(x_arr), np.atleast_2d(xi_arr)
    speed = np.linalg.norm(xi_arr, axis=1)
    if np.any(speed == 0.0):
        raise ValueError("Geodesic flow needs xi != 0")
    angle = speed * np.asarray(t, dtype=float)
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    new_x = c * x_arr + s * xi_arr / speed[:, None]
    new_xi = -speed[:, None] * s * x_arr + c * xi_arr
    return new_x, new_xi


def geodesic_flow(pt: SpherePoint, t: float) -> SpherePoint:
    """(x, xi) -> (cos(|xi| t) x + sin(|xi| t) xi/|xi|, -|xi| sin(|xi| t) x + cos(|xi| t) xi)"""
    new_x, new_xi = geodesic_flow_arrays(np.array(pt.x), np.array(pt.xi), t)
    return SpherePoint(tuple(new_x[0]), tuple(new_xi[0]))


def random_shell_points(count: int, rng: Optional[np.random.Generator] = None, speed: float = 1.0) -> np.ndarray:
    """Rows (x, xi) on Sigma with |xi| = speed"""
    rng = rng or np.random.default_rng()
    xs = rng.normal(size=(count, 3))
    xs /= np.linalg.norm(xs, axis=1)[:, None]
    ks = rng.normal(size=(count, 3))
    ks -= np.sum(ks * xs, axis=1)[:, None] * xs
    ks *= speed / np.linalg.norm(ks, axis=1)[:, None]
    return np.hstack([xs, ks])


# ----------------------------------------------------------------------
# Radon average
def _require_sphere_symbol(f: PolySymbol):
    if f.frame != XK:
        raise FrameMismatchError("Sphere symbols live in the real (x, xi) frame")
    if f.n != 3:
        raise DimensionMismatchError(f"Sphere symbols need n = 3, got {f.n}")


def radon_average(q: PolySymbol) -> PolySymbol:
    """
    Mean of q over the great circle through (x, xi) on |xi| = 1.  There the
    geodesic flow is the isotropic rotation of (x, xi), so the average keeps
    the balanced oscillator monomials; the result is reduced modulo the
    constraints.
    """
    _require_sphere_symbol(q)
    return reduce_mod_constraints(from_oscillator(average(GEODESIC_FLOW, to_oscillator(q))))


# ----------------------------------------------------------------------
# reduction to the circle space
def _pair_image(i: int, j: int) -> PolySymbol:
    """y_i eta_j on Sigma with |xi| = 1: (delta_ij - Y_i Y_j + i eps_ijk Y_k) / (2i)"""
    Y = [x(3, k, ORBIT) for k in (1, 2, 3)]
    out = -(Y[i] * Y[j])
    if i == j:
        out = out + 1
    else:
        k = 3 - i - j
        sign = 1 if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1
        out = out + Y[k] * I * sign
    return out * (I * 2).inverse()


def circle_chart(Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    A point (x, xi) of Sigma with |xi| = 1 and x cross xi = Y:
    x = (-y2, y1, 0)/rho, xi = (-y1 y3, -y2 y3, rho^2)/rho with rho^2 = y1^2 + y2^2,
    applied in a cyclically rotated frame near the poles
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    xs, ks = np.empty_like(Y), np.empty_like(Y)
    polar = Y[:, 0] ** 2 + Y[:, 1] ** 2 < 0.25
    for mask, perm in ((~polar, (0, 1, 2)), (polar, (1, 2, 0))):
        if not mask.any():
            continue
        P = Y[mask][:, perm]
        rho = np.sqrt(P[:, 0] ** 2 + P[:, 1] ** 2)
        px = np.column_stack([-P[:, 1], P[:, 0], np.zeros(len(P))]) / rho[:, None]
        pk = np.column_stack([-P[:, 0] * P[:, 2], -P[:, 1] * P[:, 2], rho ** 2]) / rho[:, None]
        inverse = np.argsort(perm)
        xs[mask] = px[:, inverse]
        ks[mask] = pk[:, inverse]
    return xs, ks


def pullback(g: PolySymbol) -> PolySymbol:
    """g(x cross xi) as a polynomial on T*R^3"""
    if g.frame != ORBIT:
        raise FrameMismatchError("pullback expects a reduced-sphere symbol")
    X = [x(3, j) for j in (1, 2, 3)]
    K = [xi(3, j) for j in (1, 2, 3)]
    images = [X[1] * K[2] - X[2] * K[1], X[2] * K[0] - X[0] * K[2], X[0] * K[1] - X[1] * K[0]]
    return substitute(g, images + [PolySymbol.zero(3)] * 3, XK)


def _check_invariant(f: PolySymbol, samples: int = 100, tol: float = 1e-10):
    rng = np.random.default_rng(20240611)
    pts = random_shell_points(samples, rng)
    t = rng.uniform(0.0, 2.0 * math.pi, size=samples)
    moved_x, moved_xi = geodesic_flow_arrays(pts[:, :3], pts[:, 3:], t)
    poly = NumericPolynomial(f)
    gap = float(np.max(np.abs(poly(pts) - poly(np.hstack([moved_x, moved_xi])))))
    if gap > tol:
        raise InvariantViolation(f"Symbol is not invariant under the geodesic flow (gap {gap:.2e})")


def _reduced_monomials(degree: int) -> List[Monomial]:
    out = []
    for total in range(degree + 1):
        for a in range(total + 1):
            for b in range(total - a + 1):
                c = total - a - b
                if c <= 1:
                    out.append(Monomial((a, b, c), (0, 0, 0)))
    return out


def _fit_on_circle_space(f: PolySymbol, degree: int, tol: float) -> PolySymbol:
    Y = fibonacci_sphere(max(400, 8 * len(_reduced_monomials(degree))))
    xs, ks = circle_chart(Y)
    target = NumericPolynomial(f)(np.hstack([xs, ks]))
    basis = _reduced_monomials(degree)
    design = np.column_stack([np.prod(Y ** np.array(m.xexp)[None, :], axis=1) for m in basis])
    coeffs, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = float(np.max(np.abs(design @ coeffs - target)))
    if residual > tol:
        raise InvariantViolation(f"Least-squares circle-space fit residual {residual:.2e} exceeds {tol:.0e}")
    cleaned = {m: complex(c) for m, c in zip(basis, coeffs) if abs(c) > 1e-13}
    return PolySymbol(3, cleaned, ORBIT)


def reduce_to_circle_space(f: PolySymbol, tol: float = 1e-10) -> PolySymbol:
    """
    g(y) with g(x cross xi) = f(x, xi) on Sigma with |xi| = 1

    Each balanced oscillator monomial is a product of pairs y_i eta_j, and
    every pair has a polynomial image in Y = x cross xi.  The result is
    checked through the explicit chart and falls back to a least-squares fit.
    """
    _require_sphere_symbol(f)
    _check_invariant(f, tol=tol)
    balanced = average(GEODESIC_FLOW, to_oscillator(f))
    images = {}
    result = PolySymbol.zero(3, ORBIT)
    for mono, coeff in balanced.sorted_terms():
        ys = [i for i in range(3) for _ in range(mono.xexp[i])]
        etas = [j for j in range(3) for _ in range(mono.kexp[j])]
        term = PolySymbol.constant(3, coeff, ORBIT)
        for i, j in zip(ys, etas):
            if (i, j) not in images:
                images[(i, j)] = _pair_image(i, j)
            term = term * images[(i, j)]
        result = result + term
    result = reduce_mod_unit_sphere(result)

    Y = fibonacci_sphere(257)
    xs, ks = circle_chart(Y)
    gap = float(np.max(np.abs(NumericPolynomial(result)(Y) - NumericPolynomial(f)(np.hstack([xs, ks])))))
    if gap > tol:
        logger.warning(f"Exact circle-space reduction off by {gap:.2e}; using least-squares fit")
        return _fit_on_circle_space(f, max(f.degree(), 1), tol)
    return result


def reduced_radon(q: PolySymbol) -> PolySymbol:
    return reduce_to_circle_space(radon_average(q))


def reduced_average_of_quadratic(q: PolySymbol) -> PolySymbol:
    """Reduced <q> for an even quadratic symbol, e.g. x1 x2 -> -y1 y2 / 2"""
    _require_sphere_symbol(q)
    if any(m.degree not in (0, 2) for m in q.terms):
        raise ValueError("Expected a quadratic symbol")
    return reduced_radon(q)


# ----------------------------------------------------------------------
# globally homogeneous generators
@dataclass(frozen=True)
class HomogeneousSymbol:
    """numerator * (xi^2)^(-K)"""
    numerator: PolySymbol
    K: int

    def on_shell(self) -> PolySymbol:
        return self.numerator

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        rho = np.sum(pts[:, 3:] ** 2, axis=1)
        return evaluate_many(self.numerator, pts) * rho ** (-self.K)

    def __str__(self) -> str:
        return f"({self.numerator}) / (xi^2)^{self.K}"


def shell_bracket(G: HomogeneousSymbol, g: PolySymbol) -> PolySymbol:
    """{N rho^-K, g}_Sigma on |xi| = 1: {N, g}_Sigma - K N {rho, g}_Sigma"""
    rho = xi_squared(3)
    return constrained_bracket(G.numerator, g) - G.numerator * constrained_bracket(rho, g) * G.K


def sphere_g0(q: PolySymbol) -> HomogeneousSymbol:
    """
    Generator with H_p^Sigma G0 = q for an odd polynomial q(x), extended to a
    function homogeneous of degree -1 in xi (e.g. q = x1 gives -xi1 / (2 xi^2))
    """
    _require_sphere_symbol(q)
    if any(m.kdegree for m in q.terms):
        raise ValueError("sphere_g0 expects a polynomial in x only")
    if any(m.degree % 2 == 0 for m in q.terms):
        raise NonzeroAverageError("sphere_g0 needs odd q", [m for m in q.terms if m.degree % 2 == 0])
    # H_p is twice the rotation generator on the shell
    g = from_oscillator(solve_homological(GEODESIC_FLOW, to_oscillator(q))) * Fraction(1, 2)
    parts = g.kdegree_parts()
    if any(d % 2 == 0 for d in parts):
        raise InvariantViolation("Time-weighted average of an odd symbol has even xi-degree terms")
    if not parts:
        return HomogeneousSymbol(PolySymbol.zero(3), 0)
    top = max(parts)
    K = (top + 1) // 2
    rho = xi_squared(3)
    numerator = sum((parts[d] * rho ** (K - (d + 1) // 2) for d in parts), PolySymbol.zero(3))
    G0 = HomogeneousSymbol(numerator, K)

    residual = shell_bracket(G0, geodesic_hamiltonian()) * -1 - q
    if not agree_on_shell(residual, PolySymbol.zero(3)):
        raise InvariantViolation("H_p G0 does not reproduce q on the energy shell")
    return G0


def sphere_second_correction(q: PolySymbol) -> Tuple[PolySymbol, PolySymbol]:
    """
    <s> = -1/2 <{G0, q}_Sigma> on Sigma with |xi| = 1, in canonical energy-shell
    form, together with its reduced form on the circle space

    The energy-shell form is the representative chosen by reduce_on_energy_shell.
    It equals other expressions of <s>, such as 1/4 - 3/8 (x1^2 + xi1^2) for
    q = x1, only on Sigma with |xi| = 1, so compare it with agree_on_shell.
    The reduced form is unique up to |y| = 1.
    """
    _require_sphere_symbol(q)
    if q.is_zero():
        return PolySymbol.zero(3), PolySymbol.zero(3, ORBIT)
    mean = radon_average(q)
    if not mean.is_zero():
        raise NonzeroAverageError("<q> does not vanish on the sphere", list(mean.terms))
    G0 = sphere_g0(q)
    bracket = reduce_mod_constraints(shell_bracket(G0, q))
    s_sigma = reduce_on_energy_shell(radon_average(bracket) * Fraction(-1, 2))
    s_reduced = reduce_to_circle_space(s_sigma)
    logger.info(f"Sphere <s>: reduced form {s_reduced}")
    return s_sigma, s_reduced


# ----------------------------------------------------------------------
# Radon transform on harmonic polynomials
def harmonic_basis(degree: int) -> List[PolySymbol]:
    """Real solid harmonics of the given degree in x1, x2, x3 (2 degree + 1 of them)"""
    X1, X2, X3 = (x(3, j) for j in (1, 2, 3))
    r2 = X1 ** 2 + X2 ** 2 + X3 ** 2
    basis = []
    for m in range(degree + 1):
        radial = PolySymbol.zero(3)
        for k in range((degree - m) // 2 + 1):
            c = ((-1) ** k * math.factorial(2 * degree - 2 * k)
                 // (math.factorial(k) * math.factorial(degree - k) * math.factorial(degree - 2 * k - m)))
            radial = radial + X3 ** (degree - 2 * k - m) * r2 ** k * c
        full = (X1 + X2 * I) ** m * radial
        real = (full + full.conjugate_coefficients()) * Fraction(1, 2)
        basis.append(real)
        if m:
            basis.append((full - full.conjugate_coefficients()) * (I * 2).inverse())
    return basis


def _as_reduced(h: PolySymbol) -> PolySymbol:
    return reduce_mod_unit_sphere(PolySymbol(3, {Monomial(m.xexp, (0, 0, 0)): c for m, c in h.terms.items()}, ORBIT))


def radon_schur_check(degree: int, tol: float = 1e-10) -> float:
    """Common multiplier of the Radon transform on degree-d harmonics"""
    if degree < 0 or degree > 8:
        raise ValueError("degree must lie in [0, 8]")
    multipliers = []
    for h in harmonic_basis(degree):
        image = reduced_radon(h)
        target = _as_reduced(h)
        if target.is_zero():
            continue
        keys = list(target.terms)
        a = np.array([complex(target.coefficient(k)) for k in keys])
        b = np.array([complex(image.coefficient(k)) for k in keys])
        c = complex(np.vdot(a, b) / np.vdot(a, a))
        if max_coefficient(image - target * c) > tol:
            raise InvariantViolation(f"Radon image of a degree-{degree} harmonic is not a multiple of it")
        multipliers.append(c.real)
    if not multipliers:
        return 0.0
    if max(multipliers) - min(multipliers) > tol:
        raise InvariantViolation(f"Radon multipliers differ across the degree-{degree} basis: {multipliers}")
    logger.info(f"Radon multiplier on degree {degree}: {multipliers[0]:.12g}")
    return float(np.mean(multipliers))


# ----------------------------------------------------------------------
# long-time data on the circle space
def band_grid(s_reduced: PolySymbol, center: float, half_width: float, count: int = 400,
              oversample: int = 40000) -> SampleGrid:
    """Quasi-uniform points of |y| = 1 with |s - center| <= half_width"""
    Y = fibonacci_sphere(oversample)
    values = np.real(NumericPolynomial(s_reduced)(Y))
    keep = np.flatnonzero(np.abs(values - center) <= half_width)
    if len(keep) > count:
        keep = keep[np.linspace(0, len(keep) - 1, count).astype(int)]
    logger.debug(f"Band grid: {len(keep)} points within {half_width} of level {center}")
    return SampleGrid(Y[keep], ORBIT)


def sphere_bundle(q: PolySymbol, base: Optional[PolySymbol] = None, T: float = 10.0,
                  reference_level: Optional[float] = None, half_width: float = 0.05,
                  count: int = 400, t_max: Optional[float] = None, label: str = "t") -> LongTimeAverage:
    """
    Long-time data for the sphere: the second flow is the reduced <s> of q.
    The reduced <t> of an odd q vanishes (the antipodal map is the half-period
    geodesic flow and <t> is cubic in q), so the default base is zero.
    """
    _, s_reduced = sphere_second_correction(q)
    if base is None:
        base = PolySymbol.zero(3, ORBIT)
    if base.frame != ORBIT:
        raise FrameMismatchError("Bases for the sphere bundle live on the circle space")
    if reference_level is None:
        values = np.real(NumericPolynomial(s_reduced)(fibonacci_sphere(4000)))
        reference_level = 0.5 * (float(values.min()) + float(values.max()))
    grid = band_grid(s_reduced, reference_level, half_width, count)
    return double_average(base, s_reduced, T, grid, t_max=t_max, reference_level=reference_level, label=label)
