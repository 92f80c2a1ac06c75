"""
Second and third averaged corrections, long-time double averages,
the secular equation and the global hypothesis checkers
"""
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from scipy.integrate import simpson, solve_ivp
from scipy.linalg import eigvalsh, null_space
from scipy.optimize import root
from scipy.spatial import cKDTree

from averaging import (
    PeriodicFlow, average, average_numeric, require_zero_average, simpson_moments, time_weight,
    solve_homological, weighted_average_numeric,
)
from colored_logger import setup_colored_logging
from config import (
    CRITICAL_CLUSTER_TOL, CRITICAL_GRAD_TOL, CRITICAL_NEIGHBORS, CRITICAL_SAMPLES, DEFAULT_T0,
    DEFAULT_TMAX, FLOW_BATCH_SIZE, INFINITE_AVERAGE_TOL, MAX_PANELS, MAX_THREADS, MIN_PANELS,
    NUMERIC_AVERAGE_TOL, ODE_ATOL, ODE_RTOL, SAMPLES_PER_UNIT_TIME, SECULAR_FD_STEP,
    SECULAR_RESIDUAL_TOL, SECULAR_SAMPLES_PER_UNIT_TIME,
)
from data_processor import polynomial_from_json, polynomial_to_json
from errors import (
    ConvergenceError, CriticalLevelError, DimensionMismatchError, FrameMismatchError,
    InvariantViolation,
)
from symbolalg import (
    ORBIT, XK, YETA, Monomial, NumericPolynomial, PolySymbol, from_oscillator,
    is_real_on_real_domain, poisson_bracket, to_oscillator, x,
)

if TYPE_CHECKING:
    from spectra import PeriodProfile

logger = setup_colored_logging(logger_name=__name__)

Base = Union[PolySymbol, Callable[[np.ndarray], np.ndarray]]


# ----------------------------------------------------------------------
# frame helpers
def _to_osc(f: Optional[PolySymbol], like: PolySymbol) -> PolySymbol:
    if f is None:
        return PolySymbol.zero(like.n, YETA)
    if f.frame != like.frame:
        raise FrameMismatchError(f"Frame mismatch: {f.frame} vs {like.frame}")
    return f if f.frame == YETA else to_oscillator(f)


def _from_osc(f: PolySymbol, frame: str) -> PolySymbol:
    return f if frame == YETA else from_oscillator(f)


def _same(a: PolySymbol, b: PolySymbol) -> bool:
    if a.is_exact() and b.is_exact():
        return a == b
    return a.allclose(b, 1e-10)


@dataclass
class CorrectionBundle:
    """<s>, <t> and the generators of the third-order averaging step"""
    s_avg: PolySymbol
    t_avg: Optional[PolySymbol]
    G0: PolySymbol
    G1: PolySymbol
    G2_residual: PolySymbol
    lam: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lam": list(self.lam),
            "s_avg": polynomial_to_json(self.s_avg),
            "t_avg": polynomial_to_json(self.t_avg) if self.t_avg is not None else None,
            "G0": polynomial_to_json(self.G0),
            "G1": polynomial_to_json(self.G1),
            "G2_residual": polynomial_to_json(self.G2_residual),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CorrectionBundle":
        return cls(
            s_avg=polynomial_from_json(data["s_avg"]),
            t_avg=polynomial_from_json(data["t_avg"]) if data.get("t_avg") else None,
            G0=polynomial_from_json(data["G0"]),
            G1=polynomial_from_json(data["G1"]),
            G2_residual=polynomial_from_json(data["G2_residual"]),
            lam=tuple(data.get("lam", ())),
        )


# ----------------------------------------------------------------------
# exact corrections
def second_correction(flow: PeriodicFlow, q: PolySymbol, r: Optional[PolySymbol] = None,
                      gauge: Optional[PolySymbol] = None) -> PolySymbol:
    """
    <s> = <r> - 1/2 <{G0, q}>,  G0 = (1/T) int t q o exp(tH) dt

    ``gauge`` is added to G0; it must Poisson-commute with p2 and leaves the
    result unchanged.
    """
    frame = q.frame
    qo, ro = _to_osc(q, q), _to_osc(r, q)
    require_zero_average(flow, qo)
    G0 = solve_homological(flow, qo)
    if gauge is not None:
        go = _to_osc(gauge, q)
        if not poisson_bracket(flow.hamiltonian(YETA), go).is_zero():
            raise InvariantViolation("Gauge term does not commute with p2")
        G0 = G0 + go
    s = average(flow, ro) - average(flow, poisson_bracket(G0, qo)) * Fraction(1, 2)
    return _from_osc(s, frame)


def third_correction(flow: PeriodicFlow, q: PolySymbol, r: Optional[PolySymbol] = None,
                     w: Optional[PolySymbol] = None) -> CorrectionBundle:
    """
    Third-order averaged correction <t> = <f + g + w + k> with

        f = -1/12 {G0, {G0, q}}
        g = -1/4 {W({G0, q}), q}
        k = 1/2 ({G0, r} + {W(r), q})

    where W is the time-weighted average (resonant weight T/2).  G1 solves
    {p2, G1} = 1/2 ({G0,q} - <{G0,q}>) - (r - <r>); the G2 right-hand side
    is kept as ``G2_residual`` and its average must reproduce <t>.
    """
    frame = q.frame
    qo, ro = _to_osc(q, q), _to_osc(r, q)
    wo = _to_osc(w, q)
    require_zero_average(flow, qo)
    half, quarter, twelfth = Fraction(1, 2), Fraction(1, 4), Fraction(1, 12)

    G0 = solve_homological(flow, qo)
    b0 = poisson_bracket(G0, qo)
    f_term = poisson_bracket(G0, b0) * (-twelfth)
    g_term = poisson_bracket(solve_homological(flow, b0), qo) * (-quarter)
    k_term = (poisson_bracket(G0, ro) + poisson_bracket(solve_homological(flow, ro), qo)) * half
    t_avg = average(flow, f_term + g_term + wo + k_term)
    s_avg = average(flow, ro) - average(flow, b0) * half

    G1 = solve_homological(flow, b0 * half - ro)
    t_full = (wo - poisson_bracket(G1, qo) * half + f_term
              - poisson_bracket(G0, average(flow, b0)) * quarter
              + poisson_bracket(G0, ro) * half + poisson_bracket(G0, average(flow, ro)) * half)
    t_full_avg = average(flow, t_full)
    if not _same(t_full_avg, t_avg):
        raise InvariantViolation("Average of the G2 right-hand side differs from <f + g + w + k>")

    inputs_real = all(is_real_on_real_domain(s) for s in (qo, ro, wo))
    if inputs_real and not (is_real_on_real_domain(s_avg) and is_real_on_real_domain(t_avg)):
        raise InvariantViolation("Averaged corrections are not real on the real domain")

    logger.info(f"Third-order correction: <s> has {len(s_avg.terms)} terms, <t> has {len(t_avg.terms)} terms")
    return CorrectionBundle(
        s_avg=_from_osc(s_avg, frame),
        t_avg=_from_osc(t_avg, frame),
        G0=_from_osc(G0, frame),
        G1=_from_osc(G1, frame),
        G2_residual=_from_osc(t_full - t_full_avg, frame),
        lam=flow.lam,
    )


def barrier_s(flow: PeriodicFlow, p3: PolySymbol, p4: PolySymbol) -> PolySymbol:
    """
    <s> for a barrier top p2 + p3 + p4: average of
    s = -p4 - 1/2 (1/T) int_0^T t {p3 o exp(tH), p3} dt, summed monomial pair by pair
    """
    frame = p3.frame
    p3o, p4o = _to_osc(p3, p3), _to_osc(p4, p3)
    require_zero_average(flow, p3o, label="p3")
    items = p3o.sorted_terms()
    n = p3o.n
    pair_sum = PolySymbol.zero(n, YETA)
    for ma, ca in items:
        weighted = PolySymbol(n, {ma: ca * _weight(flow, ma)}, YETA)
        for mb, cb in items:
            pair_sum = pair_sum + poisson_bracket(weighted, PolySymbol(n, {mb: cb}, YETA))
    s = -p4o - pair_sum * Fraction(1, 2)
    return _from_osc(average(flow, s), frame)


def _weight(flow: PeriodicFlow, mono: Monomial):
    return time_weight(flow, flow.phase(mono))


# ----------------------------------------------------------------------
# energy-dependent periods
_P0 = sp.Symbol("p0")
_PSI = sp.Function("psi")(_P0)
_PSI_ORDERS = 3
_PSI_VALUES = sp.symbols("psi0:3")

PeriodTerms = List[Tuple[sp.Expr, PolySymbol]]


def _merge_terms(terms: PeriodTerms) -> PeriodTerms:
    acc: Dict[sp.Expr, PolySymbol] = {}
    for coeff, poly in terms:
        coeff = sp.expand(coeff)
        if coeff == 0 or poly.is_zero():
            continue
        acc[coeff] = acc[coeff] + poly if coeff in acc else poly
    return [(c, p) for c, p in acc.items() if not p.is_zero()]


def _bracket_terms(a: PeriodTerms, b: PeriodTerms, p2: PolySymbol) -> PeriodTerms:
    """{alpha(p0) A, beta(p0) B} = alpha beta {A,B} - alpha beta' B {p0,A} + alpha' beta A {p0,B}"""
    out: PeriodTerms = []
    for alpha, A in a:
        d_alpha = sp.diff(alpha, _P0)
        for beta, B in b:
            d_beta = sp.diff(beta, _P0)
            out.append((alpha * beta, poisson_bracket(A, B)))
            if d_beta != 0:
                out.append((-alpha * d_beta, B * poisson_bracket(p2, A)))
            if d_alpha != 0:
                out.append((d_alpha * beta, A * poisson_bracket(p2, B)))
    return _merge_terms(out)


def _weighted_terms(flow: PeriodicFlow, a: PeriodTerms, panels: int) -> PeriodTerms:
    # the p-flow is the oscillator flow at speed 1/psi
    return _merge_terms([(_PSI * c, weighted_average_numeric(flow, A, panels)) for c, A in a])


def _averaged_terms(flow: PeriodicFlow, a: PeriodTerms, panels: int) -> PeriodTerms:
    return _merge_terms([(c, average_numeric(flow, A, panels)) for c, A in a])


def _scaled(a: PeriodTerms, factor) -> PeriodTerms:
    return [(c * factor, A) for c, A in a]


@dataclass
class ProfiledCorrection:
    """
    Averaged correction for p = f(T_lam p2 / 2 pi), whose period on p = E is
    T(E) from a period profile

    Stored as sum_j c_j(psi, psi', psi'') P_j with psi(p2) = T(p) / T_lam;
    calling it evaluates at phase-space points of ``frame``.
    """
    flow: PeriodicFlow
    profile: "PeriodProfile"
    terms: PeriodTerms
    frame: str = XK

    def __post_init__(self):
        self._coefficients = []
        for coeff, poly in self.terms:
            expr = coeff
            # highest derivative first so psi itself is replaced last
            for j in range(_PSI_ORDERS - 1, 0, -1):
                expr = expr.subs(_PSI.diff(_P0, j), _PSI_VALUES[j])
            expr = expr.subs(_PSI, _PSI_VALUES[0])
            if expr.has(_P0):
                raise InvariantViolation(f"Coefficient {coeff} needs more than {_PSI_ORDERS - 1} derivatives of T")
            self._coefficients.append((sp.lambdify(_PSI_VALUES, expr, "numpy"), NumericPolynomial(poly)))
        self._p2 = NumericPolynomial(self.flow.hamiltonian(self.frame))

    def energy(self, points: np.ndarray) -> np.ndarray:
        p2 = np.real(self._p2(np.atleast_2d(points)))
        return np.asarray(self.profile.f(self.flow.T * p2 / (2.0 * math.pi)), dtype=float)

    def psi(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """psi, d psi / d p2 and d^2 psi / d p2^2 at the energies of the points"""
        E = self.energy(points)
        T = self.profile.period(E)
        T1 = self.profile.period_derivative(E, 1)
        T2 = self.profile.period_derivative(E, 2)
        # dE/dp2 = T_lam / T
        return T / self.flow.T, T1 / T, (T2 / T - (T1 / T) ** 2) * self.flow.T / T

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        psi = self.psi(pts)
        out = np.zeros(len(pts), dtype=np.complex128)
        for coeff, poly in self._coefficients:
            out += coeff(*psi) * poly(pts)
        return out


def _profiled_second(flow: PeriodicFlow, q: PolySymbol, r: Optional[PolySymbol], panels: int,
                     profile: "PeriodProfile") -> ProfiledCorrection:
    frame = q.frame
    qo, ro = _to_osc(q, q).to_complex(), _to_osc(r, q).to_complex()
    p2 = flow.hamiltonian(YETA).to_complex()
    q_terms: PeriodTerms = [(sp.Integer(1), qo)]
    G0 = _weighted_terms(flow, q_terms, panels)
    s = _scaled(_bracket_terms(G0, q_terms, p2), sp.Rational(-1, 2))
    if not ro.is_zero():
        s = s + [(sp.Integer(1), ro)]
    s = _averaged_terms(flow, _merge_terms(s), panels)
    return ProfiledCorrection(flow, profile, [(c, _from_osc(A, frame)) for c, A in s], frame)


def _profiled_third(flow: PeriodicFlow, q: PolySymbol, r: Optional[PolySymbol], w: Optional[PolySymbol],
                    panels: int, profile: "PeriodProfile") -> ProfiledCorrection:
    frame = q.frame
    qo, ro, wo = (_to_osc(f, q).to_complex() for f in (q, r, w))
    p2 = flow.hamiltonian(YETA).to_complex()
    q_terms: PeriodTerms = [(sp.Integer(1), qo)]
    G0 = _weighted_terms(flow, q_terms, panels)
    b0 = _bracket_terms(G0, q_terms, p2)
    total = _scaled(_bracket_terms(G0, b0, p2), sp.Rational(-1, 12))
    total += _scaled(_bracket_terms(_weighted_terms(flow, b0, panels), q_terms, p2), sp.Rational(-1, 4))
    if not ro.is_zero():
        r_terms: PeriodTerms = [(sp.Integer(1), ro)]
        total += _scaled(_bracket_terms(G0, r_terms, p2), sp.Rational(1, 2))
        total += _scaled(_bracket_terms(_weighted_terms(flow, r_terms, panels), q_terms, p2), sp.Rational(1, 2))
    if not wo.is_zero():
        total.append((sp.Integer(1), wo))
    t = _averaged_terms(flow, _merge_terms(total), panels)
    return ProfiledCorrection(flow, profile, [(c, _from_osc(A, frame)) for c, A in t], frame)


# ----------------------------------------------------------------------
# quadrature oracles
def second_correction_numeric(flow: PeriodicFlow, q: PolySymbol, r: Optional[PolySymbol] = None,
                              panels: int = MIN_PANELS, profile: Optional["PeriodProfile"] = None,
                              ) -> Union[PolySymbol, ProfiledCorrection]:
    """
    Tensor-product Simpson realization of
    <r> - 1/(2T^2) int int_{[0,T]^2} t {q o exp(tH), q} o exp(sH) dt ds

    With a ``profile`` the Hamiltonian is p = f(T_lam p2 / 2 pi), whose period
    T(p) varies with the energy; G0 then carries the factor psi = T(p) / T_lam,
    the brackets pick up the {T(p), .} terms, and the result is a
    ProfiledCorrection evaluated pointwise.
    """
    if profile is not None:
        return _profiled_second(flow, q, r, panels, profile)
    frame = q.frame
    qo, ro = _to_osc(q, q), _to_osc(r, q)
    n = qo.n
    items = qo.sorted_terms()
    phases = np.array([flow.phase(m) for m, _ in items], dtype=float)
    pairs = []
    for a, (ma, ca) in enumerate(items):
        for b, (mb, cb) in enumerate(items):
            br = poisson_bracket(PolySymbol(n, {ma: 1}, YETA), PolySymbol(n, {mb: 1}, YETA))
            if not br.is_zero():
                pairs.append((a, b, complex(ca) * complex(cb), br))
    r_avg = average_numeric(flow, ro, panels) if not ro.is_zero() else PolySymbol.zero(n, YETA)

    def assemble(n_panels: int) -> Dict[Monomial, complex]:
        acc: Dict[Monomial, complex] = {}
        if not pairs:
            return acc
        t_moment = simpson_moments(flow, phases, n_panels, weighted=True)
        s_phases = np.array([phases[a] + phases[b] for a, b, _, _ in pairs])
        s_moment = simpson_moments(flow, s_phases, n_panels, weighted=False)
        for (a, b, c, br), sm in zip(pairs, s_moment):
            scale = c * t_moment[a] * sm
            for mono, coeff in br.terms.items():
                acc[mono] = acc.get(mono, 0j) + scale * complex(coeff)
        return acc

    n_panels = panels
    previous = assemble(n_panels)
    while True:
        n_panels *= 2
        if n_panels > MAX_PANELS:
            raise ConvergenceError(f"Double-integral quadrature did not converge within {MAX_PANELS} panels")
        current = assemble(n_panels)
        keys = set(previous) | set(current)
        change = max((abs(current.get(k, 0j) - previous.get(k, 0j)) for k in keys), default=0.0)
        if change < NUMERIC_AVERAGE_TOL:
            break
        previous = current
    bracket_avg = PolySymbol(n, current, YETA)
    return _from_osc(r_avg - bracket_avg * 0.5, frame)


def barrier_s_numeric(flow: PeriodicFlow, p3: PolySymbol, p4: PolySymbol, panels: int = MIN_PANELS) -> PolySymbol:
    return second_correction_numeric(flow, p3, -p4, panels)


def third_correction_numeric(flow: PeriodicFlow, q: PolySymbol, r: Optional[PolySymbol] = None,
                             w: Optional[PolySymbol] = None, panels: int = MIN_PANELS,
                             profile: Optional["PeriodProfile"] = None) -> Union[PolySymbol, ProfiledCorrection]:
    """Nested Simpson realization of <f + g + w + k>; ``profile`` as in second_correction_numeric"""
    if profile is not None:
        return _profiled_third(flow, q, r, w, panels, profile)
    frame = q.frame
    qo, ro, wo = _to_osc(q, q), _to_osc(r, q), _to_osc(w, q)
    G0 = weighted_average_numeric(flow, qo, panels)
    b0 = poisson_bracket(G0, qo)
    f_term = poisson_bracket(G0, b0) * (-1.0 / 12.0)
    g_term = poisson_bracket(weighted_average_numeric(flow, b0, panels), qo) * (-0.25)
    k_term = poisson_bracket(G0, ro) * 0.5
    if not ro.is_zero():
        k_term = k_term + poisson_bracket(weighted_average_numeric(flow, ro, panels), qo) * 0.5
    total = f_term + g_term + wo + k_term
    if total.is_zero():
        return _from_osc(total, frame)
    return _from_osc(average_numeric(flow, total, panels), frame)


# ----------------------------------------------------------------------
# sampling
def fibonacci_sphere(count: int) -> np.ndarray:
    """Quasi-uniform points on the unit 2-sphere"""
    i = np.arange(count, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / count
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def super_fibonacci(count: int) -> np.ndarray:
    """Quasi-uniform points on the unit 3-sphere (super-Fibonacci spirals)"""
    phi, psi = math.sqrt(2.0), 1.533751168755204288118041
    s = np.arange(count, dtype=float) + 0.5
    r, R = np.sqrt(s / count), np.sqrt(1.0 - s / count)
    alpha, beta = 2.0 * math.pi * s / phi, 2.0 * math.pi * s / psi
    return np.column_stack([r * np.sin(alpha), r * np.cos(alpha), R * np.sin(beta), R * np.cos(beta)])


@dataclass
class SampleGrid:
    """Points of the reduced sphere (orbit) or of a canonical phase space"""
    points: np.ndarray
    structure: str = ORBIT

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.structure == ORBIT and self.points.shape[1] != 3:
            raise DimensionMismatchError("Reduced-sphere grid points must have 3 coordinates")

    @classmethod
    def sphere(cls, count: int) -> "SampleGrid":
        return cls(fibonacci_sphere(count), ORBIT)

    @classmethod
    def product(cls, axes: Sequence[Sequence[float]]) -> "SampleGrid":
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
        return cls(np.column_stack([m.reshape(-1) for m in mesh]), XK)

    def __len__(self) -> int:
        return len(self.points)


# ----------------------------------------------------------------------
# the flow of <s>
def _partials(f: PolySymbol) -> List[PolySymbol]:
    if f.frame == ORBIT:
        return [f.derivative("x", j) for j in range(f.n)]
    return [f.derivative("x", j) for j in range(f.n)] + [f.derivative("k", j) for j in range(f.n)]


class SecondaryFlow:
    """
    Hamilton flow of a flow-invariant symbol s

    On the reduced sphere the Lie-Poisson structure gives dy/dt = grad s x y;
    in a canonical chart dx/dt = s_xi, dxi/dt = -s_x.
    """

    def __init__(self, s: PolySymbol):
        if s.frame == YETA:
            s = from_oscillator(s)
        self.s = s
        self.structure = s.frame
        self.dim = s.nvars
        self._value = NumericPolynomial(s)
        self._grad = [NumericPolynomial(d) for d in _partials(s)]

    def value(self, points: np.ndarray) -> np.ndarray:
        return np.real(self._value(points))

    def gradient(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.column_stack([np.real(g(pts)) for g in self._grad])

    def rhs(self, points: np.ndarray) -> np.ndarray:
        grad = self.gradient(points)
        if self.structure == ORBIT:
            return np.cross(grad, points)
        n = self.dim // 2
        return np.hstack([grad[:, n:], -grad[:, :n]])

    def _batches(self, points: np.ndarray) -> List[np.ndarray]:
        return [points[i:i + FLOW_BATCH_SIZE] for i in range(0, len(points), FLOW_BATCH_SIZE)]

    def _solve(self, batch: np.ndarray, t_end: float, t_eval=None, dense: bool = False):
        d = self.dim

        def field(_t, state):
            return self.rhs(state.reshape(-1, d)).reshape(-1)

        sol = solve_ivp(field, (0.0, t_end), batch.reshape(-1), method="RK45", t_eval=t_eval,
                        dense_output=dense, rtol=ODE_RTOL, atol=ODE_ATOL)
        if not sol.success:
            raise ConvergenceError(f"Second-flow integration failed: {sol.message}")
        return sol

    def sample(self, points: np.ndarray, times: np.ndarray, base_fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """base along the flow: array (points, times)"""
        points = np.atleast_2d(points)
        times = np.asarray(times, dtype=float)
        d = self.dim

        def run(batch: np.ndarray) -> np.ndarray:
            if times[-1] == 0.0:
                states = np.repeat(batch[:, None, :], len(times), axis=1)
            else:
                sol = self._solve(batch, float(times[-1]), t_eval=times)
                states = sol.y.reshape(len(batch), d, -1).transpose(0, 2, 1)
            return base_fn(states.reshape(-1, d)).reshape(len(batch), len(times))

        with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
            chunks = list(executor.map(run, self._batches(points)))
        return np.vstack(chunks) if chunks else np.zeros((0, len(times)))

    def dense(self, batch: np.ndarray, t_end: float):
        return self._solve(batch, t_end, dense=True)


def _base_function(base: Base) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(base, PolySymbol):
        poly = NumericPolynomial(base if base.frame != YETA else from_oscillator(base))
        return lambda pts: np.real(poly(pts))
    return lambda pts: np.real(np.asarray(base(pts), dtype=complex))


def _panels_for(T: float, per_unit: int) -> int:
    return max(8, 2 * int(math.ceil(per_unit * T / 2.0)))


def _bump(s: np.ndarray) -> np.ndarray:
    inside = (s > 0.0) & (s < 1.0)
    out = np.zeros_like(s)
    out[inside] = np.exp(-1.0 / (s[inside] * (1.0 - s[inside])))
    return out


def _time_average(values: np.ndarray, dt: float) -> np.ndarray:
    span = dt * (values.shape[-1] - 1)
    return simpson(values, dx=dt, axis=-1) / span


def _window_average(values: np.ndarray, dt: float) -> np.ndarray:
    """Smooth-window weighted Birkhoff average over the sampled span"""
    count = values.shape[-1]
    weights = _bump(np.linspace(0.0, 1.0, count))
    norm = simpson(weights, dx=dt)
    return simpson(values * weights, dx=dt, axis=-1) / norm


def _infinite_limit(values: np.ndarray, dt: float, base_panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Smooth-window Birkhoff averages on doubling spans; returns (limit, converged mask)

    The limit is not a Richardson extrapolation of the plain averages: their
    remainder oscillates with the orbit phase rather than scaling like c/T.
    The windowed remainder on a periodic curve decays faster than any power
    of the span.
    """
    total = values.shape[-1] - 1
    span = base_panels
    estimate = _window_average(values[..., :span + 1], dt)
    converged = np.zeros(estimate.shape, dtype=bool)
    while span * 2 <= total:
        span *= 2
        new = _window_average(values[..., :span + 1], dt)
        newly = ~converged & (np.abs(new - estimate) < INFINITE_AVERAGE_TOL)
        estimate = np.where(converged, estimate, new)
        converged |= newly
        logger.debug(f"Windowed average over span {span * dt:.1f}: {int(converged.sum())}/{converged.size} converged")
        if converged.all():
            break
    return estimate, converged


@dataclass
class LongTimeAverage:
    """<<base>>_T and <<base>>_inf on a grid, for the flow of s_avg"""
    base: Optional[PolySymbol]
    s_avg: PolySymbol
    T: float
    points: np.ndarray
    values_T: np.ndarray
    values_inf: np.ndarray
    converged: np.ndarray
    reference_level: Optional[float] = None
    label: str = "t"
    base_fn: Optional[Callable] = field(default=None, repr=False, compare=False)

    def base_function(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.base_fn is not None:
            return self.base_fn
        if self.base is None:
            raise ValueError("LongTimeAverage has neither a polynomial nor a callable base")
        return _base_function(self.base)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "base": polynomial_to_json(self.base) if self.base is not None else None,
            "s_avg": polynomial_to_json(self.s_avg),
            "T": self.T,
            "reference_level": self.reference_level,
            "points": np.asarray(self.points).tolist(),
            "values_T": np.asarray(self.values_T).tolist(),
            "values_inf": np.asarray(self.values_inf).tolist(),
            "converged": np.asarray(self.converged).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LongTimeAverage":
        return cls(
            base=polynomial_from_json(data["base"]) if data.get("base") else None,
            s_avg=polynomial_from_json(data["s_avg"]),
            T=float(data["T"]),
            points=np.asarray(data["points"], dtype=float),
            values_T=np.asarray(data["values_T"], dtype=float),
            values_inf=np.asarray(data["values_inf"], dtype=float),
            converged=np.asarray(data["converged"], dtype=bool),
            reference_level=data.get("reference_level"),
            label=data.get("label", "t"),
        )


def double_average(base: Base, s_avg: PolySymbol, T: float, grid: Union[SampleGrid, np.ndarray],
                   t_max: Optional[float] = None, strict: bool = False,
                   reference_level: Optional[float] = None, label: str = "t") -> LongTimeAverage:
    """
    <<base>>_T = (1/T) int_0^T base o exp(u H_<s>) du at every grid point,
    and <<base>>_inf as a smooth-window Birkhoff average with the span
    doubled from T until successive values agree to 1e-8 (capped by t_max)
    """
    if T <= 0:
        raise ValueError(f"Averaging time must be positive, got {T}")
    points = grid.points if isinstance(grid, SampleGrid) else np.atleast_2d(np.asarray(grid, dtype=float))
    flow = SecondaryFlow(s_avg)
    if points.shape[1] != flow.dim:
        raise DimensionMismatchError(f"Grid points have {points.shape[1]} coordinates, flow needs {flow.dim}")
    t_max = max(t_max or DEFAULT_TMAX, 4.0 * T)
    doublings = int(math.floor(math.log2(t_max / T)))
    panels = _panels_for(T, SAMPLES_PER_UNIT_TIME)
    dt = T / panels
    times = np.linspace(0.0, T * 2 ** doublings, panels * 2 ** doublings + 1)
    base_fn = _base_function(base)
    values = flow.sample(points, times, base_fn)

    values_T = _time_average(values[:, :panels + 1], dt)
    values_inf, converged = _infinite_limit(values, dt, panels)
    missing = int((~converged).sum())
    if missing:
        message = f"<<{label}>>_inf not converged at {missing}/{len(points)} grid points up to T = {times[-1]:.1f}"
        if strict:
            raise ConvergenceError(message)
        logger.warning(message)
    logger.info(f"Double average of <{label}> over T = {T} at {len(points)} points")
    return LongTimeAverage(
        base=base if isinstance(base, PolySymbol) else None,
        s_avg=s_avg, T=T, points=points, values_T=values_T, values_inf=values_inf,
        converged=converged, reference_level=reference_level, label=label,
        base_fn=None if isinstance(base, PolySymbol) else base_fn,
    )


def torus_mean(base: Base, s_avg: PolySymbol, point: Sequence[float], t_start: float = DEFAULT_T0,
               t_max: float = DEFAULT_TMAX) -> float:
    """<<base>>_inf on the invariant curve through one point"""
    return float(double_average(base, s_avg, t_start, np.asarray([point], dtype=float),
                                t_max=t_max, strict=True).values_inf[0])


# ----------------------------------------------------------------------
@dataclass
class SecularSolution:
    points: np.ndarray
    G: np.ndarray
    average_T: np.ndarray
    residual: np.ndarray
    T: float

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def secular_kernel(u: np.ndarray) -> np.ndarray:
    """k(u) = u - 1 on [0, 1], zero elsewhere: k' = -delta_0 + 1_[0,1]"""
    u = np.asarray(u, dtype=float)
    return np.where((u >= 0.0) & (u <= 1.0), u - 1.0, 0.0)


def solve_secular(base: Base, s_avg: PolySymbol, T: float, grid: Union[SampleGrid, np.ndarray],
                  step: float = SECULAR_FD_STEP, tol: float = SECULAR_RESIDUAL_TOL,
                  check: bool = True) -> SecularSolution:
    """
    G = int_0^T k(u/T) base o exp(u H_<s>) du, which solves
    H_<s> G = base - <<base>>_T.  The residual is measured by a fourth-order
    central difference of G along the flow.
    """
    points = grid.points if isinstance(grid, SampleGrid) else np.atleast_2d(np.asarray(grid, dtype=float))
    flow = SecondaryFlow(s_avg)
    if points.shape[1] != flow.dim:
        raise DimensionMismatchError(f"Grid points have {points.shape[1]} coordinates, flow needs {flow.dim}")
    base_fn = _base_function(base)
    panels = _panels_for(T, SECULAR_SAMPLES_PER_UNIT_TIME)
    u = np.linspace(0.0, T, panels + 1)
    kernel = secular_kernel(u / T)
    shifts = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * step
    d = flow.dim

    def run(batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        forward = flow.dense(batch, T + 2.0 * step)
        backward = flow.dense(batch, -2.0 * step)
        G = np.zeros((len(shifts), len(batch)))
        here = np.zeros(len(batch))
        avg = np.zeros(len(batch))
        for row, sigma in enumerate(shifts):
            times = u + sigma
            states = np.empty((len(times), len(batch) * d))
            neg = times < 0.0
            if neg.any():
                states[neg] = backward.sol(times[neg]).T
            states[~neg] = forward.sol(times[~neg]).T
            vals = base_fn(states.reshape(len(times), len(batch), d).transpose(1, 0, 2).reshape(-1, d))
            vals = vals.reshape(len(batch), len(times))
            G[row] = simpson(kernel * vals, x=u, axis=-1)
            if sigma == 0.0:
                avg = simpson(vals, x=u, axis=-1) / T
                here = vals[:, 0]
        derivative = (G[0] - 8.0 * G[1] + 8.0 * G[3] - G[4]) / (12.0 * step)
        return G[2], avg, derivative - (here - avg)

    with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
        parts = list(executor.map(run, flow._batches(points)))
    solution = SecularSolution(
        points=points,
        G=np.concatenate([p[0] for p in parts]) if parts else np.zeros(0),
        average_T=np.concatenate([p[1] for p in parts]) if parts else np.zeros(0),
        residual=np.concatenate([p[2] for p in parts]) if parts else np.zeros(0),
        T=T,
    )
    logger.info(f"Secular equation at T = {T}: max residual {solution.max_residual:.2e}")
    if check and solution.max_residual > tol:
        raise InvariantViolation(f"Secular residual {solution.max_residual:.2e} exceeds {tol:.0e}")
    return solution


# ----------------------------------------------------------------------
# critical values
def critical_values_on_sphere3(s_avg: PolySymbol, lam: Sequence[int] = (1, 1),
                               samples: int = CRITICAL_SAMPLES, neighbors: int = CRITICAL_NEIGHBORS,
                               grad_tol: float = CRITICAL_GRAD_TOL,
                               cluster_tol: float = CRITICAL_CLUSTER_TOL) -> List[Tuple[float, Dict[str, Any]]]:
    """
    Critical values of s_avg on p2^{-1}(1) (phase-space input, n = 2) or on
    |y| = 1 (reduced-sphere input).  Seeds are local minima of the projected
    gradient over a quasi-uniform sample; each seed is refined by
    Levenberg-Marquardt on the Lagrange system.
    """
    if s_avg.frame == ORBIT:
        f = s_avg
        constraint = sum((x(3, j, ORBIT) ** 2 for j in (1, 2, 3)), PolySymbol.zero(3, ORBIT))
        points = fibonacci_sphere(samples)
    else:
        f = s_avg if s_avg.frame == XK else from_oscillator(s_avg)
        if f.n != 2:
            raise DimensionMismatchError("Phase-space critical search needs n = 2")
        flow = PeriodicFlow(tuple(lam))
        constraint = flow.hamiltonian(XK)
        scale = np.sqrt(2.0 / np.array(flow.lam, dtype=float))
        points = super_fibonacci(samples) * np.concatenate([scale, scale])[None, :]

    if max((abs(complex(c).imag) for c in f.terms.values()), default=0.0) > 1e-12:
        logger.warning("Critical search uses the real part of a complex symbol")
    if f.degree() == 0:
        value = float(complex(f.coefficient(Monomial.constant(f.n))).real)
        return [(value, {"kind": "constant", "seeds": 0, "kinds": {}, "failed_seeds": 0})]

    s_val = NumericPolynomial(f)
    s_grad = [NumericPolynomial(d) for d in _partials(f)]
    s_hess = [[NumericPolynomial(dd) for dd in _partials(d)] for d in _partials(f)]
    c_val = NumericPolynomial(constraint)
    c_grad = [NumericPolynomial(d) for d in _partials(constraint)]
    c_hess = [[NumericPolynomial(dd) for dd in _partials(d)] for d in _partials(constraint)]
    dim = points.shape[1]

    def grad(polys, pts):
        return np.column_stack([np.real(p(pts)) for p in polys])

    def hess(polys, pt):
        return np.array([[np.real(p(pt)) for p in row] for row in polys])

    def projected_norm(pts):
        g, n_vec = grad(s_grad, pts), grad(c_grad, pts)
        coef = np.sum(g * n_vec, axis=1) / np.sum(n_vec * n_vec, axis=1)
        return np.linalg.norm(g - coef[:, None] * n_vec, axis=1), coef

    norms, multipliers = projected_norm(points)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=min(neighbors + 1, len(points)))
    seed_mask = norms <= norms[idx[:, 1:]].min(axis=1)
    seeds = np.flatnonzero(seed_mask)
    logger.debug(f"Critical search: {len(seeds)} seeds from {len(points)} samples")

    def residual(v):
        z, mu = v[:dim], v[dim]
        return np.concatenate([grad(s_grad, z)[0] - mu * grad(c_grad, z)[0], [np.real(c_val(z)) - 1.0]])

    def jacobian(v):
        z, mu = v[:dim], v[dim]
        top = np.column_stack([hess(s_hess, z) - mu * hess(c_hess, z), -grad(c_grad, z)[0]])
        bottom = np.concatenate([grad(c_grad, z)[0], [0.0]])
        return np.vstack([top, bottom])

    def refine(i: int) -> Optional[Tuple[float, str, np.ndarray]]:
        sol = root(residual, np.concatenate([points[i], [multipliers[i]]]), jac=jacobian, method="lm",
                   options={"xtol": 1e-15, "ftol": 1e-15, "maxiter": 2000})
        z, mu = sol.x[:dim], sol.x[dim]
        pnorm, _ = projected_norm(z[None, :])
        if abs(np.real(c_val(z)) - 1.0) > 1e-10 or pnorm[0] > grad_tol:
            return None
        tangent = null_space(grad(c_grad, z))
        eig = eigvalsh(tangent.T @ (hess(s_hess, z) - mu * hess(c_hess, z)) @ tangent)
        cut = 1e-6 * max(1.0, float(np.max(np.abs(eig))))
        pos, neg = bool((eig > cut).any()), bool((eig < -cut).any())
        kind = "saddle" if pos and neg else "min" if pos else "max" if neg else "degenerate"
        return float(np.real(s_val(z))), kind, z

    with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
        refined = list(executor.map(refine, seeds))
    found = sorted((r for r in refined if r is not None), key=lambda item: item[0])
    failed = len(refined) - len(found)
    if failed:
        logger.warning(f"Critical search: {failed}/{len(refined)} seeds did not converge")

    clusters: List[List[Tuple[float, str, np.ndarray]]] = []
    for item in found:
        if clusters and abs(item[0] - clusters[-1][0][0]) <= cluster_tol:
            clusters[-1].append(item)
        else:
            clusters.append([item])

    result = []
    for group in clusters:
        kinds = Counter(kind for _, kind, _ in group)
        result.append((
            float(np.mean([v for v, _, _ in group])),
            {"kind": kinds.most_common(1)[0][0], "kinds": dict(kinds), "seeds": len(group),
             "point": group[0][2].tolist(), "failed_seeds": failed},
        ))
    logger.info(f"Critical values: {[round(v, 10) for v, _ in result]}")
    return result


# ----------------------------------------------------------------------
# separation of long-time averages around the central curve
@dataclass
class HypothesisReport:
    label: str
    a: float
    reference_level: float
    reference_value: float
    reference_point: List[float]
    rows: List[Dict[str, Any]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "a": self.a,
            "reference_level": self.reference_level,
            "reference_value": self.reference_value,
            "reference_point": list(self.reference_point),
            "rows": self.rows,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HypothesisReport":
        return cls(data["label"], float(data["a"]), float(data["reference_level"]),
                   float(data["reference_value"]), list(data["reference_point"]), list(data["rows"]))


def project_to_level(flow: SecondaryFlow, point: np.ndarray, level: float, iterations: int = 60) -> np.ndarray:
    """Gradient-flow projection of a point onto {s = level}"""
    z = np.asarray(point, dtype=float).copy()
    for _ in range(iterations):
        gap = float(flow.value(z[None, :])[0]) - level
        if abs(gap) < 1e-14:
            return z
        g = flow.gradient(z[None, :])[0]
        if flow.structure == ORBIT:
            g = g - np.dot(g, z) * z
        norm2 = float(np.dot(g, g))
        if norm2 < 1e-24:
            raise CriticalLevelError(f"Level {level} is critical near {z.tolist()}")
        z = z - gap * g / norm2
        if flow.structure == ORBIT:
            z = z / np.linalg.norm(z)
    gap = float(flow.value(z[None, :])[0]) - level
    if abs(gap) > 1e-10:
        raise CriticalLevelError(f"Could not land on level {level} (gap {gap:.2e})")
    return z


def check_global_hypothesis(bundle: LongTimeAverage, a: float, b_list: Sequence[float],
                            t0: float = DEFAULT_T0, t_max: float = DEFAULT_TMAX) -> HypothesisReport:
    """
    Sign-separation evidence: for each b, scan T = t0 2^j <= t_max and report
    inf over {b <= F <= a} and sup over {-a <= F <= -b} of <<.>>_T - <<.>>_inf,
    F = s - F0, with <<.>>_inf the mean over the central curve {s = F0}
    """
    flow = SecondaryFlow(bundle.s_avg)
    base_fn = bundle.base_function()
    points = np.atleast_2d(bundle.points)
    levels = flow.value(points)
    f0 = bundle.reference_level
    if f0 is None:
        f0 = 0.5 * (float(levels.min()) + float(levels.max()))
    F = levels - f0

    start = points[int(np.argmin(np.abs(F)))]
    ref_point = project_to_level(flow, start, f0)
    ref_value = torus_mean(base_fn, bundle.s_avg, ref_point, t0, t_max)

    doublings = max(0, int(math.floor(math.log2(t_max / t0))))
    panels = _panels_for(t0, SAMPLES_PER_UNIT_TIME)
    dt = t0 / panels
    band = np.abs(F) <= a
    in_band = np.flatnonzero(band)
    times = np.linspace(0.0, t0 * 2 ** doublings, panels * 2 ** doublings + 1)
    values = flow.sample(points[in_band], times, base_fn) if len(in_band) else np.zeros((0, len(times)))
    T_list = [t0 * 2 ** j for j in range(doublings + 1)]
    averages = {T: _time_average(values[:, :panels * 2 ** j + 1], dt) for j, T in enumerate(T_list)}
    F_band = F[in_band]

    rows = []
    for b in b_list:
        upper, lower = F_band >= b, F_band <= -b
        table = []
        verdict, first_T, margin, final_margin = "undetermined", None, None, None
        for T in T_list:
            diff = averages[T] - ref_value
            inf_upper = float(diff[upper].min()) if upper.any() else None
            sup_lower = float(diff[lower].max()) if lower.any() else None
            table.append({"T": T, "inf_upper": inf_upper, "sup_lower": sup_lower,
                          "n_upper": int(upper.sum()), "n_lower": int(lower.sum())})
            if inf_upper is None or sup_lower is None:
                continue
            current = min(inf_upper, -sup_lower)
            if current > 0 and first_T is None:
                verdict, first_T, margin = "satisfied", T, current
            if first_T is not None and current <= 0:
                verdict, first_T, margin = "undetermined", None, None
            final_margin = current
        rows.append({"b": b, "verdict": verdict, "T_satisfied": first_T, "margin": margin,
                     "final_margin": final_margin, "table": table})
        logger.info(f"Separation check b = {b}: {verdict}" + (f" at T = {first_T}" if first_T else ""))
    return HypothesisReport(bundle.label, a, float(f0), ref_value, ref_point.tolist(), rows)
