"""
Analytic spectral predictors: period profiles, cluster rectangles,
quasi-eigenvalue lattices and action coordinates on the reduced sphere
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from averaging import PeriodicFlow
from colored_logger import setup_colored_logging
from config import (
    ACTION_ATOL, ACTION_RTOL, MAX_THREADS, RECTANGLE_IM_MULTIPLIER, RECTANGLE_RE_MULTIPLIER,
    SLACK_CONSTANT,
)
from corrections import SecondaryFlow, fibonacci_sphere, project_to_level
from errors import CriticalLevelError, FrameMismatchError, InvariantViolation, RegimeError
from scalars import to_complex
from symbolalg import ORBIT, XK, YETA, PolySymbol, to_oscillator

logger = setup_colored_logging(logger_name=__name__)

PROFILE_KINDS = ("constant", "sphere", "tabulated")
REGIMES = ("thm3.1", "thm4.2", "thm4.3", "thm4.4")
REGIME_ALIASES = {"complex_s": "thm3.1", "subcluster": "thm4.2", "strong": "thm4.3", "balanced": "thm4.4"}

Window = Tuple[float, float]
SOfXi = Callable[[float, float], complex]


# ----------------------------------------------------------------------
# period profiles
@dataclass
class PeriodProfile:
    """
    Period T(E) of the p-flow with g' = T / 2 pi and f = g^{-1}

    ``constant`` has g = T0 E / 2 pi; ``sphere`` uses T = pi / sqrt(E) with
    g(E) = sqrt(E) - 1 and f(v) = (v + 1)^2; ``tabulated`` interpolates
    sampled periods monotonically and integrates them.
    """
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    window: Window = (0.0, math.inf)
    _g_spline: Optional[PchipInterpolator] = field(default=None, repr=False, compare=False)
    _gp_spline: Optional[PchipInterpolator] = field(default=None, repr=False, compare=False)

    def period(self, E):
        E = np.asarray(E, dtype=float)
        if self.kind == "constant":
            return np.full_like(E, self.params["T0"])
        if self.kind == "sphere":
            return math.pi / np.sqrt(E)
        return 2.0 * math.pi * self._gp_spline(E)

    def period_derivative(self, E, order: int = 1):
        """d^order T / dE^order"""
        E = np.asarray(E, dtype=float)
        if order == 0:
            return self.period(E)
        if self.kind == "constant":
            return np.zeros_like(E)
        if self.kind == "sphere":
            # T = pi E^{-1/2}
            coeff = math.pi * math.prod(-0.5 - j for j in range(order))
            return coeff * E ** (-0.5 - order)
        return 2.0 * math.pi * self._gp_spline(E, order)

    def g_prime(self, E):
        return self.period(E) / (2.0 * math.pi)

    def g(self, E):
        E = np.asarray(E, dtype=float)
        if self.kind == "constant":
            return self.params["T0"] * E / (2.0 * math.pi)
        if self.kind == "sphere":
            return np.sqrt(E) - 1.0
        return self._g_spline(E)

    def f(self, value):
        """Inverse of g: closed forms, else bracketing root plus a Newton polish"""
        if self.kind == "constant":
            return 2.0 * math.pi * np.asarray(value, dtype=float) / self.params["T0"]
        if self.kind == "sphere":
            return (np.asarray(value, dtype=float) + 1.0) ** 2
        values = np.atleast_1d(np.asarray(value, dtype=float))
        out = np.array([self._invert(v) for v in values])
        return out[0] if np.ndim(value) == 0 else out

    def _invert(self, v: float) -> float:
        lo, hi = self.window
        glo, ghi = float(self.g(lo)), float(self.g(hi))
        if not glo <= v <= ghi:
            raise ValueError(f"Action {v} outside the profile window [{glo}, {ghi}]")
        E = brentq(lambda e: float(self.g(e)) - v, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return float(E - (float(self.g(E)) - v) / float(self.g_prime(E)))

    def round_trip_error(self, energies: Sequence[float]) -> float:
        E = np.asarray(energies, dtype=float)
        return float(np.max(np.abs(self.f(self.g(E)) - E)))


def build_profile(kind: str, **params) -> PeriodProfile:
    """
    Args:
        kind: 'constant' (T0, default 2 pi), 'sphere', or 'tabulated'
            (energies, periods, optional anchor with g(anchor) = 0)
    """
    if kind not in PROFILE_KINDS:
        raise ValueError(f"Unknown profile kind '{kind}', expected one of {PROFILE_KINDS}")
    if kind == "constant":
        T0 = float(params.get("T0", 2.0 * math.pi))
        if T0 <= 0:
            raise ValueError("g is not monotone: period must be positive")
        return PeriodProfile(kind, {"T0": T0}, tuple(params.get("window", (-math.inf, math.inf))))
    if kind == "sphere":
        lo, hi = params.get("window", (1e-12, math.inf))
        return PeriodProfile(kind, {}, (max(float(lo), 1e-12), float(hi)))

    energies = np.asarray(params["energies"], dtype=float)
    periods = np.asarray(params["periods"], dtype=float)
    if energies.shape != periods.shape or energies.size < 2 or np.any(np.diff(energies) <= 0):
        raise ValueError("Tabulated profile needs increasing energies matching the periods")
    if np.any(periods <= 0):
        raise ValueError("g is not monotone: tabulated periods must be positive")
    gp = PchipInterpolator(energies, periods / (2.0 * math.pi), extrapolate=False)
    g = gp.antiderivative()
    anchor = float(params.get("anchor", 0.0 if energies[0] <= 0.0 <= energies[-1] else energies[0]))
    offset = float(g(anchor))
    profile = PeriodProfile(kind, {"anchor": anchor}, (float(energies[0]), float(energies[-1])))
    profile._gp_spline = gp
    profile._g_spline = PchipInterpolator(energies, g(energies) - offset, extrapolate=False)
    # the derivative of the re-fitted g must stay positive for f to exist
    if np.any(profile._g_spline.derivative()(np.linspace(energies[0], energies[-1], 512)) <= 0):
        raise ValueError("g is not monotone on the tabulated window")
    return profile


# ----------------------------------------------------------------------
# tori and clusters
@dataclass(frozen=True)
class TorusData:
    """Actions S and Maslov indices alpha of the fundamental cycles"""
    S: Tuple[float, float]
    alpha: Tuple[int, int]

    def theta(self, h: float) -> np.ndarray:
        return np.asarray(self.S, dtype=float) / (2.0 * math.pi * h) + np.asarray(self.alpha, dtype=float) / 4.0

    def xi(self, k: Sequence[int], h: float) -> Tuple[float, ...]:
        """h (k - alpha/4) - S / 2 pi, componentwise"""
        return tuple(_xi_component(h, kj, a, s) for kj, a, s in zip(k, self.alpha, self.S))


def _xi_component(h: float, k: int, alpha: int, S: float) -> float:
    return h * (k - alpha / 4.0) - S / (2.0 * math.pi)


SPHERE_S1 = 2.0 * math.pi
SPHERE_ALPHA1 = -2


def sphere_torus(reference_area: float = 0.0) -> TorusData:
    """Calibrated sphere defaults: xi1 = h(k + 1/2) - 1, xi2 relative to the reference curve"""
    return TorusData((SPHERE_S1, reference_area), (SPHERE_ALPHA1, -2))


def _cluster_center(profile: PeriodProfile, torus: TorusData, h: float, k1: int) -> float:
    return float(profile.f(_xi_component(h, k1, torus.alpha[0], torus.S[0])))


@dataclass(frozen=True)
class ClusterRectangle:
    k1: int
    center: float
    half_width_re: float
    half_width_im: float

    def contains(self, z: complex, im_center: float = 0.0) -> bool:
        z = complex(z)
        return abs(z.real - self.center) <= self.half_width_re and abs(z.imag - im_center) <= self.half_width_im


@dataclass
class ClusterRectangles:
    rectangles: List[ClusterRectangle]
    h: float
    epsilon: float

    def __len__(self) -> int:
        return len(self.rectangles)

    def centers(self) -> np.ndarray:
        return np.array([r.center for r in self.rectangles])

    @property
    def disjoint(self) -> bool:
        ordered = sorted(self.rectangles, key=lambda r: r.center)
        return all(b.center - a.center > a.half_width_re + b.half_width_re for a, b in zip(ordered, ordered[1:]))

    def by_k1(self, k1: int) -> Optional[ClusterRectangle]:
        return next((r for r in self.rectangles if r.k1 == k1), None)

    def locate(self, z: complex) -> Optional[ClusterRectangle]:
        return next((r for r in self.rectangles if r.contains(z)), None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "h": self.h,
            "epsilon": self.epsilon,
            "rectangles": [{"k1": r.k1, "center": r.center, "half_width_re": r.half_width_re,
                            "half_width_im": r.half_width_im} for r in self.rectangles],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClusterRectangles":
        rects = [ClusterRectangle(int(r["k1"]), float(r["center"]), float(r["half_width_re"]),
                                  float(r["half_width_im"])) for r in data["rectangles"]]
        return cls(rects, float(data["h"]), float(data["epsilon"]))


def _k1_range(profile: PeriodProfile, torus: TorusData, h: float, window: Window) -> range:
    lo, hi = window
    g_lo, g_hi = float(profile.g(max(lo, profile.window[0]))), float(profile.g(min(hi, profile.window[1])))
    shift = torus.alpha[0] / 4.0 + torus.S[0] / (2.0 * math.pi * h)
    return range(math.floor(g_lo / h + shift) - 1, math.ceil(g_hi / h + shift) + 2)


def cluster_rectangles(profile: PeriodProfile, torus: TorusData, h: float, epsilon: float, window: Window,
                       re_multiplier: float = RECTANGLE_RE_MULTIPLIER,
                       im_multiplier: float = RECTANGLE_IM_MULTIPLIER,
                       real_s: bool = False) -> ClusterRectangles:
    """
    Rectangles centred at f(h(k1 - alpha1/4) - S1/2pi) with half-widths
    C_re (eps^2 + h^2) and C_im (eps^2 + eps h), tightened to
    C_im (eps^3 + eps h) when <s> is real
    """
    if h <= 0 or epsilon <= 0:
        raise ValueError("h and epsilon must be positive")
    half_re = re_multiplier * (epsilon ** 2 + h ** 2)
    half_im = im_multiplier * ((epsilon ** 3 if real_s else epsilon ** 2) + epsilon * h)
    rects = []
    for k1 in _k1_range(profile, torus, h, window):
        try:
            center = _cluster_center(profile, torus, h, k1)
        except ValueError:
            continue
        if window[0] <= center <= window[1]:
            rects.append(ClusterRectangle(k1, center, half_re, half_im))
    result = ClusterRectangles(rects, h, epsilon)
    if not result.disjoint:
        logger.warning(f"Cluster rectangles overlap at h = {h}, eps = {epsilon}")
    logger.info(f"{len(rects)} cluster rectangles in window {window}")
    return result


# ----------------------------------------------------------------------
# quasi-eigenvalue lattices
@dataclass
class QuasiEigLattice:
    """
    Leading-order quasi-eigenvalues f(xi1) + eps^2 <s>(xi) + i(eps^3 <<t>> + h eps <<Im q1>>)

    Regimes: ``thm3.1`` (complex <s>, h/eps^2 clock), ``thm4.2``
    (h << eps << h^{1/2}), ``thm4.3`` (h^{1/2} << eps, needs <<t>>_inf) and
    ``thm4.4`` (eps ~ h^{1/2}, needs <<t>>_inf and <<Im q1>>_inf).  The names
    complex_s, subcluster, strong and balanced are accepted as aliases.
    """
    profile: PeriodProfile
    torus: TorusData
    h: float
    epsilon: float
    s_avg_of_xi: Optional[SOfXi] = None
    t_avg_inf: Optional[float] = None
    im_q1_avg_inf: Optional[float] = None
    regime: str = "thm4.2"
    xi_radius: float = 1.0

    def __post_init__(self):
        if self.h <= 0 or self.epsilon <= 0:
            raise ValueError("h and epsilon must be positive")
        self.regime = REGIME_ALIASES.get(self.regime, self.regime)
        if self.regime not in REGIMES:
            raise RegimeError(f"Unknown regime '{self.regime}', expected one of {REGIMES}")
        if self.regime in ("thm4.3", "thm4.4") and self.t_avg_inf is None:
            raise RegimeError(f"Regime '{self.regime}' needs <<t>>_inf")
        if self.regime == "thm4.4" and self.im_q1_avg_inf is None:
            raise RegimeError("Regime 'thm4.4' needs <<Im q1>>_inf")
        ratio = self.epsilon / math.sqrt(self.h)
        if self.regime == "thm4.2" and not (self.h < self.epsilon and ratio < 1.0):
            logger.warning(f"eps = {self.epsilon} is outside h << eps << h^(1/2) for h = {self.h}")
        if self.regime in ("thm4.3", "thm3.1") and ratio <= 1.0:
            logger.warning(f"eps = {self.epsilon} is not above h^(1/2) for h = {self.h}")

    def imaginary_shift(self) -> float:
        shift = 0.0
        if self.regime in ("thm4.3", "thm4.4"):
            shift += self.epsilon ** 3 * self.t_avg_inf
        if self.regime == "thm4.4":
            shift += self.h * self.epsilon * self.im_q1_avg_inf
        return shift


def quasi_lattice(lat: QuasiEigLattice, k_window: Tuple[Tuple[int, int], Tuple[int, int]]) -> List[Tuple[Tuple[int, int], complex]]:
    """Quasi-eigenvalues for k in the window whose xi(k) lies in the validity ball"""
    (k1_lo, k1_hi), (k2_lo, k2_hi) = k_window
    eps2 = lat.epsilon ** 2
    shift = lat.imaginary_shift()

    def row(k1: int) -> List[Tuple[Tuple[int, int], complex]]:
        out = []
        try:
            center = _cluster_center(lat.profile, lat.torus, lat.h, k1)
        except ValueError:
            return out
        xi1 = _xi_component(lat.h, k1, lat.torus.alpha[0], lat.torus.S[0])
        for k2 in range(k2_lo, k2_hi + 1):
            xi2 = _xi_component(lat.h, k2, lat.torus.alpha[1], lat.torus.S[1])
            if math.hypot(xi1, xi2) > lat.xi_radius:
                continue
            if lat.s_avg_of_xi is None:
                s = 0.0
            else:
                try:
                    s = complex(lat.s_avg_of_xi(xi1, xi2))
                except (ValueError, CriticalLevelError):
                    continue
            out.append(((k1, k2), complex(center + eps2 * s) + 1j * shift))
        return out

    with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
        rows = list(executor.map(row, range(k1_lo, k1_hi + 1)))
    points = [item for r in rows for item in r]
    logger.info(f"Quasi-eigenvalue lattice ({lat.regime}): {len(points)} points")
    return points


def lattice_audit(points: Sequence[Tuple[Tuple[int, int], complex]], lat: QuasiEigLattice,
                  rectangles: ClusterRectangles, s_range: Optional[Tuple[float, float]] = None,
                  slack_constant: float = SLACK_CONSTANT) -> Dict[str, Any]:
    """
    Real parts inside their cluster rectangle, and sub-cluster values
    eps^-2 (Re z - center) inside [min <s>, max <s>] up to C (eps + h/eps)
    """
    slack = slack_constant * (lat.epsilon + lat.h / lat.epsilon)
    outside, off_range = [], []
    for k, z in points:
        rect = rectangles.by_k1(k[0])
        if rect is None:
            continue
        if abs(complex(z).real - rect.center) > rect.half_width_re:
            outside.append(k)
        if s_range is not None:
            value = (complex(z).real - rect.center) / lat.epsilon ** 2
            if not s_range[0] - slack <= value <= s_range[1] + slack:
                off_range.append(k)
    if outside:
        logger.warning(f"{len(outside)} lattice points fall outside their cluster rectangle")
    return {"checked": len(points), "outside_rectangles": outside, "subcluster_out_of_range": off_range,
            "slack": slack}


# ----------------------------------------------------------------------
# barrier-top resonances
@dataclass(frozen=True)
class BarrierPoint:
    k: Tuple[int, int]
    E: complex
    excluded: bool


def action_function(s_avg: PolySymbol, lam: Sequence[int]) -> SOfXi:
    """
    (xi1, xi2) -> <s> for a symbol depending on the oscillator actions
    I_j = (x_j^2 + xi_j^2)/2 only, with I1 = xi2 and lam . I = gcd xi1 (n = 2)
    """
    flow = PeriodicFlow(tuple(lam))
    osc = s_avg if s_avg.frame == YETA else to_oscillator(s_avg)
    if osc.n != 2:
        raise ValueError("Action lattices are implemented for n = 2")
    # y_j eta_j = -i I_j
    coeffs = []
    for mono, c in osc.terms.items():
        if mono.xexp != mono.kexp:
            raise ValueError("<s> is not a function of the oscillator actions; supply a callable")
        coeffs.append((mono.xexp, to_complex(c) * (-1j) ** sum(mono.xexp)))
    l1, l2 = flow.lam

    def evaluate(xi1: float, xi2: float) -> complex:
        I1 = xi2
        I2 = (flow.gcd * xi1 - l1 * xi2) / l2
        if I1 < 0 or I2 < 0:
            raise ValueError(f"Negative action at xi = ({xi1}, {xi2})")
        return sum((c * I1 ** a * I2 ** b for (a, b), c in coeffs), 0j)

    return evaluate


def barrier_lattice(lam: Sequence[int], s_avg_of_xi: Optional[SOfXi], E0: float, h: float, epsilon: float,
                    k_window: Tuple[Tuple[int, int], Tuple[int, int]],
                    S: Tuple[float, float] = (0.0, 0.0), alpha: Tuple[int, int] = (-4, -2),
                    critical_values: Sequence[float] = (), eta: float = 0.1) -> List[BarrierPoint]:
    """
    E = E0 - i eps^2 p(xi1) + eps^4 <s>(xi) with p(xi1) = gcd(lam) xi1 and
    xi = (h/eps^2)(k - alpha/4) - S/2pi; values inside an exclusion parabola
    |Re E - E0 - A (Im E)^2| < eta (Im E)^2 are tagged
    """
    flow = PeriodicFlow(tuple(lam))
    if h <= 0 or epsilon <= 0:
        raise ValueError("h and epsilon must be positive")
    h_tilde = h / epsilon ** 2
    (k1_lo, k1_hi), (k2_lo, k2_hi) = k_window
    points = []
    for k1 in range(k1_lo, k1_hi + 1):
        xi1 = _xi_component(h_tilde, k1, alpha[0], S[0])
        for k2 in range(k2_lo, k2_hi + 1):
            xi2 = _xi_component(h_tilde, k2, alpha[1], S[1])
            try:
                s = complex(s_avg_of_xi(xi1, xi2)) if s_avg_of_xi is not None else 0.0
            except ValueError:
                continue
            E = complex(E0 - 1j * epsilon ** 2 * flow.gcd * xi1 + epsilon ** 4 * s)
            im2 = E.imag ** 2
            excluded = any(abs(E.real - E0 - A * im2) < eta * im2 for A in critical_values)
            points.append(BarrierPoint((k1, k2), E, excluded))
    logger.info(f"Barrier lattice: {len(points)} resonances, {sum(p.excluded for p in points)} in exclusion zones")
    return points


# ----------------------------------------------------------------------
# action coordinates on the reduced sphere
def _trace_period(flow: SecondaryFlow, y0: np.ndarray, max_time: float) -> float:
    """Return time of the level curve through y0"""
    v0 = flow.rhs(y0[None, :])[0]
    speed = float(np.linalg.norm(v0))
    if speed < 1e-12:
        raise CriticalLevelError(f"Level curve through {y0.tolist()} passes a critical point")
    normal = v0 / speed

    def field_fn(_t, y):
        return flow.rhs(y[None, :])[0]

    def crossing(_t, y):
        return float(np.dot(y - y0, normal))

    crossing.direction = 1.0
    guard = 1e-6 / speed
    t0, state, chunk = 0.0, y0.copy(), 2.0 * math.pi / speed
    while t0 < max_time:
        sol = solve_ivp(field_fn, (t0, t0 + chunk), state, events=crossing, rtol=ACTION_RTOL, atol=ACTION_ATOL)
        if not sol.success:
            raise CriticalLevelError(f"Contour tracing failed: {sol.message}")
        for te, ye in zip(sol.t_events[0], sol.y_events[0]):
            if te > guard and np.linalg.norm(ye - y0) < 1e-6:
                return float(te)
        t0, state, chunk = float(sol.t[-1]), sol.y[:, -1], 2.0 * chunk
    raise CriticalLevelError(f"Level curve through {y0.tolist()} did not close before t = {max_time}")


def _sublevel_area(flow: SecondaryFlow, y0: np.ndarray, max_time: float = 1e4) -> float:
    """
    Area of the side {s < F} of the level curve through y0.  The flow runs
    counterclockwise around the superlevel side, so the solid-angle integral
    of p . (y x dy) / (1 + y . p) is +area(superlevel side) or
    -area(sublevel side) depending on which side holds p.
    """
    period = _trace_period(flow, y0, max_time)

    def field_fn(_t, y):
        return flow.rhs(y[None, :])[0]

    samples = solve_ivp(field_fn, (0.0, period), y0, t_eval=np.linspace(0.0, period, 256),
                        rtol=ACTION_RTOL, atol=ACTION_ATOL).y.T
    mean = samples.mean(axis=0)
    if np.linalg.norm(mean) > 1e-3:
        pole = mean / np.linalg.norm(mean)
    else:
        pole = np.linalg.svd(samples)[2][-1]
    if float(np.min(1.0 + samples @ pole)) < 1e-3:
        raise CriticalLevelError("Level curve passes too close to the antipode of its centre")

    def augmented(_t, state):
        y = state[:3]
        ydot = flow.rhs(y[None, :])[0]
        return np.concatenate([ydot, [np.dot(pole, np.cross(y, ydot)) / (1.0 + np.dot(y, pole))]])

    sol = solve_ivp(augmented, (0.0, period), np.concatenate([y0, [0.0]]), rtol=ACTION_RTOL, atol=ACTION_ATOL)
    if not sol.success:
        raise CriticalLevelError(f"Area integration failed: {sol.message}")
    return float((-sol.y[3, -1]) % (4.0 * math.pi))


class ActionMap:
    """
    F -> xi2(1, F): the normalized action (sublevel area - reference area) / 2 pi
    of the level curve {s = F} on one Morse band of the reduced sphere
    """

    def __init__(self, s_reduced: PolySymbol, window: Window, reference_level: Optional[float] = None,
                 seed: Optional[Sequence[float]] = None, nodes: int = 33):
        if s_reduced.frame != ORBIT:
            raise FrameMismatchError("Action coordinates need a reduced-sphere symbol")
        lo, hi = float(window[0]), float(window[1])
        if not lo < hi:
            raise ValueError(f"Empty level window {window}")
        self.s = s_reduced
        self.window = (lo, hi)
        self.flow = SecondaryFlow(s_reduced)
        self.reference_level = 0.5 * (lo + hi) if reference_level is None else float(reference_level)
        if not lo <= self.reference_level <= hi:
            raise ValueError(f"Reference level {self.reference_level} outside window {window}")
        if seed is None:
            pts = fibonacci_sphere(4000)
            seed = pts[int(np.argmin(np.abs(self.flow.value(pts) - self.reference_level)))]
        self.seed = project_to_level(self.flow, np.asarray(seed, dtype=float), self.reference_level)
        self.reference_area = _sublevel_area(self.flow, self.seed)
        self._nodes = nodes
        self._table: Optional[PchipInterpolator] = None
        self._range: Optional[Tuple[float, float]] = None

    @property
    def reference_action(self) -> float:
        return self.reference_area / (2.0 * math.pi)

    def point_on_level(self, F: float) -> np.ndarray:
        lo, hi = self.window
        if not lo <= F <= hi:
            raise CriticalLevelError(f"Level {F} lies outside the regular band {self.window}")
        return project_to_level(self.flow, self.seed, F)

    def sublevel_area(self, F: float) -> float:
        return _sublevel_area(self.flow, self.point_on_level(F))

    def __call__(self, F: float) -> float:
        return (self.sublevel_area(F) - self.reference_area) / (2.0 * math.pi)

    def tabulate(self) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.window
        # Chebyshev nodes stay clear of the band edges
        theta = (np.arange(self._nodes) + 0.5) * math.pi / self._nodes
        levels = np.sort(0.5 * (lo + hi) - 0.5 * (hi - lo) * np.cos(theta))
        with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
            actions = np.array(list(executor.map(self, levels)))
        if np.any(np.diff(actions) <= 0):
            raise InvariantViolation("Action coordinate is not increasing on the band")
        return levels, actions

    def inverse(self, value: float, polish: bool = True) -> float:
        """Level F with xi2(1, F) = value"""
        if self._table is None:
            levels, actions = self.tabulate()
            self._table = PchipInterpolator(actions, levels, extrapolate=False)
            self._range = (float(actions[0]), float(actions[-1]))
        lo, hi = self._range
        if not lo <= value <= hi:
            raise ValueError(f"Action {value} outside the tabulated band [{lo}, {hi}]")
        guess = float(self._table(value))
        if not polish:
            return guess
        width = 1e-3 * (self.window[1] - self.window[0])
        a, b = max(self.window[0], guess - width), min(self.window[1], guess + width)
        fa, fb = self(a) - value, self(b) - value
        if fa * fb > 0:
            return guess
        return float(brentq(lambda F: self(F) - value, a, b, xtol=1e-13))


def action_coordinates(s_reduced: PolySymbol, F_window: Window, reference_level: Optional[float] = None,
                       seed: Optional[Sequence[float]] = None) -> ActionMap:
    """F -> xi2(1, F) on a regular band of s_reduced"""
    action_map = ActionMap(s_reduced, F_window, reference_level, seed)
    logger.info(f"Action map on band {action_map.window}: reference area {action_map.reference_area:.12g}")
    return action_map


class SphereActionSeries:
    """
    (xi1, xi2) -> <s> for the sphere lattice.  On p^{-1}(E), E = (xi1 + 1)^2,
    the reduced sphere has radius R = sqrt(E): actions scale with R and <s>
    with 1/E.
    """

    def __init__(self, action_map: ActionMap, polish: bool = False):
        self.action_map = action_map
        self.polish = polish

    def __call__(self, xi1: float, xi2: float) -> float:
        E = (xi1 + 1.0) ** 2
        R = math.sqrt(E)
        a0 = self.action_map.reference_action
        level = self.action_map.inverse((xi2 + a0) / R - a0, polish=self.polish)
        return level / E


def s_range_on_sphere(s_reduced: PolySymbol, samples: int = 20000) -> Tuple[float, float]:
    """Sampled [min, max] of a reduced symbol on |y| = 1"""
    if s_reduced.frame == XK:
        raise FrameMismatchError("Expected a reduced-sphere symbol")
    values = SecondaryFlow(s_reduced).value(fibonacci_sphere(samples))
    return float(values.min()), float(values.max())
