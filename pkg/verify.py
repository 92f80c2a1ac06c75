"""
Ground-truth spectra of -h^2 Laplacian + i eps q(x) on the 2-sphere in a real
spherical-harmonic basis, cluster extraction and comparison with the
analytic predictions
"""
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import LinAlgError, eigvals, hessenberg, lu_factor, lu_solve, matrix_balance
from scipy.spatial import cKDTree
from scipy.special import lpmv, roots_legendre
from scipy.stats import kstest

from colored_logger import setup_colored_logging
from config import LEAKAGE_TOL, MAX_EIGEN_DIM, MAX_THREADS, SLACK_CONSTANT
from corrections import fibonacci_sphere
from data_processor import (
    complex_pair, lattice_frame, pair_complex, read_json, spectrum_frame, write_csv, write_json,
)
from errors import EigensolveError, InvariantViolation, NonzeroAverageError, RegimeError
from spectra import ClusterRectangle, ClusterRectangles, s_range_on_sphere
from sphere import radon_average, sphere_second_correction
from symbolalg import ORBIT, XK, NumericPolynomial, PolySymbol

logger = setup_colored_logging(logger_name=__name__)

RECURSION_CHECK_DEGREE = 10
RECURSION_TOL = 1e-12


@dataclass
class SphereOperatorSpec:
    """P = -h^2 Laplacian + i eps q(x) on degrees [l_min, l_max]; pad degrees at each end are not reported"""
    h: float
    epsilon: float
    q: PolySymbol
    l_min: int
    l_max: int
    pad: int

    def __post_init__(self):
        if self.h <= 0 or self.epsilon < 0:
            raise ValueError("h must be positive and epsilon non-negative")
        if self.q.frame != XK or self.q.n != 3 or any(m.kdegree for m in self.q.terms):
            raise ValueError("q must be a polynomial in x1, x2, x3")
        if self.q.degree() > 3:
            raise ValueError(f"q has degree {self.q.degree()}, at most 3 is supported")
        if self.l_min < 0 or self.l_max < self.l_min:
            raise ValueError(f"Bad degree range [{self.l_min}, {self.l_max}]")
        if self.pad < 2 * self.q.degree():
            raise RegimeError(f"pad = {self.pad} is below 2 deg q = {2 * self.q.degree()}")
        lo, hi = self.reported_window
        if lo > hi:
            raise RegimeError(f"Reported window [{lo}, {hi}] is empty for pad = {self.pad}")

    @property
    def reported_window(self) -> Tuple[int, int]:
        return self.l_min + self.pad, self.l_max - self.pad

    @property
    def dimension(self) -> int:
        return (self.l_max + 1) ** 2 - self.l_min ** 2

    def with_pad(self, extra: int) -> "SphereOperatorSpec":
        """Same reported window with ``extra`` more degrees on each side"""
        return SphereOperatorSpec(self.h, self.epsilon, self.q, max(0, self.l_min - extra), self.l_max + extra,
                                  self.pad + extra)

    def energy(self, l: int) -> float:
        return self.h ** 2 * l * (l + 1)


# ----------------------------------------------------------------------
# basis and coordinate operators
def basis_labels(l_lo: int, l_hi: int) -> List[Tuple[int, int]]:
    """(l, m) in degree order, m from -l to l"""
    return [(l, m) for l in range(l_lo, l_hi + 1) for m in range(-l, l + 1)]


def _offset(l_lo: int, l: int) -> int:
    return l * l - l_lo * l_lo


def _coordinate_triplets(l: int, l_lo: int, l_hi: int) -> Tuple[List, List]:
    """Three-term couplings leaving degree l: (row, col, value) for x3 and for x1 + i x2"""
    z3, zp = [], []
    src = _offset(l_lo, l)
    for m in range(-l, l + 1):
        col = src + m + l
        if l + 1 <= l_hi:
            up = _offset(l_lo, l + 1) + l + 1
            a = math.sqrt(((l + 1) ** 2 - m * m) / ((2 * l + 1) * (2 * l + 3)))
            z3.append((up + m, col, a))
            z3.append((col, up + m, a))
            zp.append((up + m + 1, col, -math.sqrt((l + m + 1) * (l + m + 2) / ((2 * l + 1) * (2 * l + 3)))))
        if l - 1 >= l_lo and m + 1 <= l - 1:
            down = _offset(l_lo, l - 1) + l - 1
            zp.append((down + m + 1, col, math.sqrt((l - m) * (l - m - 1) / ((2 * l - 1) * (2 * l + 1)))))
    return z3, zp


def _to_sparse(triplets: List, dim: int) -> sparse.csr_matrix:
    if not triplets:
        return sparse.csr_matrix((dim, dim), dtype=np.complex128)
    rows, cols, vals = zip(*triplets)
    return sparse.csr_matrix((np.asarray(vals, dtype=np.complex128), (rows, cols)), shape=(dim, dim))


def complex_coordinate_matrices(l_lo: int, l_hi: int) -> List[sparse.csr_matrix]:
    """x1, x2, x3 in the complex basis Y_l^m (Condon-Shortley phase)"""
    dim = (l_hi + 1) ** 2 - l_lo ** 2
    with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
        parts = list(executor.map(lambda l: _coordinate_triplets(l, l_lo, l_hi), range(l_lo, l_hi + 1)))
    Z3 = _to_sparse([t for z3, _ in parts for t in z3], dim)
    Zp = _to_sparse([t for _, zp in parts for t in zp], dim)
    Zm = Zp.conj().T.tocsr()
    return [((Zp + Zm) * 0.5).tocsr(), ((Zp - Zm) * (-0.5j)).tocsr(), Z3]


def real_transform(l_lo: int, l_hi: int) -> sparse.csr_matrix:
    """
    Rows are real harmonics: for mu > 0, S_mu = (Y^-mu + (-1)^mu Y^mu)/sqrt2 and
    S_-mu = i (Y^-mu - (-1)^mu Y^mu)/sqrt2; S_0 = Y^0
    """
    rows, cols, vals = [], [], []
    s = 1.0 / math.sqrt(2.0)
    for l in range(l_lo, l_hi + 1):
        base = _offset(l_lo, l) + l
        rows.append(base)
        cols.append(base)
        vals.append(1.0)
        for mu in range(1, l + 1):
            sign = (-1) ** mu
            rows += [base + mu, base + mu, base - mu, base - mu]
            cols += [base - mu, base + mu, base - mu, base + mu]
            vals += [s, sign * s, 1j * s, -1j * sign * s]
    dim = (l_hi + 1) ** 2 - l_lo ** 2
    return sparse.csr_matrix((np.asarray(vals, dtype=np.complex128), (rows, cols)), shape=(dim, dim))


def real_coordinate_matrices(l_lo: int, l_hi: int) -> List[sparse.csr_matrix]:
    """x1, x2, x3 in the real basis: real symmetric"""
    U = real_transform(l_lo, l_hi)
    out = []
    for Z in complex_coordinate_matrices(l_lo, l_hi):
        X = (U.conj() @ Z @ U.T).tocsr()
        if X.nnz and float(np.max(np.abs(X.data.imag))) > 1e-13:
            raise InvariantViolation("Real-basis coordinate matrix has an imaginary part")
        X = sparse.csr_matrix(X.real)
        X.eliminate_zeros()
        out.append(X)
    return out


# ----------------------------------------------------------------------
# quadrature validation of the three-term coefficients
def _harmonic_values(l_max: int, z: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Y_l^m on the product grid, rows in basis order from degree 0"""
    rows = []
    for l, m in basis_labels(0, l_max):
        am = abs(m)
        norm = math.sqrt((2 * l + 1) / (4.0 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
        values = norm * lpmv(am, l, z)[:, None] * np.exp(1j * am * phi)[None, :]
        if m < 0:
            values = (-1) ** am * np.conj(values)
        rows.append(values.reshape(-1))
    return np.array(rows)


def quadrature_coordinate_matrix(l_max: int, coordinate: int) -> np.ndarray:
    """<Y_l'^m'| x_j |Y_l^m> by Gauss-Legendre in cos(theta) times the trapezoid rule in phi"""
    nodes, weights = roots_legendre(2 * l_max + 4)
    n_phi = 2 * l_max + 4
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(1.0 - nodes ** 2)
    coords = [np.outer(sin_t, np.cos(phi)), np.outer(sin_t, np.sin(phi)), np.outer(nodes, np.ones(n_phi))]
    w = np.outer(weights, np.full(n_phi, 2.0 * math.pi / n_phi)).reshape(-1)
    Y = _harmonic_values(l_max, nodes, phi)
    return (Y.conj() * (w * coords[coordinate].reshape(-1))[None, :]) @ Y.T


@lru_cache(maxsize=1)
def validate_recursion(l_max: int = RECURSION_CHECK_DEGREE) -> float:
    """Max deviation of the three-term matrices from quadrature; raises above 1e-12"""
    recursion = complex_coordinate_matrices(0, l_max)
    worst = 0.0
    for j in range(3):
        gap = float(np.max(np.abs(recursion[j].toarray() - quadrature_coordinate_matrix(l_max, j))))
        worst = max(worst, gap)
    if worst > RECURSION_TOL:
        raise InvariantViolation(f"Three-term coefficients deviate from quadrature by {worst:.2e}")
    logger.debug(f"Three-term recursion validated to {worst:.1e} for l <= {l_max}")
    return worst


# ----------------------------------------------------------------------
# assembly
def multiplication_matrix(q: PolySymbol, l_lo: int, l_hi: int) -> sparse.csr_matrix:
    """q(x) on degrees [l_lo, l_hi], computed on a window widened by deg q and compressed"""
    d = q.degree()
    lo, hi = max(0, l_lo - d), l_hi + d
    X = real_coordinate_matrices(lo, hi)
    dim = (hi + 1) ** 2 - lo ** 2
    powers: Dict[Tuple[int, int], sparse.csr_matrix] = {}

    def power(j: int, e: int) -> sparse.csr_matrix:
        if (j, e) not in powers:
            powers[(j, e)] = sparse.identity(dim, format="csr") if e == 0 else (power(j, e - 1) @ X[j]).tocsr()
        return powers[(j, e)]

    total = sparse.csr_matrix((dim, dim), dtype=np.complex128)
    for mono, c in q.sorted_terms():
        a1, a2, a3 = mono.xexp
        total = total + complex(c) * (power(0, a1) @ power(1, a2) @ power(2, a3))
    start = _offset(lo, l_lo)
    stop = start + (l_hi + 1) ** 2 - l_lo ** 2
    return total.tocsr()[start:stop, start:stop]


def assemble(spec: SphereOperatorSpec) -> sparse.csr_matrix:
    """D + i eps Q in the degree-ordered real basis (block tridiagonal in l for linear q)"""
    validate_recursion()
    degrees = np.array([l for l, _ in basis_labels(spec.l_min, spec.l_max)], dtype=float)
    D = sparse.diags(spec.h ** 2 * degrees * (degrees + 1.0)).astype(np.complex128)
    A = (D + 1j * spec.epsilon * multiplication_matrix(spec.q, spec.l_min, spec.l_max)).tocsr()
    logger.info(f"Assembled {spec.dimension}x{spec.dimension} operator, {A.nnz} nonzeros")
    return A


def parity_blocks(spec: SphereOperatorSpec) -> List[np.ndarray]:
    """Basis indices split by (-1)^(l+|m|) when q is even in x3, else one block"""
    labels = basis_labels(spec.l_min, spec.l_max)
    if any(m.xexp[2] % 2 for m in spec.q.terms):
        return [np.arange(len(labels))]
    parity = np.array([(l + abs(m)) % 2 for l, m in labels])
    return [np.flatnonzero(parity == p) for p in (0, 1) if np.any(parity == p)]


# ----------------------------------------------------------------------
# eigenvalues
def _order(eigs: np.ndarray) -> np.ndarray:
    return eigs[np.lexsort((eigs.imag, eigs.real))]


def eigensolve(A) -> np.ndarray:
    """
    Eigenvalues by balancing, unitary Hessenberg reduction and LAPACK's
    shifted QR, ordered by real then imaginary part
    """
    A = A.toarray() if sparse.issparse(A) else np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > MAX_EIGEN_DIM:
        raise RegimeError(f"Dimension {n} exceeds the eigensolve guard {MAX_EIGEN_DIM}")
    if n == 0:
        return np.zeros(0, dtype=np.complex128)
    A = A.astype(np.complex128)
    if not np.any(A - np.diag(np.diag(A))):
        return _order(np.diag(A).copy())
    balanced, _ = matrix_balance(A, permute=True, scale=True)
    H = hessenberg(balanced)
    try:
        eigs = eigvals(H, overwrite_a=True, check_finite=True)
    except LinAlgError as exc:
        match = re.search(r"(\d+)", str(exc))
        raise EigensolveError(f"QR iteration did not converge: {exc}",
                              stuck_index=int(match.group(1)) if match else None) from exc
    return _order(eigs)


def compute_spectrum(spec: SphereOperatorSpec, A: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    """Eigenvalues of the assembled operator, solved per parity block in parallel"""
    A = assemble(spec) if A is None else A
    blocks = parity_blocks(spec)

    def solve(idx: np.ndarray) -> np.ndarray:
        return eigensolve(A[idx][:, idx])

    with ThreadPoolExecutor(max_workers=min(MAX_THREADS, len(blocks))) as executor:
        parts = list(executor.map(solve, blocks))
    logger.info(f"Eigensolve over {len(blocks)} block(s) of sizes {[len(b) for b in blocks]}")
    return _order(np.concatenate(parts))


# ----------------------------------------------------------------------
# audits
def residual_probe(A, eigs: Sequence[complex], sample: int = 10, seed: int = 7, iterations: int = 4) -> float:
    """max over sampled z of sigma_min(A - zI) / ||A||, by inverse iteration"""
    A = A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=np.complex128)
    eigs = np.asarray(eigs)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(eigs), size=min(sample, len(eigs)), replace=False)
    norm = float(np.linalg.norm(A, 1)) or 1.0
    worst = 0.0
    identity = np.eye(A.shape[0])
    for z in eigs[picks]:
        shifted = A - z * identity
        # a shift that hits z exactly makes LU singular
        lu = lu_factor(shifted + 1e-14 * norm * identity, check_finite=False)
        v = rng.normal(size=A.shape[0]) + 1j * rng.normal(size=A.shape[0])
        v /= np.linalg.norm(v)
        for _ in range(iterations):
            v = lu_solve(lu, v)
            v /= np.linalg.norm(v)
        worst = max(worst, float(np.linalg.norm(shifted @ v)) / norm)
    return worst


def trace_audit(A, eigs: Sequence[complex]) -> float:
    """|sum of eigenvalues - trace| / (||A|| n)"""
    dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
    n = dense.shape[0]
    norm = float(np.linalg.norm(dense, 1)) or 1.0
    return float(abs(np.sum(eigs) - np.trace(dense))) / (norm * max(n, 1))


def conjugation_pairing_distance(eigs: Sequence[complex]) -> float:
    """Hausdorff distance between the spectrum and its complex conjugate"""
    eigs = np.asarray(eigs)
    if not len(eigs):
        return 0.0
    points = np.column_stack([eigs.real, eigs.imag])
    distances, _ = cKDTree(points).query(np.column_stack([eigs.real, -eigs.imag]))
    return float(np.max(distances))


def reported_eigenvalues(eigs: np.ndarray, spec: SphereOperatorSpec) -> np.ndarray:
    lo, hi = spec.reported_window
    e_lo = 0.5 * (spec.energy(lo - 1) + spec.energy(lo)) if lo > 0 else -math.inf
    e_hi = 0.5 * (spec.energy(hi) + spec.energy(hi + 1))
    return eigs[(eigs.real > e_lo) & (eigs.real < e_hi)]


def truncation_leakage(spec: SphereOperatorSpec, eigs: Optional[np.ndarray] = None, extra: int = 2) -> float:
    """Change of the reported eigenvalues when the pad grows by ``extra`` degrees"""
    eigs = compute_spectrum(spec) if eigs is None else np.asarray(eigs)
    wider = compute_spectrum(spec.with_pad(extra))
    a, b = reported_eigenvalues(eigs, spec), reported_eigenvalues(wider, spec)
    if len(a) != len(b):
        logger.warning(f"Reported eigenvalue counts differ under padding: {len(a)} vs {len(b)}")
    if not len(a) or not len(b):
        return 0.0
    distances, _ = cKDTree(np.column_stack([b.real, b.imag])).query(np.column_stack([a.real, a.imag]))
    leakage = float(np.max(distances))
    if leakage > LEAKAGE_TOL:
        logger.warning(f"Truncation leakage {leakage:.2e} exceeds {LEAKAGE_TOL:.0e}")
    return leakage


# ----------------------------------------------------------------------
# clusters
@dataclass
class ClusterEntry:
    k1: int
    center: float
    eigenvalues: List[complex]
    width_re: float
    width_im: float
    subcluster_values: List[float]

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k1": self.k1,
            "center": self.center,
            "eigenvalues": [complex_pair(z) for z in self.eigenvalues],
            "width_re": self.width_re,
            "width_im": self.width_im,
            "subcluster_values": list(self.subcluster_values),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClusterEntry":
        return cls(int(data["k1"]), float(data["center"]), [pair_complex(p) for p in data["eigenvalues"]],
                   float(data["width_re"]), float(data["width_im"]), [float(v) for v in data["subcluster_values"]])


@dataclass
class ClusterReport:
    clusters: List[ClusterEntry]
    h: float
    epsilon: float
    unassigned: List[complex] = field(default_factory=list)
    stats: Dict[str, Any] = field(default_factory=dict)

    def cluster(self, k1: int) -> Optional[ClusterEntry]:
        return next((c for c in self.clusters if c.k1 == k1), None)

    def central(self) -> ClusterEntry:
        return self.clusters[len(self.clusters) // 2]

    def assignment(self, eigs: Sequence[complex]) -> Tuple[List[int], List[float]]:
        """cluster k1 (or -1) and sub-cluster value per eigenvalue"""
        lookup = {}
        for c in self.clusters:
            for z, v in zip(c.eigenvalues, c.subcluster_values):
                lookup[complex(z)] = (c.k1, v)
        pairs = [lookup.get(complex(z), (-1, float("nan"))) for z in eigs]
        return [k for k, _ in pairs], [v for _, v in pairs]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "h": self.h,
            "epsilon": self.epsilon,
            "clusters": [c.to_dict() for c in self.clusters],
            "unassigned": [complex_pair(z) for z in self.unassigned],
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClusterReport":
        return cls([ClusterEntry.from_dict(c) for c in data["clusters"]], float(data["h"]), float(data["epsilon"]),
                   [pair_complex(p) for p in data.get("unassigned", [])], dict(data.get("stats", {})))


def sphere_cluster_rectangles(spec: SphereOperatorSpec, re_multiplier: float = 3.0,
                              im_multiplier: float = 10.0) -> ClusterRectangles:
    """Rectangles centred at h^2 l(l+1) over the reported window"""
    lo, hi = spec.reported_window
    h, eps = spec.h, spec.epsilon
    rects = [ClusterRectangle(l, spec.energy(l), re_multiplier * (eps ** 2 + h ** 2), im_multiplier * eps * h)
             for l in range(lo, hi + 1)]
    return ClusterRectangles(rects, h, eps)


def extract_clusters(eigs: Sequence[complex], rectangles: ClusterRectangles,
                     lattice: Optional[Sequence[Tuple[Tuple[int, int], complex]]] = None) -> ClusterReport:
    """
    Assign eigenvalues to the nearest cluster centre.  Eigenvalues beyond
    half a spacing outside the outermost centres are out of window; those
    farther than the real half-width from their centre are unassigned.
    """
    if not rectangles.disjoint:
        raise RegimeError(f"Cluster rectangles overlap at h = {rectangles.h}, eps = {rectangles.epsilon}")
    rects = sorted(rectangles.rectangles, key=lambda r: r.center)
    if not rects:
        raise ValueError("No cluster rectangles to assign to")
    eigs = np.asarray(eigs, dtype=np.complex128)
    centers = np.array([r.center for r in rects])
    gaps = np.diff(centers)
    max_half = max(r.half_width_re for r in rects)
    gap_rule = bool(len(gaps) == 0 or gaps.min() > 4.0 * max_half)
    if not gap_rule:
        logger.warning("Cluster gap is below 4x the cluster half-width; assignment flagged")
    edge = 0.5 * (gaps.min() if len(gaps) else 4.0 * max_half)
    inside = (eigs.real >= centers[0] - edge) & (eigs.real <= centers[-1] + edge)
    window_eigs = eigs[inside]

    nearest = np.abs(window_eigs.real[:, None] - centers[None, :]).argmin(axis=1) if len(window_eigs) else []
    members: Dict[int, List[complex]] = {i: [] for i in range(len(rects))}
    unassigned = []
    for z, i in zip(window_eigs, nearest):
        if abs(z.real - centers[i]) <= rects[i].half_width_re:
            members[i].append(complex(z))
        else:
            unassigned.append(complex(z))

    eps2 = rectangles.epsilon ** 2
    clusters = []
    for i, r in enumerate(rects):
        zs = members[i]
        re_dev = [abs(z.real - r.center) for z in zs]
        clusters.append(ClusterEntry(
            r.k1, r.center, zs,
            width_re=max(re_dev, default=0.0),
            width_im=max((abs(z.imag) for z in zs), default=0.0),
            subcluster_values=[(z.real - r.center) / eps2 if eps2 else 0.0 for z in zs],
        ))

    h, eps = rectangles.h, rectangles.epsilon
    stats: Dict[str, Any] = {
        "gap_rule_ok": gap_rule,
        "out_of_window": int((~inside).sum()),
        "unassigned_count": len(unassigned),
        "counts": [[c.k1, c.count] for c in clusters],
        "width_constant_re": max((c.width_re for c in clusters), default=0.0) / (eps ** 2 + h ** 2),
        "width_constant_im": (max((c.width_im for c in clusters), default=0.0) / (eps * h)) if eps else 0.0,
    }
    if lattice:
        lattice_pts = np.array([[complex(z).real, complex(z).imag] for _, z in lattice])
        assigned = np.array([[z.real, z.imag] for c in clusters for z in c.eigenvalues])
        if len(assigned):
            distances, _ = cKDTree(lattice_pts).query(assigned)
            stats["lattice_distance"] = float(np.max(distances))
    if unassigned:
        logger.warning(f"{len(unassigned)} eigenvalues fall outside every cluster rectangle")
    logger.info(f"Extracted {len(clusters)} clusters, counts {[c.count for c in clusters]}")
    return ClusterReport(clusters, h, eps, unassigned, stats)


# ----------------------------------------------------------------------
# sub-cluster law
@dataclass
class DistributionResult:
    statistic: float
    pvalue: float
    count: int
    k1: int
    degenerate: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"statistic": self.statistic, "pvalue": self.pvalue, "count": self.count, "k1": self.k1,
                "degenerate": self.degenerate}


def pushforward_cdf(s_reduced: PolySymbol, samples: int = 200000):
    """CDF of s under the uniform measure on |y| = 1, from a quasi-uniform sample"""
    values = np.sort(np.real(NumericPolynomial(s_reduced)(fibonacci_sphere(samples))))
    return lambda x: np.searchsorted(values, x, side="right") / len(values)


def subcluster_distribution_test(report: ClusterReport, s_reduced: PolySymbol, k1: Optional[int] = None,
                                 min_count: int = 20, slack_constant: float = SLACK_CONSTANT) -> DistributionResult:
    """
    Kolmogorov-Smirnov distance between a cluster's sub-cluster values,
    rescaled by its energy, and the pushforward law of s_reduced
    """
    if s_reduced.frame != ORBIT:
        raise ValueError("Expected a reduced-sphere symbol")
    entry = report.central() if k1 is None else report.cluster(k1)
    if entry is None:
        raise ValueError(f"No cluster with k1 = {k1}")
    if entry.count < min_count:
        raise ValueError(f"Cluster {entry.k1} holds {entry.count} eigenvalues, at least {min_count} needed")
    values = np.asarray(entry.subcluster_values) * entry.center
    if s_reduced.degree() == 0:
        constant = float(np.real(NumericPolynomial(s_reduced)(np.array([[0.0, 0.0, 1.0]]))[0]))
        slack = slack_constant * (report.epsilon + report.h / report.epsilon)
        inside = bool(np.all(np.abs(values - constant) <= slack))
        return DistributionResult(0.0 if inside else 1.0, 1.0 if inside else 0.0, entry.count, entry.k1, True)
    result = kstest(values, pushforward_cdf(s_reduced))
    logger.info(f"Sub-cluster KS distance for cluster {entry.k1}: {result.statistic:.4f}")
    return DistributionResult(float(result.statistic), float(result.pvalue), entry.count, entry.k1)


# ----------------------------------------------------------------------
# second-order oracle
def perturbation_oracle(spec: SphereOperatorSpec, l: int, A: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    """Eigenvalues of E_l + i eps X_PP + (i eps)^2 X_PQ (E_l - D_Q)^{-1} X_QP on the degree-l block"""
    lo, hi = spec.reported_window
    if not lo <= l <= hi:
        raise RegimeError(f"Degree {l} is outside the reported window [{lo}, {hi}]")
    X = multiplication_matrix(spec.q, spec.l_min, spec.l_max).toarray()
    labels = basis_labels(spec.l_min, spec.l_max)
    degrees = np.array([d for d, _ in labels])
    P, Q = np.flatnonzero(degrees == l), np.flatnonzero(degrees != l)
    E_l = spec.energy(l)
    denominators = E_l - spec.h ** 2 * degrees[Q] * (degrees[Q] + 1.0)
    if np.any(np.abs(denominators) < 1e-14):
        raise InvariantViolation("Degenerate denominator in the second-order oracle")
    X_PQ = X[np.ix_(P, Q)]
    effective = (E_l * np.eye(len(P)) + 1j * spec.epsilon * X[np.ix_(P, P)]
                 - spec.epsilon ** 2 * (X_PQ / denominators[None, :]) @ X[np.ix_(Q, P)])
    return eigensolve(effective)


def oracle_distance(full: Sequence[complex], oracle: Sequence[complex]) -> float:
    """One-sided Hausdorff distance from oracle eigenvalues to the full spectrum"""
    full = np.asarray(full)
    oracle = np.asarray(oracle)
    distances, _ = cKDTree(np.column_stack([full.real, full.imag])).query(np.column_stack([oracle.real, oracle.imag]))
    return float(np.max(distances)) if len(distances) else 0.0


# ----------------------------------------------------------------------
# end-to-end sphere run
@dataclass
class SphereRun:
    spec: SphereOperatorSpec
    eigenvalues: np.ndarray
    report: ClusterReport
    audits: Dict[str, Any]


def run_sphere_spectrum(spec: SphereOperatorSpec, re_multiplier: float = 3.0, im_multiplier: float = 10.0,
                        audits: bool = True) -> SphereRun:
    A = assemble(spec)
    eigs = compute_spectrum(spec, A)
    report = extract_clusters(reported_eigenvalues(eigs, spec), sphere_cluster_rectangles(spec, re_multiplier, im_multiplier))
    checks: Dict[str, Any] = {"dimension": spec.dimension, "blocks": [len(b) for b in parity_blocks(spec)]}
    if audits:
        checks["trace"] = trace_audit(A, eigs)
        checks["residual"] = residual_probe(A, eigs)
        checks["conjugation_distance"] = conjugation_pairing_distance(reported_eigenvalues(eigs, spec))
    report.stats.update(checks)
    return SphereRun(spec, eigs, report, checks)


def damped_wave_preset(a: PolySymbol, l_min: int, l_max: int, pad: int, h: Optional[float] = None,
                       l0: Optional[int] = None) -> ClusterReport:
    """
    Symbol-level damped wave run: q = 2a with eps = h (sqrt z taken as 1);
    experimental, the spectral-parameter dependence of the damping is dropped
    """
    if not radon_average(a).is_zero():
        raise NonzeroAverageError("Damping must be odd (zero great-circle average)", list(radon_average(a).terms))
    if h is None:
        l0 = l0 if l0 is not None else (l_min + l_max) // 2
        h = 1.0 / math.sqrt(l0 * (l0 + 1))
    q = a * 2
    spec = SphereOperatorSpec(h, h, q, l_min, l_max, pad)
    run = run_sphere_spectrum(spec)
    _, s_reduced = sphere_second_correction(q)
    s_min, s_max = s_range_on_sphere(s_reduced)
    values = [v * c.center for c in run.report.clusters for v in c.subcluster_values]
    run.report.stats.update({
        "experimental": True,
        "s_range": [s_min, s_max],
        "subcluster_spread": [min(values, default=0.0), max(values, default=0.0)],
        "im_bound_constant": max((c.width_im for c in run.report.clusters), default=0.0) / (h ** 2),
    })
    logger.warning("Damped-wave preset drops the spectral-parameter dependence of the damping")
    return run.report


# ----------------------------------------------------------------------
# export / import
def export(obj, path: str, fmt: str = "json", eigenvalues: Optional[Sequence[complex]] = None) -> str:
    """
    ClusterReport -> JSON, or CSV of its spectrum with assignments; an
    eigenvalue array -> spectrum CSV; a lattice list -> lattice CSV
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"Unknown export format '{fmt}'")
    if isinstance(obj, ClusterReport):
        if fmt == "json":
            write_json(obj.to_dict(), path)
            return path
        eigs = np.asarray(eigenvalues if eigenvalues is not None
                          else [z for c in obj.clusters for z in c.eigenvalues] + list(obj.unassigned))
        k1, values = obj.assignment(eigs)
        return write_csv(spectrum_frame(eigs, k1, values), path)
    if isinstance(obj, np.ndarray) or (isinstance(obj, (list, tuple)) and (not obj or not isinstance(obj[0], tuple))):
        eigs = np.asarray(obj, dtype=np.complex128)
        if fmt == "json":
            write_json({"eigenvalues": [complex_pair(z) for z in eigs]}, path)
            return path
        return write_csv(spectrum_frame(eigs), path)
    if fmt == "json":
        write_json({"lattice": [{"k": list(k), "z": complex_pair(z)} for k, z in obj]}, path)
        return path
    return write_csv(lattice_frame(obj), path)


def import_report(path: str) -> ClusterReport:
    return ClusterReport.from_dict(read_json(path))
