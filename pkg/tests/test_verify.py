import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sparse

import verify
from errors import NonzeroAverageError, RegimeError
from spectra import ClusterRectangle, ClusterRectangles
from symbolalg import ORBIT, PolySymbol, x, xi
from verify import (
    ClusterEntry, ClusterReport, SphereOperatorSpec, assemble, basis_labels, complex_coordinate_matrices,
    compute_spectrum, conjugation_pairing_distance, damped_wave_preset, eigensolve, export,
    extract_clusters, import_report, multiplication_matrix, oracle_distance, parity_blocks,
    perturbation_oracle, real_coordinate_matrices, reported_eigenvalues, residual_probe, run_sphere_spectrum,
    subcluster_distribution_test, trace_audit, truncation_leakage, validate_recursion,
)

X1, X2, X3 = (x(3, j) for j in (1, 2, 3))
H10 = 1.0 / math.sqrt(10 * 11)


def _sphere_s():
    return x(3, 1, ORBIT) ** 2 * Fraction(3, 8) - Fraction(1, 8)


# ----------------------------------------------------------------------
# basis and coordinate operators
def test_three_term_recursion_matches_quadrature():
    assert validate_recursion() <= 1e-12


def test_x3_couples_constant_to_first_degree():
    Z3 = complex_coordinate_matrices(0, 1)[2].toarray()
    assert Z3[2, 0] == pytest.approx(1 / math.sqrt(3))
    assert Z3[0, 2] == pytest.approx(1 / math.sqrt(3))


def test_real_coordinate_matrices_are_real_symmetric():
    for X in real_coordinate_matrices(3, 9):
        assert not np.iscomplexobj(X.data)
        assert abs(X - X.T).max() <= 1e-14


def test_sum_of_squares_is_identity():
    r2 = multiplication_matrix(X1 ** 2 + X2 ** 2 + X3 ** 2, 2, 6).toarray()
    assert np.allclose(r2, np.eye(r2.shape[0]), atol=1e-12)


def test_basis_labels():
    labels = basis_labels(1, 2)
    assert labels[0] == (1, -1)
    assert len(labels) == 3 + 5


# ----------------------------------------------------------------------
# operator spec
def test_spec_window_and_dimension():
    spec = SphereOperatorSpec(H10, 0.01, X1, 4, 16, 2)
    assert spec.reported_window == (6, 14)
    assert spec.dimension == 17 ** 2 - 4 ** 2
    assert spec.energy(10) == pytest.approx(1.0)
    wider = spec.with_pad(2)
    assert wider.reported_window == spec.reported_window


def test_spec_validation():
    with pytest.raises(RegimeError):
        SphereOperatorSpec(H10, 0.01, X1 ** 3, 10, 30, 4)
    with pytest.raises(RegimeError):
        SphereOperatorSpec(H10, 0.01, X1, 10, 20, 6)
    with pytest.raises(ValueError):
        SphereOperatorSpec(H10, 0.01, X1 * xi(3, 1), 10, 30, 4)
    with pytest.raises(ValueError):
        SphereOperatorSpec(H10, 0.01, X1 ** 4, 10, 30, 8)
    with pytest.raises(ValueError):
        SphereOperatorSpec(0.0, 0.01, X1, 10, 30, 4)


def test_parity_blocks():
    even = SphereOperatorSpec(H10, 0.01, X1 * X2, 4, 12, 4)
    blocks = parity_blocks(even)
    assert len(blocks) == 2
    assert sum(len(b) for b in blocks) == even.dimension
    A = assemble(even).toarray()
    assert np.max(np.abs(A[np.ix_(blocks[0], blocks[1])])) == 0.0
    assert len(parity_blocks(SphereOperatorSpec(H10, 0.01, X3, 4, 12, 2))) == 1


# ----------------------------------------------------------------------
# eigensolve
def test_eigensolve_of_diagonal_is_exact():
    eigs = eigensolve(np.diag([3.0, 1 + 2j, 1 - 1j]))
    assert eigs.tolist() == [1 - 1j, 1 + 2j, 3 + 0j]


def test_eigensolve_of_similar_matrix(rng):
    values = np.array([1.0, 2 + 1j, 2 - 1j, -3.0, 0.5j])
    V = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    A = V @ np.diag(values) @ np.linalg.inv(V)
    expected = values[np.lexsort((values.imag, values.real))]
    assert np.max(np.abs(eigensolve(A) - expected)) <= 1e-9


@pytest.mark.parametrize("seed", range(50))
def test_eigensolve_recovers_constructed_spectrum(seed):
    gen = np.random.default_rng(1000 + seed)
    n = int(gen.integers(2, 65))
    values = gen.uniform(-5, 5, n) + 1j * gen.uniform(-5, 5, n)
    V = np.eye(n) + 0.2 * (gen.normal(size=(n, n)) + 1j * gen.normal(size=(n, n))) / math.sqrt(n)
    A = V @ np.diag(values) @ np.linalg.inv(V)
    eigs = eigensolve(A)
    assert len(eigs) == n
    assert oracle_distance(eigs, values) <= 1e-9
    assert oracle_distance(values, eigs) <= 1e-9


def test_eigensolve_guards(monkeypatch):
    assert eigensolve(np.zeros((0, 0))).shape == (0,)
    with pytest.raises(ValueError):
        eigensolve(np.zeros((2, 3)))
    monkeypatch.setattr(verify, "MAX_EIGEN_DIM", 3)
    with pytest.raises(RegimeError):
        eigensolve(np.eye(4))


def test_audits_on_random_matrix(rng):
    A = rng.normal(size=(40, 40)) + 1j * rng.normal(size=(40, 40))
    eigs = eigensolve(A)
    assert trace_audit(A, eigs) <= 1e-12
    assert residual_probe(A, eigs) <= 1e-10
    assert trace_audit(sparse.csr_matrix(A), eigs) == trace_audit(A, eigs)


def test_conjugation_pairing():
    assert conjugation_pairing_distance([1 + 1j, 1 - 1j, 2.0]) == 0.0
    assert conjugation_pairing_distance([1 + 1j]) == pytest.approx(2.0)
    assert conjugation_pairing_distance([]) == 0.0


# ----------------------------------------------------------------------
# clusters
@pytest.fixture(scope="module")
def unperturbed_run():
    return run_sphere_spectrum(SphereOperatorSpec(H10, 0.0, X1, 4, 16, 2))


def test_unperturbed_clusters_hold_full_degrees(unperturbed_run):
    report = unperturbed_run.report
    assert [c.k1 for c in report.clusters] == list(range(6, 15))
    for c in report.clusters:
        assert c.count == 2 * c.k1 + 1
        assert all(z == c.center for z in c.eigenvalues)
    assert report.stats["gap_rule_ok"]
    assert report.stats["unassigned_count"] == 0
    assert report.stats["blocks"] == [len(b) for b in parity_blocks(unperturbed_run.spec)]
    assert unperturbed_run.audits["conjugation_distance"] == 0.0


def test_extract_clusters_rejects_overlap():
    rects = ClusterRectangles([ClusterRectangle(1, 1.0, 0.5, 0.1), ClusterRectangle(2, 1.5, 0.5, 0.1)], 0.1, 0.1)
    with pytest.raises(RegimeError):
        extract_clusters([1.0], rects)
    with pytest.raises(ValueError):
        extract_clusters([1.0], ClusterRectangles([], 0.1, 0.1))


def test_extract_clusters_stats():
    rects = ClusterRectangles([ClusterRectangle(k, float(k), 0.1, 0.1) for k in (1, 2, 3)], 0.1, 0.2)
    eigs = [1.05 + 0.01j, 0.98 - 0.01j, 2.0, 2.3, 3.01, 9.0]
    lattice = [((1, 0), 1.0 + 0j), ((2, 0), 2.0 + 0j), ((3, 0), 3.0 + 0j)]
    report = extract_clusters(eigs, rects, lattice=lattice)
    assert report.stats["counts"] == [[1, 2], [2, 1], [3, 1]]
    assert report.stats["out_of_window"] == 1
    assert report.stats["unassigned_count"] == 1
    assert report.unassigned == [2.3 + 0j]
    assert report.cluster(1).subcluster_values == pytest.approx([0.05 / 0.04, -0.02 / 0.04])
    assert report.stats["lattice_distance"] == pytest.approx(abs(0.05 + 0.01j))
    assert report.central().k1 == 2
    k1, _ = report.assignment([2.0, 2.3])
    assert k1 == [2, -1]


def _synthetic_report(values, center=1.0, k1=10):
    entry = ClusterEntry(k1, center, [complex(center + v) for v in values], 0.0, 0.0, list(values))
    return ClusterReport([entry], h=1e-3, epsilon=1.0)


def test_subcluster_law_matches_pushforward():
    u = -1.0 + (2.0 * np.arange(200) + 1.0) / 200.0
    report = _synthetic_report(3.0 / 8.0 * u ** 2 - 1.0 / 8.0)
    result = subcluster_distribution_test(report, _sphere_s())
    assert result.statistic <= 0.05
    assert result.count == 200
    assert not result.degenerate


def test_subcluster_law_requirements():
    report = _synthetic_report([0.0] * 5)
    with pytest.raises(ValueError):
        subcluster_distribution_test(report, _sphere_s())
    with pytest.raises(ValueError):
        subcluster_distribution_test(_synthetic_report([0.0] * 30), X1)
    with pytest.raises(ValueError):
        subcluster_distribution_test(_synthetic_report([0.0] * 30), _sphere_s(), k1=99)


def test_subcluster_law_of_constant_symbol():
    report = _synthetic_report([0.25] * 30)
    result = subcluster_distribution_test(report, PolySymbol.constant(3, Fraction(1, 4), ORBIT))
    assert result.degenerate
    assert result.statistic == 0.0


# ----------------------------------------------------------------------
# second-order oracle
def test_oracle_agrees_for_small_epsilon():
    spec = SphereOperatorSpec(H10, 1e-4, X1, 4, 14, 2)
    assert oracle_distance(compute_spectrum(spec), perturbation_oracle(spec, 9)) <= 1e-9


def test_oracle_for_x3_depends_on_m_squared():
    spec = SphereOperatorSpec(H10, 1e-3, X3, 4, 14, 2)
    l = 9
    oracle = perturbation_oracle(spec, l)
    values = np.sort(oracle.real)
    assert np.count_nonzero(np.diff(values) > 1e-10) + 1 == l + 1
    assert oracle_distance(compute_spectrum(spec), oracle) <= 1e-8


def test_oracle_window():
    spec = SphereOperatorSpec(H10, 1e-3, X1, 4, 14, 2)
    with pytest.raises(RegimeError):
        perturbation_oracle(spec, 4)


# ----------------------------------------------------------------------
# export
def test_report_csv_has_one_row_per_eigenvalue(unperturbed_run, tmp_path):
    report = unperturbed_run.report
    path = export(report, str(tmp_path / "clusters.csv"), "csv")
    count = sum(c.count for c in report.clusters) + len(report.unassigned)
    with open(path) as handle:
        assert len(handle.read().splitlines()) == count + 1


def test_empty_spectrum_exports_header(tmp_path):
    path = export(np.zeros(0, dtype=complex), str(tmp_path / "empty.csv"), "csv")
    with open(path) as handle:
        assert len(handle.read().splitlines()) == 1


def test_report_json_round_trip(unperturbed_run, tmp_path):
    report = unperturbed_run.report
    path = export(report, str(tmp_path / "report.json"))
    assert import_report(path) == report


def test_lattice_export(tmp_path):
    path = export([((1, 2), 0.5 + 0.1j), ((1, 3), 0.6 - 0.1j)], str(tmp_path / "lattice.csv"), "csv")
    with open(path) as handle:
        assert len(handle.read().splitlines()) == 3
    with pytest.raises(ValueError):
        export([], str(tmp_path / "x.txt"), "txt")


def test_damped_wave_needs_odd_damping():
    with pytest.raises(NonzeroAverageError):
        damped_wave_preset(X3 ** 2, 10, 20, 4)


# ----------------------------------------------------------------------
@pytest.mark.slow
def test_sphere_acceptance_run():
    l0 = 40
    h = 1.0 / math.sqrt(l0 * (l0 + 1))
    eps = h ** 0.7
    run = run_sphere_spectrum(SphereOperatorSpec(h, eps, X1, 30, 50, 6))
    report = run.report
    assert [c.k1 for c in report.clusters] == list(range(36, 45))
    for c in report.clusters:
        assert c.count == 2 * c.k1 + 1
        assert c.width_re <= 3 * (eps ** 2 + h ** 2)
        assert c.width_im <= 10 * eps * h
    assert report.stats["unassigned_count"] == 0
    assert run.audits["conjugation_distance"] <= 1e-9

    slack = 5 * (eps + h / eps)
    for c in report.clusters:
        scaled = np.asarray(c.subcluster_values) * c.center
        assert scaled.min() >= -1 / 8 - slack
        assert scaled.max() <= 1 / 4 + slack
    assert subcluster_distribution_test(report, _sphere_s(), k1=l0).statistic <= 0.1

    assert run.audits["residual"] <= 1e-8
    assert run.audits["trace"] <= 1e-8
    assert truncation_leakage(run.spec, run.eigenvalues) < 1e-8
    reported = reported_eigenvalues(run.eigenvalues, run.spec)
    assert np.max(np.abs(reported.imag)) <= 10 * eps * h
    for l in (36, l0, 44):
        oracle = perturbation_oracle(run.spec, l)
        assert oracle_distance(run.eigenvalues, oracle) <= 20 * (eps ** 3 + eps ** 2 * h)
