import math

import numpy as np
import pytest

import pipeline
from pipeline import RunRecord, SpectralPipeline
from symbolalg import x
from verify import SphereOperatorSpec, conjugation_pairing_distance, reported_eigenvalues, run_sphere_spectrum

X1 = x(3, 1)
H10 = 1.0 / math.sqrt(10 * 11)


def _spec(epsilon: float = 0.0) -> SphereOperatorSpec:
    return SphereOperatorSpec(H10, epsilon, X1, 4, 16, 2)


@pytest.fixture
def ready() -> SpectralPipeline:
    pipe = SpectralPipeline()
    ok, error = pipe.initialize(_spec())
    assert ok and error is None
    return pipe


def test_stages_need_initialization():
    pipe = SpectralPipeline()
    with pytest.raises(RuntimeError):
        pipe.run_spectrum()
    assert pipe.get_status()["initialized"] is False
    assert pipe.get_status()["dimension"] == 0


def test_clusters_need_spectrum(ready):
    with pytest.raises(RuntimeError):
        ready.verify_clusters()


def test_overlapping_rectangles_fail_initialization():
    pipe = SpectralPipeline()
    ok, error = pipe.initialize(_spec(epsilon=0.5))
    assert not ok
    assert "overlap" in error
    assert pipe.get_status()["initialization_error"] == error


def test_dimension_guard_fails_initialization(monkeypatch):
    monkeypatch.setattr(pipeline, "MAX_EIGEN_DIM", 3)
    ok, error = SpectralPipeline().initialize(_spec())
    assert not ok
    assert "guard" in error


def test_full_run(ready):
    eigs = ready.run_spectrum()
    assert len(eigs) == ready.spec.dimension
    report = ready.verify_clusters()
    assert [c.k1 for c in report.clusters] == list(range(6, 15))
    assert report.stats["conjugation_distance"] == 0.0
    assert report.stats["trace"] <= 1e-9
    distance = ready.oracle_check()
    assert distance >= 0.0
    assert report.stats["oracle"]["l"] == 10
    assert report.stats["oracle"]["constant"] == 0.0
    assert ready.leakage_check() >= 0.0
    assert "truncation_leakage" in report.stats

    status = ready.get_status()
    assert status["has_spectrum"] and status["has_report"]
    assert status["history_size"] == 4
    assert [r.stage for r in ready.history] == ["spectrum", "clusters", "oracle", "leakage"]


def test_conjugation_audit_uses_reported_window():
    spec = _spec(epsilon=0.02)
    pipe = SpectralPipeline()
    assert pipe.initialize(spec)[0]
    eigs = pipe.run_spectrum()
    report = pipe.verify_clusters()
    expected = conjugation_pairing_distance(reported_eigenvalues(eigs, spec))
    assert report.stats["conjugation_distance"] == expected
    assert report.stats["conjugation_distance"] == pytest.approx(
        run_sphere_spectrum(spec).audits["conjugation_distance"], abs=1e-12)


def test_sweep_solves_each_point(ready):
    results = ready.sweep([_spec(), SphereOperatorSpec(H10 / 2, 0.0, X1, 4, 16, 2)])
    assert [r["h"] for r in results] == [H10, H10 / 2]
    assert all(r["unassigned_count"] == 0 for r in results)


def test_history_is_bounded():
    pipe = SpectralPipeline(max_history_size=2)
    pipe.initialize(_spec())
    pipe.run_spectrum()
    pipe.verify_clusters(audits=False)
    pipe.leakage_check()
    assert [r.stage for r in pipe.history] == ["clusters", "leakage"]
    assert len(pipe.get_recent_history(1)) == 1


def test_history_stats_and_export(ready, tmp_path):
    assert ready.get_history_stats()["total_stages"] == 0
    assert ready.show_history() == "No pipeline history available."
    ready.run_spectrum()
    stats = ready.get_history_stats()
    assert stats["total_stages"] == 1
    assert stats["fastest_stage"] == stats["slowest_stage"]
    assert "Stage: spectrum" in ready.show_history()

    path = tmp_path / "history.txt"
    assert ready.export_history(str(path))
    assert "spectrum" in path.read_text()
    assert not ready.export_history(str(tmp_path / "missing" / "history.txt"))

    ready.clear_history()
    assert ready.history == []


def test_run_record_str_truncates():
    record = RunRecord("2026-01-01 00:00:00", "clusters", "c" * 80)
    assert str(record).endswith("...")
    assert np.isclose(record.processing_time, 0.0)
