"""
Spectral pipeline with run history
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sparse

from colored_logger import log_critical, log_error, log_info, log_success, setup_colored_logging
from config import MAX_EIGEN_DIM, MAX_HISTORY_SIZE, MAX_THREADS
from errors import OrbitavgError, RegimeError
from symbolalg import PolySymbol
from verify import (
    ClusterReport, DistributionResult, SphereOperatorSpec, assemble, compute_spectrum, conjugation_pairing_distance,
    extract_clusters, oracle_distance, parity_blocks, perturbation_oracle, reported_eigenvalues, residual_probe,
    sphere_cluster_rectangles, subcluster_distribution_test, trace_audit, truncation_leakage, validate_recursion,
)

logger = setup_colored_logging(logger_name=__name__)


@dataclass
class RunRecord:
    """A single pipeline stage"""
    timestamp: str
    stage: str
    summary: str
    processing_time: float = 0.0

    def __str__(self) -> str:
        return f"[{self.timestamp}] {self.stage}: {self.summary[:60]}{'...' if len(self.summary) > 60 else ''}"


class SpectralPipeline:
    """
    Assembles and solves one sphere operator, then checks its clusters
    against the predicted rectangles, sub-cluster law and oracle
    """

    def __init__(self, max_history_size: int = MAX_HISTORY_SIZE):
        self.max_history_size = max_history_size
        self.history: List[RunRecord] = []
        self.spec: Optional[SphereOperatorSpec] = None
        self.matrix: Optional[sparse.csr_matrix] = None
        self.eigenvalues: Optional[np.ndarray] = None
        self.report: Optional[ClusterReport] = None
        self.is_initialized = False
        self.initialization_error: Optional[str] = None

        logger.debug(f"Spectral pipeline created with max history size: {max_history_size}")

    def initialize(self, spec: SphereOperatorSpec) -> Tuple[bool, Optional[str]]:
        """
        Validate the operating point before any heavy work

        Returns:
            Tuple of (success, error_message)
        """
        try:
            log_info(f"Initializing pipeline: h={spec.h:.5g}, eps={spec.epsilon:.5g}, "
                     f"l in [{spec.l_min}, {spec.l_max}], pad {spec.pad}")
            validate_recursion()
            largest = max(len(b) for b in parity_blocks(spec))
            if largest > MAX_EIGEN_DIM:
                raise RegimeError(f"Largest block has dimension {largest}, guard is {MAX_EIGEN_DIM}")
            rectangles = sphere_cluster_rectangles(spec)
            if not rectangles.disjoint:
                raise RegimeError("Cluster rectangles overlap at this operating point")
        except OrbitavgError as e:
            self.initialization_error = str(e)
            log_critical(f"Pipeline initialization failed: {e}")
            return False, self.initialization_error

        self.spec = spec
        self.matrix = None
        self.eigenvalues = None
        self.report = None
        self.is_initialized = True
        self.initialization_error = None
        log_success("Pipeline initialized")
        return True, None

    def _require(self, what: str):
        if not self.is_initialized:
            raise RuntimeError("Pipeline is not initialized")
        if what == "eigenvalues" and self.eigenvalues is None:
            raise RuntimeError("Run the spectrum stage first")

    def _record(self, stage: str, summary: str, start: datetime):
        processing_time = (datetime.now() - start).total_seconds()
        self.history.append(RunRecord(datetime.now().strftime('%Y-%m-%d %H:%M:%S'), stage, summary, processing_time))
        if len(self.history) > self.max_history_size:
            self.history.pop(0)
        log_success(f"{stage} finished in {processing_time:.2f} seconds")

    def run_spectrum(self) -> np.ndarray:
        self._require("spec")
        start = datetime.now()
        self.matrix = assemble(self.spec)
        self.eigenvalues = compute_spectrum(self.spec, self.matrix)
        self._record("spectrum", f"{len(self.eigenvalues)} eigenvalues", start)
        return self.eigenvalues

    def verify_clusters(self, re_multiplier: float = 3.0, im_multiplier: float = 10.0,
                        lattice: Optional[Sequence] = None, s_reduced: Optional[PolySymbol] = None,
                        audits: bool = True) -> ClusterReport:
        """Cluster extraction plus audits; the sub-cluster law is tested when s_reduced is given"""
        self._require("eigenvalues")
        start = datetime.now()
        rectangles = sphere_cluster_rectangles(self.spec, re_multiplier, im_multiplier)
        report = extract_clusters(reported_eigenvalues(self.eigenvalues, self.spec), rectangles, lattice)
        if audits:
            report.stats["trace"] = trace_audit(self.matrix, self.eigenvalues)
            report.stats["residual"] = residual_probe(self.matrix, self.eigenvalues)
            report.stats["conjugation_distance"] = conjugation_pairing_distance(
                reported_eigenvalues(self.eigenvalues, self.spec))
        if s_reduced is not None:
            try:
                result: DistributionResult = subcluster_distribution_test(report, s_reduced)
                report.stats["subcluster_ks"] = result.to_dict()
            except ValueError as e:
                log_error(f"Sub-cluster law not tested: {e}")
        self.report = report
        counts = [c.count for c in report.clusters]
        self._record("clusters", f"{len(counts)} clusters, counts {counts}", start)
        return report

    def oracle_check(self, l: Optional[int] = None) -> float:
        """Distance from the second-order oracle to the full spectrum for cluster l"""
        self._require("eigenvalues")
        start = datetime.now()
        lo, hi = self.spec.reported_window
        l = (lo + hi) // 2 if l is None else l
        distance = oracle_distance(self.eigenvalues, perturbation_oracle(self.spec, l))
        eps, h = self.spec.epsilon, self.spec.h
        constant = distance / (eps ** 3 + eps ** 2 * h) if eps else 0.0
        if self.report is not None:
            self.report.stats["oracle"] = {"l": l, "distance": distance, "constant": constant}
        self._record("oracle", f"l={l}, distance {distance:.3e}, C={constant:.3g}", start)
        return distance

    def leakage_check(self, extra: int = 2) -> float:
        self._require("eigenvalues")
        start = datetime.now()
        leakage = truncation_leakage(self.spec, self.eigenvalues, extra)
        if self.report is not None:
            self.report.stats["truncation_leakage"] = leakage
        self._record("leakage", f"pad +{extra}: {leakage:.3e}", start)
        return leakage

    def sweep(self, specs: Sequence[SphereOperatorSpec]) -> List[Dict[str, Any]]:
        """Cluster statistics for several operating points, solved in parallel"""
        start = datetime.now()

        def one(spec: SphereOperatorSpec) -> Dict[str, Any]:
            eigs = compute_spectrum(spec)
            report = extract_clusters(reported_eigenvalues(eigs, spec), sphere_cluster_rectangles(spec))
            return {"h": spec.h, "epsilon": spec.epsilon, **report.stats}

        with ThreadPoolExecutor(max_workers=MAX_THREADS) as executor:
            results = list(executor.map(one, specs))
        self._record("sweep", f"{len(results)} operating points", start)
        return results

    # ------------------------------------------------------------------
    def get_recent_history(self, count: int = 5) -> List[RunRecord]:
        return self.history[-count:] if self.history else []

    def show_history(self, count: int = 5) -> str:
        recent = self.get_recent_history(count)
        if not recent:
            return "No pipeline history available."
        lines = [f"Pipeline History (Last {len(recent)} stages)", "=" * 60]
        for i, record in enumerate(recent, 1):
            lines.extend([
                f"\n{i}. [{record.timestamp}] Processing: {record.processing_time:.2f}s",
                f"Stage: {record.stage}",
                f"Summary: {record.summary}",
                "-" * 40,
            ])
        return "\n".join(lines)

    def clear_history(self):
        self.history.clear()
        logger.info("Pipeline history cleared")

    def get_history_stats(self) -> Dict[str, Any]:
        if not self.history:
            return {"total_stages": 0, "avg_processing_time": 0.0, "oldest_stage": None, "newest_stage": None}
        times = [r.processing_time for r in self.history]
        return {
            "total_stages": len(self.history),
            "avg_processing_time": sum(times) / len(times),
            "oldest_stage": self.history[0].timestamp,
            "newest_stage": self.history[-1].timestamp,
            "fastest_stage": min(times),
            "slowest_stage": max(times),
        }

    def export_history(self, filename: Optional[str] = None) -> bool:
        """
        Export the run history to a text file

        Args:
            filename: Output filename (default: pipeline_history_YYYYMMDD_HHMMSS.txt)

        Returns:
            True if export successful, False otherwise
        """
        if filename is None:
            filename = f"pipeline_history_{datetime.now().strftime('%Y%m%d_%H%M%S')}.txt"
        try:
            with open(filename, 'w', encoding='utf-8') as f:
                f.write("orbitavg spectral pipeline - run history\n")
                f.write(f"Export Date: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
                f.write("=" * 60 + "\n\n")
                if not self.history:
                    f.write("No pipeline history available.\n")
                else:
                    stats = self.get_history_stats()
                    f.write(f"Total Stages: {stats['total_stages']}\n")
                    f.write(f"Average Processing Time: {stats['avg_processing_time']:.2f}s\n\n")
                    for i, record in enumerate(self.history, 1):
                        f.write(f"{i}. [{record.timestamp}] {record.stage} ({record.processing_time:.2f}s)\n")
                        f.write(f"{record.summary}\n")
                        f.write("-" * 40 + "\n\n")
            logger.info(f"History exported to {filename}")
            return True
        except OSError as e:
            logger.error(f"Error exporting history: {e}")
            return False

    def get_status(self) -> Dict[str, Any]:
        return {
            "initialized": self.is_initialized,
            "initialization_error": self.initialization_error,
            "dimension": self.spec.dimension if self.spec else 0,
            "has_spectrum": self.eigenvalues is not None,
            "has_report": self.report is not None,
            "history_size": len(self.history),
            "max_history_size": self.max_history_size,
        }
