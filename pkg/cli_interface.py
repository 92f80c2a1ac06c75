"""
Command-line surface: one argparse subcommand per operation
"""
import argparse
import math
from typing import Any, Callable, Dict, List, Optional

from averaging import PeriodicFlow, average, average_numeric, solve_homological, weighted_average_numeric
from colored_logger import log_error, log_info, log_warning, print_colored_success, setup_colored_logging
from config import (
    CRITICAL_SAMPLES, DEFAULT_L0, DEFAULT_LMAX, DEFAULT_LMIN, DEFAULT_PAD, DEFAULT_T0, DEFAULT_TMAX, MIN_PANELS,
    RECTANGLE_IM_MULTIPLIER, RECTANGLE_RE_MULTIPLIER, default_operating_point, load_config_file,
)
from corrections import (
    LongTimeAverage, barrier_s, check_global_hypothesis, critical_values_on_sphere3, third_correction,
)
from data_processor import (
    complex_pair, eigenvalues_from_frame, lattice_frame, load_lattice_csv, load_polynomial, load_spectrum_csv,
    parse_float_list, parse_int_list, polynomial_to_json, read_json, write_csv, write_json,
)
from errors import RegimeError
from pipeline import SpectralPipeline
from spectra import (
    REGIME_ALIASES, REGIMES, ClusterRectangles, QuasiEigLattice, SphereActionSeries, TorusData, action_coordinates,
    action_function, barrier_lattice, build_profile, cluster_rectangles, lattice_audit, quasi_lattice,
    s_range_on_sphere, sphere_torus,
)
from sphere import radon_average, reduce_to_circle_space, sphere_second_correction
from symbolalg import ORBIT, XK, YETA
from verify import (
    SphereOperatorSpec, damped_wave_preset, export, extract_clusters, sphere_cluster_rectangles,
    subcluster_distribution_test,
)

logger = setup_colored_logging(logger_name=__name__)


class Settings:
    """CLI flag > config file > built-in default"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = load_config_file(getattr(args, "config", None))

    def get(self, key: str, default: Any = None, cast: Callable = str) -> Any:
        value = getattr(self.args, key, None)
        if value is None:
            value = self.file.get(key)
        if value is None:
            return default
        return cast(value)


def _emit(payload: Any, out: Optional[str]):
    text = write_json(payload, out)
    if out:
        print_colored_success(f"Wrote {out}", include_timestamp=False)
    else:
        print(text)


def _window(text: Optional[str], label: str):
    values = parse_float_list(text)
    if len(values) != 2:
        raise ValueError(f"--{label} needs two comma-separated numbers")
    return values[0], values[1]


def _int_window(text: Optional[str], label: str):
    values = parse_int_list(text)
    if len(values) != 2:
        raise ValueError(f"--{label} needs two comma-separated integers")
    return values[0], values[1]


def _operating_point(cfg: Settings) -> Dict[str, float]:
    point = default_operating_point(cfg.get("l0", DEFAULT_L0, int))
    return {"h": cfg.get("h", point["h"], float), "eps": cfg.get("eps", point["eps"], float)}


def _sphere_spec(cfg: Settings) -> SphereOperatorSpec:
    point = _operating_point(cfg)
    q = load_polynomial(cfg.get("q"), n=3)
    return SphereOperatorSpec(point["h"], point["eps"], q, cfg.get("lmin", DEFAULT_LMIN, int),
                              cfg.get("lmax", DEFAULT_LMAX, int), cfg.get("pad", DEFAULT_PAD, int))


# ----------------------------------------------------------------------
# command handlers
def cmd_average(cfg: Settings) -> int:
    flow = PeriodicFlow.parse(cfg.get("flow"))
    f = load_polynomial(cfg.get("poly"), n=flow.n)
    if cfg.args.numeric:
        result = average_numeric(flow, f, cfg.get("panels", MIN_PANELS, int))
    else:
        result = average(flow, f)
    _emit(polynomial_to_json(result), cfg.get("out"))
    return 0


def cmd_homological(cfg: Settings) -> int:
    flow = PeriodicFlow.parse(cfg.get("flow"))
    f = load_polynomial(cfg.get("poly"), n=flow.n)
    if cfg.args.numeric:
        result = weighted_average_numeric(flow, f, cfg.get("panels", MIN_PANELS, int))
    else:
        result = solve_homological(flow, f, minimal=cfg.args.minimal)
    _emit(polynomial_to_json(result), cfg.get("out"))
    return 0


def cmd_corrections(cfg: Settings) -> int:
    flow = PeriodicFlow.parse(cfg.get("flow"))
    q = load_polynomial(cfg.get("q"), n=flow.n)
    r = load_polynomial(cfg.get("r"), n=flow.n) if cfg.get("r") else None
    w = load_polynomial(cfg.get("w"), n=flow.n) if cfg.get("w") else None
    _emit(third_correction(flow, q, r, w).to_dict(), cfg.get("out"))
    return 0


def cmd_hypothesis(cfg: Settings) -> int:
    bundle = LongTimeAverage.from_dict(read_json(cfg.get("bundle")))
    report = check_global_hypothesis(bundle, cfg.get("a", cast=float), parse_float_list(cfg.get("b")),
                                     t0=cfg.get("t0", DEFAULT_T0, float), t_max=cfg.get("tmax", DEFAULT_TMAX, float))
    _emit(report.to_dict(), cfg.get("out"))
    return 0


def cmd_sphere_radon(cfg: Settings) -> int:
    q = load_polynomial(cfg.get("q"), n=3)
    sigma = radon_average(q)
    _emit({"sigma_form": polynomial_to_json(sigma), "reduced_form": polynomial_to_json(reduce_to_circle_space(sigma))},
          cfg.get("out"))
    return 0


def cmd_sphere_s(cfg: Settings) -> int:
    q = load_polynomial(cfg.get("q"), n=3)
    sigma, reduced = sphere_second_correction(q)
    _emit({"sigma_form": polynomial_to_json(sigma), "reduced_form": polynomial_to_json(reduced)}, cfg.get("out"))
    return 0


def cmd_critical(cfg: Settings) -> int:
    frame = cfg.get("frame", XK)
    n = 3 if frame == ORBIT else 2
    s_avg = load_polynomial(cfg.get("s_avg"), n=n, frame=frame)
    lam = tuple(parse_int_list(cfg.get("flow", "1,1")))
    values = critical_values_on_sphere3(s_avg, lam, samples=cfg.get("samples", CRITICAL_SAMPLES, int))
    _emit({"critical_values": [{"value": v, **info} for v, info in values]}, cfg.get("out"))
    return 0


def _sphere_action_series(cfg: Settings):
    s_reduced = load_polynomial(cfg.get("s_avg"), n=3, frame=ORBIT)
    if cfg.get("band"):
        band = _window(cfg.get("band"), "band")
    else:
        s_min, s_max = s_range_on_sphere(s_reduced)
        margin = 0.05 * (s_max - s_min)
        band = (s_min + margin, s_max - margin)
        log_warning(f"No --band given; using {band}, which must contain no critical value")
    action_map = action_coordinates(s_reduced, band)
    action_map.tabulate()
    return s_reduced, action_map


def cmd_lattice(cfg: Settings) -> int:
    regime = cfg.get("regime", "thm4.2")
    profile_kind = cfg.get("profile", "sphere")
    h, eps = cfg.get("h", cast=float), cfg.get("eps", cast=float)
    if h is None or eps is None:
        raise ValueError("lattice needs --h and --eps")
    k1_window = _int_window(cfg.get("k1"), "k1")
    k2_window = _int_window(cfg.get("k2", "-1000,1000"), "k2")
    s_range = None
    if profile_kind == "sphere":
        profile = build_profile("sphere")
        _, action_map = _sphere_action_series(cfg)
        torus = sphere_torus(action_map.reference_area)
        s_of_xi = SphereActionSeries(action_map)
        s_range = action_map.window
    else:
        profile = build_profile(profile_kind, T0=cfg.get("t0_period", 2 * math.pi, float))
        torus_s = _window(cfg.get("S", "0,0"), "S")
        alpha = tuple(int(a) for a in _window(cfg.get("alpha", "0,0"), "alpha"))
        torus = TorusData(torus_s, alpha)
        s_of_xi = None
        if cfg.get("s_avg"):
            lam = tuple(parse_int_list(cfg.get("flow", "1,1")))
            s_of_xi = action_function(load_polynomial(cfg.get("s_avg"), n=2, frame=cfg.get("frame", XK)), lam)
    lat = QuasiEigLattice(profile, torus, h, eps, s_of_xi, cfg.get("t_inf", cast=float),
                          cfg.get("im_q1_inf", cast=float), regime, cfg.get("xi_radius", 1.0, float))
    points = quasi_lattice(lat, (k1_window, k2_window))
    if cfg.get("window"):
        rectangles = cluster_rectangles(profile, torus, h, eps, _window(cfg.get("window"), "window"),
                                        RECTANGLE_RE_MULTIPLIER, RECTANGLE_IM_MULTIPLIER)
        audit = lattice_audit(points, lat, rectangles, s_range)
        log_info(f"Lattice audit: {len(audit['outside_rectangles'])} points outside their rectangle")
    out = cfg.get("out")
    if out:
        write_csv(lattice_frame(points), out)
    else:
        print(lattice_frame(points).to_csv(index=False))
    return 0


def cmd_barrier(cfg: Settings) -> int:
    lam = tuple(parse_int_list(cfg.get("flow", "1,1")))
    flow = PeriodicFlow(lam)
    s_avg = barrier_s(flow, load_polynomial(cfg.get("p3"), n=flow.n), load_polynomial(cfg.get("p4"), n=flow.n))
    critical = [v for v, _ in critical_values_on_sphere3(s_avg, lam)] if cfg.args.exclusion else []
    points = barrier_lattice(lam, action_function(s_avg, lam), cfg.get("E0", 0.0, float), cfg.get("h", cast=float),
                             cfg.get("eps", cast=float),
                             (_int_window(cfg.get("k1"), "k1"), _int_window(cfg.get("k2"), "k2")),
                             critical_values=critical, eta=cfg.get("eta", 0.1, float))
    _emit({"s_avg": polynomial_to_json(s_avg), "critical_values": critical,
           "points": [{"k": list(p.k), "E": complex_pair(p.E), "excluded": p.excluded} for p in points]},
          cfg.get("out"))
    return 0


def cmd_spectrum(cfg: Settings) -> int:
    spec = _sphere_spec(cfg)
    pipeline = SpectralPipeline()
    ok, error = pipeline.initialize(spec)
    if not ok:
        raise RegimeError(error)
    eigs = pipeline.run_spectrum()
    out = cfg.get("out")
    if out:
        export(eigs, out, fmt="csv")
    else:
        _emit({"eigenvalues": [complex_pair(z) for z in eigs]}, None)
    if cfg.get("rectangles_out"):
        write_json(sphere_cluster_rectangles(spec).to_dict(), cfg.get("rectangles_out"))
    if cfg.get("history_out") and not pipeline.export_history(cfg.get("history_out")):
        log_error(f"Could not write the run history to {cfg.get('history_out')}")
        return 1
    return 0


def cmd_verify(cfg: Settings) -> int:
    eigs = eigenvalues_from_frame(load_spectrum_csv(cfg.get("spectrum")))
    rectangles = ClusterRectangles.from_dict(read_json(cfg.get("rectangles")))
    lattice = None
    if cfg.get("lattice"):
        df = load_lattice_csv(cfg.get("lattice"))
        lattice = [((int(r.k1), int(r.k2)), complex(r.re, r.im)) for r in df.itertuples()]
    report = extract_clusters(eigs, rectangles, lattice)
    if cfg.get("q"):
        _, s_reduced = sphere_second_correction(load_polynomial(cfg.get("q"), n=3))
        try:
            report.stats["subcluster_ks"] = subcluster_distribution_test(report, s_reduced).to_dict()
        except ValueError as e:
            log_warning(f"Sub-cluster law not tested: {e}")
    out = cfg.get("out")
    fmt = cfg.get("format", "json")
    if out:
        export(report, out, fmt=fmt, eigenvalues=eigs)
    else:
        _emit(report.to_dict(), None)
    return 0


def cmd_damped(cfg: Settings) -> int:
    a = load_polynomial(cfg.get("a_symbol"), n=3)
    report = damped_wave_preset(a, cfg.get("lmin", DEFAULT_LMIN, int), cfg.get("lmax", DEFAULT_LMAX, int),
                                cfg.get("pad", DEFAULT_PAD, int), cfg.get("h", cast=float))
    _emit(report.to_dict(), cfg.get("out"))
    return 0


COMMANDS: Dict[str, Callable[[Settings], int]] = {
    "average": cmd_average,
    "homological": cmd_homological,
    "corrections": cmd_corrections,
    "hypothesis": cmd_hypothesis,
    "sphere-radon": cmd_sphere_radon,
    "sphere-s": cmd_sphere_s,
    "critical": cmd_critical,
    "lattice": cmd_lattice,
    "barrier": cmd_barrier,
    "spectrum": cmd_spectrum,
    "verify": cmd_verify,
    "damped": cmd_damped,
}


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbitavg", description="Averaging along periodic flows and "
                                                                  "spectral cluster verification")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING, ...")
    common.add_argument("--out", help="output file (standard output when omitted)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("average", "trajectory average of a polynomial symbol")
    p.add_argument("--flow")
    p.add_argument("--poly")
    p.add_argument("--numeric", action="store_true")
    p.add_argument("--panels", type=int)

    p = add("homological", "time-weighted homological solution")
    p.add_argument("--flow")
    p.add_argument("--poly")
    p.add_argument("--minimal", action="store_true")
    p.add_argument("--numeric", action="store_true")
    p.add_argument("--panels", type=int)

    p = add("corrections", "second and third averaged corrections")
    p.add_argument("--flow")
    p.add_argument("--q")
    p.add_argument("--r")
    p.add_argument("--w")

    p = add("hypothesis", "scan double averages against the central curve")
    p.add_argument("--bundle")
    p.add_argument("--a", type=float)
    p.add_argument("--b")
    p.add_argument("--t0", type=float)
    p.add_argument("--tmax", type=float)

    p = add("sphere-radon", "great-circle average of a sphere symbol")
    p.add_argument("--q")

    p = add("sphere-s", "second averaged correction on the sphere")
    p.add_argument("--q")

    p = add("critical", "critical values of an averaged symbol")
    p.add_argument("--s-avg", dest="s_avg")
    p.add_argument("--flow")
    p.add_argument("--frame", choices=[XK, YETA, ORBIT])
    p.add_argument("--samples", type=int)

    p = add("lattice", "quasi-eigenvalue lattice")
    p.add_argument("--regime", choices=[*REGIMES, *REGIME_ALIASES])
    p.add_argument("--profile", choices=["constant", "sphere"])
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--s-avg", dest="s_avg")
    p.add_argument("--frame", choices=[XK, YETA])
    p.add_argument("--flow")
    p.add_argument("--band")
    p.add_argument("--S")
    p.add_argument("--alpha")
    p.add_argument("--t0-period", dest="t0_period", type=float)
    p.add_argument("--k1")
    p.add_argument("--k2")
    p.add_argument("--t-inf", dest="t_inf", type=float)
    p.add_argument("--im-q1-inf", dest="im_q1_inf", type=float)
    p.add_argument("--xi-radius", dest="xi_radius", type=float)
    p.add_argument("--window")

    p = add("barrier", "barrier-top resonance lattice")
    p.add_argument("--flow")
    p.add_argument("--p3")
    p.add_argument("--p4")
    p.add_argument("--E0", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--k1")
    p.add_argument("--k2")
    p.add_argument("--eta", type=float)
    p.add_argument("--exclusion", action="store_true", help="tag points near critical-value parabolas")

    p = add("spectrum", "eigenvalues of -h^2 Laplacian + i eps q on the sphere")
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--l0", type=int)
    p.add_argument("--q")
    p.add_argument("--lmin", type=int)
    p.add_argument("--lmax", type=int)
    p.add_argument("--pad", type=int)
    p.add_argument("--rectangles-out", dest="rectangles_out")
    p.add_argument("--history-out", dest="history_out", help="write the timed stage history to this text file")

    p = add("verify", "cluster a computed spectrum against predicted rectangles")
    p.add_argument("--spectrum")
    p.add_argument("--rectangles")
    p.add_argument("--lattice")
    p.add_argument("--q", help="perturbation, for the sub-cluster law")
    p.add_argument("--format", choices=["json", "csv"])

    p = add("damped", "symbol-level damped wave preset")
    p.add_argument("--a", dest="a_symbol")
    p.add_argument("--lmin", type=int)
    p.add_argument("--lmax", type=int)
    p.add_argument("--pad", type=int)
    p.add_argument("--h", type=float)
    return parser


def run_command(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and run one command; errors propagate to the caller"""
    args = build_parser().parse_args(argv)
    cfg = Settings(args)
    log_info(f"Running orbitavg {args.command}")
    return COMMANDS[args.command](cfg)
