"""
Data preparation, parsing and file I/O utilities
"""
import json
import os
import re
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor, parse_expr, standard_transformations,
)

from colored_logger import setup_colored_logging
from errors import DimensionMismatchError, FrameMismatchError
from scalars import ExactScalar, is_exact
from symbolalg import FRAMES, ORBIT, XK, YETA, Monomial, PolySymbol

logger = setup_colored_logging(logger_name=__name__)

_TRANSFORMATIONS = standard_transformations + (convert_xor,)

SPECTRUM_COLUMNS = ["index", "re", "im", "cluster_k1", "subcluster_value"]
LATTICE_COLUMNS = ["k1", "k2", "re", "im"]

# variable name prefixes per frame: (positions, momenta)
_PREFIXES = {XK: ("x", "k"), YETA: ("y", "eta"), ORBIT: ("y", None)}


# ----------------------------------------------------------------------
# expression parser
def _sympy_coefficient(value: sp.Expr):
    """Gaussian rationals stay exact, everything else becomes complex"""
    re_part, im_part = sp.re(value), sp.im(value)
    if re_part.is_Rational and im_part.is_Rational:
        return ExactScalar.rational(Fraction(int(re_part.p), int(re_part.q)),
                                    Fraction(int(im_part.p), int(im_part.q)))
    return complex(sp.N(value, 17))


def parse_polynomial(text: str, n: Optional[int] = None, frame: str = XK) -> PolySymbol:
    """
    Parse a human-friendly expression such as "3/2*x1^2*k2 - i*x2"

    Args:
        text: Expression in x1..xn, k1..kn (or y/eta, or y for the orbit frame)
        n: Dimension; inferred from the largest variable index when omitted
        frame: Target frame

    Returns:
        PolySymbol with exact coefficients where the input is rational
    """
    if frame not in FRAMES:
        raise FrameMismatchError(f"Unknown frame '{frame}'")
    xs, ks = _PREFIXES[frame]
    indices = [int(tok) for prefix in (xs, ks) if prefix
               for tok in _find_indices(text, prefix)]
    inferred = max(indices, default=1)
    if frame == ORBIT:
        inferred = max(inferred, 3)
    n = n or inferred
    if inferred > n:
        raise DimensionMismatchError(f"Expression uses index {inferred} but n = {n}")

    position = [sp.Symbol(f"{xs}{j}") for j in range(1, n + 1)]
    momentum = [sp.Symbol(f"{ks}{j}") for j in range(1, n + 1)] if ks else []
    local = {str(s): s for s in position + momentum}
    local.update({"i": sp.I, "I": sp.I})

    expr = parse_expr(text, local_dict=local, transformations=_TRANSFORMATIONS)
    free = expr.free_symbols - set(position) - set(momentum)
    if free:
        raise ValueError(f"Unknown symbols in expression: {sorted(str(s) for s in free)}")

    poly = sp.Poly(sp.expand(expr), *(position + momentum))
    items = []
    for exps, coeff in poly.terms():
        xexp = exps[:n]
        kexp = exps[n:] if momentum else (0,) * n
        items.append((xexp, kexp, _sympy_coefficient(coeff)))
    result = PolySymbol.from_terms(n, items, frame)
    logger.debug(f"Parsed '{text}' into {len(result.terms)} terms (n={n}, frame={frame})")
    return result


def _find_indices(text: str, prefix: str) -> List[str]:
    # 'eta' must not be read as a 'k'/'x' prefix and vice versa
    return re.findall(rf"(?<![A-Za-z]){prefix}(\d+)", text)


# ----------------------------------------------------------------------
# polynomial JSON
def _coefficient_to_json(c) -> Dict[str, Any]:
    if is_exact(c):
        return c.to_json()
    c = complex(c)
    return {"re": repr(c.real), "im": repr(c.imag)}


def _coefficient_from_json(data: Dict[str, Any]):
    if "parts" in data:
        return ExactScalar.from_json(data)
    re_s, im_s = str(data.get("re", "0")), str(data.get("im", "0"))
    try:
        return ExactScalar.rational(Fraction(re_s), Fraction(im_s)) if _is_rational_text(re_s, im_s) \
            else complex(float(re_s), float(im_s))
    except ValueError as exc:
        raise ValueError(f"Bad coefficient {data}") from exc


def _is_rational_text(*texts: str) -> bool:
    return all(not any(ch in t.lower() for ch in ".en") for t in texts)


def polynomial_to_json(f: PolySymbol) -> Dict[str, Any]:
    """Canonical on-disk form, terms in graded-lex order"""
    return {
        "n": f.n,
        "frame": f.frame,
        "terms": [
            {"xexp": list(m.xexp), "kexp": list(m.kexp), **_coefficient_to_json(c)}
            for m, c in f.sorted_terms()
        ],
    }


def polynomial_from_json(data: Dict[str, Any]) -> PolySymbol:
    n = int(data["n"])
    frame = data.get("frame", XK)
    terms = {}
    for term in data.get("terms", []):
        mono = Monomial(tuple(term["xexp"]), tuple(term["kexp"]))
        if mono in terms:
            raise ValueError(f"Duplicate monomial {mono} in polynomial JSON")
        terms[mono] = _coefficient_from_json(term)
    return PolySymbol(n, terms, frame)


def load_polynomial(source: str, n: Optional[int] = None, frame: str = XK) -> PolySymbol:
    """A .json path, any other existing file holding an expression, or an inline expression"""
    if not source:
        raise ValueError("No polynomial given")
    if os.path.exists(source):
        with open(source, "r", encoding="utf-8") as handle:
            content = handle.read()
        if source.endswith(".json"):
            poly = polynomial_from_json(json.loads(content))
            logger.info(f"Loaded polynomial from {source} ({len(poly.terms)} terms)")
            return poly
        return parse_polynomial(content.strip(), n=n, frame=frame)
    return parse_polynomial(source, n=n, frame=frame)


# ----------------------------------------------------------------------
# generic JSON with complex numbers
def complex_pair(z: complex) -> List[float]:
    z = complex(z)
    return [z.real, z.imag]


def pair_complex(pair: Sequence[float]) -> complex:
    return complex(float(pair[0]), float(pair[1]))


def _json_default(obj):
    if isinstance(obj, PolySymbol):
        return polynomial_to_json(obj)
    if isinstance(obj, ExactScalar):
        return obj.to_json()
    if isinstance(obj, (complex, np.complexfloating)):
        return complex_pair(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps_json(payload: Any) -> str:
    # json writes floats with repr, so the round trip is bit-exact
    return json.dumps(payload, default=_json_default, indent=2, sort_keys=False)


def write_json(payload: Any, path: Optional[str]) -> str:
    text = dumps_json(payload)
    if path:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
        logger.info(f"Wrote JSON to {path}")
    return text


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"JSON file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


# ----------------------------------------------------------------------
# CSV tables
def validate_columns(df: pd.DataFrame, required: Iterable[str], label: str) -> bool:
    """Validate that a table has the required columns"""
    missing = [col for col in required if col not in df.columns]
    if missing:
        logger.error(f"{label}: missing required columns {missing}")
        return False
    return True


def spectrum_frame(eigenvalues: Sequence[complex], cluster_k1: Optional[Sequence[int]] = None,
                   subcluster: Optional[Sequence[float]] = None) -> pd.DataFrame:
    eigs = np.asarray(eigenvalues, dtype=np.complex128).reshape(-1)
    count = eigs.size
    return pd.DataFrame({
        "index": np.arange(count, dtype=np.int64),
        "re": eigs.real,
        "im": eigs.imag,
        "cluster_k1": np.asarray(cluster_k1 if cluster_k1 is not None else [-1] * count, dtype=np.int64),
        "subcluster_value": np.asarray(subcluster if subcluster is not None else [np.nan] * count, dtype=float),
    }, columns=SPECTRUM_COLUMNS)


def lattice_frame(points: Sequence) -> pd.DataFrame:
    """points: iterable of ((k1, k2), z)"""
    rows = [{"k1": int(k[0]), "k2": int(k[1]), "re": complex(z).real, "im": complex(z).imag} for k, z in points]
    return pd.DataFrame(rows, columns=LATTICE_COLUMNS)


def write_csv(df: pd.DataFrame, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path


def load_spectrum_csv(path: str) -> pd.DataFrame:
    df = pd.read_csv(path)
    if not validate_columns(df, ["re", "im"], path):
        raise ValueError(f"{path} is not a spectrum table")
    logger.info(f"Loaded {len(df)} eigenvalues from {path}")
    return df


def load_lattice_csv(path: str) -> pd.DataFrame:
    df = pd.read_csv(path)
    if not validate_columns(df, LATTICE_COLUMNS, path):
        raise ValueError(f"{path} is not a lattice table")
    return df


def eigenvalues_from_frame(df: pd.DataFrame) -> np.ndarray:
    return df["re"].to_numpy(dtype=float) + 1j * df["im"].to_numpy(dtype=float)


def parse_float_list(text: str) -> List[float]:
    return [float(tok) for tok in str(text).replace(";", ",").split(",") if tok.strip()]


def parse_int_list(text: str) -> List[int]:
    return [int(tok) for tok in str(text).replace(";", ",").split(",") if tok.strip()]
