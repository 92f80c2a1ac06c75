import json
import math
from fractions import Fraction

import numpy as np
import pytest

from config import default_operating_point, load_config_file
from data_processor import (
    dumps_json, eigenvalues_from_frame, lattice_frame, load_lattice_csv, load_polynomial, load_spectrum_csv,
    parse_float_list, parse_int_list, parse_polynomial, polynomial_from_json, polynomial_to_json, read_json,
    spectrum_frame, write_csv, write_json,
)
from errors import DimensionMismatchError, FrameMismatchError
from scalars import I, PI, SQRT2
from symbolalg import ORBIT, YETA, PolySymbol, x, xi


# ----------------------------------------------------------------------
# parser
def test_parse_exact_expression():
    f = parse_polynomial("3/2*x1^2*k2 - i*x2")
    assert f.n == 2
    assert f == x(2, 1) ** 2 * xi(2, 2) * Fraction(3, 2) - x(2, 2) * I


def test_parse_infers_and_checks_dimension():
    assert parse_polynomial("x1^3").n == 1
    assert parse_polynomial("x1^3", n=3) == x(3, 1) ** 3
    with pytest.raises(DimensionMismatchError):
        parse_polynomial("x3 + k1", n=2)


def test_parse_other_frames():
    assert parse_polynomial("y1*eta1", frame=YETA) == x(1, 1, YETA) * xi(1, 1, YETA)
    f = parse_polynomial("3/8*y1^2 - 1/8", frame=ORBIT)
    assert f == x(3, 1, ORBIT) ** 2 * Fraction(3, 8) - Fraction(1, 8)
    with pytest.raises(FrameMismatchError):
        parse_polynomial("x1", frame="polar")


def test_parse_rejects_unknown_symbols():
    with pytest.raises(ValueError):
        parse_polynomial("x1 + z")


def test_parse_float_coefficient():
    f = parse_polynomial("0.25*x1")
    assert not f.is_exact()
    assert [complex(c) for c in f.terms.values()] == [0.25]


# ----------------------------------------------------------------------
# polynomial JSON
def test_polynomial_json_round_trip():
    f = x(2, 1) ** 2 * (PI * SQRT2) + xi(2, 2) * Fraction(-7, 3) + x(2, 2) * 0.1
    data = json.loads(json.dumps(polynomial_to_json(f)))
    assert polynomial_from_json(data) == f
    assert data["frame"] == "xk"


def test_polynomial_json_rejects_duplicates():
    term = {"xexp": [1], "kexp": [0], "re": "1", "im": "0"}
    with pytest.raises(ValueError):
        polynomial_from_json({"n": 1, "frame": "xk", "terms": [term, term]})


def test_load_polynomial_sources(tmp_path):
    f = x(2, 1) * xi(2, 1) * Fraction(1, 3)
    json_path = tmp_path / "q.json"
    write_json(polynomial_to_json(f), str(json_path))
    assert load_polynomial(str(json_path)) == f
    text_path = tmp_path / "q.txt"
    text_path.write_text("1/3*x1*k1\n")
    assert load_polynomial(str(text_path), n=2) == f
    assert load_polynomial("1/3*x1*k1", n=2) == f


# ----------------------------------------------------------------------
# generic JSON and CSV
def test_dumps_json_handles_numeric_types():
    payload = {"z": 1 + 2j, "a": np.arange(3), "n": np.int64(4), "v": np.float64(0.5),
               "p": PolySymbol.constant(1, 2)}
    data = json.loads(dumps_json(payload))
    assert data["z"] == [1.0, 2.0]
    assert data["a"] == [0, 1, 2]
    assert data["n"] == 4
    assert data["p"]["terms"][0]["re"] == "2"
    with pytest.raises(TypeError):
        dumps_json({"s": {1, 2}})


def test_read_json_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_json(str(tmp_path / "missing.json"))


def test_spectrum_csv_round_trip(tmp_path):
    eigs = np.array([1 / 3 + 1e-17j, math.pi - 2.5j, -0.1])
    path = write_csv(spectrum_frame(eigs, [1, 2, -1], [0.5, -0.25, float("nan")]), str(tmp_path / "s" / "spec.csv"))
    df = load_spectrum_csv(path)
    assert list(df.columns) == ["index", "re", "im", "cluster_k1", "subcluster_value"]
    assert np.array_equal(eigenvalues_from_frame(df), eigs)
    assert df["cluster_k1"].tolist() == [1, 2, -1]


def test_spectrum_csv_needs_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_spectrum_csv(str(path))


def test_lattice_csv(tmp_path):
    path = write_csv(lattice_frame([((3, 1), 0.5 + 0.25j)]), str(tmp_path / "lattice.csv"))
    df = load_lattice_csv(path)
    assert df.iloc[0].tolist() == [3, 1, 0.5, 0.25]


def test_list_parsers():
    assert parse_float_list("0.1, 0.2;0.3") == [0.1, 0.2, 0.3]
    assert parse_int_list("1,2,") == [1, 2]


# ----------------------------------------------------------------------
# configuration
def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("h = 0.01\neps=0.2\nrectangles-out=rects.json\nbogus = 3\n")
    values = load_config_file(str(path))
    assert values == {"h": "0.01", "eps": "0.2", "rectangles_out": "rects.json"}
    assert load_config_file(None) == {}
    with pytest.raises(FileNotFoundError):
        load_config_file(str(tmp_path / "absent.cfg"))


def test_default_operating_point():
    point = default_operating_point(40)
    assert point["h"] ** 2 * 40 * 41 == pytest.approx(1.0)
    assert point["eps"] == pytest.approx(point["h"] ** 0.7)
