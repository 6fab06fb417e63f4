import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qicloak import engine as E
from qicloak.errors import ConfigError, InvalidParameterError
from qicloak.params import ProtocolParams
from qicloak.report_io import SweepTable, emit_table, parse_config, read_table

MINIMAL = """
protocol = classical
N = 0.1
n_th = 1
eta = 0.9
phi = 0.5
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.protocol == "classical"
    assert cfg.params == ProtocolParams(N=0.1, n_th=1, eta=0.9, phi=0.5, G=1.1, chi=1.0)
    assert cfg.tolerance == 1e-5 and cfg.oracle_dim_cap == 4096 and cfg.oracle_enabled
    assert cfg.auto_gain and cfg.axes == ()


def test_comments_and_optional_keys():
    cfg = parse_config(MINIMAL + "G = 1.3  # explicit\nchi=0.5\ntolerance = 1e-7\ndim_cap = 900\noracle = off\n")
    assert cfg.params.G == 1.3 and cfg.params.chi == 0.5
    assert (cfg.tolerance, cfg.oracle_dim_cap, cfg.oracle_enabled, cfg.auto_gain) == (1e-7, 900, False, False)


def test_sweep_axis_keeps_order():
    cfg = parse_config(MINIMAL + "sweep.N = 0.001, 0.01,0.1\nsweep.eta = 0.9, 0.5\n")
    assert cfg.axes == (("N", (0.001, 0.01, 0.1)), ("eta", (0.9, 0.5)))


def test_swept_parameter_may_replace_scalar():
    cfg = parse_config("protocol = quantum_quadrature\nn_th = 1\neta = 0.9\nphi = 1\nsweep.N = 0.2, 0.3\n")
    assert cfg.params.N == 0.2


@pytest.mark.parametrize(
    "text, key, line",
    [
        (MINIMAL.replace("eta = 0.9", "eta = 1.5"), "eta", 5),
        (MINIMAL + "colour = red\n", "colour", 7),
        (MINIMAL.replace("N = 0.1", "N = 0.1.2"), "N", 3),
        (MINIMAL.replace("N = 0.1", "N = nan"), "N", 3),
        (MINIMAL + "sweep.gain = 1, 2\n", "sweep.gain", 7),
        (MINIMAL + "sweep.N = \n", "sweep.N", 7),
        (MINIMAL + "tolerance = -1\n", "tolerance", 7),
        (MINIMAL + "dim_cap = 10.5\n", "dim_cap", 7),
        (MINIMAL + "oracle = maybe\n", "oracle", 7),
        (MINIMAL.replace("protocol = classical", "protocol = radar"), "protocol", 2),
    ],
)
def test_config_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key and info.value.line == line
    assert f"'{key}'" in str(info.value) and f"line {line}" in str(info.value)


@pytest.mark.parametrize("key", ["protocol", "phi"])
def test_missing_required_key(key):
    text = "\n".join(l for l in MINIMAL.splitlines() if not l.startswith(key + " "))
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key


def test_line_without_equals():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "just words\n")
    assert info.value.line == 7


def _table(rows=None):
    rows = rows if rows is not None else [dict.fromkeys(E.SWEEP_COLUMNS, 0.1)]
    return SweepTable(E.SWEEP_COLUMNS, rows, {"protocol": "classical"})


def test_empty_table_is_header_only():
    text = emit_table(_table([]), "csv")
    assert text == ",".join(E.SWEEP_COLUMNS) + "\n"


def test_column_order_contract():
    assert E.SWEEP_COLUMNS == (
        "N", "n_th", "eta", "phi", "G", "chi",
        "snr_classical", "snr_quantum", "snr_jm", "ratio", "ratio_db", "oracle_discrepancy",
    )


def test_missing_values_stay_empty():
    row = dict.fromkeys(E.SWEEP_COLUMNS, 1.0)
    row["snr_jm"] = None
    csv_text = emit_table(_table([row]), "csv")
    assert csv_text.splitlines()[1].split(",")[8] == ""
    doc = json.loads(emit_table(_table([row]), "json"))
    assert doc["rows"][0]["snr_jm"] is None


def test_json_layout():
    doc = json.loads(emit_table(_table(), "json"))
    assert doc["metadata"]["tool"] == "qicloak" and doc["metadata"]["protocol"] == "classical"
    assert "version" in doc["metadata"]
    assert doc["columns"] == list(E.SWEEP_COLUMNS)


def test_table_validation():
    with pytest.raises(InvalidParameterError):
        SweepTable(("a", "b"), [{"a": 1.0}])
    with pytest.raises(InvalidParameterError):
        SweepTable(("a",), [{"a": math.inf}])
    with pytest.raises(InvalidParameterError):
        emit_table(_table(), "xlsx")


finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=len(E.SWEEP_COLUMNS), max_size=len(E.SWEEP_COLUMNS)))
def test_round_trip_is_bit_exact(values):
    row = dict(zip(E.SWEEP_COLUMNS, values))
    for fmt in ("csv", "json"):
        back = read_table(emit_table(_table([row]), fmt), fmt)
        assert back.rows[0] == row
        assert all(math.copysign(1, back.rows[0][c]) == math.copysign(1, row[c]) for c in row)


def test_emit_is_deterministic():
    base = E.ScenarioConfig(ProtocolParams(N=0.1, n_th=1, eta=0.9, phi=1.0), "quantum_quadrature")
    a = E.sweep(base, [("N", (0.01, 0.1))])
    b = E.sweep(base, [("N", (0.01, 0.1))])
    for fmt in ("csv", "json"):
        assert emit_table(a, fmt) == emit_table(b, fmt)
