import math

import pytest

from qicloak import analytic as A
from qicloak import engine as E
from qicloak.errors import InvalidParameterError, NoBoundaryError
from qicloak.params import SNR_FIELDS, ProtocolParams

P = ProtocolParams
CORE = P(N=0.05, n_th=1.5, eta=0.9, phi=math.pi / 3, G=1.2, chi=0.8)
JM_POINT = P(N=0.1, n_th=1.0, eta=0.9, phi=math.pi / 4, G=1.2)


def scenario(protocol, p, **kw):
    return E.run_scenario(E.ScenarioConfig(p, protocol, **kw))


# ------------------------------------------------------------- pipelines


def test_classical_at_zero_phase():
    res = scenario("classical", CORE.with_(phi=0.0))
    assert res.analytic.snr == 0 and res.oracle.snr == 0
    assert res.discrepancy["snr"] == 0 and res.discrepancy["signal_sq"] == 0


@pytest.mark.parametrize("protocol", ["classical", "quantum_quadrature"])
def test_quadrature_pipelines_match(protocol):
    res = scenario(protocol, CORE)
    assert res.discrepancy["snr"] < 1e-6
    assert res.tail_mass < 1e-10


def test_jm_pipeline_matches():
    res = scenario("quantum_jm", JM_POINT)
    assert res.discrepancy["snr"] < 1e-5
    assert abs(res.oracle.mean_at_phi - A.jm_output_mean(JM_POINT)) < 1e-6


def test_jm_mean_adjudication():
    # the oracle mean of O decides the coefficient of the correlation term
    for p in (JM_POINT, CORE, P(N=0.2, n_th=0.5, eta=0.7, phi=0.3, G=1.2)):
        oracle_mean = E.oracle_snr("quantum_jm", p).breakdown.mean_at_phi
        errors = E.jm_mean_adjudication(p, oracle_mean)
        assert errors["sqrt_eta"] < 1e-9
        assert errors["eta"] > 1e-3


def test_oracle_rejects_alternative_variance():
    oracle = E.oracle_snr("quantum_jm", JM_POINT).breakdown
    assert abs(oracle.noise_var - A.jm_snr(JM_POINT).noise_var) < 1e-9
    assert abs(oracle.noise_var - A.jm_noise_var_alternative(JM_POINT)) > 0.1


def test_imperfect_pipeline_matches():
    res = scenario("quantum_jm_imperfect", JM_POINT.with_(chi=0.7))
    assert res.discrepancy["snr"] < 1e-5


@pytest.mark.parametrize("protocol", E.PROTOCOLS)
def test_order_equivalence(protocol):
    a = E.oracle_snr(protocol, CORE).breakdown
    b = E.oracle_snr(protocol, CORE, object_first=True).breakdown
    assert E.relative_discrepancy(a.snr, b.snr) < 1e-8


def test_ratio_fields():
    res = scenario("quantum_quadrature", CORE, oracle_enabled=False)
    assert res.oracle is None and res.worst_discrepancy is None
    assert res.ratio_to_classical == pytest.approx(A.snr_ratio(CORE), rel=1e-12)
    assert res.ratio_db == pytest.approx(10 * math.log10(A.snr_ratio(CORE)), rel=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(protocol="homodyne"),
        dict(protocol="quantum_jm", params=CORE.with_(G=1.0)),
        dict(protocol="quantum_jm_imperfect", params=CORE.with_(chi=0.0)),
        dict(tolerance=0.0),
        dict(oracle_dim_cap=1),
    ],
)
def test_config_validation(kwargs):
    kwargs.setdefault("params", CORE)
    with pytest.raises(InvalidParameterError):
        E.ScenarioConfig(**kwargs)


# ------------------------------------------------------------- validation


def test_cross_validate_core_point():
    report = E.cross_validate(CORE, tolerance=1e-5)
    assert report.passed and not report.inconclusive
    assert [c.protocol for c in report.checks] == list(E.PROTOCOLS)
    assert report.adopted_mean_variant == "sqrt_eta"
    assert any("sqrt_eta" in line for line in report.lines())


def test_cross_validate_zero_phase():
    assert E.cross_validate(CORE.with_(phi=0.0)).passed


@pytest.mark.parametrize("field", ["noise_var", "signal_sq", "mean_at_phi"])
def test_negative_control(field):
    report = E.cross_validate(CORE, ("quantum_quadrature",), perturb={field: 0.01})
    (check,) = report.checks
    assert not report.passed and check.status == "fail"
    assert field in check.failing_fields
    assert field in report.lines()[0]
    assert check.worst_discrepancy > 1e-3


def test_perturb_rejects_unknown_field():
    with pytest.raises(InvalidParameterError):
        E.perturb_breakdown(A.classical_snr(CORE), {"gain": 0.1})


def test_truncation_cap_is_inconclusive():
    report = E.cross_validate(CORE, ("quantum_jm",), dim_cap=300)
    assert report.inconclusive and not report.passed
    assert "INCONCLUSIVE" in report.lines()[0]


def test_relative_discrepancy_floor():
    assert E.relative_discrepancy(0.0, 1e-15) == 0
    assert E.relative_discrepancy(1.0, 1.01) == pytest.approx(0.01 / 1.01)
    assert set(E.compare_breakdowns(A.classical_snr(CORE), A.classical_snr(CORE))) == set(SNR_FIELDS)


# ------------------------------------------------------------------ sweeps


def _background(ratio, eta=0.99):
    return ratio * eta / (1 - eta)


def test_sweep_ratio_falls_with_n():
    base = E.ScenarioConfig(P(N=1e-3, n_th=_background(100), eta=0.99, phi=math.pi), "quantum_quadrature")
    table = E.sweep(base, [("N", (1e-3, 1e-2, 1e-1))])
    db = [row["ratio_db"] for row in table.rows]
    assert db[0] > db[1] > db[2]
    assert [row["N"] for row in table.rows] == [1e-3, 1e-2, 1e-1]


def test_sweep_ratio_grows_with_background():
    base = E.ScenarioConfig(P(N=1e-3, n_th=1.0, eta=0.99, phi=math.pi), "quantum_quadrature")
    table = E.sweep(base, [("n_th", tuple(_background(r) for r in (0.1, 1, 10, 100, 1000)))])
    ratios = [row["ratio"] for row in table.rows]
    assert all(a < b for a, b in zip(ratios, ratios[1:]))


def test_sweep_errors():
    base = E.ScenarioConfig(CORE, "classical")
    with pytest.raises(InvalidParameterError):
        E.sweep(base, [("N", ())])
    with pytest.raises(InvalidParameterError):
        E.sweep(base, [])
    with pytest.raises(InvalidParameterError):
        E.sweep(base, [("N", (0.1,)), ("N", (0.2,))])
    with pytest.raises(InvalidParameterError):
        E.sweep(base, [("N", (0.1, 0.2)), ("eta", (0.5, 0.6))], cap=3)


def test_sweep_grid_order_and_columns():
    base = E.ScenarioConfig(CORE, "classical")
    table = E.sweep(base, [("N", (0.1, 0.2)), ("eta", (0.5, 0.6, 0.7))])
    assert table.columns == E.SWEEP_COLUMNS
    assert [(r["N"], r["eta"]) for r in table.rows] == [(n, e) for n in (0.1, 0.2) for e in (0.5, 0.6, 0.7)]
    # classical-only runs leave the protocol-specific cells empty
    assert all(r["snr_quantum"] is None and r["ratio"] is None for r in table.rows)


def test_sweep_oracle_stride_and_workers():
    base = E.ScenarioConfig(CORE, "quantum_quadrature")
    axes = [("N", (0.01, 0.05, 0.1))]
    serial = E.sweep(base, axes, oracle_stride=2)
    flags = [r["oracle_discrepancy"] is not None for r in serial.rows]
    assert flags == [True, False, True]
    parallel = E.sweep(base, axes, oracle_stride=2, workers=2)
    assert parallel.rows == serial.rows


def test_sweep_auto_gain_follows_n():
    base = E.ScenarioConfig(CORE.with_(G=1.05), "quantum_jm", oracle_enabled=False, auto_gain=True)
    table = E.sweep(base, [("N", (0.01, 0.1))])
    assert [r["G"] for r in table.rows] == [1.01, 1.1]


# -------------------------------------------------------------- boundaries


def test_gain_boundary_example():
    assert E.find_gain_boundary(0.5, 9) == pytest.approx((-3 + math.sqrt(153)) / 8, rel=1e-12)


def test_gain_boundary_without_background():
    with pytest.raises(NoBoundaryError):
        E.find_gain_boundary(1.0, 9)


def test_gain_boundary_quarter_turn_has_no_root():
    # with cos(phi) = 0 the ratio is (N+1)(1+k(2n+1))/(1+k(2nN+n+N+1)) > 1
    # for every N, so no boundary exists
    for N in (1e-3, 1.0, 1e3, 1e6):
        assert A.snr_ratio(P(N=N, n_th=9, eta=0.5, phi=math.pi / 2)) > 1
    with pytest.raises(NoBoundaryError):
        E.find_gain_boundary(0.5, 9, math.pi / 2)


def test_gain_boundary_widens_away_from_pi():
    at_pi = E.find_gain_boundary(0.5, 9)
    at_third = E.find_gain_boundary(0.5, 9, math.pi / 3)
    assert at_third > at_pi
    assert at_third == pytest.approx(3.0, rel=1e-12)


def test_efficiency_boundary_deep_regime():
    p = P(N=1e-4, n_th=1000, eta=0.99, phi=0.1, G=1.01)
    b = E.find_efficiency_boundary(p)
    assert b.asymptotic == pytest.approx(A.efficiency_threshold(p))
    assert abs(b.chi - b.asymptotic) < 0.05 and b.chi > 0.5
    assert abs(E.imperfect_ratio(p.with_(chi=b.chi)) - 1) < 1e-9


def test_efficiency_boundary_errors():
    with pytest.raises(InvalidParameterError):
        E.find_efficiency_boundary(P(N=1e-4, n_th=1000, eta=0.99, phi=0.1, G=1.0))
    with pytest.raises(NoBoundaryError):
        E.find_efficiency_boundary(P(N=0.1, n_th=5, eta=0.9, phi=math.pi, G=1.01))


def test_efficiency_boundary_out_of_regime_note():
    b = E.find_efficiency_boundary(P(N=0.01, n_th=0.5, eta=0.9, phi=math.pi, G=1.2))
    assert b.asymptotic is None and "eps" in b.asymptotic_note
