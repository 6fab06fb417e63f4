"""Protocol pipelines, oracle cross-checks, sweeps and boundary searches."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import analytic
from . import fock_oracle as fo
from .errors import (
    CapacityError,
    InvalidParameterError,
    NoBoundaryError,
    OutOfRegimeError,
    TruncationOverflowError,
)
from .params import SNR_FIELDS, ProtocolParams, SnrBreakdown, default_gain

log = logging.getLogger(__name__)

PROTOCOLS = ("classical", "quantum_quadrature", "quantum_jm", "quantum_jm_imperfect")
JM_PROTOCOLS = ("quantum_jm", "quantum_jm_imperfect")
DEFAULT_TOLERANCE = 1e-5
DEFAULT_SWEEP_CAP = 100_000

_ANALYTIC = {
    "classical": analytic.classical_snr,
    "quantum_quadrature": analytic.quantum_snr,
    "quantum_jm": analytic.jm_snr,
    "quantum_jm_imperfect": analytic.imperfect_jm_snr,
}


@dataclass(frozen=True)
class ScenarioConfig:
    params: ProtocolParams
    protocol: str = "quantum_quadrature"
    oracle_enabled: bool = True
    oracle_dim_cap: int = field(default_factory=fo.default_dim_cap)
    tolerance: float = DEFAULT_TOLERANCE
    object_first: bool = False
    # G follows default_gain(N) when N changes, unless set explicitly
    auto_gain: bool = False
    axes: tuple = ()

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InvalidParameterError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if self.protocol in JM_PROTOCOLS and self.params.G <= 1.0:
            raise InvalidParameterError(f"{self.protocol} needs G > 1")
        if self.protocol == "quantum_jm_imperfect" and self.params.chi <= 0.0:
            raise InvalidParameterError("quantum_jm_imperfect needs chi > 0")
        if self.tolerance <= 0:
            raise InvalidParameterError("tolerance must be positive")
        if self.oracle_dim_cap < 2:
            raise InvalidParameterError("oracle_dim_cap must be >= 2")


@dataclass(frozen=True)
class OracleRun:
    breakdown: SnrBreakdown
    tail_mass: float
    mode_dims: tuple


@dataclass(frozen=True)
class ScenarioResult:
    protocol: str
    params: ProtocolParams
    analytic: SnrBreakdown
    oracle: SnrBreakdown | None = None
    discrepancy: dict | None = None
    ratio_to_classical: float | None = None
    ratio_db: float | None = None
    tail_mass: float | None = None
    oracle_dims: tuple | None = None

    @property
    def worst_discrepancy(self) -> float | None:
        if not self.discrepancy:
            return None
        return max(self.discrepancy.values())


# ----------------------------------------------------------- oracle pipelines


def _observable(protocol, dims, G):
    if protocol == "classical":
        return fo.quadrature_x(dims, 0)
    if protocol == "quantum_quadrature":
        x1, x2 = fo.quadrature_x(dims, 0), fo.quadrature_x(dims, 1)
        p1, p2 = fo.quadrature_p(dims, 0), fo.quadrature_p(dims, 1)
        return x1 @ x2 - p1 @ p2
    n_signal, n_idler = fo.number_op(dims, 0), fo.number_op(dims, 1)
    return n_idler * G - n_signal * (G - 1)


def _received_states(protocol, p, dim, cap, object_first):
    """Signal (and idler) after background mixing and cloak, at phi and at 0."""
    if protocol == "classical":
        source = fo.make_coherent(math.sqrt(p.N), cap=cap)
    else:
        source = fo.make_tmsv(p.N, cap=cap)

    def mix(state):
        return fo.thermal_loss(state, 0, p.eta, p.n_th, out_dim=dim, cap=cap)

    def cloak(state, phi):
        return fo.apply_channel(state, fo.ChannelSpec("phase_shift", (0,), phi))

    if object_first:
        return mix(cloak(source, p.phi)), mix(source)
    mixed = mix(source)
    return cloak(mixed, p.phi), mixed


def _detect(protocol, state, p, dim):
    if protocol not in JM_PROTOCOLS:
        return state
    state = fo.resize_mode(state, 1, dim)
    state = fo.apply_channel(state, fo.ChannelSpec("two_mode_squeezer", (0, 1), p.G))
    if protocol == "quantum_jm_imperfect":
        # O is diagonal in the Fock basis, so coherences never reach the counts
        state = fo.dephase(state)
        for mode in (0, 1):
            state = fo.thermal_loss(state, mode, p.chi, 0.0, env_dim=1)
    return state


def oracle_states(protocol: str, p: ProtocolParams, dim: int, *, cap: int | None = None, object_first: bool = False):
    """Final states at phi and at phi = 0, for one working cutoff ``dim``."""
    cap = fo.default_dim_cap() if cap is None else cap
    at_phi, at_zero = _received_states(protocol, p, dim, cap, object_first)
    side = dim * (dim if protocol in JM_PROTOCOLS else at_phi.side // dim)
    if side > cap:
        raise TruncationOverflowError(f"working side {side} exceeds the cap {cap}")
    return _detect(protocol, at_phi, p, dim), _detect(protocol, at_zero, p, dim)


def oracle_snr(protocol: str, p: ProtocolParams, *, cap: int | None = None, object_first: bool = False) -> OracleRun:
    """Oracle SNR with the working cutoff doubled until the tail is below target."""
    cap = fo.default_dim_cap() if cap is None else cap
    dim = fo.initial_dim(p.n_th + p.N * p.G)
    while True:
        try:
            at_phi, at_zero = oracle_states(protocol, p, dim, cap=cap, object_first=object_first)
        except CapacityError as exc:
            raise TruncationOverflowError(f"{protocol}: {exc} before the tail converged") from exc
        tail = max(at_phi.tail_mass, at_zero.tail_mass)
        if tail < fo.TAIL_TARGET:
            break
        log.debug("%s: tail %.2e at dim %d, doubling", protocol, tail, dim)
        other = None if protocol in JM_PROTOCOLS else at_phi.side // dim
        largest = math.isqrt(cap) if other is None else cap // other
        if largest <= dim:
            raise TruncationOverflowError(
                f"{protocol}: tail mass {tail:.3e} at cutoff {dim}, already the largest under the cap {cap}"
            )
        # last step lands exactly on the cap instead of overshooting it
        dim = min(2 * dim, largest)
    obs = _observable(protocol, at_phi.mode_dims, p.G)
    return OracleRun(fo.observable_snr(at_phi, at_zero, obs), tail, at_phi.mode_dims)


def jm_mean_adjudication(p: ProtocolParams, oracle_mean: float) -> dict:
    """Absolute error of each candidate form of <O> against the oracle."""
    return {v: abs(analytic.jm_output_mean(p, v) - oracle_mean) for v in analytic.JM_MEAN_VARIANTS}


# --------------------------------------------------------------- scenarios


def relative_discrepancy(a: float, b: float, floor: float = 1e-12) -> float:
    scale = max(abs(a), abs(b))
    if scale <= floor:
        return 0.0
    return abs(a - b) / scale


def compare_breakdowns(reference: SnrBreakdown, other: SnrBreakdown) -> dict:
    return {f: relative_discrepancy(getattr(reference, f), getattr(other, f)) for f in SNR_FIELDS}


def perturb_breakdown(b: SnrBreakdown, perturb: dict) -> SnrBreakdown:
    """Scale named fields by (1 + delta); snr follows signal_sq/noise_var."""
    changes = {}
    for name, delta in perturb.items():
        if name not in SNR_FIELDS:
            raise InvalidParameterError(f"cannot perturb unknown field {name!r}")
        changes[name] = getattr(b, name) * (1 + delta)
    out = replace(b, **changes)
    if "snr" not in perturb and ({"signal_sq", "noise_var"} & set(perturb)):
        out = replace(out, snr=out.signal_sq / out.noise_var)
    return out


def analytic_breakdown(protocol: str, p: ProtocolParams) -> SnrBreakdown:
    return _ANALYTIC[protocol](p)


def _ratio(snr: float, classical: float):
    if classical == 0.0:
        return None, None
    ratio = snr / classical
    return ratio, (10 * math.log10(ratio) if ratio > 0 else None)


def run_scenario(cfg: ScenarioConfig, *, perturb: dict | None = None) -> ScenarioResult:
    p = cfg.params
    ana = analytic_breakdown(cfg.protocol, p)
    if perturb:
        ana = perturb_breakdown(ana, perturb)
    ratio, ratio_db = _ratio(ana.snr, analytic.classical_snr(p).snr)
    result = ScenarioResult(cfg.protocol, p, ana, ratio_to_classical=ratio, ratio_db=ratio_db)
    if not cfg.oracle_enabled:
        return result
    run = oracle_snr(cfg.protocol, p, cap=cfg.oracle_dim_cap, object_first=cfg.object_first)
    return replace(
        result,
        oracle=run.breakdown,
        discrepancy=compare_breakdowns(ana, run.breakdown),
        tail_mass=run.tail_mass,
        oracle_dims=run.mode_dims,
    )


# -------------------------------------------------------------- validation


@dataclass(frozen=True)
class ProtocolCheck:
    protocol: str
    status: str  # "pass", "fail" or "inconclusive"
    worst_field: str | None = None
    worst_discrepancy: float | None = None
    allowed: float | None = None
    tail_mass: float | None = None
    oracle_dims: tuple | None = None
    detail: str = ""
    mean_variant_errors: dict | None = None
    failing_fields: tuple = ()


@dataclass(frozen=True)
class ValidationReport:
    params: ProtocolParams
    tolerance: float
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.status == "pass" for c in self.checks)

    @property
    def inconclusive(self) -> bool:
        return any(c.status == "inconclusive" for c in self.checks)

    @property
    def adopted_mean_variant(self) -> str | None:
        """Which candidate <O> coefficient the oracle backs, if a mixer was checked."""
        for c in self.checks:
            if c.mean_variant_errors:
                return min(c.mean_variant_errors, key=c.mean_variant_errors.get)
        return None

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            if c.status == "inconclusive":
                out.append(f"{c.protocol:22s} INCONCLUSIVE  {c.detail}")
                continue
            line = (
                f"{c.protocol:22s} {c.status.upper():4s}  worst {c.worst_field}={c.worst_discrepancy:.3e}"
                f" (allowed {c.allowed:.1e}, tail {c.tail_mass:.1e}, dims {c.oracle_dims})"
            )
            if c.failing_fields:
                line += "  fields out of tolerance: " + ", ".join(c.failing_fields)
            if c.mean_variant_errors:
                errs = ", ".join(f"{k}: {v:.2e}" for k, v in c.mean_variant_errors.items())
                line += f"  <O> coefficient errors [{errs}]"
            out.append(line)
        return out


def cross_validate(
    params: ProtocolParams,
    protocols=PROTOCOLS,
    tolerance: float = DEFAULT_TOLERANCE,
    *,
    dim_cap: int | None = None,
    perturb: dict | None = None,
    object_first: bool = False,
) -> ValidationReport:
    """Compare every closed form against the oracle at one parameter point.

    ``perturb`` scales analytic fields before comparison; it exists so the
    check can be shown to fail.
    """
    if tolerance <= 0:
        raise InvalidParameterError("tolerance must be positive")
    checks = []
    for protocol in protocols:
        if protocol in JM_PROTOCOLS and params.G <= 1.0:
            raise InvalidParameterError(f"{protocol} needs G > 1")
        cfg = ScenarioConfig(params, protocol, True, dim_cap or fo.default_dim_cap(), tolerance, object_first)
        try:
            res = run_scenario(cfg, perturb=perturb)
        except TruncationOverflowError as exc:
            checks.append(ProtocolCheck(protocol, "inconclusive", detail=str(exc)))
            continue
        worst_field = max(res.discrepancy, key=res.discrepancy.get)
        worst = res.discrepancy[worst_field]
        allowed = max(tolerance, 100 * res.tail_mass)
        variants = None
        if protocol == "quantum_jm":
            variants = jm_mean_adjudication(params, res.oracle.mean_at_phi)
        checks.append(
            ProtocolCheck(
                protocol,
                "pass" if worst <= allowed else "fail",
                worst_field,
                worst,
                allowed,
                res.tail_mass,
                res.oracle_dims,
                mean_variant_errors=variants,
                failing_fields=tuple(f for f, d in res.discrepancy.items() if d > allowed),
            )
        )
    return ValidationReport(params, tolerance, tuple(checks))


# ------------------------------------------------------------------- sweeps

SWEEP_COLUMNS = (
    "N", "n_th", "eta", "phi", "G", "chi",
    "snr_classical", "snr_quantum", "snr_jm", "ratio", "ratio_db", "oracle_discrepancy",
)


def _point_params(base: ScenarioConfig, values: dict) -> ProtocolParams:
    p = base.params.with_(**values)
    if base.auto_gain and "G" not in values:
        p = p.with_(G=default_gain(p.N))
    return p


def _sweep_row(args):
    base, p, with_oracle = args
    cfg = replace(base, params=p, oracle_enabled=with_oracle, axes=())
    res = run_scenario(cfg)
    row = {name: getattr(p, name) for name in ("N", "n_th", "eta", "phi", "G", "chi")}
    row["snr_classical"] = analytic.classical_snr(p).snr
    row["snr_quantum"] = None if base.protocol == "classical" else analytic.quantum_snr(p).snr
    row["snr_jm"] = res.analytic.snr if base.protocol in JM_PROTOCOLS else None
    if base.protocol == "classical":
        row["ratio"] = row["ratio_db"] = None
    else:
        row["ratio"], row["ratio_db"] = res.ratio_to_classical, res.ratio_db
    row["oracle_discrepancy"] = res.worst_discrepancy
    return row


def sweep(
    base: ScenarioConfig,
    axes=None,
    *,
    cap: int = DEFAULT_SWEEP_CAP,
    oracle_stride: int = 0,
    workers: int = 1,
):
    """Evaluate the cartesian grid of ``axes``; first axis varies slowest.

    The oracle runs on every ``oracle_stride``-th row (0 disables it).
    Rows come back in grid order whatever ``workers`` is.
    """
    from .report_io import SweepTable  # report_io imports this module

    axes = list(base.axes if axes is None else axes)
    if not axes:
        raise InvalidParameterError("sweep needs at least one axis")
    names = [name for name, _ in axes]
    for name, values in axes:
        if name not in ("N", "n_th", "eta", "phi", "G", "chi"):
            raise InvalidParameterError(f"cannot sweep unknown parameter {name!r}")
        if len(values) == 0:
            raise InvalidParameterError(f"axis {name!r} has no values")
    if len(set(names)) != len(names):
        raise InvalidParameterError("duplicate sweep axis")
    size = math.prod(len(v) for _, v in axes)
    if size > cap:
        raise InvalidParameterError(f"grid of {size} points exceeds the cap {cap}")

    jobs = []
    for i, combo in enumerate(itertools.product(*[v for _, v in axes])):
        p = _point_params(base, dict(zip(names, combo)))
        with_oracle = oracle_stride > 0 and i % oracle_stride == 0
        jobs.append((base, p, with_oracle))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]

    metadata = {
        "protocol": base.protocol,
        "base_params": base.params.as_dict(),
        "axes": {name: [float(v) for v in values] for name, values in axes},
        "oracle_stride": oracle_stride,
        "oracle_dim_cap": base.oracle_dim_cap,
    }
    return SweepTable(SWEEP_COLUMNS, rows, metadata)


# --------------------------------------------------------------- root finding


def bisect(f, lo: float, hi: float) -> float:
    """Bisection to machine precision; relative, so tiny roots stay accurate."""
    if (f(lo) > 0) == (f(hi) > 0) and f(lo) != 0 and f(hi) != 0:
        raise NoBoundaryError(f"no sign change on [{lo:g}, {hi:g}]")
    return optimize.bisect(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=2000)


MAX_BOUNDARY_N = 1e8


def find_gain_boundary(eta: float, n_th: float, phi: float = math.pi) -> float:
    """Photon number above which the quantum SNR stops beating the classical one."""
    if not 0 < eta <= 1:
        raise InvalidParameterError(f"eta must lie in (0, 1], got {eta}")
    bound = analytic.gain_region_upper_bound(eta, n_th)
    if bound == 0:
        raise NoBoundaryError("no gain region: (1 - eta) n_th = 0")
    cos2 = math.cos(phi) ** 2

    def excess(N):
        num, den = analytic._ratio_terms(N, n_th, eta, cos2)
        return num - den

    hi = 10 * bound
    while excess(hi) > 0:
        hi *= 2
        if hi > MAX_BOUNDARY_N:
            raise NoBoundaryError(f"ratio stays above 1 up to N = {MAX_BOUNDARY_N:g} (phi = {phi:g})")
    return bisect(excess, 0.0, hi)


@dataclass(frozen=True)
class EfficiencyBoundary:
    chi: float
    asymptotic: float | None
    asymptotic_note: str = ""


def imperfect_ratio(p: ProtocolParams) -> float:
    if p.chi == 0.0:
        return 0.0
    return analytic.imperfect_jm_snr(p).snr / analytic.classical_snr(p).snr


def find_efficiency_boundary(params: ProtocolParams) -> EfficiencyBoundary:
    """Photocounter efficiency at which the mixer protocol matches the classical one."""
    if params.G <= 1.0:
        raise InvalidParameterError("the efficiency boundary needs G > 1")
    if analytic.classical_snr(params).snr == 0.0:
        raise NoBoundaryError("classical SNR vanishes; the ratio is undefined")

    def excess(chi):
        return imperfect_ratio(params.with_(chi=chi)) - 1.0

    if excess(1.0) <= 0:
        raise NoBoundaryError("no advantage even with perfect photocounters")
    root = bisect(excess, 0.0, 1.0)
    try:
        asym, note = analytic.efficiency_threshold(params), ""
    except (OutOfRegimeError, InvalidParameterError) as exc:
        asym, note = None, str(exc)
    return EfficiencyBoundary(root, asym, note)
