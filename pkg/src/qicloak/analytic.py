"""Closed-form moments, SNRs and gain ratios of the detection protocols.

Each SNR function returns the full :class:`SnrBreakdown` so the numbers can
be compared field by field with :mod:`qicloak.fock_oracle`.

Conventions: the signal is ``<O>(phi=0) - <O>(phi)``, the noise is the
variance at ``phi``, and ``k = (1 - eta)/eta`` is the effective thermal
coupling of the background.
"""
from __future__ import annotations

import math

from .errors import (
    IndeterminateRatioError,
    InvalidParameterError,
    OutOfRegimeError,
    ZeroSignalError,
)
from .params import ProtocolParams, SnrBreakdown

JM_MEAN_VARIANTS = ("sqrt_eta", "eta")
# The Fock oracle reproduces <O> only with the sqrt(eta) coefficient on the
# correlation term; see tests/test_protocol_engine.py::test_jm_mean_adjudication.
DEFAULT_JM_MEAN_VARIANT = "sqrt_eta"


def _coupling(eta: float) -> float:
    if eta <= 0:
        raise InvalidParameterError(f"eta must be > 0 here, got {eta}")
    return (1.0 - eta) / eta


def classical_snr(p: ProtocolParams) -> SnrBreakdown:
    """Coherent probe, quadrature measurement along the probe phase."""
    c = math.cos(p.phi)
    mean_zero = math.sqrt(2 * p.eta * p.N)
    mean_phi = mean_zero * c
    noise = p.eta / 2 + (1 - p.eta) * (p.n_th + 0.5)
    signal = 2 * p.eta * p.N * (1 - c) ** 2
    return SnrBreakdown(
        signal_sq=signal,
        noise_var=noise,
        snr=signal / noise,
        mean_at_phi=mean_phi,
        mean_at_zero=mean_zero,
        second_moment=noise + mean_phi**2,
    )


def quantum_snr(p: ProtocolParams) -> SnrBreakdown:
    """Entangled probe, joint measurement of x1 x2 - p1 p2 = a1 a2 + h.c."""
    c = math.cos(p.phi)
    corr = p.N * (p.N + 1)
    mean_zero = 2 * math.sqrt(p.eta * corr)
    mean_phi = mean_zero * c
    thermal = (1 - p.eta) * (2 * p.n_th * p.N + p.n_th + p.N + 1)
    second = p.eta * (1 + 8 * corr * c**2) + thermal
    noise = p.eta * (1 + 4 * corr * c**2) + thermal
    signal = 4 * p.eta * corr * (1 - c) ** 2
    return SnrBreakdown(
        signal_sq=signal,
        noise_var=noise,
        snr=signal / noise,
        mean_at_phi=mean_phi,
        mean_at_zero=mean_zero,
        second_moment=second,
    )


def _ratio_terms(N, n_th, eta, cos2):
    k = _coupling(eta)
    num = (N + 1) * (1 + k * (2 * n_th + 1))
    den = 1 + 4 * N * (N + 1) * cos2 + k * (2 * n_th * N + n_th + N + 1)
    return num, den


def snr_ratio(p: ProtocolParams) -> float:
    """Quantum-over-classical SNR ratio in closed form."""
    if p.eta <= 0 or p.N == 0 or math.cos(p.phi) == 1.0:
        raise IndeterminateRatioError("both SNRs vanish (N = 0, eta = 0 or phi = 0)")
    num, den = _ratio_terms(p.N, p.n_th, p.eta, math.cos(p.phi) ** 2)
    return num / den


def ratio_small_n_expansion(p: ProtocolParams) -> float:
    """Zero- plus first-order term in N of the ratio, taken at cos^2(phi) = 1."""
    k = _coupling(p.eta)
    x = k * p.n_th
    top = 1 + k + 2 * x
    bottom = 1 + k + x
    return top / bottom - (3 + x) * top * p.N / bottom**2


def gain_region_upper_bound(eta: float, n_th: float) -> float:
    """Largest N with a quantum advantage when cos^2(phi) = 1.

    Positive root of 4N^2 + 3N - k n_th, written as 2x/(3 + sqrt(9 + 16x))
    to avoid cancellation when k n_th is small.
    """
    if not 0 < eta <= 1:
        raise InvalidParameterError(f"eta must lie in (0, 1], got {eta}")
    if n_th < 0:
        raise InvalidParameterError(f"n_th must be >= 0, got {n_th}")
    x = _coupling(eta) * n_th
    return 2 * x / (3 + math.sqrt(9 + 16 * x))


def gain_boundary_closed_form(eta: float, n_th: float, phi: float) -> float | None:
    """Positive root of 4c N^2 + (4c - 1) N - k n_th for c = cos^2(phi); None if absent."""
    if not 0 < eta <= 1:
        raise InvalidParameterError(f"eta must lie in (0, 1], got {eta}")
    cos = math.cos(phi)
    # cos(pi/2) evaluates to ~6e-17, which would put a spurious root near 1e31
    c = 0.0 if abs(cos) < 1e-15 else cos * cos
    x = _coupling(eta) * n_th
    if x == 0 or c == 0:
        return None
    b = 4 * c - 1
    disc = math.sqrt(b * b + 16 * c * x)
    # stable form of (-b + disc) / (8c)
    return 2 * x / (b + disc) if b >= 0 else (disc - b) / (8 * c)


def _correlation_coefficient(eta: float, variant: str) -> float:
    if variant == "sqrt_eta":
        return math.sqrt(eta)
    if variant == "eta":
        return eta
    raise InvalidParameterError(f"unknown mean variant {variant!r}; choose from {JM_MEAN_VARIANTS}")


def jm_output_mean(p: ProtocolParams, variant: str = DEFAULT_JM_MEAN_VARIANT) -> float:
    """<O> for O = G n2 - (G-1) n1 after the Josephson mixer.

    ``variant="eta"`` puts eta in front of the correlation term instead;
    the default ``"sqrt_eta"`` is the one the Fock oracle reproduces.
    """
    G, N = p.G, p.N
    coef = _correlation_coefficient(p.eta, variant)
    return (G - 1) + (2 * G - 1) * N + 2 * math.sqrt(G * (G - 1)) * coef * math.sqrt(N * (N + 1)) * math.cos(p.phi)


def _signal_occupation(p: ProtocolParams) -> float:
    return p.eta * p.N + (1 - p.eta) * p.n_th


def _jm_noise(p: ProtocolParams) -> float:
    # Var(O) with O = (2G-1) n2 + (G-1) + sqrt(G(G-1)) X, X = a1 a2 + h.c.,
    # from Gaussian moment factorization of the pre-mixer state.
    G, N = p.G, p.N
    n1 = _signal_occupation(p)
    c = math.cos(p.phi)
    corr2 = p.eta * N * (N + 1)
    var_n2 = N * (N + 1)
    var_x = 4 * corr2 * c * c - 2 * corr2 + 2 * n1 * N + n1 + N + 1
    cov = math.sqrt(corr2) * c * (2 * N + 1)
    return (2 * G - 1) ** 2 * var_n2 + G * (G - 1) * var_x + 2 * (2 * G - 1) * math.sqrt(G * (G - 1)) * cov


def jm_noise_var_alternative(p: ProtocolParams) -> float:
    """A competing expanded form of Var(O).

    Kept for comparison only; the oracle does not reproduce it.
    """
    G, N, n, e = p.G, p.N, p.n_th, p.eta
    c = math.cos(p.phi)
    return (
        1 + N + N**2 + 2 * n + 2 * N * e - 2 * n * e
        - G * (3 + 4 * N**2 + 5 * n - 5 * n * e + N * (7 + 2 * n + 3 * e - 2 * n * e))
        + G**2 * (2 + 4 * N**2 + 3 * n - 3 * n * e + N * (7 + 2 * n + e - 2 * n * e))
        + 2 * math.sqrt(G * (G - 1)) * math.sqrt(N * (N + 1))
        * ((2 * G - 1) * (1 + 2 * N) + 2 * (G - 1) * math.sqrt(e)) * math.sqrt(e) * c
        + 4 * G * (G - 1) * N * (N + 1) * e * c**2
    )


def jm_snr(p: ProtocolParams) -> SnrBreakdown:
    """Josephson mixer followed by ideal photon counting."""
    if p.G == 1.0:
        raise ZeroSignalError("G = 1 leaves the correlation term unobservable")
    G, N = p.G, p.N
    c = math.cos(p.phi)
    mean_phi = jm_output_mean(p)
    mean_zero = jm_output_mean(p.with_(phi=0.0))
    noise = _jm_noise(p)
    signal = 4 * p.eta * G * (G - 1) * N * (N + 1) * (1 - c) ** 2
    return SnrBreakdown(
        signal_sq=signal,
        noise_var=noise,
        snr=signal / noise,
        mean_at_phi=mean_phi,
        mean_at_zero=mean_zero,
        second_moment=noise + mean_phi**2,
    )


def imperfect_jm_snr(p: ProtocolParams) -> SnrBreakdown:
    """Mixer plus photocounters of efficiency chi (vacuum beam splitters)."""
    if p.chi == 0.0:
        raise ZeroSignalError("chi = 0 detects nothing")
    ideal = jm_snr(p)
    G, N, chi = p.G, p.N, p.chi
    n1 = _signal_occupation(p)
    cross = 2 * math.sqrt(G * (G - 1)) * math.sqrt(p.eta * N * (N + 1)) * math.cos(p.phi)
    out_idler = G * N + (G - 1) * (n1 + 1) + cross
    out_signal = G * n1 + (G - 1) * (N + 1) + cross
    partition = G**2 * out_idler + (G - 1) ** 2 * out_signal
    noise = chi**2 * ideal.noise_var + chi * (1 - chi) * partition
    mean_phi = chi * ideal.mean_at_phi
    return SnrBreakdown(
        signal_sq=chi**2 * ideal.signal_sq,
        noise_var=noise,
        snr=chi**2 * ideal.signal_sq / noise,
        mean_at_phi=mean_phi,
        mean_at_zero=chi * ideal.mean_at_zero,
        second_moment=noise + mean_phi**2,
    )


def _thermal_load(p: ProtocolParams) -> float:
    load = p.n_th * (1 - p.eta)
    if load <= 0:
        raise InvalidParameterError("the asymptotic forms need n_th (1 - eta) > 0")
    return load


def jm_ratio_asymptotic(p: ProtocolParams) -> float:
    """Two-term mixer/classical ratio for N -> 0, small eps, large n_th (1 - eta)."""
    eps = p.epsilon
    if eps <= 0:
        raise InvalidParameterError("G must exceed 1")
    return 2 - (4 * math.sqrt(p.eta * p.N / eps) + 1) / _thermal_load(p)


def imperfect_ratio_asymptotic(p: ProtocolParams) -> float:
    """Imperfect-detector ratio in the same limit.

    The correction enters with a minus sign and scales with chi; with
    chi = 1 this reduces to :func:`jm_ratio_asymptotic`.
    """
    eps = p.epsilon
    if eps <= 0:
        raise InvalidParameterError("G must exceed 1")
    lead = 2 * p.chi / (1 + 2 * eps * (1 - p.chi))
    return lead - p.chi * (4 * math.sqrt(p.eta * p.N / eps) + 1) / _thermal_load(p)


def efficiency_threshold(p: ProtocolParams) -> float:
    """Minimum photocounter efficiency for an advantage, asymptotic form."""
    eps = p.epsilon
    load = _thermal_load(p)
    if eps <= p.eta * p.N / load**2:
        raise OutOfRegimeError(
            f"gain excess eps={eps:g} must exceed eta N/(n_th(1-eta))^2 = {p.eta * p.N / load**2:g}"
        )
    return 0.5 + 2 * math.sqrt(p.eta * p.N / eps) / load
