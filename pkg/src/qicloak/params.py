"""Parameter and result containers used by every protocol formula."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from .errors import InvalidParameterError

PARAM_NAMES = ("N", "n_th", "eta", "phi", "G", "chi")


@dataclass(frozen=True)
class ProtocolParams:
    """Physical knobs of the detection protocol.

    ``N`` is the mean photon number sent in the probe (per mode for the
    entangled source), ``n_th`` the thermal occupation of the background,
    ``eta`` the background reflectivity, ``phi`` the phase imprinted by the
    cloak, ``G`` the Josephson-mixer gain and ``chi`` the photocounter
    efficiency.
    """

    N: float
    n_th: float
    eta: float
    phi: float
    G: float = 1.0
    chi: float = 1.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be a finite real number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.N < 0:
            raise InvalidParameterError(f"N must be >= 0, got {self.N}")
        if self.n_th < 0:
            raise InvalidParameterError(f"n_th must be >= 0, got {self.n_th}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if self.G < 1.0:
            raise InvalidParameterError(f"G must be >= 1, got {self.G}")
        if not 0.0 <= self.chi <= 1.0:
            raise InvalidParameterError(f"chi must lie in [0, 1], got {self.chi}")

    @property
    def epsilon(self) -> float:
        return self.G - 1.0

    def with_(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


def default_gain(N: float) -> float:
    """Mixer gain 1 + eps with eps = max(N, 1e-3); eps of order N is near-optimal."""
    return 1.0 + max(N, 1e-3)


SNR_FIELDS = ("mean_at_phi", "mean_at_zero", "second_moment", "noise_var", "signal_sq", "snr")


@dataclass(frozen=True)
class SnrBreakdown:
    """Signal, noise and the raw moments of one observable.

    The signal is the shift of the mean between phi = 0 and phi; the noise
    is the variance at phi.
    """

    signal_sq: float
    noise_var: float
    snr: float
    mean_at_phi: float
    mean_at_zero: float
    second_moment: float

    @classmethod
    def from_moments(cls, mean_at_phi, mean_at_zero, second_moment, noise_var=None, signal_sq=None):
        if noise_var is None:
            noise_var = second_moment - mean_at_phi**2
        if signal_sq is None:
            signal_sq = (mean_at_zero - mean_at_phi) ** 2
        snr = signal_sq / noise_var if signal_sq != 0.0 else 0.0
        return cls(
            signal_sq=float(signal_sq),
            noise_var=float(noise_var),
            snr=float(snr),
            mean_at_phi=float(mean_at_phi),
            mean_at_zero=float(mean_at_zero),
            second_moment=float(second_moment),
        )

    def as_dict(self) -> dict:
        return asdict(self)
