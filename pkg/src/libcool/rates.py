"""Closed-form cooling and heating rates and steady-state occupations.

Every function takes an :class:`OperatingPoint` whose rates are angular
(rad/s) and whose phase-noise level ``psd_S`` is in rad^2/s, the
delta-correlation intensity of d(phi)/dt.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

from .errors import DivergentOccupation, ZeroCoupling
from .params import CONSTANTS, _check

# statuses carried by RateSet
OK = "ok"
DIVERGENT = "divergent"
ZERO_COUPLING = "zero_coupling"


class WeakNoiseWarning(UserWarning):
    """Phase noise is not small against the cavity linewidth (S > kappa/10)."""


@dataclass(frozen=True)
class OperatingPoint:
    omega_alpha: float
    kappa: float
    detuning: float
    coupling_G: float
    recoil_Gamma_BA: float
    psd_S: float = 0.0
    drive_Lambda: float = 0.0

    def __post_init__(self):
        _check("omega_alpha", self.omega_alpha, positive=True)
        _check("kappa", self.kappa, positive=True)
        _check("detuning", self.detuning)
        _check("coupling_G", self.coupling_G, nonneg=True)
        _check("recoil_Gamma_BA", self.recoil_Gamma_BA, nonneg=True)
        _check("psd_S", self.psd_S, nonneg=True)
        _check("drive_Lambda", self.drive_Lambda, nonneg=True)

    @property
    def ncav(self):
        """Weak-noise steady-state cavity occupation Lambda^2/(Delta^2+(kappa/2)^2)."""
        return self.drive_Lambda**2 / (self.detuning**2 + (self.kappa / 2) ** 2)

    def replace(self, **changes):
        return replace(self, **changes)

    @classmethod
    def from_params(cls, params, derived=None):
        from .params import derive

        d = derive(params) if derived is None else derived
        return cls(
            omega_alpha=d.omega_alpha,
            kappa=params.cavity.linewidth_kappa,
            detuning=params.cavity.detuning_delta,
            coupling_G=d.coupling_G,
            recoil_Gamma_BA=d.recoil_Gamma_BA,
            psd_S=params.noise.psd_S,
            drive_Lambda=d.drive_Lambda,
        )


@dataclass(frozen=True)
class RateSet:
    A_plus: float
    A_minus: float
    gamma_cool: float  # A_plus - A_minus, negative when cooling
    Gamma_BA: float
    Gamma_phi: float
    ncav: float
    n0: float
    n_phi: float
    n_ss: float
    n_exact: float
    status: str = OK


def sideband_rates(op: OperatingPoint):
    """Return ``(A_plus, A_minus)``, the heating and cooling rates."""
    k2 = (op.kappa / 2) ** 2
    g2k = op.coupling_G**2 * op.kappa
    a_plus = g2k / ((op.omega_alpha + op.detuning) ** 2 + k2)
    a_minus = g2k / ((op.omega_alpha - op.detuning) ** 2 + k2)
    return a_plus, a_minus


def cooling_rate(op: OperatingPoint):
    """Signed total rate A+ - A-; negative means net cooling."""
    a_plus, a_minus = sideband_rates(op)
    return a_plus - a_minus


def cooling_rate_approx(op: OperatingPoint):
    """The A+ << A- approximation of :func:`cooling_rate`, i.e. -A-."""
    return -sideband_rates(op)[1]


def _phase_noise_shape(op):
    # [((k/2)^2 - D^2)^2 + (W k/2)^2] / ([D^2 + (k/2)^2] [(D + W)^2 + (k/2)^2])
    k2 = (op.kappa / 2) ** 2
    D, W = op.detuning, op.omega_alpha
    num = (k2 - D**2) ** 2 + (W * op.kappa / 2) ** 2
    return num / ((D**2 + k2) * ((D + W) ** 2 + k2))


def phase_noise_heating(op: OperatingPoint):
    """Weak-noise heating rate Gamma_phi [rad/s] from laser phase noise.

    Warns with :class:`WeakNoiseWarning` when ``psd_S > kappa/10``; the
    expression assumes S << kappa.
    """
    if op.psd_S > op.kappa / 10:
        warnings.warn(
            f"psd_S={op.psd_S:.3g} rad^2/s exceeds kappa/10={op.kappa / 10:.3g}; "
            "weak-noise rate may be inaccurate",
            WeakNoiseWarning,
            stacklevel=2,
        )
    if op.psd_S == 0 or op.coupling_G == 0 or op.drive_Lambda == 0:
        return 0.0
    k2 = (op.kappa / 2) ** 2
    lorentz = (op.detuning - op.omega_alpha) ** 2 + k2
    return 4 * op.coupling_G**2 * op.ncav * op.psd_S * _phase_noise_shape(op) / lorentz


def phase_noise_occupation(op: OperatingPoint):
    """Phase-noise part of the occupation, independent of G."""
    if op.psd_S == 0 or op.drive_Lambda == 0:
        return 0.0
    return 4 * op.ncav * op.psd_S * _phase_noise_shape(op) / op.kappa


def steady_state_occupation(op: OperatingPoint, strict=False) -> RateSet:
    """All rates and the steady-state phonon number at one operating point.

    ``n0`` and ``n_phi`` are the recoil and phase-noise terms of the
    occupation formula that neglects A+ against the heating; ``n_exact``
    is the full rate balance (Gamma_BA + Gamma_phi + A+)/(A- - A+).

    With ``strict=False`` a heating regime (A- <= A+) or vanishing
    coupling is reported through ``status`` and infinite occupations, so
    that scans can cross them. ``strict=True`` raises instead.
    """
    a_plus, a_minus = sideband_rates(op)
    gamma = a_plus - a_minus
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakNoiseWarning)
        gphi = phase_noise_heating(op)
    n_phi = phase_noise_occupation(op)
    common = dict(A_plus=a_plus, A_minus=a_minus, gamma_cool=gamma, Gamma_BA=op.recoil_Gamma_BA,
                  Gamma_phi=gphi, ncav=op.ncav)

    if op.coupling_G == 0:
        if strict:
            raise ZeroCoupling("coupling G = 0: no cavity cooling")
        heating = op.recoil_Gamma_BA + gphi
        n = math.inf if heating > 0 else math.nan
        return RateSet(n0=n, n_phi=n_phi, n_ss=n, n_exact=n, status=ZERO_COUPLING, **common)
    if a_minus <= a_plus:
        if strict:
            raise DivergentOccupation(f"A- = {a_minus:.4g} <= A+ = {a_plus:.4g} rad/s")
        inf = math.inf
        return RateSet(n0=inf, n_phi=n_phi, n_ss=inf, n_exact=inf, status=DIVERGENT, **common)

    k2 = (op.kappa / 2) ** 2
    n0 = op.recoil_Gamma_BA * ((op.detuning - op.omega_alpha) ** 2 + k2) / (op.coupling_G**2 * op.kappa)
    n_exact = (op.recoil_Gamma_BA + gphi + a_plus) / (a_minus - a_plus)
    return RateSet(n0=n0, n_phi=n_phi, n_ss=n0 + n_phi, n_exact=n_exact, status=OK, **common)


def gas_heating_rate(gamma_alpha, temperature, omega_alpha):
    """Thermal heating from gas collisions, gamma_alpha kB T / (hbar Omega_alpha)."""
    gamma_alpha = _check("gamma_alpha", gamma_alpha, nonneg=True)
    temperature = _check("temperature", temperature, nonneg=True)
    omega_alpha = _check("omega_alpha", omega_alpha, positive=True)
    return gamma_alpha * CONSTANTS.kB * temperature / (CONSTANTS.hbar * omega_alpha)


def require_cooling(rs: RateSet):
    if rs.status == ZERO_COUPLING:
        raise ZeroCoupling("coupling G = 0")
    if rs.status == DIVERGENT:
        raise DivergentOccupation("A- <= A+")
    return rs


__all__ = [
    "OperatingPoint",
    "RateSet",
    "WeakNoiseWarning",
    "sideband_rates",
    "cooling_rate",
    "cooling_rate_approx",
    "phase_noise_heating",
    "phase_noise_occupation",
    "steady_state_occupation",
    "gas_heating_rate",
]
