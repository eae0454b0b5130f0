"""Physical inputs and the derived quantities of the libration-cavity model.

All rates and frequencies are stored in rad/s. Configuration files use Hz
with an explicit ``_over_2pi_Hz`` suffix and are converted on load.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import constants as _codata

from .errors import ParameterError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants used by the model (SI units)."""

    hbar: float = field(default=_codata.hbar, init=False)
    c: float = field(default=_codata.c, init=False)
    eps0: float = field(default=_codata.epsilon_0, init=False)
    kB: float = field(default=_codata.k, init=False)


CONSTANTS = PhysicalConstants()


def _check(name, value, *, positive=False, nonneg=False):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterError(name, f"expected a number, got {value!r}") from None
    if not math.isfinite(value):
        raise ParameterError(name, f"must be finite, got {value}")
    if positive and value <= 0:
        raise ParameterError(name, f"must be > 0, got {value}")
    if nonneg and value < 0:
        raise ParameterError(name, f"must be >= 0, got {value}")
    return value


@dataclass(frozen=True)
class TweezerParams:
    power: float  # W
    waist: float  # m
    wavelength: float  # m

    def __post_init__(self):
        _check("tweezer.power", self.power, positive=True)
        _check("tweezer.waist", self.waist, positive=True)
        _check("tweezer.wavelength", self.wavelength, positive=True)

    @property
    def omega_tw(self):
        return TWO_PI * CONSTANTS.c / self.wavelength


@dataclass(frozen=True)
class CavityParams:
    waist: float  # m
    length: float  # m
    linewidth_kappa: float  # rad/s, energy decay rate (FWHM)
    detuning_delta: float  # rad/s
    phase_phi: float  # rad, 0 = node, pi/2 = antinode
    drive_epsilon: float = 0.0

    def __post_init__(self):
        _check("cavity.waist", self.waist, positive=True)
        _check("cavity.length", self.length, positive=True)
        _check("cavity.linewidth_kappa", self.linewidth_kappa, positive=True)
        _check("cavity.detuning_delta", self.detuning_delta)
        phi = _check("cavity.phase_phi", self.phase_phi)
        if not 0.0 <= phi <= math.pi / 2 + 1e-12:
            raise ParameterError("cavity.phase_phi", f"must lie in [0, pi/2], got {phi}")
        _check("cavity.drive_epsilon", self.drive_epsilon, nonneg=True)


@dataclass(frozen=True)
class ParticleParams:
    moment_of_inertia: float  # kg m^2
    delta_alpha: float  # C m^2 / V
    alpha_Y: float  # C m^2 / V
    pressure: float = 5e-9  # mbar
    temperature: float = 300.0  # K

    def __post_init__(self):
        _check("particle.moment_of_inertia", self.moment_of_inertia, positive=True)
        da = _check("particle.delta_alpha", self.delta_alpha)
        if da <= 0:
            raise ParameterError(
                "particle.delta_alpha",
                f"must be > 0 (zero polarizability difference gives zero trap stiffness), got {da}",
            )
        ay = _check("particle.alpha_Y", self.alpha_Y, positive=True)
        if da > ay:
            raise ParameterError("particle.alpha_Y", f"must be >= delta_alpha ({da}), got {ay}")
        _check("particle.pressure", self.pressure, nonneg=True)
        _check("particle.temperature", self.temperature, nonneg=True)


@dataclass(frozen=True)
class PhaseNoiseParams:
    psd_S: float  # rad^2/s, white noise intensity of d(phi)/dt

    def __post_init__(self):
        _check("phase_noise.psd_S", self.psd_S, nonneg=True)


@dataclass(frozen=True)
class ExperimentParams:
    tweezer: TweezerParams
    cavity: CavityParams
    particle: ParticleParams
    noise: PhaseNoiseParams

    def with_phase(self, phi):
        return replace(self, cavity=replace(self.cavity, phase_phi=phi))

    def with_detuning(self, delta):
        return replace(self, cavity=replace(self.cavity, detuning_delta=delta))

    @classmethod
    def from_dict(cls, data):
        """Build from the JSON parameter schema (Hz on the wire).

        Raises :class:`ParameterError` naming the first missing or invalid
        field, e.g. ``cavity.length_m``.
        """
        tw = _section(data, "tweezer")
        cav = _section(data, "cavity")
        part = _section(data, "particle")
        noise = _section(data, "phase_noise")
        return cls(
            tweezer=TweezerParams(
                power=_get(tw, "tweezer", "power_W"),
                waist=_get(tw, "tweezer", "waist_m"),
                wavelength=_get(tw, "tweezer", "wavelength_m"),
            ),
            cavity=CavityParams(
                waist=_get(cav, "cavity", "waist_m"),
                length=_get(cav, "cavity", "length_m"),
                linewidth_kappa=TWO_PI * _get(cav, "cavity", "kappa_over_2pi_Hz"),
                detuning_delta=TWO_PI * _get(cav, "cavity", "detuning_over_2pi_Hz"),
                phase_phi=_get(cav, "cavity", "phase_phi_rad"),
                drive_epsilon=_get(cav, "cavity", "drive_epsilon"),
            ),
            particle=ParticleParams(
                moment_of_inertia=_get(part, "particle", "moment_of_inertia_kg_m2"),
                delta_alpha=_get(part, "particle", "delta_alpha_C_m2_per_V"),
                alpha_Y=_get(part, "particle", "alpha_Y_C_m2_per_V"),
                pressure=_get(part, "particle", "pressure_mbar"),
                temperature=_get(part, "particle", "temperature_K"),
            ),
            noise=PhaseNoiseParams(psd_S=psd_from_config(noise, "phase_noise")),
        )


def _section(data, name):
    if not isinstance(data, dict) or name not in data:
        raise ParameterError(name, "missing section")
    sec = data[name]
    if not isinstance(sec, dict):
        raise ParameterError(name, "expected an object")
    return sec


def _get(sec, prefix, key):
    if key not in sec:
        raise ParameterError(f"{prefix}.{key}", "missing field")
    return _check(f"{prefix}.{key}", sec[key])


PSD_UNITS = ("rad2/s", "Hz2/Hz", "Hz/rtHz")


def psd_to_rad2_per_s(value, unit):
    """Convert a phase-noise level to rad^2/s.

    ``Hz2/Hz`` is S/(2 pi)^2 and ``Hz/rtHz`` is sqrt(S)/(2 pi).
    """
    value = _check("phase_noise.value", value, nonneg=True)
    if unit == "rad2/s":
        return value
    if unit == "Hz2/Hz":
        return TWO_PI**2 * value
    if unit == "Hz/rtHz":
        return (TWO_PI * value) ** 2
    raise ParameterError("phase_noise.unit", f"must be one of {PSD_UNITS}, got {unit!r}")


def psd_from_config(sec, prefix="phase_noise"):
    if "unit" not in sec:
        raise ParameterError(f"{prefix}.unit", "missing field (unit tag is mandatory)")
    if "value" not in sec:
        raise ParameterError(f"{prefix}.value", "missing field")
    return psd_to_rad2_per_s(sec["value"], sec["unit"])


@dataclass(frozen=True)
class DerivedQuantities:
    field_E0: float  # V/m
    zp_field_Ec: float  # V/m
    mode_volume_Vc: float  # m^3
    omega_alpha: float  # rad/s
    alpha_zpf: float  # rad
    coupling_G: float  # rad/s, |G| at the configured phase
    coupling_G0: float  # rad/s, |G| at the antinode
    recoil_Gamma_BA: float  # rad/s
    drive_Lambda: float  # rad/s
    ncav_ss: float

    def as_table(self):
        """Rows of (symbol, value, unit) in display units."""
        return [
            ("E0", self.field_E0, "V/m"),
            ("E_c", self.zp_field_Ec, "V/m"),
            ("V_c", self.mode_volume_Vc, "m^3"),
            ("Omega_alpha/2pi", self.omega_alpha / TWO_PI, "Hz"),
            ("alpha_zpf", self.alpha_zpf, "rad"),
            ("G/2pi", self.coupling_G / TWO_PI, "Hz"),
            ("G0/2pi (antinode)", self.coupling_G0 / TWO_PI, "Hz"),
            ("Gamma_BA/2pi", self.recoil_Gamma_BA / TWO_PI, "Hz"),
            ("Lambda/2pi", self.drive_Lambda / TWO_PI, "Hz"),
            ("n_cav", self.ncav_ss, "1"),
        ]

    def to_json_dict(self):
        return {
            "E0_V_per_m": self.field_E0,
            "Ec_V_per_m": self.zp_field_Ec,
            "mode_volume_m3": self.mode_volume_Vc,
            "omega_alpha_over_2pi_Hz": self.omega_alpha / TWO_PI,
            "alpha_zpf_rad": self.alpha_zpf,
            "G_over_2pi_Hz": self.coupling_G / TWO_PI,
            "G0_over_2pi_Hz": self.coupling_G0 / TWO_PI,
            "Gamma_BA_over_2pi_Hz": self.recoil_Gamma_BA / TWO_PI,
            "Lambda_over_2pi_Hz": self.drive_Lambda / TWO_PI,
            "ncav": self.ncav_ss,
        }


def tweezer_field(power, waist):
    return math.sqrt(4.0 * power / (math.pi * CONSTANTS.eps0 * CONSTANTS.c * waist**2))


def recoil_heating_rate(delta_alpha, E0, alpha_zpf, omega_tw):
    """Photon-recoil (shot-noise) heating rate in rad/s."""
    hbar, c, eps0 = CONSTANTS.hbar, CONSTANTS.c, CONSTANTS.eps0
    return (delta_alpha * E0 * alpha_zpf) ** 2 * omega_tw**3 / (12.0 * math.pi * hbar * c**3 * eps0)


def derive(params: ExperimentParams) -> DerivedQuantities:
    """Evaluate every derived model parameter from the physical inputs.

    The cavity zero-point field uses the tweezer frequency; the relative
    difference to the cavity frequency is of order 1e-9.
    """
    hbar, eps0 = CONSTANTS.hbar, CONSTANTS.eps0
    tw, cav, part = params.tweezer, params.cavity, params.particle

    E0 = tweezer_field(tw.power, tw.waist)
    omega_tw = tw.omega_tw
    Vc = math.pi * (cav.waist / 2.0) ** 2 * cav.length
    Ec = math.sqrt(hbar * omega_tw / (2.0 * eps0 * Vc))

    omega_alpha = math.sqrt(part.delta_alpha * E0**2 / (2.0 * part.moment_of_inertia))
    if not omega_alpha > 0:
        raise ParameterError("particle.delta_alpha", "zero trap stiffness (Omega_alpha = 0)")
    alpha_zpf = math.sqrt(hbar / (2.0 * part.moment_of_inertia * omega_alpha))

    sin_phi = math.sin(cav.phase_phi)
    G0 = part.delta_alpha * alpha_zpf * E0 * Ec / (2.0 * hbar)
    G = G0 * sin_phi
    gamma_ba = recoil_heating_rate(part.delta_alpha, E0, alpha_zpf, omega_tw)
    Lam = part.alpha_Y * E0 * Ec * cav.drive_epsilon * sin_phi / (2.0 * hbar)
    ncav = Lam**2 / (cav.detuning_delta**2 + (cav.linewidth_kappa / 2.0) ** 2)

    return DerivedQuantities(
        field_E0=E0,
        zp_field_Ec=Ec,
        mode_volume_Vc=Vc,
        omega_alpha=omega_alpha,
        alpha_zpf=alpha_zpf,
        coupling_G=abs(G),
        coupling_G0=abs(G0),
        recoil_Gamma_BA=gamma_ba,
        drive_Lambda=Lam,
        ncav_ss=ncav,
    )


def moment_of_inertia_from_rotation(sigma_rot, temperature):
    """Moment of inertia from the thermal spread of rotation rates.

    Parameters
    ----------
    sigma_rot : float
        Standard deviation of the rotation frequency [Hz].
    temperature : float
        Gas temperature [K].

    Returns
    -------
    float
        I = kB T / (2 pi sigma)^2 [kg m^2].
    """
    sigma_rot = _check("sigma_rot", sigma_rot, positive=True)
    temperature = _check("temperature", temperature, positive=True)
    return CONSTANTS.kB * temperature / (TWO_PI * sigma_rot) ** 2


def purity(n):
    """Purity 1/(2n+1) of a thermal state with mean occupation n."""
    n = np.asarray(n, dtype=float)
    if np.any(~np.isfinite(n)) or np.any(n < 0):
        raise ParameterError("n", "occupation must be finite and >= 0")
    p = 1.0 / (2.0 * n + 1.0)
    return float(p) if p.ndim == 0 else p


# --- presets -----------------------------------------------------------------

PRESETS = ("particle1", "particle2")


class PresetChecksumError(ParameterError):
    pass


def _preset_dir():
    return resources.files("libcool") / "presets"


def _expected_checksums():
    sums = {}
    for line in (_preset_dir() / "SHA256SUMS").read_text().splitlines():
        if line.strip():
            digest, name = line.split()
            sums[name] = digest
    return sums


def load_preset(name):
    """Return the raw configuration dict of a bundled preset.

    The file content is verified against the bundled SHA256SUMS list.
    """
    if name not in PRESETS:
        raise ParameterError("preset", f"unknown preset {name!r}, choose from {PRESETS}")
    fname = f"{name}.json"
    raw = (_preset_dir() / fname).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    expected = _expected_checksums().get(fname)
    if digest != expected:
        raise PresetChecksumError("preset", f"checksum mismatch for {fname}")
    return json.loads(raw)


def merge_config(base, override):
    """Recursive merge of ``override`` over ``base``; neither is modified."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(preset=None, params_file=None):
    """Preset and/or user file, user values merged over the preset."""
    if preset is None and params_file is None:
        raise ParameterError("preset", "need a preset or a parameter file")
    cfg = load_preset(preset) if preset is not None else {}
    if params_file is not None:
        try:
            user = json.loads(Path(params_file).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError("params", f"invalid JSON: {exc}") from None
        cfg = merge_config(cfg, user)
    return cfg
