"""Phase-noise cancellation loop: interferometer, controller and closed-loop PSD.

The open-loop phase noise S(Omega) is divided by |1 + M R H|^2, with R the
response of a path-imbalanced interferometer, H a band-pass I/Q
controller and M the phase modulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .params import CONSTANTS, TWO_PI, _check

FIBER_INDEX = 1.468  # group index of standard single-mode fiber at 1550 nm
FIBER_LENGTH = 80.0  # m
DEFAULT_TAU = FIBER_INDEX * FIBER_LENGTH / CONSTANTS.c
DEFAULT_GAMMA_IQ = TWO_PI * 4e3
# |M R| at Omega_IQ that gives 20 dB suppression at g = 1
DEFAULT_LOOP_MAGNITUDE = 9.0


def interferometer_response(tau, omega):
    """R(Omega) = 1 - exp(-i tau Omega) of the delay-line interferometer."""
    return 1 - np.exp(-1j * tau * np.asarray(omega, dtype=float))


@dataclass(frozen=True)
class FeedbackParams:
    tau: float = DEFAULT_TAU
    gain_g: float = 1.0
    gamma_IQ: float = DEFAULT_GAMMA_IQ
    omega_IQ: float = TWO_PI * 1.1e6
    tau_IQ: float = 0.0
    modulator_M: Callable | complex = 1.0

    def __post_init__(self):
        _check("feedback.tau", self.tau, positive=True)
        _check("feedback.gain_g", self.gain_g, nonneg=True)
        _check("feedback.gamma_IQ", self.gamma_IQ, positive=True)
        _check("feedback.omega_IQ", self.omega_IQ, positive=True)
        _check("feedback.tau_IQ", self.tau_IQ, nonneg=True)

    def M(self, omega):
        m = self.modulator_M
        if callable(m):
            return np.asarray(m(omega), dtype=complex)
        return np.full(np.shape(omega), complex(m))

    def with_gain(self, g):
        return replace(self, gain_g=g)

    @classmethod
    def aligned(cls, omega_IQ=TWO_PI * 1.1e6, gain_g=1.0, tau=DEFAULT_TAU, gamma_IQ=DEFAULT_GAMMA_IQ,
                loop_magnitude=DEFAULT_LOOP_MAGNITUDE):
        """Loop with zero total phase and |M R| = ``loop_magnitude`` at Omega_IQ.

        M is a real constant and tau_IQ the smallest non-negative delay that
        cancels the phase of R(Omega_IQ) and of the controller's resonance.
        """
        R = complex(interferometer_response(tau, omega_IQ))
        if abs(R) == 0:
            raise ValueError("interferometer is blind at omega_IQ")
        # phase of H at resonance is -Omega tau_IQ - pi/2
        tau_IQ = ((math.atan2(R.imag, R.real) - math.pi / 2) % TWO_PI) / omega_IQ
        return cls(tau=tau, gain_g=gain_g, gamma_IQ=gamma_IQ, omega_IQ=omega_IQ, tau_IQ=tau_IQ,
                   modulator_M=loop_magnitude / abs(R))


def controller_response(fb: FeedbackParams, omega):
    """H(Omega) = g e^{-i Omega tau_IQ} gamma Omega / (Omega_IQ^2 - Omega^2 + i gamma Omega)."""
    w = np.asarray(omega, dtype=float)
    g = fb.gamma_IQ
    return fb.gain_g * np.exp(-1j * w * fb.tau_IQ) * g * w / (fb.omega_IQ**2 - w**2 + 1j * g * w)


def loop_gain(fb: FeedbackParams, omega):
    """Open-loop product M R H."""
    return fb.M(omega) * interferometer_response(fb.tau, omega) * controller_response(fb, omega)


def suppression(fb: FeedbackParams, omega):
    """Factor 1/|1 + M R H|^2 applied to the open-loop PSD."""
    return 1 / np.abs(1 + loop_gain(fb, omega)) ** 2


def closed_loop_psd(fb: FeedbackParams, S_open, omega):
    """S_fb(Omega) = S(Omega)/|1 + M R H|^2; ``S_open`` may be a scalar or array."""
    S = np.asarray(S_open, dtype=float)
    if np.any(S < 0):
        raise ValueError("S_open must be non-negative")
    return S * suppression(fb, omega)


def effective_psd_at_libration(fb: FeedbackParams, S_open, omega_alpha):
    """Closed-loop phase-noise level [rad^2/s] seen by the libration."""
    return float(closed_loop_psd(fb, S_open, omega_alpha))


def loop_phase(fb: FeedbackParams, omega):
    return np.angle(loop_gain(fb, omega))


def suppression_db(fb: FeedbackParams, omega):
    return -10 * np.log10(suppression(fb, omega))


__all__ = [
    "FIBER_INDEX",
    "DEFAULT_TAU",
    "DEFAULT_GAMMA_IQ",
    "FeedbackParams",
    "interferometer_response",
    "controller_response",
    "loop_gain",
    "suppression",
    "suppression_db",
    "closed_loop_psd",
    "effective_psd_at_libration",
    "loop_phase",
]
