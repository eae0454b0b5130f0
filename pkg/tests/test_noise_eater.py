import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from libcool.noise_eater import (
    DEFAULT_TAU,
    FeedbackParams,
    closed_loop_psd,
    controller_response,
    effective_psd_at_libration,
    interferometer_response,
    loop_phase,
    suppression_db,
)

TWO_PI = 2 * math.pi
W = TWO_PI * 1.1e6
S_OPEN = (TWO_PI * 0.16) ** 2


def test_interferometer_limits():
    assert interferometer_response(1e-6, 0.0) == 0
    assert interferometer_response(1.0, math.pi) == pytest.approx(2.0)


def test_fiber_delay_peaks_near_one_megahertz():
    f = np.linspace(0.1e6, 3e6, 29001)
    R = np.abs(interferometer_response(DEFAULT_TAU, TWO_PI * f))
    f_peak = f[np.argmax(R)]
    assert 0.9e6 <= f_peak <= 1.3e6
    assert f_peak == pytest.approx(1 / (2 * DEFAULT_TAU), rel=1e-3)


def test_controller_shape():
    fb = FeedbackParams.aligned(gain_g=0.7)
    assert abs(controller_response(fb, fb.omega_IQ)) == pytest.approx(0.7)
    assert np.all(controller_response(fb.with_gain(0.0), np.linspace(0, 2 * W, 11)) == 0)
    assert abs(controller_response(fb, 1e-3 * W)) < 1e-5
    assert abs(controller_response(fb, 1e3 * W)) < 1e-5


def test_open_loop_passthrough():
    fb = FeedbackParams.aligned(gain_g=0.0)
    assert effective_psd_at_libration(fb, S_OPEN, W) == pytest.approx(S_OPEN)
    # 0.16 Hz/rtHz in angular units
    assert math.sqrt(effective_psd_at_libration(fb, S_OPEN, W)) / TWO_PI == pytest.approx(0.16)


def test_aligned_loop_gives_twenty_db():
    fb = FeedbackParams.aligned()
    assert loop_phase(fb, fb.omega_IQ) == pytest.approx(0.0, abs=1e-9)
    assert suppression_db(fb, fb.omega_IQ) == pytest.approx(20.0, abs=1e-9)
    assert effective_psd_at_libration(fb, S_OPEN, W) == pytest.approx(S_OPEN / 100, rel=1e-9)


def test_detuned_controller_suppresses_less():
    fb = FeedbackParams.aligned(omega_IQ=1.02 * W)
    assert closed_loop_psd(fb, S_OPEN, W) > closed_loop_psd(fb, S_OPEN, fb.omega_IQ)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.5, 1.5), st.lists(st.floats(0, 5), min_size=2, max_size=6, unique=True))
def test_suppression_monotone_for_small_loop_phase(phase, gains):
    base = FeedbackParams.aligned()
    # rotate the loop phase at Omega_IQ by adding a delay
    fb0 = FeedbackParams(base.tau, 1.0, base.gamma_IQ, base.omega_IQ,
                         base.tau_IQ + (-phase % TWO_PI) / base.omega_IQ, base.modulator_M)
    assert loop_phase(fb0, fb0.omega_IQ) == pytest.approx(phase, abs=1e-6)
    vals = [closed_loop_psd(fb0.with_gain(g), 1.0, fb0.omega_IQ) for g in sorted(gains)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def test_psd_non_negative_and_passthrough_where_h_vanishes():
    fb = FeedbackParams.aligned(gain_g=3.0)
    w = np.linspace(0, 4 * W, 401)
    out = closed_loop_psd(fb, S_OPEN, w)
    assert np.all(out >= 0)
    assert out[0] == S_OPEN
    with pytest.raises(ValueError):
        closed_loop_psd(fb, -1.0, W)


def test_callable_modulator():
    base = FeedbackParams.aligned()
    fb = FeedbackParams(base.tau, 1.0, base.gamma_IQ, base.omega_IQ, base.tau_IQ,
                        lambda w: base.modulator_M * np.ones_like(w))
    assert closed_loop_psd(fb, 1.0, W) == pytest.approx(closed_loop_psd(base, 1.0, W))
