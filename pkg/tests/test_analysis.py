import math

import numpy as np
import pytest

from libcool.analysis import (
    CONVERGED,
    DEGENERATE,
    CoolingModel,
    coverage,
    detuning_scan,
    extract_coupling,
    extract_heating,
    extrapolate_damping,
    fit_transient,
    gain_scan,
    gas_damping_fit,
    initial_slope,
    occupation_model,
    optical_damping,
    position_scan,
    slope_ratios,
    synthetic_coupling_data,
    synthetic_heating_data,
    transient_occupation,
)
from libcool.errors import ParameterError
from libcool.rates import ZERO_COUPLING

TWO_PI = 2 * math.pi
P1 = CoolingModel.from_preset("particle1")
P2 = CoolingModel.from_preset("particle2")
KY = np.linspace(0.1, 0.5, 20) * math.pi


def test_models_from_presets():
    assert P1.G0 == pytest.approx(TWO_PI * 46.9e3)
    assert P1.phase_phi == pytest.approx(0.1 * math.pi)
    assert P2.N0 == 6.8e6
    assert P2.psd_S == pytest.approx((TWO_PI * 0.16) ** 2)
    op = P1.operating_point()
    assert op.coupling_G == pytest.approx(TWO_PI * 46.9e3 * math.sin(0.1 * math.pi))
    assert op.ncav == pytest.approx(1.9e6 * math.sin(0.1 * math.pi) ** 2)


def test_particle1_detuning_minimum():
    scan = detuning_scan(P1, TWO_PI * np.linspace(0.3e6, 3e6, 271))
    i = scan.argmin()
    assert scan.n_ss[i] == pytest.approx(0.5, abs=0.2)
    assert scan.values[i] == pytest.approx(1.1e6, abs=0.1e6)


def test_noise_free_minimum_at_mechanical_frequency():
    grid = TWO_PI * np.linspace(0.5e6, 2.0e6, 1501)
    scan = detuning_scan(P1.replace(psd_S=0.0), grid)
    assert abs(scan.values[scan.argmin()] * TWO_PI - P1.omega_alpha) <= grid[1] - grid[0]


def test_minimum_approaches_omega_as_noise_vanishes():
    grid = TWO_PI * np.linspace(0.5e6, 2.0e6, 3001)
    dists = []
    for scale in (100.0, 10.0, 1.0, 0.0):
        scan = detuning_scan(P1.replace(psd_S=P1.psd_S * scale), grid)
        dists.append(abs(scan.values[scan.argmin()] * TWO_PI - P1.omega_alpha))
    assert all(b <= a for a, b in zip(dists, dists[1:]))
    assert dists[-1] <= grid[1] - grid[0]


def test_single_point_and_invalid_grids():
    scan = detuning_scan(P1, [P1.omega_alpha])
    assert len(scan.to_csv().strip().splitlines()) == 2
    with pytest.raises(ParameterError):
        detuning_scan(P1, [])
    with pytest.raises(ParameterError):
        detuning_scan(P1, [4 * P1.omega_alpha])
    with pytest.raises(ParameterError):
        position_scan(P1, [2.0])


def test_position_scan_structure():
    ky = np.linspace(0, math.pi / 2, 91)
    open_loop = position_scan(P2, ky, gain_g=0.0)
    closed = position_scan(P2, ky, gain_g=1.0)
    # the node row is kept and flagged
    assert open_loop.rates[0].status == ZERO_COUPLING
    n0, n1 = open_loop.n_ss[1:], closed.n_ss[1:]
    i = int(np.argmin(n0))
    assert 0 < i < n0.size - 1
    assert np.all(np.diff(n1) < 0)
    assert n0[-1] > 1
    # back-action limit below, the suppressed phase-noise floor above
    assert P2.operating_point() and 0.042 < n1[-1] < 0.08
    # the two curves cross at most once
    sign = np.sign(n0 - n1)
    assert np.count_nonzero(np.diff(sign[sign != 0])) <= 1


def test_position_scan_without_noise_is_back_action_limited():
    ky = np.linspace(0.05, math.pi / 2, 60)
    scan = position_scan(P2.replace(psd_S=0.0), ky)
    assert np.all(np.diff(scan.n_ss) < 0)
    ratio = scan.n_ss * np.sin(ky) ** 2
    np.testing.assert_allclose(ratio, ratio[-1], rtol=1e-12)


def test_gain_scan_monotone_to_back_action_limit():
    scan = gain_scan(P2, np.linspace(0, 10, 101))
    assert np.all(np.diff(scan.n_ss) <= 0)
    assert scan.n_ss[0] > 1
    assert scan.n_ss[-1] == pytest.approx(0.042, abs=0.005)
    assert "S_fb_rad2_per_s" in scan.to_csv().splitlines()[0]


def fixed(model):
    return dict(kappa=model.kappa, delta=model.omega_alpha, omega_alpha=model.omega_alpha)


def test_extract_coupling_exact_and_noisy():
    f = fixed(P1)
    y = optical_damping(P1.G0 * np.sin(KY), **f)
    rep = extract_coupling(KY, y, **f)
    assert rep.status == CONVERGED
    assert rep.params["G0"] == pytest.approx(P1.G0, rel=1e-10)

    rng = np.random.default_rng(11)
    G0 = TWO_PI * 47e3
    y = synthetic_coupling_data(G0, KY, rel_noise=0.02, rng=rng, **f)
    rep = extract_coupling(KY, y, **f)
    assert rep.params["G0"] / TWO_PI == pytest.approx(47e3, abs=1e3)


def test_extract_coupling_particle2():
    f = fixed(P2)
    y = synthetic_coupling_data(P2.G0, KY, rel_noise=0.01, rng=np.random.default_rng(2), **f)
    rep = extract_coupling(KY, y, **f)
    assert rep.params["G0"] / TWO_PI == pytest.approx(31.5e3, rel=0.01)


def test_extract_coupling_linear_oracle():
    f = fixed(P1)
    y = synthetic_coupling_data(P1.G0, KY, rel_noise=0.05, rng=np.random.default_rng(5), **f)
    basis = optical_damping(1.0, **f) * np.sin(KY) ** 2
    # relative weights: minimize sum ((G0^2 b - y)/y)^2 in closed form
    g2 = np.sum(basis / y) / np.sum(basis**2 / y**2)
    rep = extract_coupling(KY, y, **f)
    assert rep.params["G0"] == pytest.approx(math.sqrt(g2), rel=1e-8)


def test_extract_coupling_degenerate():
    rep = extract_coupling(np.zeros(5), np.ones(5), **fixed(P1))
    assert rep.status == DEGENERATE
    with pytest.raises(ParameterError):
        extract_coupling(KY[:3], np.ones(3), **fixed(P1))


def heating_fixed(model, S=None):
    return dict(G0=model.G0, kappa=model.kappa, delta=model.omega_alpha, omega_alpha=model.omega_alpha,
                S=model.psd_S if S is None else S)


def test_extract_heating_exact():
    f = heating_fixed(P2)
    y = occupation_model(KY, P2.Gamma_BA, P2.N0, **f)
    rep = extract_heating(KY, y, **f)
    assert rep.params["Gamma_BA"] == pytest.approx(P2.Gamma_BA, rel=1e-9)
    assert rep.params["N0"] == pytest.approx(P2.N0, rel=1e-9)


def test_extract_heating_linear_oracle():
    f = heating_fixed(P2)
    y = synthetic_heating_data(P2.Gamma_BA, P2.N0, KY, rel_noise=0.05, rng=np.random.default_rng(8), **f)
    a0 = occupation_model(KY, 1.0, 0.0, **f)
    a1 = occupation_model(KY, 0.0, 1.0, **f)
    A = np.column_stack([a0, a1]) / y[:, None]
    sol, *_ = np.linalg.lstsq(A, np.ones_like(y), rcond=None)
    rep = extract_heating(KY, y, **f)
    assert rep.params["Gamma_BA"] == pytest.approx(sol[0], rel=1e-7)
    assert rep.params["N0"] == pytest.approx(sol[1], rel=1e-7)


def test_extract_heating_without_noise_is_degenerate():
    f = heating_fixed(P2, S=0.0)
    y = occupation_model(KY, P2.Gamma_BA, P2.N0, **f)
    rep = extract_heating(KY, y, **f)
    assert rep.status == DEGENERATE
    assert math.isnan(rep.params["N0"])
    assert rep.params["Gamma_BA"] == pytest.approx(P2.Gamma_BA, rel=1e-9)


def test_coupling_fit_coverage():
    f = fixed(P1)
    hits = coverage(
        lambda y: extract_coupling(KY, y, **f),
        lambda rng: synthetic_coupling_data(P1.G0, KY, rel_noise=0.02, rng=rng, **f),
        {"G0": P1.G0},
        n_runs=100,
        seed=1,
    )
    assert hits["G0"] >= 90


def test_heating_fit_coverage():
    f = heating_fixed(P2)
    hits = coverage(
        lambda y: extract_heating(KY, y, **f),
        lambda rng: synthetic_heating_data(P2.Gamma_BA, P2.N0, KY, rel_noise=0.05, rng=rng, **f),
        {"Gamma_BA": P2.Gamma_BA, "N0": P2.N0},
        n_runs=100,
        seed=2,
    )
    assert hits["Gamma_BA"] >= 90 and hits["N0"] >= 90


def test_gas_damping_extrapolation():
    p = np.array([1e-3, 2e-3, 5e-3, 1e-2])
    slope = TWO_PI * 1.32e3
    rep = gas_damping_fit(p, slope * p)
    assert rep.params["slope"] == pytest.approx(slope, rel=1e-12)
    g, _ = extrapolate_damping(rep, 5e-9)
    assert g / TWO_PI == pytest.approx(6.6e-6, rel=0.01)
    assert gas_damping_fit(np.zeros(3), np.ones(3)).status == DEGENERATE


def test_gas_damping_noisy_and_ratios():
    rng = np.random.default_rng(3)
    p = np.linspace(1e-3, 1e-2, 10)
    rep = gas_damping_fit(p, 5.0 * p * (1 + 0.01 * rng.standard_normal(p.size)))
    assert rep.covers("slope", 5.0, k=3)
    np.testing.assert_allclose(slope_ratios([0.88, 0.61, 0.74], reference=1), [1.44, 1.0, 1.21], atol=0.01)
    assert np.round(slope_ratios([0.88, 0.61, 0.74]), 1).tolist() == [1.4, 1.0, 1.2]


def test_transient_limits():
    t = np.linspace(0, 1e-4, 11)
    gamma, Gamma = TWO_PI * 27e3, 1.33e5
    np.testing.assert_allclose(transient_occupation(Gamma / gamma, gamma, Gamma, t), Gamma / gamma, rtol=1e-12)
    np.testing.assert_allclose(transient_occupation(0.04, 0.0, Gamma, t), 0.04 + Gamma * t, rtol=1e-15)
    np.testing.assert_allclose(transient_occupation(0.04, 1e-12, Gamma, t), 0.04 + Gamma * t, rtol=1e-9)


def test_transient_heating_rate():
    # with the loop off the final occupation is about 3, so gamma ~ Gamma / 3
    n0, gamma, Gamma = 0.04, 4.0e4, 1.33e5
    t = np.linspace(0, 1e-7, 11)
    n = transient_occupation(n0, gamma, Gamma, t)
    slope = np.polyfit(t, n, 1)[0]
    assert slope == pytest.approx(Gamma, rel=0.1)
    assert initial_slope(n0, gamma, Gamma) == pytest.approx(slope, rel=0.01)
    n_final = transient_occupation(n0, gamma, Gamma, [100 / gamma])[0]
    assert gamma * n_final == pytest.approx(Gamma, rel=0.1)


def test_fit_transient_recovers_parameters():
    n0, gamma, Gamma = 0.04, TWO_PI * 27e3, 1.33e5
    t = np.linspace(0, 5 / gamma, 60)
    n = transient_occupation(n0, gamma, Gamma, t)
    rep = fit_transient(t, n)
    assert rep.params["gamma_opt"] == pytest.approx(gamma, rel=1e-6)
    assert rep.params["Gamma_total"] == pytest.approx(Gamma, rel=1e-6)
    assert rep.params["n0"] == pytest.approx(n0, rel=1e-5)


def test_fit_report_json():
    rep = gas_damping_fit([1.0, 2.0, 3.0], [2.0, 4.1, 5.9])
    d = rep.to_json_dict()
    assert d["status"] == CONVERGED and d["params"]["slope"] > 0
