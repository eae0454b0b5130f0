"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` to see the lines inline.
"""

import math
import time

import numpy as np
import pytest

from libcool.analysis import (
    CoolingModel,
    coverage,
    detuning_scan,
    extract_coupling,
    extract_heating,
    gain_scan,
    position_scan,
    synthetic_coupling_data,
    synthetic_heating_data,
)
from libcool.lindblad import FockSpace, build_two_mode, converged_steady_state, exact_reduced_occupation, reduced_generator
from libcool.params import ExperimentParams, derive, load_preset, moment_of_inertia_from_rotation
from libcool.rates import OperatingPoint, gas_heating_rate, phase_noise_heating, steady_state_occupation
from libcool.stochastic import cavity_occupation, ensemble, heating_rate_from_drive, max_step
from libcool.thermometry import (
    DetectorResponse,
    correct_detector_response,
    fit_sidebands,
    occupation_from_fits,
    synthesize_sidebands,
)

TWO_PI = 2 * math.pi
W = TWO_PI * 1.1e6
KAPPA = TWO_PI * 330e3


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return emit


def test_01_parameter_table(verdict):
    t0 = time.perf_counter()
    worst = []
    for name in ("particle1", "particle2"):
        cfg = load_preset(name)
        d = derive(ExperimentParams.from_dict(cfg)).to_json_dict()
        for key, printed in cfg["table"].items():
            worst.append((abs(d[key] / printed - 1), f"{name}.{key}"))
    elapsed = time.perf_counter() - t0
    dev, where = max(worst)
    within = sum(d <= 0.05 for d, _ in worst)
    ok = dev <= 0.05 and elapsed < 1.0
    verdict(1, "parameter table", ok, f"{within}/{len(worst)} entries within 5%, worst {dev:.1%} at {where}, "
                                      f"{elapsed:.2f} s (< 1 s)")


def test_02_headline_occupation(verdict):
    t0 = time.perf_counter()
    op = OperatingPoint(W, KAPPA, W, TWO_PI * 31.5e3, TWO_PI * 0.5e3, 0.0)
    n0 = steady_state_occupation(op).n0
    elapsed = time.perf_counter() - t0
    ok = abs(n0 - 0.042) <= 0.005 and elapsed < 1.0
    verdict(2, "headline occupation", ok, f"n0 = {n0:.4f} (0.042 +- 0.005), {elapsed:.3f} s")


def test_03_inertia_and_gas_heating(verdict):
    inertia = moment_of_inertia_from_rotation(52e3, 300.0)
    gamma_gas = gas_heating_rate(TWO_PI * 6.6e-6, 300.0, TWO_PI * 1.08e6)
    dev_i = abs(inertia / 3.9e-32 - 1)
    dev_g = abs(gamma_gas / (TWO_PI * 40) - 1)
    ok = dev_i <= 0.03 and dev_g <= 0.05
    verdict(3, "inertia and gas heating", ok,
            f"I = {inertia:.3e} kg m^2 ({dev_i:.1%}, tol 3%), "
            f"Gamma_gas/2pi = {gamma_gas / TWO_PI:.1f} Hz at Omega/2pi = 1.08 MHz ({dev_g:.1%}, tol 5%)")


def test_04_detector_correction(verdict):
    factor = correct_detector_response(0.5, DetectorResponse(0.97)) / 0.5
    ok = abs(factor / 1.04 - 1) <= 0.01
    verdict(4, "detector correction", ok, f"factor {factor:.4f} (1.04 within 1%)")


def test_05_reduced_master_equation(verdict):
    t0 = time.perf_counter()
    devs = []
    unconverged = 0
    for heating in (0.01, 0.1, 0.3):
        for ap in (0.0, 0.01, 0.05):
            for am in (0.2, 0.5, 1.0):
                res = converged_steady_state(lambda s: reduced_generator(1.0, heating, ap, am, s),
                                             FockSpace(), top_tol=1e-8)
                unconverged += not res.converged
                devs.append(abs(res.n_lib / exact_reduced_occupation(heating, ap, am) - 1))
    elapsed = time.perf_counter() - t0
    ok = max(devs) <= 1e-6 and unconverged == 0 and elapsed < 10
    verdict(5, "reduced master equation", ok,
            f"max rel dev {max(devs):.2e} over 27 points (tol 1e-6), {unconverged} unconverged, {elapsed:.1f} s")


def test_06_two_mode_master_equation(verdict):
    t0 = time.perf_counter()
    kappa, devs = 0.3, []
    for ratio in (0.01, 0.03):
        op = OperatingPoint(1.0, kappa, 1.0, ratio * kappa, 0.0)
        rs = steady_state_occupation(op)
        op = op.replace(recoil_Gamma_BA=0.4 * (rs.A_minus - rs.A_plus) - rs.A_plus)
        rs = steady_state_occupation(op)
        res = converged_steady_state(lambda s: build_two_mode(op, s), FockSpace(14, 4))
        assert res.space.dim <= 256
        devs.append((ratio, abs(res.n_lib / rs.n0 - 1)))
    elapsed = time.perf_counter() - t0
    ok = all(d <= 4 * r for r, d in devs) and devs[1][1] > devs[0][1] and elapsed < 60
    detail = ", ".join(f"G/kappa={r}: {d:.2%} (tol {4 * r:.0%})" for r, d in devs)
    verdict(6, "two-mode master equation", ok, f"{detail}, decreasing with G/kappa, {elapsed:.1f} s")


def stochastic_point(S, ncav=1e4):
    lam = math.sqrt(ncav * (W**2 + (KAPPA / 2) ** 2))
    return OperatingPoint(W, KAPPA, W, TWO_PI * 31.5e3, 0.0, S, lam)


def test_07_stochastic_cavity_occupation(verdict):
    t0 = time.perf_counter()
    op = stochastic_point(KAPPA / 100)
    dt = 0.8 * max_step(op)
    trajs = [c for _, c, _ in ensemble(op, dt, 20000, 200, seed=1)]
    est = cavity_occupation(trajs, int(10 / op.kappa / dt), time_average=False)
    z = abs(est.value - op.ncav) / est.stderr
    elapsed = time.perf_counter() - t0
    ok = z <= 3 and elapsed < 60
    verdict(7, "stochastic cavity occupation", ok,
            f"<|alpha|^2> = {est.value:.1f} +- {est.stderr:.1f} vs {op.ncav:.1f} ({z:.2f} SE, tol 3), {elapsed:.1f} s")


def drive_records(op, periods=512, n=200, seed=2):
    dt = 0.8 * max_step(op)
    steps = int(periods * TWO_PI / op.omega_alpha / dt) + int(10 / op.kappa / dt) + 1
    return [r for *_, r in ensemble(op, dt, steps, n, seed)]


def test_08_stochastic_heating_rate(verdict):
    t0 = time.perf_counter()
    op = stochastic_point(KAPPA / 50)
    est = heating_rate_from_drive(drive_records(op), W)
    g = phase_noise_heating(op)
    # Monte Carlo error plus the O(S/kappa) truncation of the weak-noise rate
    sigma = math.hypot(est.stderr, (op.psd_S / op.kappa) * g)
    z = abs(est.value - g) / sigma
    S = KAPPA * np.array([1 / 500, 1 / 50])
    rates = [heating_rate_from_drive(drive_records(stochastic_point(s), seed=9), W).value for s in S]
    slope = float(np.diff(np.log(rates))[0] / np.diff(np.log(S))[0])
    elapsed = time.perf_counter() - t0
    ok = z <= 3 and abs(slope - 1) <= 0.1 and elapsed < 300
    verdict(8, "stochastic heating rate", ok,
            f"ratio {est.value / g:.3f} ({z:.2f} combined sigma, tol 3), log-log slope {slope:.3f} (1 +- 0.1), "
            f"{elapsed:.1f} s")


def test_09_thermometry_round_trip(verdict):
    gamma = TWO_PI * 27e3
    devs, hits = [], []
    for n in (0.04, 0.5, 1.0, 5.0):
        spec = synthesize_sidebands(n, gamma, W, noise_floor=0.1)
        n_fit, _ = occupation_from_fits(*fit_sidebands(spec, W, gamma))
        devs.append(abs(n_fit / n - 1))
        h = 0
        for s in np.random.SeedSequence(int(n * 100)).spawn(100):
            spec = synthesize_sidebands(n, gamma, W, noise_floor=1.0, noise=0.01, rng=np.random.default_rng(s))
            n_fit, sigma = occupation_from_fits(*fit_sidebands(spec, W, gamma))
            h += abs(n_fit - n) <= 3 * sigma
        hits.append(int(h))
    ok = max(devs) <= 0.02 and min(hits) >= 95
    verdict(9, "thermometry round trip", ok,
            f"noise-free max rel dev {max(devs):.2e} (tol 2%), 3-sigma coverage {hits}/100 (>= 95)")


def test_10_scan_structure(verdict):
    p1 = CoolingModel.from_preset("particle1")
    p2 = CoolingModel.from_preset("particle2")
    grid = TWO_PI * np.linspace(0.5e6, 2.0e6, 1501)
    scan = detuning_scan(p1.replace(psd_S=0.0), grid)
    off = abs(scan.values[scan.argmin()] * TWO_PI - p1.omega_alpha)
    det_ok = off <= grid[1] - grid[0]
    ky = np.linspace(0, math.pi / 2, 91)[1:]
    n_open = position_scan(p2, ky, gain_g=0.0).n_ss
    n_closed = position_scan(p2, ky, gain_g=1.0).n_ss
    i = int(np.argmin(n_open))
    pos_ok = 0 < i < ky.size - 1 and bool(np.all(np.diff(n_closed) < 0))
    n_gain = gain_scan(p2, np.linspace(0, 10, 101)).n_ss
    gain_ok = bool(np.all(np.diff(n_gain) <= 0))
    ok = det_ok and pos_ok and gain_ok
    verdict(10, "scan structure", ok,
            f"detuning minimum {off / TWO_PI:.0f} Hz from Omega (grid {(grid[1] - grid[0]) / TWO_PI:.0f} Hz); "
            f"open-loop position minimum at ky = {ky[i] / math.pi:.3f} pi, 20 dB curve monotone {pos_ok}; "
            f"gain scan {n_gain[0]:.2f} -> {n_gain[-1]:.3f} monotone {gain_ok}")


def test_11_fit_coverage(verdict):
    p1 = CoolingModel.from_preset("particle1")
    p2 = CoolingModel.from_preset("particle2")
    ky = np.linspace(0.1, 0.5, 20) * math.pi
    f1 = dict(kappa=p1.kappa, delta=p1.omega_alpha, omega_alpha=p1.omega_alpha)
    f2 = dict(G0=p2.G0, kappa=p2.kappa, delta=p2.omega_alpha, omega_alpha=p2.omega_alpha, S=p2.psd_S)
    c1 = coverage(lambda y: extract_coupling(ky, y, **f1),
                  lambda rng: synthetic_coupling_data(p1.G0, ky, rel_noise=0.02, rng=rng, **f1),
                  {"G0": p1.G0}, n_runs=100, seed=11)
    c2 = coverage(lambda y: extract_heating(ky, y, **f2),
                  lambda rng: synthetic_heating_data(p2.Gamma_BA, p2.N0, ky, rel_noise=0.05, rng=rng, **f2),
                  {"Gamma_BA": p2.Gamma_BA, "N0": p2.N0}, n_runs=100, seed=12)
    hits = {**c1, **c2}
    ok = min(hits.values()) >= 90
    verdict(11, "fit coverage", ok, ", ".join(f"{k} {v}/100" for k, v in hits.items()) + " (>= 90 at 2 sigma)")


def test_12_resolved_sideband_limit(verdict):
    errs = []
    for k_over_w in (0.3, 0.1, 0.03):
        kappa = k_over_w * W
        lam = math.sqrt(1e5 * (W**2 + (kappa / 2) ** 2))
        op = OperatingPoint(W, kappa, W, TWO_PI * 47e3, TWO_PI * 0.5e3, kappa / 1e4, lam)
        rs = steady_state_occupation(op)
        errs.append(abs(rs.n_phi / (rs.ncav * op.psd_S / kappa) - 1))
    ok = errs[0] > errs[1] > errs[2] and errs[2] <= 0.03
    verdict(12, "resolved-sideband limit", ok,
            "|ratio - 1| = " + ", ".join(f"{e:.2%}" for e in errs) + " at kappa/Omega = 0.3, 0.1, 0.03 (tol 3%)")
