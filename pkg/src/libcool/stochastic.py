"""Monte Carlo model of the classical phase-noise channel.

A white-noise laser phase phi(t) with <<phi'(t) phi'(s)>> = S delta(t-s)
drives the classical cavity amplitude

    d alpha/dt = -(i Delta + kappa/2) alpha + i Lambda e^{-i phi},

which in turn exerts the libration drive xi = 2 G Re[e^{i phi} alpha].

PSD convention: Welch one-sided densities S1(f) in units^2/Hz with
int S1 df = variance. For a drive xi(t) x on an oscillator the heating
rate is the two-sided spectrum at Omega, which is S1(Omega/2pi)/2; the
factor is pinned by :func:`calibrate_psd_convention`.

Trajectory seeds come from ``SeedSequence(master).spawn(n)``; child ``k``
seeds trajectory ``k``, so results do not depend on how work is split.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, welch

from .errors import InsufficientStatistics, ParameterError, StepSizeError
from .params import TWO_PI, _check
from .rates import OperatingPoint

# heating rate = PSD_TO_RATE * one-sided Welch density at Omega
PSD_TO_RATE = 0.5


@dataclass(frozen=True)
class NoiseTrajectory:
    dt: float
    phi: np.ndarray
    seed: int | None = None

    @property
    def n_steps(self):
        return self.phi.size - 1


@dataclass(frozen=True)
class CavityTrajectory:
    dt: float
    alpha_c: np.ndarray


@dataclass(frozen=True)
class DriveRecord:
    dt: float
    xi: np.ndarray
    discard: int = 0  # leading samples inside the cavity transient


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int

    def __float__(self):
        return float(self.value)


def child_seeds(master, n):
    """Per-trajectory 64-bit seeds spawned from ``master``."""
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(master).spawn(n)]


def phase_trajectory(psd_S, dt, n_steps, seed=None) -> NoiseTrajectory:
    """Cumulative phase with i.i.d. N(0, psd_S dt) increments and phi[0] = 0."""
    psd_S = _check("psd_S", psd_S, nonneg=True)
    dt = _check("dt", dt, positive=True)
    if int(n_steps) != n_steps or n_steps < 1:
        raise ParameterError("n_steps", "must be a positive integer")
    rng = np.random.default_rng(seed)
    inc = rng.normal(0.0, math.sqrt(psd_S * dt), int(n_steps)) if psd_S else np.zeros(int(n_steps))
    return NoiseTrajectory(dt, np.concatenate([[0.0], np.cumsum(inc)]), seed)


def max_step(op: OperatingPoint):
    """Largest dt accepted by :func:`cavity_sde`, 0.05 min(2pi/|Delta|, 2/kappa)."""
    lim = 2 / op.kappa
    if op.detuning:
        lim = min(lim, TWO_PI / abs(op.detuning))
    return 0.05 * lim


def fixed_point(op: OperatingPoint):
    return 1j * op.drive_Lambda / (1j * op.detuning + op.kappa / 2)


def cavity_sde(op: OperatingPoint, noise: NoiseTrajectory, alpha0=None) -> CavityTrajectory:
    """Exponential integration of the driven cavity amplitude.

    The homogeneous rotation and decay are exact over a step; the phase is
    held at phi_k within step k. ``alpha0`` defaults to the noiseless
    fixed point i Lambda/(i Delta + kappa/2).
    """
    dt = noise.dt
    if dt > max_step(op) * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.3g} s exceeds 0.05 min(2pi/|Delta|, 2/kappa) = {max_step(op):.3g} s")
    z = 1j * op.detuning + op.kappa / 2
    a = np.exp(-z * dt)
    gain = 1j * op.drive_Lambda * (1 - a) / z
    u = gain * np.exp(-1j * noise.phi[:-1])
    a0 = fixed_point(op) if alpha0 is None else complex(alpha0)
    # alpha_{k+1} = a alpha_k + u_k as a first-order recursion
    rest, _ = lfilter([1.0], [1.0, -a], u, zi=np.array([a * a0]))
    return CavityTrajectory(dt, np.concatenate([[a0], rest]))


def drive_record(op: OperatingPoint, noise: NoiseTrajectory, cav: CavityTrajectory, transient=None) -> DriveRecord:
    """xi(t) = 2 G Re[e^{i phi} alpha_c]; ``transient`` (s) defaults to 10/kappa."""
    if noise.phi.shape != cav.alpha_c.shape or noise.dt != cav.dt:
        raise ParameterError("grid", "noise and cavity trajectories are not aligned")
    xi = 2 * op.coupling_G * np.real(np.exp(1j * noise.phi) * cav.alpha_c)
    t_tr = 10 / op.kappa if transient is None else transient
    return DriveRecord(noise.dt, xi, int(math.ceil(t_tr / noise.dt)))


def mean_drive(op: OperatingPoint):
    """Ensemble mean of xi at finite S: 2 G Re[i Lambda/(i Delta + kappa/2 + S/2)]."""
    return 2 * op.coupling_G * (1j * op.drive_Lambda / (1j * op.detuning + op.kappa / 2 + op.psd_S / 2)).real


def exact_cavity_occupation(op: OperatingPoint):
    """Stationary <|alpha_c|^2> for any S, which tends to ncav as S -> 0."""
    k, s = op.kappa / 2, op.psd_S / 2
    return op.drive_Lambda**2 * (k + s) / (k * ((k + s) ** 2 + op.detuning**2))


def simulate(op: OperatingPoint, dt, n_steps, seed):
    noise = phase_trajectory(op.psd_S, dt, n_steps, seed)
    cav = cavity_sde(op, noise)
    return noise, cav, drive_record(op, noise, cav)


def ensemble(op: OperatingPoint, dt, n_steps, n_traj, seed):
    """Iterate ``(noise, cavity, drive)`` for ``n_traj`` spawned seeds."""
    for s in child_seeds(seed, n_traj):
        yield simulate(op, dt, n_steps, s)


def cavity_occupation(trajectories, discard=0, time_average=True) -> Estimate:
    """Ensemble <|alpha_c|^2> with the standard error across trajectories.

    Each trajectory contributes one sample: its time average after
    ``discard`` samples, or its final value when ``time_average`` is off.
    """
    samples = []
    for cav in trajectories:
        p = np.abs(cav.alpha_c[discard:]) ** 2
        samples.append(p.mean() if time_average else p[-1])
    samples = np.asarray(samples)
    if samples.size < 2:
        raise InsufficientStatistics("need at least two trajectories")
    return Estimate(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)), samples.size)


def drive_psd(record: DriveRecord, segment_periods, omega_alpha):
    x = record.xi[record.discard :]
    fs = 1 / record.dt
    nper = int(round(segment_periods * TWO_PI / omega_alpha / record.dt))
    if nper > x.size:
        raise InsufficientStatistics(f"record of {x.size} samples is shorter than one segment ({nper})")
    return welch(x - x.mean(), fs=fs, window="hann", nperseg=nper, noverlap=nper // 2,
                 detrend="constant", scaling="density", return_onesided=True)


def heating_rate_from_drive(records, omega_alpha, segment_periods=64, min_records=100, min_periods=50,
                            max_rel_err=0.2) -> Estimate:
    """Heating rate [rad/s] of a drive xi x at Omega_alpha from its fluctuation spectrum.

    Each record's one-sided Welch density is interpolated at
    Omega_alpha/2pi and scaled by ``PSD_TO_RATE``; the estimate is the
    mean over records with the standard error across them.
    """
    omega_alpha = _check("omega_alpha", omega_alpha, positive=True)
    records = list(records)
    if len(records) < min_records:
        raise InsufficientStatistics(f"{len(records)} records, need >= {min_records}")
    f0 = omega_alpha / TWO_PI
    vals = []
    for r in records:
        kept = r.xi.size - r.discard
        if kept * r.dt * f0 < min_periods:
            raise InsufficientStatistics(f"record spans {kept * r.dt * f0:.1f} periods, need >= {min_periods}")
        f, p = drive_psd(r, min(segment_periods, kept * r.dt * f0), omega_alpha)
        vals.append(PSD_TO_RATE * np.interp(f0, f, p))
    vals = np.asarray(vals)
    mean = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(vals.size))
    if mean == 0.0 and err == 0.0:
        return Estimate(0.0, 0.0, vals.size)
    if err > max_rel_err * abs(mean):
        raise InsufficientStatistics(f"relative standard error {err / abs(mean):.2f} > {max_rel_err}")
    return Estimate(mean, err, vals.size)


def oscillator_heating(xi, dt, omega_alpha):
    """Classical energy gain of b' = -i Omega b - i xi, started at rest.

    Returns |b(t)|^2 on the sample grid; xi is held constant within each
    step and the rotation is integrated exactly. Used to pin the PSD
    convention independently of any spectral estimator.
    """
    a = np.exp(-1j * omega_alpha * dt)
    u = -np.asarray(xi, float) * (1 - a) / omega_alpha  # -i xi (1 - a)/(i Omega)
    b = lfilter([1.0], [1.0, -a], u)
    return np.abs(np.concatenate([[0.0], b])) ** 2


def modulated_carrier(omega_alpha, mod_rate, depth, dt, n_steps, rng):
    """Test drive xi = m(t) cos(Omega t), m an Ornstein-Uhlenbeck amplitude.

    m has correlation depth^2 exp(-mod_rate |tau|), so the exact two-sided
    spectrum at Omega is depth^2/4 * [2/mod_rate + 2 mod_rate/(mod_rate^2 + 4 Omega^2)].
    """
    rho = math.exp(-mod_rate * dt)
    e = rng.normal(0.0, depth * math.sqrt(1 - rho**2), n_steps)
    e[0] = rng.normal(0.0, depth)
    m = lfilter([1.0], [1.0, -rho], e)
    t = dt * np.arange(n_steps)
    return m * np.cos(omega_alpha * t)


def modulated_carrier_rate(omega_alpha, mod_rate, depth):
    g = mod_rate
    return depth**2 / 4 * (2 / g + 2 * g / (g**2 + 4 * omega_alpha**2))


@dataclass(frozen=True)
class Calibration:
    exact_over_psd: float  # exact two-sided rate / one-sided Welch density
    exact_over_psd_err: float
    oscillator_over_psd: float  # simulated energy growth / Welch density
    oscillator_over_psd_err: float


def calibrate_psd_convention(omega_alpha=1.0, mod_rate=0.05, depth=0.01, dt=0.1, seed=0,
                             psd_records=200, psd_periods=400, osc_traj=10000, osc_periods=100, batches=10):
    """Pin the factor between the one-sided Welch density at Omega and the heating rate.

    The test drive is :func:`modulated_carrier`, whose heating rate is
    known in closed form. Two routes are returned: the closed-form rate
    over the ensemble Welch density, and the energy growth of classical
    oscillators driven by independent realizations (slope of the ensemble
    mean over the second half of each run, batch means for the error) over
    the same density. Both should equal ``PSD_TO_RATE``.
    """
    ss = np.random.SeedSequence(seed)
    s_psd, s_osc = ss.spawn(2)
    f0 = omega_alpha / TWO_PI
    n = int(round(psd_periods / f0 / dt))
    vals = []
    for child in s_psd.spawn(psd_records):
        xi = modulated_carrier(omega_alpha, mod_rate, depth, dt, n, np.random.default_rng(child))
        f, p = drive_psd(DriveRecord(dt, xi), 64, omega_alpha)
        vals.append(np.interp(f0, f, p))
    vals = np.asarray(vals)
    psd, psd_rel = vals.mean(), vals.std(ddof=1) / vals.mean() / math.sqrt(vals.size)

    exact = modulated_carrier_rate(omega_alpha, mod_rate, depth)
    n = int(round(osc_periods / f0 / dt))
    t = dt * np.arange(n + 1)
    half = t >= t[-1] / 2
    slopes = []
    per_batch = osc_traj // batches
    for child in s_osc.spawn(batches):
        rng = np.random.default_rng(child)
        mean_e = np.zeros(n + 1)
        for _ in range(per_batch):
            mean_e += oscillator_heating(modulated_carrier(omega_alpha, mod_rate, depth, dt, n, rng), dt, omega_alpha)
        slopes.append(np.polyfit(t[half], mean_e[half] / per_batch, 1)[0])
    slopes = np.asarray(slopes)
    slope, slope_rel = slopes.mean(), slopes.std(ddof=1) / slopes.mean() / math.sqrt(batches)
    r_exact = exact / psd
    r_osc = slope / psd
    return Calibration(float(r_exact), float(r_exact * psd_rel),
                       float(r_osc), float(r_osc * math.hypot(psd_rel, slope_rel)))


def trajectory_csv(noise: NoiseTrajectory, cav: CavityTrajectory, drive: DriveRecord):
    """Trajectory table as CSV text, 9 significant digits.

    Columns: t_s, phi_rad, re_alpha_sqrt_photons, im_alpha_sqrt_photons,
    xi_rad_per_s.
    """
    t = noise.dt * np.arange(noise.phi.size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", "phi_rad", "re_alpha_sqrt_photons", "im_alpha_sqrt_photons", "xi_rad_per_s"])
    for row in zip(t, noise.phi, cav.alpha_c.real, cav.alpha_c.imag, drive.xi):
        w.writerow([f"{v:.9g}" for v in row])
    return buf.getvalue()


def dump_csv(path, noise: NoiseTrajectory, cav: CavityTrajectory, drive: DriveRecord):
    with open(path, "w", newline="") as fh:
        fh.write(trajectory_csv(noise, cav, drive))


__all__ = [
    "PSD_TO_RATE",
    "max_step",
    "NoiseTrajectory",
    "CavityTrajectory",
    "DriveRecord",
    "Estimate",
    "child_seeds",
    "phase_trajectory",
    "cavity_sde",
    "drive_record",
    "mean_drive",
    "exact_cavity_occupation",
    "simulate",
    "ensemble",
    "cavity_occupation",
    "heating_rate_from_drive",
    "oscillator_heating",
    "Calibration",
    "calibrate_psd_convention",
    "dump_csv",
    "trajectory_csv",
]
