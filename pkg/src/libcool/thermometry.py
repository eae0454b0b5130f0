"""Sideband thermometry: Lorentzian spectra, fits and occupation inference.

Spectra are kept in arbitrary units on a frequency axis in Hz. The Stokes
sideband sits at -Omega_alpha/2pi with area proportional to n+1, the
anti-Stokes sideband at +Omega_alpha/2pi with area proportional to n.
An uneven detector response multiplies the recorded asymmetry by
``c_ratio``; :func:`correct_detector_response` is the exact inverse.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError, NonphysicalAsymmetry, ParameterError
from .params import TWO_PI, _check


@dataclass(frozen=True)
class Spectrum:
    freq: np.ndarray  # Hz
    psd: np.ndarray  # arbitrary units
    noise_floor: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.freq, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        if f.ndim != 1 or f.shape != p.shape:
            raise ParameterError("spectrum", "freq and psd must be 1-D arrays of equal length")
        if f.size < 2 or np.any(np.diff(f) <= 0):
            raise ParameterError("spectrum.freq", "must be strictly increasing")
        if not (np.all(np.isfinite(p)) and np.all(p >= 0)):
            raise ParameterError("spectrum.psd", "must be finite and non-negative")
        object.__setattr__(self, "freq", f)
        object.__setattr__(self, "psd", p)

    def window(self, lo, hi):
        m = (self.freq >= lo) & (self.freq <= hi)
        return self.freq[m], self.psd[m]

    def area(self, lo=-np.inf, hi=np.inf):
        """Trapezoidal area above the noise floor in [lo, hi]."""
        f, p = self.window(lo, hi)
        return float(np.trapezoid(p - self.noise_floor, f))


@dataclass(frozen=True)
class LorentzianFit:
    center: float  # Hz
    fwhm: float  # Hz
    area: float  # units * Hz
    offset: float
    covariance: np.ndarray = field(repr=False)
    n_points: int = 0

    @property
    def stderr(self):
        """Standard errors of (center, fwhm, area, offset)."""
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def area_err(self):
        return float(self.stderr[2])

    @property
    def height(self):
        return 2 * self.area / (math.pi * self.fwhm)

    def to_json_dict(self):
        return {
            "center_Hz": self.center,
            "fwhm_Hz": self.fwhm,
            "area_arb_Hz": self.area,
            "offset_arb": self.offset,
            "stderr": dict(zip(("center_Hz", "fwhm_Hz", "area_arb_Hz", "offset_arb"), self.stderr.tolist())),
            "covariance": np.asarray(self.covariance).tolist(),
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class DetectorResponse:
    c_ratio: float = 1.0  # c_- / c_+

    def __post_init__(self):
        _check("c_ratio", self.c_ratio, positive=True)


def lorentzian(f, center, fwhm, area, offset=0.0):
    hw = fwhm / 2
    return area * hw / math.pi / ((f - center) ** 2 + hw**2) + offset


# --- occupation arithmetic --------------------------------------------------


def occupation_from_asymmetry(a_aS, a_S):
    """Occupation n = a/(1-a) from the sideband area ratio a = a_aS/a_S."""
    a_aS = _check("a_aS", a_aS, nonneg=True)
    a_S = _check("a_S", a_S, positive=True)
    a = a_aS / a_S
    if a >= 1:
        raise NonphysicalAsymmetry(f"anti-Stokes area {a_aS:.4g} >= Stokes area {a_S:.4g}")
    return a / (1 - a)


def occupation_from_fits(fit_aS: LorentzianFit, fit_S: LorentzianFit, resp: DetectorResponse | None = None):
    """Occupation and its propagated standard error from two sideband fits.

    Areas are treated as independent. With ``resp`` the inferred value is
    corrected for the detector response.
    """
    a_aS = max(fit_aS.area, 0.0)
    n = occupation_from_asymmetry(a_aS, fit_S.area)
    a = a_aS / fit_S.area
    rel2 = (fit_S.area_err / fit_S.area) ** 2
    var_a = (fit_aS.area_err / fit_S.area) ** 2 + a**2 * rel2
    sigma = math.sqrt(var_a) / (1 - a) ** 2
    if resp is not None:
        n_corr = correct_detector_response(n, resp)
        # dn/dn_inf of the response correction
        denom = resp.c_ratio * (n + 1) - n
        sigma *= abs(resp.c_ratio / denom**2)
        n = n_corr
    return n, sigma


def correct_detector_response(n_inf, resp: DetectorResponse):
    """True occupation from the one inferred with an uneven detector response."""
    n_inf = _check("n_inf", n_inf, nonneg=True)
    denom = resp.c_ratio * (n_inf + 1) - n_inf
    if denom <= 0:
        raise NonphysicalAsymmetry(
            f"response correction undefined: c_ratio (n_inf+1) - n_inf = {denom:.4g} <= 0"
        )
    return n_inf / denom


def detected_areas(n, resp: DetectorResponse, scale=1.0):
    """Sideband areas ``(a_aS, a_S)`` recorded by a detector with response ``resp``.

    The recorded asymmetry is c_ratio n/(n+1), the forward model whose
    inverse is :func:`correct_detector_response`.
    """
    n = _check("n", n, nonneg=True)
    return scale * resp.c_ratio * n, scale * (n + 1)


def calibration_factor(n_ref, homodyne_area):
    """Occupation-per-area constant C_n = (2 n_ref + 1) / area."""
    n_ref = _check("n_ref", n_ref, nonneg=True)
    homodyne_area = _check("homodyne_area", homodyne_area, positive=True)
    return (2 * n_ref + 1) / homodyne_area


# --- synthesis --------------------------------------------------------------


def synthesize_sidebands(
    n,
    gamma_opt,
    omega_alpha,
    noise_floor=0.0,
    resp: DetectorResponse | None = None,
    n_points=4001,
    scale=1.0,
    noise=0.0,
    rng=None,
) -> Spectrum:
    """Two-Lorentzian heterodyne spectrum with a flat floor.

    The Stokes and anti-Stokes lines sit at -+Omega_alpha/2pi with the
    areas of :func:`detected_areas`, both with FWHM gamma_opt/2pi. The grid spans +-(Omega_alpha +
    10 gamma_opt)/2pi. ``noise`` adds white Gaussian noise with standard
    deviation ``noise`` times the Stokes peak height; the floor should be
    high enough that the result stays non-negative.
    """
    n = _check("n", n, nonneg=True)
    gamma_opt = _check("gamma_opt", gamma_opt, positive=True)
    omega_alpha = _check("omega_alpha", omega_alpha, positive=True)
    noise_floor = _check("noise_floor", noise_floor, nonneg=True)
    resp = resp or DetectorResponse()
    fc, fwhm = omega_alpha / TWO_PI, gamma_opt / TWO_PI
    span = fc + 10 * fwhm
    f = np.linspace(-span, span, n_points)
    a_aS, a_S = detected_areas(n, resp, scale)
    psd = lorentzian(f, -fc, fwhm, a_S) + lorentzian(f, fc, fwhm, a_aS) + noise_floor
    if noise:
        if rng is None:
            raise ParameterError("rng", "a generator is required when noise > 0")
        peak = 2 * max(a_S, a_aS) / (math.pi * fwhm)
        psd = psd + rng.normal(0.0, noise * peak, size=f.size)
        if np.any(psd < 0):
            raise ParameterError("noise_floor", "too low for the requested noise; psd went negative")
    return Spectrum(f, psd, noise_floor)


# --- fitting ----------------------------------------------------------------


def _initial_guess(f, p):
    i = int(np.argmax(p))
    floor = float(np.percentile(p, 10))
    above = np.clip(p - floor, 0, None)
    area = float(np.trapezoid(above, f))
    if area <= 0:
        raise FitError("degenerate window: no signal above the floor")
    mean = float(np.trapezoid(f * above, f)) / area
    var = float(np.trapezoid((f - mean) ** 2 * above, f)) / area
    # a truncated Lorentzian has a finite second moment set by the window;
    # the peak-height estimate is the more robust width guess
    width_h = 2 * area / (math.pi * max(p[i] - floor, 1e-300))
    width = min(width_h, 2 * math.sqrt(var)) if var > 0 else width_h
    return f[i], max(width, 2 * (f[1] - f[0])), area, floor


def _fit_scaled(x, y, p0, n_peaks):
    # parameters per peak: (center, log fwhm, area), then offset; all scaled
    def model(q):
        out = np.full_like(x, q[-1])
        for k in range(n_peaks):
            c, lw, a = q[3 * k : 3 * k + 3]
            hw = math.exp(lw) / 2
            out += a * hw / math.pi / ((x - c) ** 2 + hw**2)
        return out

    def jac(q):
        J = np.empty((x.size, q.size))
        for k in range(n_peaks):
            c, lw, a = q[3 * k : 3 * k + 3]
            hw = math.exp(lw) / 2
            d = (x - c) ** 2 + hw**2
            J[:, 3 * k] = a * hw / math.pi * 2 * (x - c) / d**2
            # d/d(lw) of a hw/(pi d) with d hw/d lw = hw
            J[:, 3 * k + 1] = a / math.pi * (hw / d - 2 * hw**3 / d**2)
            J[:, 3 * k + 2] = hw / math.pi / d
        J[:, -1] = 1.0
        return J

    res = least_squares(lambda q: model(q) - y, p0, jac=jac, method="trf",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    return res


def fit_lorentzian(spec: Spectrum, window, check_ambiguity=True) -> LorentzianFit:
    """Least-squares fit of one Lorentzian plus constant offset inside ``window``.

    The covariance is s^2 (J^T J)^-1 with s^2 the residual variance. When
    the residuals show a second resolvable line, a two-peak model is tried
    and :class:`FitError` is raised if it describes the data much better,
    rather than silently returning an average of both lines.
    """
    lo, hi = window
    f, p = spec.window(lo, hi)
    if f.size < 20:
        raise FitError(f"window [{lo:.6g}, {hi:.6g}] Hz holds {f.size} points, need >= 20")
    if np.ptp(p) <= 1e-12 * max(abs(p).max(), 1e-300):
        raise FitError("degenerate window: flat spectrum")

    c0, w0, a0, off0 = _initial_guess(f, p)
    # work in units of the initial width and peak height
    fs, ys = w0, float(p.max())
    x = (f - c0) / fs
    y = p / ys
    q0 = np.array([0.0, 0.0, a0 / (fs * ys), off0 / ys])
    res = _fit_scaled(x, y, q0, 1)
    if not res.success:
        raise FitError(f"least squares did not converge: {res.message}")
    J = res.jac
    scale = np.linalg.norm(J) * max(np.linalg.norm(y), 1.0)
    if res.optimality > 1e-8 * scale:
        raise FitError(f"gradient norm {res.optimality:.3g} not small; fit unconverged")

    m, npar = x.size, 4
    s2 = 2 * res.cost / (m - npar)
    try:
        cov_q = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular Jacobian; parameters not identifiable") from exc

    c, lw, a, off = res.x
    fwhm_s = math.exp(lw)
    if check_ambiguity:
        _check_second_peak(x, y, res, fwhm_s)

    # back to physical units; fwhm = fs e^{lw}
    T = np.diag([fs, fs * fwhm_s, fs * ys, ys])
    cov = T @ cov_q @ T
    fit = LorentzianFit(
        center=c0 + c * fs,
        fwhm=fwhm_s * fs,
        area=a * fs * ys,
        offset=off * ys,
        covariance=cov,
        n_points=int(m),
    )
    if fit.area < 0:
        raise FitError("fitted area is negative")
    return fit


def _check_second_peak(x, y, res, fwhm):
    resid = res.fun
    height = float(np.max(y - res.x[-1]))
    rms = float(np.sqrt(np.mean(resid**2)))
    if np.max(np.abs(resid)) < max(0.05 * height, 5 * rms):
        return
    j = int(np.argmax(-resid))  # the data exceeds the model where a second line hides
    q0 = np.concatenate([res.x[:3], [x[j], math.log(fwhm), res.x[2] * 0.3], res.x[3:]])
    two = _fit_scaled(x, y, q0, 2)
    c1, c2 = two.x[0], two.x[3]
    w1, w2 = math.exp(two.x[1]), math.exp(two.x[4])
    a1, a2 = two.x[2], two.x[5]
    separated = abs(c1 - c2) > 0.5 * max(w1, w2)
    minor = min(a1, a2) / max(a1, a2) if max(a1, a2) > 0 else 0.0
    if two.cost < 0.25 * res.cost and separated and minor > 0.1:
        raise FitError(
            "ambiguous window: two resolvable lines "
            f"(area ratio {minor:.2f}); narrow the window around one peak"
        )


def sideband_windows(omega_alpha, gamma_opt, half_width=10.0):
    """Fit windows (Hz) around the Stokes and anti-Stokes lines."""
    fc, w = omega_alpha / TWO_PI, gamma_opt / TWO_PI
    return (-fc - half_width * w, -fc + half_width * w), (fc - half_width * w, fc + half_width * w)


def fit_sidebands(spec: Spectrum, omega_alpha, gamma_opt, half_width=10.0):
    """Fit both sidebands; returns ``(fit_antistokes, fit_stokes)``."""
    w_S, w_aS = sideband_windows(omega_alpha, gamma_opt, half_width)
    return fit_lorentzian(spec, w_aS), fit_lorentzian(spec, w_S)


# --- I/O --------------------------------------------------------------------


def write_spectrum_csv(path, spec: Spectrum):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_Hz", "psd_arb"])
        for f, p in zip(spec.freq, spec.psd):
            w.writerow([f"{f:.9g}", f"{p:.9g}"])


def read_spectrum_csv(path, noise_floor=0.0) -> Spectrum:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ParameterError(str(path), "expected two columns freq_Hz, psd_arb")
    return Spectrum(data[:, 0], data[:, 1], noise_floor)


def fit_to_json(fit: LorentzianFit, **extra):
    d = fit.to_json_dict()
    d.update(extra)
    return json.dumps(d, indent=2)


def response_to_dict(resp: DetectorResponse):
    return asdict(resp)


__all__ = [
    "Spectrum",
    "LorentzianFit",
    "DetectorResponse",
    "lorentzian",
    "occupation_from_asymmetry",
    "occupation_from_fits",
    "correct_detector_response",
    "detected_areas",
    "calibration_factor",
    "synthesize_sidebands",
    "fit_lorentzian",
    "fit_sidebands",
    "sideband_windows",
    "write_spectrum_csv",
    "read_spectrum_csv",
    "fit_to_json",
]
