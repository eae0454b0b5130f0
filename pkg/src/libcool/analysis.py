"""Parameter scans and extraction fits on top of the closed-form rates.

The scans are driven by a :class:`CoolingModel` built from fitted
quantities: G0 (coupling at the antinode), Gamma_BA, N0 (cavity photons at
the antinode for Delta = Omega_alpha) and the open-loop phase noise. At
particle phase phi the coupling is G0 sin(phi) and the cavity photon number
N0 sin^2(phi) at that reference detuning.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError, ParameterError
from .noise_eater import FeedbackParams, effective_psd_at_libration
from .params import TWO_PI, _check, load_preset, psd_from_config
from .rates import OperatingPoint, RateSet, _phase_noise_shape, steady_state_occupation

CONVERGED = "converged"
MAX_ITER = "max-iter"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class CoolingModel:
    omega_alpha: float
    kappa: float
    G0: float
    Gamma_BA: float
    N0: float
    psd_S: float = 0.0  # open loop, rad^2/s
    phase_phi: float = math.pi / 2
    detuning: float | None = None  # defaults to omega_alpha

    def __post_init__(self):
        _check("omega_alpha", self.omega_alpha, positive=True)
        _check("kappa", self.kappa, positive=True)
        _check("G0", self.G0, nonneg=True)
        _check("Gamma_BA", self.Gamma_BA, nonneg=True)
        _check("N0", self.N0, nonneg=True)
        _check("psd_S", self.psd_S, nonneg=True)
        if not 0 <= self.phase_phi <= math.pi / 2:
            raise ParameterError("phase_phi", "must lie in [0, pi/2]")

    @property
    def delta(self):
        return self.omega_alpha if self.detuning is None else self.detuning

    @classmethod
    def from_preset(cls, name_or_cfg, **overrides):
        """Model from the ``fit`` section of a preset (name or loaded dict)."""
        cfg = load_preset(name_or_cfg) if isinstance(name_or_cfg, str) else name_or_cfg
        fit = cfg.get("fit")
        if fit is None:
            raise ParameterError("fit", "preset has no fitted-parameter section")
        kw = dict(
            omega_alpha=TWO_PI * fit["omega_alpha_over_2pi_Hz"],
            kappa=TWO_PI * fit["kappa_over_2pi_Hz"],
            G0=TWO_PI * fit["G0_over_2pi_Hz"],
            Gamma_BA=TWO_PI * fit["Gamma_BA_over_2pi_Hz"],
            N0=fit["ncav_antinode"],
            psd_S=psd_from_config(fit["phase_noise"], "fit.phase_noise") if "phase_noise" in fit else 0.0,
            phase_phi=math.pi * fit.get("ky_over_pi", 0.5),
        )
        kw.update(overrides)
        return cls(**kw)

    def replace(self, **kw):
        return replace(self, **kw)

    def operating_point(self, phi=None, detuning=None, psd_S=None) -> OperatingPoint:
        phi = self.phase_phi if phi is None else phi
        delta = self.delta if detuning is None else detuning
        s = math.sin(phi)
        k2 = (self.kappa / 2) ** 2
        lam = math.sqrt(self.N0 * (self.omega_alpha**2 + k2)) * s
        return OperatingPoint(
            omega_alpha=self.omega_alpha,
            kappa=self.kappa,
            detuning=delta,
            coupling_G=self.G0 * s,
            recoil_Gamma_BA=self.Gamma_BA,
            psd_S=self.psd_S if psd_S is None else psd_S,
            drive_Lambda=lam,
        )

    def as_dict(self):
        return {
            "omega_alpha_over_2pi_Hz": self.omega_alpha / TWO_PI,
            "kappa_over_2pi_Hz": self.kappa / TWO_PI,
            "G0_over_2pi_Hz": self.G0 / TWO_PI,
            "Gamma_BA_over_2pi_Hz": self.Gamma_BA / TWO_PI,
            "ncav_antinode": self.N0,
            "psd_S_rad2_per_s": self.psd_S,
            "phase_phi_rad": self.phase_phi,
            "detuning_over_2pi_Hz": self.delta / TWO_PI,
        }


@dataclass(frozen=True)
class ScanResult:
    variable: str
    unit: str
    values: np.ndarray
    rates: tuple
    n_ss: np.ndarray
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # column name -> array

    def __post_init__(self):
        n = len(self.values)
        if len(self.rates) != n or len(self.n_ss) != n or any(len(v) != n for v in self.extra.values()):
            raise ValueError("scan columns are not aligned")

    def argmin(self):
        return int(np.nanargmin(np.where(np.isfinite(self.n_ss), self.n_ss, np.nan)))

    def columns(self):
        """Ordered ``(header, values)`` pairs; headers carry units."""
        r = self.rates
        cols = [(f"{self.variable}_{self.unit}", np.asarray(self.values, float))]
        cols += [(k, np.asarray(v, float)) for k, v in self.extra.items()]
        cols += [
            ("A_plus_over_2pi_Hz", np.array([x.A_plus for x in r]) / TWO_PI),
            ("A_minus_over_2pi_Hz", np.array([x.A_minus for x in r]) / TWO_PI),
            ("Gamma_phi_over_2pi_Hz", np.array([x.Gamma_phi for x in r]) / TWO_PI),
            ("ncav_photons", np.array([x.ncav for x in r])),
            ("n0_phonons", np.array([x.n0 for x in r])),
            ("n_phi_phonons", np.array([x.n_phi for x in r])),
            ("n_ss_phonons", np.asarray(self.n_ss, float)),
            ("n_exact_phonons", np.array([x.n_exact for x in r])),
        ]
        return cols

    def to_csv(self):
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([h for h, _ in cols] + ["status"])
        for i in range(len(self.values)):
            w.writerow([f"{c[i]:.9g}" for _, c in cols] + [self.rates[i].status])
        return buf.getvalue()

    def to_json_dict(self):
        d = {h: c.tolist() for h, c in self.columns()}
        d["status"] = [x.status for x in self.rates]
        d["metadata"] = self.metadata
        return d


@dataclass(frozen=True)
class FitReport:
    model_name: str
    params: dict
    errors: dict
    residual_norm: float
    status: str
    covariance: np.ndarray = field(repr=False, default=None)
    n_points: int = 0

    def interval(self, name, k=2.0):
        v, e = self.params[name], self.errors[name]
        return v - k * e, v + k * e

    def covers(self, name, truth, k=2.0):
        lo, hi = self.interval(name, k)
        return lo <= truth <= hi

    def to_json_dict(self):
        cov = None if self.covariance is None else np.asarray(self.covariance).tolist()
        return {
            "model": self.model_name,
            "params": self.params,
            "stderr": self.errors,
            "residual_norm": self.residual_norm,
            "status": self.status,
            "n_points": self.n_points,
            "covariance": cov,
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2, allow_nan=True)


# --- scans ------------------------------------------------------------------


def _scan(model, variable, unit, values, ops, extra=None, meta=None):
    rs = tuple(steady_state_occupation(op) for op in ops)
    md = {"model": model.as_dict()}
    md.update(meta or {})
    return ScanResult(variable, unit, np.asarray(values, float), rs, np.array([r.n_ss for r in rs]), md, extra or {})


def _grid(values, name):
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ParameterError(name, "empty grid")
    if not np.all(np.isfinite(v)):
        raise ParameterError(name, "grid values must be finite")
    return v


def detuning_scan(model: CoolingModel, delta_grid) -> ScanResult:
    """Occupation versus cavity detuning (rad/s) at the model's particle phase."""
    d = _grid(delta_grid, "delta_grid")
    if np.any(d <= 0) or np.any(d > 3 * model.omega_alpha * (1 + 1e-12)):
        raise ParameterError("delta_grid", "detunings must lie in (0, 3 omega_alpha]")
    ops = [model.operating_point(detuning=x) for x in d]
    return _scan(model, "detuning_over_2pi", "Hz", d / TWO_PI, ops)


def _feedback(model, feedback):
    return feedback if feedback is not None else FeedbackParams.aligned(omega_IQ=model.omega_alpha)


def position_scan(model: CoolingModel, ky_grid, gain_g=0.0, feedback: FeedbackParams | None = None) -> ScanResult:
    """Occupation versus particle phase ky (rad) with the loop at gain ``gain_g``.

    ky = 0 is a node; there the coupling vanishes and the row is kept with
    status ``zero_coupling``.
    """
    ky = _grid(ky_grid, "ky_grid")
    if np.any(ky < 0) or np.any(ky > math.pi / 2 + 1e-12):
        raise ParameterError("ky_grid", "positions must lie in [0, pi/2]")
    fb = _feedback(model, feedback).with_gain(gain_g)
    S = effective_psd_at_libration(fb, model.psd_S, model.omega_alpha)
    ops = [model.operating_point(phi=min(x, math.pi / 2), psd_S=S) for x in ky]
    return _scan(model, "ky", "rad", ky, ops, meta={"gain_g": gain_g, "psd_S_rad2_per_s": S})


def gain_scan(model: CoolingModel, g_grid, feedback: FeedbackParams | None = None) -> ScanResult:
    """Occupation versus cancellation gain at the model's particle phase."""
    g = _grid(g_grid, "g_grid")
    if np.any(g < 0):
        raise ParameterError("g_grid", "gains must be non-negative")
    fb = _feedback(model, feedback)
    S = np.array([effective_psd_at_libration(fb.with_gain(x), model.psd_S, model.omega_alpha) for x in g])
    ops = [model.operating_point(psd_S=s) for s in S]
    return _scan(model, "gain_g", "dimensionless", g, ops, extra={"S_fb_rad2_per_s": S})


# --- fits -------------------------------------------------------------------


def _fit(name, residual, p0, names, n_points, x_scale=None, max_nfev=2000):
    """Damped Gauss-Newton (trust region) with central-difference Jacobians."""
    res = least_squares(residual, p0, method="trf", jac="3-point", diff_step=1e-6,
                        x_scale=x_scale if x_scale is not None else "jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    status = CONVERGED if res.status > 0 else MAX_ITER
    m, p = res.fun.size, len(p0)
    J = res.jac
    s2 = 2 * res.cost / (m - p) if m > p else math.nan
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), math.nan)
        status = DEGENERATE
    errs = np.sqrt(np.clip(np.diag(cov), 0, None))
    return res, FitReport(
        model_name=name,
        params=dict(zip(names, map(float, res.x))),
        errors=dict(zip(names, map(float, errs))),
        residual_norm=float(np.linalg.norm(res.fun)),
        status=status,
        covariance=cov,
        n_points=n_points,
    )


def _weights(y, sigma):
    if sigma is None:
        return np.abs(y)
    s = np.broadcast_to(np.asarray(sigma, float), y.shape)
    if np.any(s <= 0):
        raise ParameterError("sigma", "uncertainties must be positive")
    return s


def optical_damping(G, kappa, delta, omega_alpha):
    """gamma_opt = A- - A+ for coupling G (array-friendly)."""
    k2 = (kappa / 2) ** 2
    return G**2 * kappa * (1 / ((omega_alpha - delta) ** 2 + k2) - 1 / ((omega_alpha + delta) ** 2 + k2))


def extract_coupling(ky, gamma_opt, kappa, delta, omega_alpha, sigma=None) -> FitReport:
    """Fit G0 in gamma_opt(ky) = A- - A+ with G = G0 sin(ky).

    Residuals are weighted by ``sigma`` (default: relative). The report's
    ``G0`` is in rad/s.
    """
    ky = np.asarray(ky, float)
    y = np.asarray(gamma_opt, float)
    if ky.size < 4 or ky.shape != y.shape:
        raise ParameterError("scan", "need >= 4 aligned (ky, gamma_opt) points")
    s = np.sin(ky)
    if np.max(np.abs(s)) < 1e-6:
        return FitReport("coupling", {"G0": math.nan}, {"G0": math.inf}, math.nan, DEGENERATE, n_points=ky.size)
    w = _weights(y, sigma)
    basis = optical_damping(1.0, kappa, delta, omega_alpha) * s**2
    # linear start: gamma = G0^2 * basis
    g2 = np.sum(basis * y / w**2) / np.sum(basis**2 / w**2)
    scale = math.sqrt(max(g2, 1e-300))

    def residual(q):
        return ((q[0] * scale) ** 2 * basis - y) / w

    res, rep = _fit("coupling", residual, [1.0], ["G0"], ky.size, x_scale=[1.0])
    return replace(rep, params={"G0": rep.params["G0"] * scale}, errors={"G0": rep.errors["G0"] * scale},
                   covariance=rep.covariance * scale**2)


def occupation_model(ky, Gamma_BA, N0, G0, kappa, delta, omega_alpha, S):
    """n_ss(ky) = n0 + n_phi with G = G0 sin(ky) and ncav = N0 sin^2(ky)."""
    a0, a1 = _occupation_basis(ky, G0, kappa, delta, omega_alpha, S)
    return Gamma_BA * a0 + N0 * a1


def _occupation_basis(ky, G0, kappa, delta, omega_alpha, S):
    s2 = np.sin(np.asarray(ky, float)) ** 2
    k2 = (kappa / 2) ** 2
    a0 = ((delta - omega_alpha) ** 2 + k2) / (G0**2 * kappa * s2)
    op = OperatingPoint(omega_alpha, kappa, delta, 0.0, 0.0)
    a1 = 4 * s2 * S * _phase_noise_shape(op) / kappa
    # ncav is referenced to Delta = Omega_alpha; rescale to this detuning
    a1 = a1 * (omega_alpha**2 + k2) / (delta**2 + k2)
    return a0, a1


def extract_heating(ky, n_ss, G0, kappa, delta, omega_alpha, S, sigma=None) -> FitReport:
    """Fit Gamma_BA (rad/s) and N0 in n_ss(ky) = n0 + n_phi.

    With S = 0 the photon number drops out; only Gamma_BA is fitted and the
    report is marked ``degenerate`` with N0 = nan.
    """
    ky = np.asarray(ky, float)
    y = np.asarray(n_ss, float)
    if ky.size < 5 or ky.shape != y.shape:
        raise ParameterError("scan", "need >= 5 aligned (ky, n) points")
    if np.any(np.sin(ky) <= 0):
        raise ParameterError("ky", "positions must avoid the node (sin ky > 0)")
    w = _weights(y, sigma)
    a0, a1 = _occupation_basis(ky, G0, kappa, delta, omega_alpha, S)

    if S == 0 or not np.any(a1):
        g = np.sum(a0 * y / w**2) / np.sum(a0**2 / w**2)
        res, rep = _fit("heating", lambda q: (q[0] * g * a0 - y) / w, [1.0], ["Gamma_BA"], ky.size, x_scale=[1.0])
        return FitReport("heating", {"Gamma_BA": rep.params["Gamma_BA"] * g, "N0": math.nan},
                         {"Gamma_BA": rep.errors["Gamma_BA"] * g, "N0": math.inf},
                         rep.residual_norm, DEGENERATE, None, ky.size)

    # linear start from weighted normal equations
    A = np.column_stack([a0, a1]) / w[:, None]
    start, *_ = np.linalg.lstsq(A, y / w, rcond=None)
    scale = np.where(np.abs(start) > 0, np.abs(start), 1.0)

    def residual(q):
        return (q[0] * scale[0] * a0 + q[1] * scale[1] * a1 - y) / w

    res, rep = _fit("heating", residual, [math.copysign(1, start[0]), math.copysign(1, start[1])],
                    ["Gamma_BA", "N0"], ky.size, x_scale=[1.0, 1.0])
    T = np.diag(scale)
    cov = T @ rep.covariance @ T
    p = {k: v * sc for (k, v), sc in zip(rep.params.items(), scale)}
    e = dict(zip(p, np.sqrt(np.clip(np.diag(cov), 0, None)).tolist()))
    status = rep.status
    if np.linalg.cond(A) > 1e12:
        status = DEGENERATE
    return replace(rep, params=p, errors=e, covariance=cov, status=status)


def gas_damping_fit(pressure, gamma) -> FitReport:
    """Zero-intercept slope of damping rate versus pressure."""
    p = np.asarray(pressure, float)
    g = np.asarray(gamma, float)
    if p.size < 3 or p.shape != g.shape:
        raise ParameterError("data", "need >= 3 aligned (pressure, gamma) points")
    spp = np.sum(p * p)
    if spp == 0:
        return FitReport("gas_damping", {"slope": math.nan}, {"slope": math.inf}, math.nan, DEGENERATE, n_points=p.size)
    slope = float(np.sum(p * g) / spp)
    r = g - slope * p
    s2 = float(np.sum(r * r) / (p.size - 1))
    return FitReport("gas_damping", {"slope": slope}, {"slope": math.sqrt(s2 / spp)},
                     float(np.linalg.norm(r)), CONVERGED, np.array([[s2 / spp]]), p.size)


def extrapolate_damping(report: FitReport, pressure):
    """gamma(p) = slope * p with its standard error."""
    return report.params["slope"] * pressure, report.errors["slope"] * abs(pressure)


def slope_ratios(slopes, reference=None):
    """Slopes normalized to ``reference`` (default: the smallest)."""
    s = np.asarray(slopes, float)
    ref = s.min() if reference is None else s[reference]
    return s / ref


def transient_occupation(n0, gamma_opt, Gamma_total, t_grid):
    """n(t) for dn/dt = -gamma n + Gamma; gamma = 0 gives n0 + Gamma t."""
    gamma_opt = _check("gamma_opt", gamma_opt, nonneg=True)
    t = np.asarray(t_grid, float)
    decay = np.exp(-gamma_opt * t)
    if gamma_opt == 0:
        return n0 + Gamma_total * t
    # Gamma (1 - e^{-gt})/g written with expm1 for small g t
    return n0 * decay - Gamma_total * np.expm1(-gamma_opt * t) / gamma_opt


def initial_slope(n0, gamma_opt, Gamma_total):
    return Gamma_total - gamma_opt * n0


def fit_transient(t, n, sigma=None) -> FitReport:
    """Fit (n0, gamma_opt, Gamma_total) of the rate-equation transient."""
    t = np.asarray(t, float)
    y = np.asarray(n, float)
    if t.size < 4:
        raise ParameterError("data", "need >= 4 points")
    w = _weights(y, sigma) if sigma is not None else np.full_like(y, max(np.abs(y).max(), 1e-300))
    n_end = y[-1]
    slope0 = (y[1] - y[0]) / (t[1] - t[0])
    g0 = max(slope0 / max(n_end - y[0], 1e-300), 1e-6 / max(t[-1], 1e-300))
    scale = np.array([max(abs(y[0]), 1e-12), g0, g0 * max(abs(n_end), 1e-12)])

    def residual(q):
        p = q * scale
        return (transient_occupation(p[0], max(p[1], 0.0), p[2], t) - y) / w

    res, rep = _fit("transient", residual, [1.0, 1.0, 1.0], ["n0", "gamma_opt", "Gamma_total"], t.size,
                    x_scale=[1.0, 1.0, 1.0])
    T = np.diag(scale)
    cov = T @ rep.covariance @ T
    p = {k: v * sc for (k, v), sc in zip(rep.params.items(), scale)}
    e = dict(zip(p, np.sqrt(np.clip(np.diag(cov), 0, None)).tolist()))
    return replace(rep, params=p, errors=e, covariance=cov)


def synthetic_coupling_data(G0, ky, kappa, delta, omega_alpha, rel_noise, rng):
    y = optical_damping(G0 * np.sin(ky), kappa, delta, omega_alpha)
    return y * (1 + rel_noise * rng.standard_normal(np.shape(ky)))


def synthetic_heating_data(Gamma_BA, N0, ky, G0, kappa, delta, omega_alpha, S, rel_noise, rng):
    y = occupation_model(ky, Gamma_BA, N0, G0, kappa, delta, omega_alpha, S)
    return y * (1 + rel_noise * rng.standard_normal(np.shape(ky)))


def coverage(fit_fn, make_data, truth, n_runs=100, seed=0, k=2.0):
    """Number of seeded runs whose k-sigma intervals contain every truth value."""
    hits = {name: 0 for name in truth}
    for s in np.random.SeedSequence(seed).spawn(n_runs):
        rep = fit_fn(make_data(np.random.default_rng(s)))
        for name, val in truth.items():
            hits[name] += rep.covers(name, val, k)
    return hits


__all__ = [
    "CoolingModel",
    "ScanResult",
    "FitReport",
    "detuning_scan",
    "position_scan",
    "gain_scan",
    "optical_damping",
    "extract_coupling",
    "occupation_model",
    "extract_heating",
    "gas_damping_fit",
    "extrapolate_damping",
    "slope_ratios",
    "transient_occupation",
    "initial_slope",
    "fit_transient",
    "synthetic_coupling_data",
    "synthetic_heating_data",
    "coverage",
    "FitError",
    "RateSet",
]
