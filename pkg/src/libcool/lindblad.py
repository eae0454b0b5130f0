"""Master equations on truncated Fock spaces.

Density matrices are vectorized column-first, so that
vec(A rho B) = (B^T kron A) vec(rho). For the two-mode problem the
libration b is the first tensor factor and the cavity c the second.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CutoffError, NoSteadyState, NonUniqueSteadyState, ParameterError, StepSizeError
from .params import TWO_PI, _check
from .rates import OperatingPoint, RateSet, phase_noise_heating
from .thermometry import Spectrum

MAX_DIM = 256
# largest Liouville-space dimension diagonalized densely for spectra
EIG_LIMIT = 2500


@dataclass(frozen=True)
class FockSpace:
    n_lib: int = 14
    n_cav: int = 1
    max_dim: int = MAX_DIM

    def __post_init__(self):
        if int(self.n_lib) != self.n_lib or self.n_lib < 2:
            raise CutoffError(f"n_lib={self.n_lib}: need an integer >= 2")
        if int(self.n_cav) != self.n_cav or self.n_cav < 1:
            raise CutoffError(f"n_cav={self.n_cav}: need an integer >= 1")
        if self.dim > self.max_dim:
            raise CutoffError(f"dimension {self.dim} exceeds the maximum {self.max_dim}")

    @property
    def dim(self):
        return self.n_lib * self.n_cav

    def escalate(self, step=4, cavity=False):
        """Next larger space; raises :class:`CutoffError` past ``max_dim``."""
        return FockSpace(self.n_lib + step, self.n_cav + (step if cavity else 0), self.max_dim)

    def operators(self):
        """Sparse (b, c) on the full space; c is None when n_cav == 1."""
        b1 = destroy(self.n_lib)
        if self.n_cav == 1:
            return b1, None
        c1 = destroy(self.n_cav)
        return sp.kron(b1, sp.identity(self.n_cav), format="csr"), sp.kron(
            sp.identity(self.n_lib), c1, format="csr"
        )


def destroy(n):
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, format="csr", dtype=complex)


@dataclass
class DensityMatrix:
    data: np.ndarray
    space: FockSpace

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        N = self.space.dim
        if self.data.shape != (N, N):
            raise ParameterError("rho", f"shape {self.data.shape} does not match dimension {N}")

    @classmethod
    def fock(cls, space: FockSpace, n_lib=0, n_cav=0):
        rho = np.zeros((space.dim, space.dim), dtype=complex)
        i = n_lib * space.n_cav + n_cav
        rho[i, i] = 1.0
        return cls(rho, space)

    @classmethod
    def thermal(cls, space: FockSpace, n):
        """Thermal libration state (cavity in vacuum), renormalized on the cutoff."""
        k = np.arange(space.n_lib)
        p = (n / (n + 1)) ** k if n > 0 else (k == 0).astype(float)
        p = p / p.sum()
        lib = np.diag(p).astype(complex)
        cav = np.zeros((space.n_cav, space.n_cav))
        cav[0, 0] = 1
        return cls(np.kron(lib, cav), space)

    @property
    def vec(self):
        return self.data.reshape(-1, order="F")

    @classmethod
    def from_vec(cls, v, space):
        N = space.dim
        return cls(np.asarray(v).reshape((N, N), order="F"), space)

    def trace(self):
        return complex(np.trace(self.data))

    def expect(self, op):
        return complex((op @ self.data).trace()) if sp.issparse(op) else complex(np.trace(op @ self.data))

    def n_lib(self):
        b, _ = self.space.operators()
        return float(self.expect(b.conj().T @ b).real)

    def n_cav(self):
        _, c = self.space.operators()
        if c is None:
            return 0.0
        return float(self.expect(c.conj().T @ c).real)

    def lib_populations(self):
        d = np.diag(self.data).real.reshape(self.space.n_lib, self.space.n_cav)
        return d.sum(axis=1)

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh((self.data + self.data.conj().T) / 2)[0])

    def check(self, herm_tol=1e-10, trace_tol=1e-10, eig_tol=1e-8):
        """Raise ``ValueError`` unless this is a valid density matrix."""
        scale = max(np.abs(self.data).max(), 1.0)
        if np.abs(self.data - self.data.conj().T).max() > herm_tol * scale:
            raise ValueError("density matrix is not Hermitian")
        if abs(self.trace() - 1) > trace_tol:
            raise ValueError(f"trace {self.trace():.3g} != 1")
        if self.min_eigenvalue() < -eig_tol:
            raise ValueError(f"negative eigenvalue {self.min_eigenvalue():.3g}")
        return self


@dataclass
class Liouvillian:
    matrix: sp.csr_matrix
    space: FockSpace
    terms: tuple = ()
    unstable: bool = False
    info: dict = field(default_factory=dict)

    def __call__(self, rho: DensityMatrix) -> DensityMatrix:
        return DensityMatrix.from_vec(self.matrix @ rho.vec, self.space)

    @property
    def norm(self):
        return float(spla.norm(self.matrix, np.inf))

    def trace_defect(self):
        """Largest |vec(I)^T L| relative to ||L||, zero for a trace-preserving generator."""
        w = np.eye(self.space.dim).reshape(-1, order="F")
        norm = self.norm
        return float(np.abs(self.matrix.T @ w).max() / norm) if norm else 0.0


# --- superoperators ---------------------------------------------------------


def _spre(A):
    return sp.kron(sp.identity(A.shape[0]), A, format="csr")


def _spost(B):
    return sp.kron(B.T, sp.identity(B.shape[0]), format="csr")


def commutator(H):
    """Superoperator of -i[H, .]."""
    return -1j * (_spre(H) - _spost(H))


def dissipator(a):
    """Superoperator of D[a] rho = a rho a^dag - {a^dag a, rho}/2."""
    ad = a.conj().T
    ada = (ad @ a).tocsr()
    return sp.kron(a.conj(), a, format="csr") - 0.5 * _spre(ada) - 0.5 * _spost(ada)


def double_commutator(x):
    """Superoperator of [x, [x, rho]]."""
    x2 = (x @ x).tocsr()
    return _spre(x2) + _spost(x2) - 2 * sp.kron(x.T, x, format="csr")


# --- generators -------------------------------------------------------------


def build_two_mode(op: OperatingPoint, space: FockSpace, xi_drive=0.0, include_phase_noise=True) -> Liouvillian:
    """Coupled libration-cavity generator in the displaced frame.

    H = Omega b^dag b + xi x + Delta c^dag c + G x (c + c^dag), with cavity
    energy decay kappa D[c] and position dephasing -(Gamma/2)[x,[x, .]].
    Gamma is Gamma_BA, plus the noise-averaged phase-noise rate Gamma_phi
    when ``include_phase_noise`` is set and the operating point carries
    phase noise.
    """
    if space.n_cav < 2:
        raise CutoffError("two-mode generator needs n_cav >= 2")
    xi_drive = _check("xi_drive", xi_drive)
    b, c = space.operators()
    x = (b + b.conj().T).tocsr()
    H = (
        op.omega_alpha * (b.conj().T @ b)
        + op.detuning * (c.conj().T @ c)
        + op.coupling_G * (x @ (c + c.conj().T))
    )
    terms = ["hamiltonian", "cavity_decay", "recoil_dephasing"]
    if xi_drive:
        H = H + xi_drive * x
        terms.append("static_drive")
    gamma = op.recoil_Gamma_BA
    if include_phase_noise and op.psd_S > 0:
        gamma += phase_noise_heating(op)
        terms.append("phase_noise_dephasing")
    L = commutator(H.tocsr()) + op.kappa * dissipator(c) - 0.5 * gamma * double_commutator(x)
    return Liouvillian(L.tocsr(), space, tuple(terms), info={"omega_alpha": op.omega_alpha, "dephasing": gamma})


def reduced_generator(omega_alpha, heating, a_plus, a_minus, space: FockSpace) -> Liouvillian:
    """Libration-only generator with position dephasing and sideband Lindblads."""
    if space.n_cav != 1:
        raise CutoffError("reduced generator needs n_cav == 1")
    omega_alpha = _check("omega_alpha", omega_alpha, positive=True)
    heating = _check("heating", heating, nonneg=True)
    a_plus = _check("A_plus", a_plus, nonneg=True)
    a_minus = _check("A_minus", a_minus, nonneg=True)
    b, _ = space.operators()
    bd = b.conj().T.tocsr()
    x = (b + bd).tocsr()
    L = commutator(omega_alpha * (bd @ b).tocsr())
    terms = ["hamiltonian"]
    if heating:
        L = L - 0.5 * heating * double_commutator(x)
        terms.append("recoil_dephasing")
    if a_plus:
        L = L + a_plus * dissipator(bd)
        terms.append("heating_sideband")
    if a_minus:
        L = L + a_minus * dissipator(b)
        terms.append("cooling_sideband")
    unstable = a_minus <= a_plus and (heating > 0 or a_plus > 0)
    info = {"omega_alpha": omega_alpha, "heating": heating, "A_plus": a_plus, "A_minus": a_minus}
    return Liouvillian(L.tocsr(), space, tuple(terms), unstable=unstable, info=info)


def build_reduced(rates: RateSet, omega_alpha, space: FockSpace) -> Liouvillian:
    return reduced_generator(omega_alpha, rates.Gamma_BA + rates.Gamma_phi, rates.A_plus, rates.A_minus, space)


def exact_reduced_occupation(heating, a_plus, a_minus):
    """Rate-balance solution (heating + A+)/(A- - A+) of the reduced equation."""
    if a_minus <= a_plus:
        return math.inf
    return (heating + a_plus) / (a_minus - a_plus)


# --- steady state -----------------------------------------------------------


def steady_state(L: Liouvillian, tol=1e-10) -> DensityMatrix:
    """Null vector of ``L`` normalized to unit trace.

    Solves the bordered system [[L, w*], [w^T, 0]] [v; s] = [0; 1] with w
    the vectorized identity, which is the trace condition appended to the
    generator; one step of iterative refinement follows. A singular
    bordered matrix means a degenerate null space and raises
    :class:`NonUniqueSteadyState`.
    """
    if L.unstable:
        raise NoSteadyState(
            "A- <= A+: the generator has no normalizable steady state on the unbounded space"
        )
    N = L.space.dim
    M = L.matrix
    w = np.eye(N).reshape(-1, order="F").astype(complex)
    col = sp.csc_matrix(w.conj().reshape(-1, 1))
    row = sp.csr_matrix(w.reshape(1, -1))
    K = sp.bmat([[M, col], [row, None]], format="csc")
    rhs = np.zeros(N * N + 1, dtype=complex)
    rhs[-1] = 1.0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            lu = spla.splu(K)
            z = lu.solve(rhs)
            z = z + lu.solve(rhs - K @ z)
    except (RuntimeError, spla.MatrixRankWarning) as exc:
        raise NonUniqueSteadyState(f"bordered generator is singular ({exc})") from exc
    if not np.all(np.isfinite(z)):
        raise NonUniqueSteadyState("steady-state solve produced non-finite values")

    v = z[:-1]
    resid = np.linalg.norm(M @ v)
    if abs(z[-1]) > 1e-6 or resid > tol * L.norm * max(np.linalg.norm(v), 1.0):
        raise NonUniqueSteadyState(
            f"no clean null vector: residual {resid:.3g}, border multiplier {abs(z[-1]):.3g}"
        )
    rho = DensityMatrix.from_vec(v, L.space)
    d = (rho.data + rho.data.conj().T) / 2
    rho.data = d / np.trace(d).real
    return rho


@dataclass(frozen=True)
class ConvergedSteadyState:
    rho: DensityMatrix
    n_lib: float
    space: FockSpace
    converged: bool
    history: tuple  # (n_lib cutoff, occupation) pairs


def converged_steady_state(build, space: FockSpace, rel_tol=1e-4, step=4, escalate_cavity=False, top_tol=None):
    """Steady state with the libration cutoff raised until it stops mattering.

    ``build`` maps a :class:`FockSpace` to a :class:`Liouvillian`. The cutoff
    grows by ``step`` until the occupation changes by less than ``rel_tol``
    relative and, when ``top_tol`` is given, the highest libration level
    holds less than ``top_tol`` population. If the maximum dimension is
    reached first the result is returned with ``converged=False``.
    """
    rho = steady_state(build(space))
    n = rho.n_lib()
    history = [(space.n_lib, n)]
    while True:
        try:
            nxt = space.escalate(step, cavity=escalate_cavity)
        except CutoffError:
            return ConvergedSteadyState(rho, n, space, False, tuple(history))
        rho2 = steady_state(build(nxt))
        n2 = rho2.n_lib()
        history.append((nxt.n_lib, n2))
        done = abs(n2 - n) <= rel_tol * abs(n2) or (n2 == 0 and n == 0)
        if top_tol is not None:
            done = done and rho2.lib_populations()[-1] < top_tol
        space, rho, n = nxt, rho2, n2
        if done:
            return ConvergedSteadyState(rho, n, space, True, tuple(history))


# --- time evolution ---------------------------------------------------------


def evolve(L: Liouvillian, rho0: DensityMatrix, t_grid, max_steps=10_000_000, steps_per_scale=20):
    """Fixed-step RK4 propagation, returning the state at every grid time.

    The step is at most 1/(steps_per_scale * ||L||_inf); the infinity norm
    bounds every eigenvalue magnitude of the generator.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
        raise ParameterError("t_grid", "must be a strictly increasing 1-D grid")
    A = L.matrix
    scale = L.norm
    hmax = math.inf if scale == 0 else 1 / (steps_per_scale * scale)
    spans = np.diff(np.concatenate([[0.0], t]))
    if spans[0] < 0:
        raise ParameterError("t_grid", "times must be >= 0")
    counts = [max(1, math.ceil(s / hmax)) if s > 0 else 0 for s in spans]
    if sum(counts) > max_steps:
        raise StepSizeError(f"{sum(counts)} RK4 steps exceed the limit {max_steps}")

    v = rho0.vec.copy()
    tr0 = np.trace(rho0.data)
    out = []
    for span, k in zip(spans, counts):
        if k:
            h = span / k
            if h <= 0 or t[-1] + h == t[-1] and h < 1e-300:
                raise StepSizeError("step size underflow")
            for _ in range(k):
                k1 = A @ v
                k2 = A @ (v + 0.5 * h * k1)
                k3 = A @ (v + 0.5 * h * k2)
                k4 = A @ (v + h * k3)
                v = v + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(DensityMatrix.from_vec(v.copy(), L.space))
    drift = abs(np.trace(out[-1].data) - tr0)
    if drift > 1e-8:
        warnings.warn(f"trace drift {drift:.3g} over the grid", RuntimeWarning, stacklevel=2)
    return out


# --- spectra ----------------------------------------------------------------


def correlation_spectrum(L: Liouvillian, A, B, omega_grid, rho_ss: DensityMatrix | None = None):
    """S(w) = 2 Re int_0^inf <dA(t) dB(0)> e^{i w t} dt by the regression rule.

    Only the connected part <A(t)B> - <A><B> is kept, so the result is
    regular at w = 0. It is evaluated as 2 Re Tr[A y] with
    (i w - L) y = B rho_ss - <B> rho_ss and Tr y = 0, solved in bordered
    form; with this convention the integral of S over w/2pi equals
    <AB> - <A><B>.
    """
    rho = steady_state(L) if rho_ss is None else rho_ss
    N2 = L.space.dim**2
    w = np.asarray(omega_grid, dtype=float)
    src = (B @ rho.data).reshape(-1, order="F")
    r = rho.vec
    # Tr[A Y] = vec(A^T) . vec(Y)
    tr = np.asarray(A.T.todense() if sp.issparse(A) else A.T).reshape(-1, order="F")
    ident = np.eye(L.space.dim).reshape(-1, order="F").astype(complex)
    border_col = sp.csc_matrix(r.reshape(-1, 1))
    border_row = sp.csr_matrix(ident.reshape(1, -1))
    eye = sp.identity(N2, format="csc", dtype=complex)
    Lc = L.matrix.tocsc()
    rhs = np.concatenate([src, [0.0]])

    def direct(wi):
        K = sp.bmat([[1j * wi * eye - Lc, border_col], [border_row, None]], format="csc")
        y = spla.splu(K).solve(rhs)[:-1]
        return 2 * (tr @ y).real

    if N2 <= EIG_LIMIT and w.size > 8:
        # one eigendecomposition serves the whole grid; the zero mode
        # carries only the disconnected part and is dropped
        lam, V = np.linalg.eig(L.matrix.toarray())
        fluct = src - (ident @ src) * r
        coef = (tr @ V) * np.linalg.solve(V, fluct)
        keep = np.ones(lam.size, bool)
        keep[np.argmin(np.abs(lam))] = False
        out = 2 * (coef[None, keep] / (1j * w[:, None] - lam[None, keep])).sum(axis=1).real
        probe = sorted(set(np.linspace(0, w.size - 1, 5).astype(int).tolist() + [int(np.argmax(np.abs(out)))]))
        ref = np.array([direct(w[i]) for i in probe])
        if np.allclose(out[probe], ref, rtol=1e-7, atol=1e-9 * np.abs(ref).max()):
            return out
    return np.array([direct(wi) for wi in w])


def emission_spectrum(L: Liouvillian, which, omega_grid, rho_ss: DensityMatrix | None = None) -> Spectrum:
    """Sideband spectrum of the libration on ``omega_grid`` (rad/s).

    ``antistokes`` uses <b^dag(t) b(0)> and peaks at +Omega_alpha,
    ``stokes`` uses <b(t) b^dag(0)> and peaks at -Omega_alpha. The
    returned frequency axis is in Hz and the psd is normalized so that its
    integral over Hz is n (anti-Stokes) or n+1 (Stokes), so the two areas
    sum to 2n+1.
    """
    w = np.asarray(omega_grid, dtype=float)
    b, _ = L.space.operators()
    bd = b.conj().T.tocsr()
    if which == "antistokes":
        A, B = bd, b
    elif which == "stokes":
        A, B = b, bd
    else:
        raise ParameterError("which", f"{which!r}; expected 'stokes' or 'antistokes'")
    s = correlation_spectrum(L, A, B, w, rho_ss)
    # round-off can leave tiny negative values far from the line
    s = np.where(s < 0, np.where(s > -1e-9 * max(np.abs(s).max(), 1e-300), 0.0, s), s)
    return Spectrum(w / TWO_PI, s)


__all__ = [
    "FockSpace",
    "DensityMatrix",
    "Liouvillian",
    "build_two_mode",
    "build_reduced",
    "reduced_generator",
    "exact_reduced_occupation",
    "steady_state",
    "converged_steady_state",
    "ConvergedSteadyState",
    "evolve",
    "correlation_spectrum",
    "emission_spectrum",
]
