"""Continuous-time analysis of the damped harmonic oscillator.

The second-order system

    q'' + nu q' + k q = u(t),      H = p^2/2 + k q^2/2,  p = q'

is the reference object for everything else in the package: the discrete
scan kernel realizes its small-damping normal mode, and the analysis
functions here (eigenstructure, free response, energy law, frequency
response) provide the closed forms that the kernels are tested against.

All functions operate in float64. Frequencies are angular (rad per unit
time); `Omega` denotes a drive frequency, `omega = sqrt(k)` the natural
frequency of the oscillator itself.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateEigenbasis,
    NonPositiveDamping,
    ResonancePole,
)

__all__ = [
    "Regime",
    "OscillatorParams",
    "PhasePoint",
    "EigenPair",
    "eigenvalues",
    "eigenvector_basis",
    "damped_phasor",
    "free_response",
    "simulate_normal_mode",
    "energy_rate",
    "lyapunov_bound",
    "lyapunov_bound_series",
    "transfer_magnitude",
    "energy_spectral_weight",
]


class Regime(enum.Enum):
    """Damping regime, classified by the sign of nu^2 - 4k."""

    UNDERDAMPED = "underdamped"
    CRITICAL = "critical"
    OVERDAMPED = "overdamped"


@dataclass(frozen=True)
class OscillatorParams:
    """Stiffness and damping of a single oscillator.

    k: stiffness (> 0). nu: viscous damping (>= 0).
    """

    k: float
    nu: float

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k > 0.0):
            raise ValueError(f"stiffness k must be finite and > 0, got {self.k}")
        if not (math.isfinite(self.nu) and self.nu >= 0.0):
            raise ValueError(f"damping nu must be finite and >= 0, got {self.nu}")

    @property
    def omega(self) -> float:
        """Natural frequency sqrt(k)."""
        return math.sqrt(self.k)

    @property
    def discriminant(self) -> float:
        return self.nu * self.nu - 4.0 * self.k

    @property
    def regime(self) -> Regime:
        d = self.discriminant
        if d < 0.0:
            return Regime.UNDERDAMPED
        if d == 0.0:
            return Regime.CRITICAL
        return Regime.OVERDAMPED

    @property
    def omega_d(self) -> float:
        """Damped frequency sqrt(k - nu^2/4); zero at/beyond critical damping."""
        return math.sqrt(max(self.k - 0.25 * self.nu * self.nu, 0.0))

    @property
    def quality(self) -> float:
        """Q factor omega/nu (inf for the undamped oscillator)."""
        if self.nu == 0.0:
            return math.inf
        return self.omega / self.nu


@dataclass(frozen=True)
class PhasePoint:
    """A point (q, p) in phase space."""

    q: float
    p: float

    def energy(self, params: OscillatorParams) -> float:
        """Hamiltonian p^2/2 + k q^2/2."""
        return 0.5 * self.p * self.p + 0.5 * params.k * self.q * self.q


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalues of the companion matrix [[0, 1], [-k, -nu]].

    lam_plus carries the + branch of the square root; for underdamped
    parameters the pair is a complex-conjugate pair -nu/2 +- i omega_d.
    """

    lam_plus: complex
    lam_minus: complex

    @property
    def splitting(self) -> complex:
        return self.lam_plus - self.lam_minus


def eigenvalues(params: OscillatorParams) -> EigenPair:
    """Roots of lambda^2 + nu lambda + k = 0 via the quadratic formula.

    Vieta: lam_plus + lam_minus = -nu, lam_plus * lam_minus = k.
    """
    half_nu = 0.5 * params.nu
    # Square root of the discriminant as a complex number; real for
    # overdamped, imaginary for underdamped parameters.
    root = np.sqrt(complex(params.discriminant)) * 0.5
    return EigenPair(complex(-half_nu) + root, complex(-half_nu) - root)


def eigenvector_basis(params: OscillatorParams) -> tuple[np.ndarray, np.ndarray]:
    """Modal basis V = [[1, 1], [lam+, lam-]] and its exact inverse.

    Requires a genuinely underdamped oscillator (omega_d > 1e-9); at
    critical damping the columns collapse and the basis is singular.
    """
    if params.regime is not Regime.UNDERDAMPED or params.omega_d <= 1e-9:
        raise DegenerateEigenbasis(
            f"no oscillatory eigenbasis for k={params.k}, nu={params.nu} "
            f"(omega_d={params.omega_d:.3e})"
        )
    pair = eigenvalues(params)
    lp, lm = pair.lam_plus, pair.lam_minus
    V = np.array([[1.0, 1.0], [lp, lm]], dtype=np.complex128)
    det = lm - lp  # det of [[1,1],[lp,lm]]
    V_inv = np.array([[lm, -1.0], [-lp, 1.0]], dtype=np.complex128) / det
    return V, V_inv


def damped_phasor(z0: complex, nu: float, omega: float, t) -> np.ndarray | complex:
    """Free evolution z0 * exp((-nu + i omega) t): a logarithmic spiral.

    `t` may be a scalar or an array of times. This is the homogeneous
    solution of the small-damping normal-mode ODE z' = (-nu + i omega) z
    and the exactness oracle for the discrete scan kernel.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    out = z0 * np.exp((-nu + 1j * omega) * t_arr)
    if np.ndim(t) == 0:
        return complex(out)
    return out


def free_response(z0: complex, params: OscillatorParams, t) -> np.ndarray | complex:
    """Small-damping free response with nu, omega read off `params`.

    Uses the normal-mode approximation lambda ~ -nu + i omega, which is
    the parameterization the discrete kernel realizes. Meaningful for
    underdamped parameters; the formula itself is total.
    """
    return damped_phasor(z0, params.nu, params.omega, t)


def energy_rate(state: PhasePoint, params: OscillatorParams, u: float) -> float:
    """Instantaneous dH/dt = -nu p^2 + p u along trajectories.

    The stiffness term cancels (k q q' = k q p is produced and consumed
    by the two halves of H), so only damping and drive move energy.
    """
    return -params.nu * state.p * state.p + state.p * u


def lyapunov_bound(
    H0: float,
    params: OscillatorParams,
    u_samples: np.ndarray,
    dt: float,
    t: float,
) -> float:
    """Energy envelope e^{-nu t} H0 + (1/(2 nu^2)) sum e^{-nu(t-s_j)} u_j^2 dt.

    The integral is a left-Riemann sum over the sampled drive, s_j = j dt
    for s_j < t. `t` must land on the sample grid within the sampled
    horizon. Requires nu > 0 (the envelope diverges as nu -> 0).
    """
    if params.nu <= 0.0:
        raise NonPositiveDamping("lyapunov_bound requires nu > 0")
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    u = np.asarray(u_samples, dtype=np.float64)
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(dt, abs(t)):
        raise ValueError(f"t={t} is not a multiple of dt={dt}")
    if n < 0 or n > u.shape[0]:
        raise ValueError(f"t={t} outside the sampled horizon of {u.shape[0]} steps")
    nu = params.nu
    drive = 0.0
    if n > 0:
        s = np.arange(n) * dt
        drive = float(np.sum(np.exp(-nu * (t - s)) * u[:n] ** 2)) * dt
    return math.exp(-nu * t) * H0 + drive / (2.0 * nu * nu)


def lyapunov_bound_series(
    H0: float,
    params: OscillatorParams,
    u_samples: np.ndarray,
    dt: float,
) -> np.ndarray:
    """lyapunov_bound evaluated at every grid time 0, dt, ..., N dt.

    Same left-Riemann semantics as the pointwise form, computed with a
    single running recurrence: B_{n+1} = e^{-nu dt} (B_n + u_n^2 dt / (2 nu^2)).
    """
    if params.nu <= 0.0:
        raise NonPositiveDamping("lyapunov_bound_series requires nu > 0")
    u = np.asarray(u_samples, dtype=np.float64)
    nu = params.nu
    decay = math.exp(-nu * dt)
    gain = dt / (2.0 * nu * nu)
    out = np.empty(u.shape[0] + 1, dtype=np.float64)
    out[0] = H0
    b = float(H0)
    for j in range(u.shape[0]):
        b = decay * (b + gain * u[j] * u[j])
        out[j + 1] = b
    return out


def simulate_normal_mode(
    z0: complex,
    nu: float,
    omega: float,
    u_samples: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Exact trajectory of z' = (-nu + i omega) z + u for piecewise-constant u.

    Returns z at grid times 0, dt, ..., N dt (length N+1). Each step uses
    the closed-form update z <- e^{lam dt} z + (e^{lam dt} - 1)/lam * u_j,
    which is exact when u is held constant over the step.
    """
    u = np.asarray(u_samples, dtype=np.float64)
    lam = complex(-nu, omega)
    g = np.exp(lam * dt)
    phi = (g - 1.0) / lam if lam != 0 else dt
    out = np.empty(u.shape[0] + 1, dtype=np.complex128)
    out[0] = z0
    z = complex(z0)
    for j in range(u.shape[0]):
        z = g * z + phi * u[j]
        out[j + 1] = z
    return out


def transfer_magnitude(params: OscillatorParams, Omega) -> tuple:
    """Position and momentum gains of the driven oscillator at frequency Omega.

    g_pos = |G(j Omega)| = 1 / sqrt((k - Omega^2)^2 + nu^2 Omega^2)
    g_mom = Omega * g_pos              (momentum response G_p = s G)

    g_pos evaluates to 1/(nu omega) at Omega = omega; its true arg-max sits
    at sqrt(k - nu^2/2). g_mom peaks at omega exactly, for every nu.
    Raises ResonancePole when the denominator underflows to zero (the
    undamped oscillator probed exactly at resonance).
    """
    Om = np.asarray(Omega, dtype=np.float64)
    denom_sq = (params.k - Om**2) ** 2 + (params.nu * Om) ** 2
    if np.any(denom_sq == 0.0):
        raise ResonancePole(
            f"transfer magnitude diverges at Omega={Omega} for nu={params.nu}"
        )
    g_pos = 1.0 / np.sqrt(denom_sq)
    g_mom = Om * g_pos
    if np.ndim(Omega) == 0:
        return float(g_pos), float(g_mom)
    return g_pos, g_mom


def energy_spectral_weight(params: OscillatorParams, Omega):
    """Per-frequency energy weight (1 + Omega^2) / (2 [(k - Omega^2)^2 + nu^2 Omega^2]).

    Identically (g_pos^2 + g_mom^2)/2: the factor a unit-amplitude drive
    line at Omega contributes to time-averaged oscillator energy.
    """
    g_pos, g_mom = transfer_magnitude(params, Omega)
    g_pos = np.asarray(g_pos)
    g_mom = np.asarray(g_mom)
    w = 0.5 * (g_pos**2 + g_mom**2)
    if np.ndim(Omega) == 0:
        return float(w)
    return w
