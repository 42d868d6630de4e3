"""Continuous-time oscillator analysis: closed forms against independent
oracles (quadratic formula, RK4 integration, geometric series)."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hamscan.errors import (
    DegenerateEigenbasis,
    NonPositiveDamping,
    ResonancePole,
)
from hamscan.oscillator import (
    EigenPair,
    OscillatorParams,
    PhasePoint,
    Regime,
    damped_phasor,
    eigenvalues,
    eigenvector_basis,
    energy_rate,
    energy_spectral_weight,
    free_response,
    lyapunov_bound,
    lyapunov_bound_series,
    simulate_normal_mode,
    transfer_magnitude,
)


# -- parameters and regimes ----------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        OscillatorParams(k=0.0, nu=1.0)
    with pytest.raises(ValueError):
        OscillatorParams(k=-1.0, nu=0.0)
    with pytest.raises(ValueError):
        OscillatorParams(k=1.0, nu=-0.1)
    with pytest.raises(ValueError):
        OscillatorParams(k=math.nan, nu=0.0)


def test_regime_classification_total():
    assert OscillatorParams(k=1.0, nu=0.0).regime is Regime.UNDERDAMPED
    assert OscillatorParams(k=1.0, nu=1.9).regime is Regime.UNDERDAMPED
    assert OscillatorParams(k=1.0, nu=2.0).regime is Regime.CRITICAL
    assert OscillatorParams(k=1.0, nu=2.1).regime is Regime.OVERDAMPED
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = OscillatorParams(k=float(rng.uniform(0.01, 10)), nu=float(rng.uniform(0, 8)))
        assert p.regime in (Regime.UNDERDAMPED, Regime.CRITICAL, Regime.OVERDAMPED)


def test_derived_quantities():
    p = OscillatorParams(k=4.0, nu=2.0)
    assert p.omega == 2.0
    assert_allclose(p.omega_d, math.sqrt(3.0), rtol=1e-15)
    assert p.quality == 1.0
    assert OscillatorParams(k=9.0, nu=0.0).quality == math.inf
    assert OscillatorParams(k=1.0, nu=2.0).omega_d == 0.0  # critical


def test_phase_point_energy():
    p = OscillatorParams(k=4.0, nu=0.3)
    assert PhasePoint(q=0.0, p=0.0).energy(p) == 0.0
    assert_allclose(PhasePoint(q=1.0, p=2.0).energy(p), 0.5 * 4 + 0.5 * 4, rtol=0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        pt = PhasePoint(q=float(rng.normal()), p=float(rng.normal()))
        assert pt.energy(p) >= 0.0


# -- eigenstructure -------------------------------------------------------

def test_eigenvalues_underdamped_example():
    pair = eigenvalues(OscillatorParams(k=4.0, nu=2.0))
    assert_allclose(pair.lam_plus, -1.0 + 1j * math.sqrt(3.0), rtol=1e-14)
    assert_allclose(pair.lam_minus, -1.0 - 1j * math.sqrt(3.0), rtol=1e-14)


def test_eigenvalues_overdamped_example():
    pair = eigenvalues(OscillatorParams(k=1.0, nu=4.0))
    assert_allclose(pair.lam_plus, -2.0 + math.sqrt(3.0), rtol=1e-14)
    assert_allclose(pair.lam_minus, -2.0 - math.sqrt(3.0), rtol=1e-14)
    assert pair.lam_plus.imag == 0.0


def test_eigenvalues_undamped():
    pair = eigenvalues(OscillatorParams(k=1.0, nu=0.0))
    assert_allclose(pair.lam_plus, 1j, rtol=1e-15)
    assert_allclose(pair.lam_minus, -1j, rtol=1e-15)


def test_eigenvalues_match_numpy_roots():
    rng = np.random.default_rng(11)
    for _ in range(50):
        k = float(10.0 ** rng.uniform(-2, 2))
        nu = float(rng.uniform(0.0, 2.2) * math.sqrt(k))
        pair = eigenvalues(OscillatorParams(k=k, nu=nu))
        ref = np.roots([1.0, nu, k])
        got = sorted([pair.lam_plus, pair.lam_minus], key=lambda z: (z.real, z.imag))
        ref = sorted(ref.astype(complex), key=lambda z: (z.real, z.imag))
        assert_allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_eigenvalues_vieta():
    # sum = -nu, product = k over 1000 random parameter draws
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = float(10.0 ** rng.uniform(-2, 2))
        nu = float(rng.uniform(0.0, 2.2) * math.sqrt(k))
        pair = eigenvalues(OscillatorParams(k=k, nu=nu))
        s = pair.lam_plus + pair.lam_minus
        prod = pair.lam_plus * pair.lam_minus
        assert abs(s - (-nu)) <= 1e-10 * max(nu, 1e-30)
        assert abs(prod - k) <= 1e-10 * k


def test_eigenpair_splitting():
    pair = EigenPair(lam_plus=-1 + 2j, lam_minus=-1 - 2j)
    assert pair.splitting == 4j


def test_eigenvector_basis_inverse_and_diagonalization():
    rng = np.random.default_rng(5)
    for _ in range(100):
        k = float(rng.uniform(0.5, 9.0))
        nu = float(rng.uniform(0.0, 0.9) * 2.0 * math.sqrt(k))
        params = OscillatorParams(k=k, nu=nu)
        V, V_inv = eigenvector_basis(params)
        assert_allclose(V @ V_inv, np.eye(2), atol=1e-10)
        assert_allclose(V_inv @ V, np.eye(2), atol=1e-10)
        A = np.array([[0.0, 1.0], [-k, -nu]], dtype=np.complex128)
        pair = eigenvalues(params)
        D = V_inv @ A @ V
        assert_allclose(D, np.diag([pair.lam_plus, pair.lam_minus]), atol=1e-9)


def test_eigenvector_basis_columns_are_eigenvectors():
    params = OscillatorParams(k=4.0, nu=2.0)
    V, _ = eigenvector_basis(params)
    pair = eigenvalues(params)
    A = np.array([[0.0, 1.0], [-4.0, -2.0]], dtype=np.complex128)
    assert_allclose(A @ V[:, 0], pair.lam_plus * V[:, 0], atol=1e-12)
    assert_allclose(A @ V[:, 1], pair.lam_minus * V[:, 1], atol=1e-12)


def test_eigenvector_basis_degenerate():
    with pytest.raises(DegenerateEigenbasis):
        eigenvector_basis(OscillatorParams(k=1.0, nu=2.0))  # critical
    with pytest.raises(DegenerateEigenbasis):
        eigenvector_basis(OscillatorParams(k=1.0, nu=4.0))  # overdamped


# -- free response ---------------------------------------------------------

def test_damped_phasor_half_turn():
    assert_allclose(damped_phasor(1.0, 0.0, math.pi, 1.0), -1.0, atol=1e-15)


def test_damped_phasor_pure_decay():
    assert_allclose(damped_phasor(1.0, 1.0, 0.0, math.log(2.0)), 0.5, rtol=1e-14)


def test_damped_phasor_complex_start():
    z = damped_phasor(2j, 0.5, 2.0, 1.0)
    assert_allclose(z, 2j * np.exp(-0.5 + 2j), rtol=1e-14)


def test_damped_phasor_array_times():
    t = np.linspace(0.0, 5.0, 64)
    z = damped_phasor(1.0 + 1j, 0.3, 1.7, t)
    assert z.shape == t.shape
    mags = np.abs(z)
    assert np.all(np.diff(mags) < 0.0)  # strictly decaying for nu > 0
    z0 = damped_phasor(1.0 + 1j, 0.0, 1.7, t)
    assert_allclose(np.abs(z0), np.sqrt(2.0), rtol=1e-12)  # isometric rotation


def test_free_response_reads_params():
    params = OscillatorParams(k=math.pi**2, nu=0.0)
    assert_allclose(free_response(1.0, params, 1.0), -1.0, atol=1e-12)
    params = OscillatorParams(k=4.0, nu=0.6)
    t = np.array([0.0, 0.5, 1.0])
    assert_allclose(free_response(1 - 2j, params, t),
                    damped_phasor(1 - 2j, 0.6, 2.0, t), rtol=1e-15)


def test_simulate_normal_mode_free_matches_phasor():
    nu, omega, dt = 0.4, 1.9, 0.05
    z = simulate_normal_mode(1.0 + 0.5j, nu, omega, np.zeros(200), dt)
    t = np.arange(201) * dt
    assert_allclose(z, damped_phasor(1.0 + 0.5j, nu, omega, t), rtol=1e-12)


def test_simulate_normal_mode_driven_matches_rk4():
    # independent oracle: RK4 on z' = lam z + u with 20 substeps per sample
    rng = np.random.default_rng(2)
    nu, omega, dt, L = 0.5, 2.0, 0.05, 200
    u = rng.standard_normal(L)
    lam = complex(-nu, omega)
    z = complex(0.3, -0.2)
    ref = np.empty(L + 1, dtype=np.complex128)
    ref[0] = z
    h = dt / 20.0
    for j in range(L):
        f = lambda w: lam * w + u[j]  # noqa: E731
        for _ in range(20):
            k1 = f(z)
            k2 = f(z + 0.5 * h * k1)
            k3 = f(z + 0.5 * h * k2)
            k4 = f(z + h * k3)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ref[j + 1] = z
    got = simulate_normal_mode(0.3 - 0.2j, nu, omega, u, dt)
    assert_allclose(got, ref, atol=1e-10)


# -- energy law ------------------------------------------------------------

def test_energy_rate_examples():
    k_any = OscillatorParams(k=3.0, nu=2.0)
    assert energy_rate(PhasePoint(q=1.2, p=3.0), k_any, 0.0) == -18.0
    p2 = OscillatorParams(k=1.0, nu=1.0)
    assert energy_rate(PhasePoint(q=-4.0, p=2.0), p2, 5.0) == 6.0
    assert energy_rate(PhasePoint(q=9.0, p=0.0), p2, 123.0) == 0.0


def test_energy_rate_stiffness_independent():
    # k q p terms cancel: the rate cannot depend on k or q
    a = energy_rate(PhasePoint(q=5.0, p=1.5), OscillatorParams(k=0.1, nu=0.7), 2.0)
    b = energy_rate(PhasePoint(q=-3.0, p=1.5), OscillatorParams(k=50.0, nu=0.7), 2.0)
    assert a == b


def _rk4_phase_trajectory(k, nu, q0, p0, drive, dt, steps):
    """Reference RK4 integration of q' = p, p' = -nu p - k q + u(t)."""
    qs = np.empty(steps + 1)
    ps = np.empty(steps + 1)
    qs[0], ps[0] = q0, p0
    y = np.array([q0, p0], dtype=np.float64)
    for j in range(steps):
        t = j * dt

        def f(y_, t_):
            return np.array([y_[1], -nu * y_[1] - k * y_[0] + drive(t_)])

        k1 = f(y, t)
        k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = f(y + dt * k3, t + dt)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        qs[j + 1], ps[j + 1] = y
    return qs, ps


@pytest.mark.parametrize("drive", [lambda t: 0.0, lambda t: math.sin(1.3 * t)])
def test_energy_rate_matches_rk4_trajectory(drive):
    # dH/dt measured by central differences along an RK4 trajectory agrees
    # with the closed form within 1% wherever |p| > 0.1
    k, nu, dt, steps = 2.3, 0.7, 1e-3, 4000
    params = OscillatorParams(k=k, nu=nu)
    qs, ps = _rk4_phase_trajectory(k, nu, 1.0, 0.8, drive, dt, steps)
    H = 0.5 * ps**2 + 0.5 * k * qs**2
    dH = (H[2:] - H[:-2]) / (2.0 * dt)
    checked = 0
    for j in range(1, steps):
        if abs(ps[j]) <= 0.1:
            continue
        rate = energy_rate(PhasePoint(q=qs[j], p=ps[j]), params, drive(j * dt))
        # absolute floor covers central-difference truncation noise where
        # the drive momentarily balances the damping and the rate ~ 0
        assert abs(dH[j - 1] - rate) <= 0.01 * abs(rate) + 1e-5
        checked += 1
    assert checked > 1000


# -- Lyapunov envelope ------------------------------------------------------

def test_lyapunov_bound_free_decay_example():
    # e^{-nu t} H0 with no drive: 4 e^{-ln 4} = 1
    params = OscillatorParams(k=1.0, nu=1.0)
    t = math.log(4.0)
    dt = t / 1000.0
    b = lyapunov_bound(4.0, params, np.zeros(1000), dt, t)
    assert_allclose(b, 1.0, rtol=1e-12)


def test_lyapunov_bound_constant_drive_frozen():
    # left-Riemann sum of e^{-nu(t-s)} for constant unit drive has the
    # closed geometric-series form dt e^{-nu t} (e^{nu dt n} - 1)/(e^{nu dt} - 1)
    nu, dt, t = 1.0, 1e-3, 10.0
    n = 10000
    params = OscillatorParams(k=1.0, nu=nu)
    got = lyapunov_bound(0.0, params, np.ones(n), dt, t)
    geo = dt * math.exp(-nu * t) * (math.expm1(nu * dt * n)) / (math.expm1(nu * dt))
    assert_allclose(got, geo / (2.0 * nu * nu), rtol=1e-10)
    assert_allclose(got, 0.4997273, atol=5e-7)  # frozen value of the sum
    # continuous-limit integral (1 - e^{-10})/2 ~ 0.49998, approached as dt -> 0
    assert abs(got - 0.5 * (1.0 - math.exp(-10.0))) < 5e-4


def test_lyapunov_bound_errors():
    params = OscillatorParams(k=1.0, nu=0.0)
    with pytest.raises(NonPositiveDamping):
        lyapunov_bound(1.0, params, np.zeros(10), 0.1, 0.5)
    with pytest.raises(NonPositiveDamping):
        lyapunov_bound_series(1.0, params, np.zeros(10), 0.1)
    good = OscillatorParams(k=1.0, nu=1.0)
    with pytest.raises(ValueError):
        lyapunov_bound(1.0, good, np.zeros(10), 0.1, 0.55)  # off-grid t
    with pytest.raises(ValueError):
        lyapunov_bound(1.0, good, np.zeros(10), 0.1, 1.1)  # beyond the horizon
    with pytest.raises(ValueError):
        lyapunov_bound(1.0, good, np.zeros(10), -0.1, 0.5)


def test_lyapunov_series_matches_pointwise():
    rng = np.random.default_rng(4)
    params = OscillatorParams(k=2.0, nu=0.6)
    u = rng.standard_normal(64)
    dt = 0.05
    series = lyapunov_bound_series(1.5, params, u, dt)
    assert series.shape == (65,)
    for n in range(65):
        assert_allclose(series[n], lyapunov_bound(1.5, params, u, dt, n * dt),
                        rtol=1e-12, atol=1e-300)


def test_lyapunov_series_monotone_in_inputs():
    params = OscillatorParams(k=1.0, nu=0.5)
    u = np.linspace(-1.0, 1.0, 32)
    dt = 0.1
    lo = lyapunov_bound_series(1.0, params, u, dt)
    hi = lyapunov_bound_series(2.0, params, u, dt)
    assert np.all(hi >= lo)
    big = lyapunov_bound_series(1.0, params, 2.0 * u, dt)
    assert np.all(big >= lo)


def test_lyapunov_bound_dominates_trajectories():
    # 20 random driven trajectories in the kernel's damping range
    rng = np.random.default_rng(9)
    dt, steps = 0.01, 2000
    t = np.arange(1, steps + 1) * dt
    for _ in range(20):
        nu = rng.uniform(0.1, 0.9)
        omega = rng.uniform(0.3, 3.0)
        z0 = rng.normal() + 1j * rng.normal()
        a1, a2 = rng.normal(size=2)
        w1, w2 = rng.uniform(0.1, 2.0, 2)
        u = a1 * np.sin(w1 * t) + a2 * np.cos(w2 * t)
        z = simulate_normal_mode(z0, nu, omega, u, dt)
        H = 0.5 * np.abs(z) ** 2
        bound = lyapunov_bound_series(0.5 * abs(z0) ** 2,
                                      OscillatorParams(k=omega**2, nu=nu), u, dt)
        assert np.all(H <= bound * (1.0 + 1e-9))


# -- frequency response ------------------------------------------------------

def test_transfer_magnitude_dc():
    g_pos, g_mom = transfer_magnitude(OscillatorParams(k=2.0, nu=0.3), 0.0)
    assert_allclose(g_pos, 0.5, rtol=1e-15)
    assert g_mom == 0.0


def test_transfer_magnitude_at_resonance_example():
    g_pos, g_mom = transfer_magnitude(OscillatorParams(k=4.0, nu=0.5), 2.0)
    assert_allclose(g_pos, 1.0, rtol=1e-14)
    assert_allclose(g_mom, 2.0, rtol=1e-14)


def test_transfer_magnitude_resonance_values():
    # g_mom(omega) = 1/nu and g_pos(omega) = 1/(nu omega) for any nu > 0
    for k, nu in ((1.0, 0.2), (9.0, 1.5), (0.25, 0.05)):
        om = math.sqrt(k)
        g_pos, g_mom = transfer_magnitude(OscillatorParams(k=k, nu=nu), om)
        assert_allclose(g_mom, 1.0 / nu, rtol=1e-13)
        assert_allclose(g_pos, 1.0 / (nu * om), rtol=1e-13)


def test_transfer_magnitude_pole():
    with pytest.raises(ResonancePole):
        transfer_magnitude(OscillatorParams(k=1.0, nu=0.0), 1.0)


def test_transfer_magnitude_array():
    params = OscillatorParams(k=4.0, nu=0.5)
    Om = np.array([0.0, 1.0, 2.0, 3.0])
    g_pos, g_mom = transfer_magnitude(params, Om)
    assert g_pos.shape == Om.shape
    assert_allclose(g_mom, Om * g_pos, rtol=1e-15)


@pytest.mark.parametrize("k,nu", [(4.0, 0.9), (1.0, 0.4), (9.0, 1.2), (0.49, 0.3), (2.0, 0.1)])
def test_transfer_peaks_on_fine_grid(k, nu):
    # momentum gain peaks at omega exactly; position gain at sqrt(k - nu^2/2).
    # grid resolution 1e-3 * omega, damping in the nu <= omega/2 regime
    omega = math.sqrt(k)
    assert nu <= omega / 2.0
    step = 1e-3 * omega
    Om = np.arange(0.5 * omega, 1.5 * omega, step)
    g_pos, g_mom = transfer_magnitude(OscillatorParams(k=k, nu=nu), Om)
    assert abs(Om[np.argmax(g_mom)] - omega) <= step + 1e-12
    pos_peak = math.sqrt(k - 0.5 * nu * nu)
    assert abs(Om[np.argmax(g_pos)] - pos_peak) <= step + 1e-12


def test_energy_spectral_weight_examples():
    assert_allclose(energy_spectral_weight(OscillatorParams(k=2.0, nu=0.7), 0.0),
                    0.125, rtol=1e-15)
    assert_allclose(energy_spectral_weight(OscillatorParams(k=4.0, nu=0.5), 2.0),
                    2.5, rtol=1e-14)


def test_energy_spectral_weight_identity():
    # equals (1 + Omega^2) / (2 [(k - Omega^2)^2 + nu^2 Omega^2]) everywhere
    rng = np.random.default_rng(6)
    for _ in range(100):
        k = float(rng.uniform(0.1, 9.0))
        nu = float(rng.uniform(0.01, 2.0))
        Om = float(rng.uniform(0.0, 4.0))
        w = energy_spectral_weight(OscillatorParams(k=k, nu=nu), Om)
        ref = (1.0 + Om**2) / (2.0 * ((k - Om**2) ** 2 + (nu * Om) ** 2))
        assert_allclose(w, ref, rtol=1e-12)
