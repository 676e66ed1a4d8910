import numpy as np
import pytest

from euler2d import specref as sr
from euler2d.diagnostics import tendency_spectra


def test_jacobian_closed_form():
    N = 64
    xs = np.arange(N) / N
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    ph = np.fft.fft2(np.sin(2 * np.pi * X))
    wh = np.fft.fft2(np.sin(2 * np.pi * Y))
    J = np.real(np.fft.ifft2(sr.spectral_jacobian(ph, wh)))
    exact = -4 * np.pi**2 * np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    assert np.max(np.abs(J - exact)) < 1e-12 * np.max(np.abs(exact))


def test_single_mode_jacobian_zero():
    st = sr.make_state(32, lambda p: np.sin(2 * np.pi * 4 * p[:, 0])
                       * np.sin(2 * np.pi * 4 * p[:, 1]))
    Jh = sr.spectral_jacobian(sr.psi_hat_of(st.omega_hat), st.omega_hat)
    assert np.max(np.abs(Jh)) / 32**2 < 1e-13


def test_jacobian_mean_zero():
    st = sr.make_state(32)
    Jh = sr.spectral_jacobian(sr.psi_hat_of(st.omega_hat), st.omega_hat)
    assert abs(Jh[0, 0]) / 32**2 < 1e-13


def test_steady_single_mode():
    st = sr.make_state(32, lambda p: np.sin(2 * np.pi * 3 * p[:, 0])
                       * np.sin(2 * np.pi * 3 * p[:, 1]))
    w0 = st.omega_hat.copy()
    for _ in range(20):
        st = sr.spectral_step(st, 0.01)
    assert np.max(np.abs(st.omega_hat - w0)) / 32**2 < 1e-12


def test_unforced_conservation_200_steps():
    st = sr.make_state(64, lambda p: 0.05 * sr.turbulence_initial_vorticity(p))
    E0, Z0 = sr.energy_enstrophy(st)
    for _ in range(200):
        st = sr.spectral_step(st, min(sr.cfl_dt(st, 0.2), 0.8))
    E1, Z1 = sr.energy_enstrophy(st)
    assert abs(E1 - E0) / E0 <= 1e-8
    assert abs(Z1 - Z0) / Z0 <= 1e-8


def test_detailed_conservation_of_jacobian():
    st = sr.make_state(64)
    Jh = sr.spectral_jacobian(sr.psi_hat_of(st.omega_hat), st.omega_hat)
    N4 = 64.0**4
    e = np.sum(np.real(np.conj(sr.psi_hat_of(st.omega_hat)) * Jh)) / N4
    z = np.sum(np.real(np.conj(st.omega_hat) * Jh)) / N4
    E, Z = sr.energy_enstrophy(st)
    assert abs(e) < 1e-10 * E
    assert abs(z) < 1e-10 * Z


def test_drag_decay_single_mode():
    N, tau = 32, 2.0
    st = sr.make_state(N, lambda p: np.sin(2 * np.pi * 3 * p[:, 0]))
    _, Z0 = sr.energy_enstrophy(st)
    t_end, dt = 0.5, 0.01
    while st.t < t_end - 1e-12:
        st = sr.spectral_step(st, min(dt, t_end - st.t), None, tau)
    _, Z1 = sr.energy_enstrophy(st)
    assert abs(np.sqrt(Z1 / Z0) - np.exp(-t_end / tau)) < 1e-10


def test_forcing_hat_is_exact_sine():
    N = 32
    fh = sr.sine_forcing_hat(N, 4, 0.1)
    xs = np.arange(N) / N
    f = np.real(np.fft.ifft2(fh))
    exact = 0.1 * np.sin(2 * np.pi * 4 * xs)
    assert np.max(np.abs(f - exact[:, None])) < 1e-15


def test_blowup_detected():
    st = sr.make_state(16)
    st.omega_hat[1, 1] = 1e308
    with pytest.raises(sr.BlowupError):
        sr.spectral_step(st, 1e3)


def test_masked_modes_zero():
    st = sr.make_state(24)
    assert np.max(np.abs(st.omega_hat[~st.mask])) == 0.0
    st = sr.spectral_step(st, 1e-3)
    assert np.max(np.abs(st.omega_hat[~st.mask])) == 0.0


def test_reference_run_zero_subgrid_at_kmax():
    accs, state = sr.reference_tendency_run(32, [32 // 3], t_spinup=0.0,
                                            t_avg=0.05, tau=100.0)
    acc = accs[32 // 3]
    assert acc.count >= 1
    assert np.max(np.abs(acc.mean("E_dot_SG"))) < 1e-11
    assert np.max(np.abs(acc.mean("Z_dot_SG"))) < 1e-11


def test_reference_parseval_totals():
    st = sr.make_state(32)
    pg, og, jg = sr._grids(st)
    spec = tendency_spectra(pg, og, jg)
    assert abs(spec.E_dot_total - np.mean(pg.values * jg.values)) < 1e-10
    assert abs(spec.Z_dot_total + np.mean(og.values * jg.values)) < 1e-10
