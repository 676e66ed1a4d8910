"""Pseudo-spectral vorticity solver used as the desk-scale reference.

Fully dealiased (radial mask over the retained modes kx^2 + ky^2 <=
floor(N/3)^2, which is alias-free for the quadratic term whenever
3*floor(N/3) < N), classical four-stage Runge-Kutta in time with a CFL-based
step, and the same tendency-spectrum conventions as the finite element
diagnostics.
"""

from dataclasses import dataclass

import numpy as np

from .diagnostics import (GridSample, SpectrumAccumulator, SubgridSpectra,
                          tendency_spectra, time_average)
from .manufactured import turbulence_initial_vorticity

__all__ = ["SpectralState", "spectral_jacobian", "spectral_step",
           "reference_tendency_run", "BlowupError"]


class BlowupError(RuntimeError):
    pass


def _wave(N: int):
    k = np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return kx, ky


def dealias_mask(N: int) -> np.ndarray:
    kmax = N // 3
    kx, ky = _wave(N)
    return (kx * kx + ky * ky) <= kmax * kmax


@dataclass
class SpectralState:
    N: int
    omega_hat: np.ndarray
    t: float

    @property
    def mask(self) -> np.ndarray:
        return dealias_mask(self.N)


def make_state(N: int, omega_fn=turbulence_initial_vorticity) -> SpectralState:
    xs = np.arange(N) / N
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    w = omega_fn(np.column_stack([X.ravel(), Y.ravel()])).reshape(N, N)
    wh = np.fft.fft2(w) * dealias_mask(N)
    return SpectralState(N, wh, 0.0)


def psi_hat_of(omega_hat: np.ndarray) -> np.ndarray:
    """Stream function modes: omega = Laplace(psi)."""
    N = omega_hat.shape[0]
    kx, ky = _wave(N)
    k2bar = 4.0 * np.pi**2 * (kx * kx + ky * ky).astype(float)
    k2bar[0, 0] = 1.0
    ph = -omega_hat / k2bar
    ph[0, 0] = 0.0
    return ph


def velocity_of(psi_hat: np.ndarray):
    """Physical-space velocity u = grad_perp(psi) = (psi_y, -psi_x)."""
    N = psi_hat.shape[0]
    kx, ky = _wave(N)
    ux = np.real(np.fft.ifft2(2j * np.pi * ky * psi_hat))
    uy = np.real(np.fft.ifft2(-2j * np.pi * kx * psi_hat))
    return ux, uy


def spectral_jacobian(psi_hat: np.ndarray, omega_hat: np.ndarray) -> np.ndarray:
    """Dealiased transform of J = grad_perp(psi) . grad(omega)."""
    N = psi_hat.shape[0]
    kx, ky = _wave(N)
    ux, uy = velocity_of(psi_hat)
    wx = np.real(np.fft.ifft2(2j * np.pi * kx * omega_hat))
    wy = np.real(np.fft.ifft2(2j * np.pi * ky * omega_hat))
    return np.fft.fft2(ux * wx + uy * wy) * dealias_mask(N)


def _rhs(omega_hat: np.ndarray, forcing_hat, tau):
    dw = -spectral_jacobian(psi_hat_of(omega_hat), omega_hat)
    if forcing_hat is not None:
        dw = dw + forcing_hat
    if tau is not None:
        dw = dw - omega_hat / tau
    return dw


def spectral_step(state: SpectralState, dt: float, forcing_hat=None,
                  tau: float | None = None) -> SpectralState:
    """Classical RK4 update; raises BlowupError on non-finite modes."""
    w = state.omega_hat
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = _rhs(w, forcing_hat, tau)
        k2 = _rhs(w + 0.5 * dt * k1, forcing_hat, tau)
        k3 = _rhs(w + 0.5 * dt * k2, forcing_hat, tau)
        k4 = _rhs(w + dt * k3, forcing_hat, tau)
        wn = w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(wn)):
        raise BlowupError(f"non-finite vorticity modes at t={state.t + dt:.3f}")
    return SpectralState(state.N, wn * state.mask, state.t + dt)


def energy_enstrophy(state: SpectralState):
    N = state.N
    ph = psi_hat_of(state.omega_hat)
    kx, ky = _wave(N)
    k2bar = 4.0 * np.pi**2 * (kx * kx + ky * ky).astype(float)
    E = 0.5 * float(np.sum(k2bar * np.abs(ph) ** 2)) / N**4
    Z = 0.5 * float(np.sum(np.abs(state.omega_hat) ** 2)) / N**4
    return E, Z


def sine_forcing_hat(N: int, k: int, amplitude: float = 0.1) -> np.ndarray:
    """Exact modes of amplitude*sin(2 pi k x)."""
    fh = np.zeros((N, N), dtype=complex)
    fh[k, 0] = amplitude * N * N / 2j
    fh[-k, 0] = -amplitude * N * N / 2j
    return fh * dealias_mask(N)


def cfl_dt(state: SpectralState, factor: float = 0.2) -> float:
    ux, uy = velocity_of(psi_hat_of(state.omega_hat))
    umax = float(np.max(np.hypot(ux, uy)))
    return factor / (state.N * max(umax, 1e-6))


def _grids(state: SpectralState):
    ph = psi_hat_of(state.omega_hat)
    N = state.N
    psi = np.real(np.fft.ifft2(ph))
    om = np.real(np.fft.ifft2(state.omega_hat))
    J = np.real(np.fft.ifft2(spectral_jacobian(ph, state.omega_hat)))
    return (GridSample(N, psi, "psi"), GridSample(N, om, "omega"),
            GridSample(N, J, "J"))


def subgrid_spectra_of_state(state: SpectralState, k_T: int) -> SubgridSpectra:
    """Full-minus-truncated tendency spectra of one spectral snapshot."""
    N = state.N
    kmax = N // 3
    if k_T > kmax:
        raise ValueError(f"k_T={k_T} exceeds k_max={kmax}")
    pg, og, jg = _grids(state)
    full = tendency_spectra(pg, og, jg)
    kx, ky = _wave(N)
    keep = (kx * kx + ky * ky) <= float(k_T) ** 2
    wh_T = state.omega_hat * keep
    ph_T = psi_hat_of(wh_T)
    j_T = np.real(np.fft.ifft2(spectral_jacobian(ph_T, wh_T)))
    trunc = tendency_spectra(GridSample(N, np.real(np.fft.ifft2(ph_T)), "psi"),
                             GridSample(N, np.real(np.fft.ifft2(wh_T)), "omega"),
                             GridSample(N, j_T, "J"), k_T)
    return SubgridSpectra(
        k=full.k, E_dot=full.E_dot, Z_dot=full.Z_dot,
        E_dot_T=trunc.E_dot, Z_dot_T=trunc.Z_dot,
        E_dot_SG=full.E_dot - trunc.E_dot, Z_dot_SG=full.Z_dot - trunc.Z_dot,
        k_T=k_T, N=N)


def reference_tendency_run(N: int, k_T_list, t_spinup: float, t_avg: float,
                           forcing_k: int = 16, forcing_amplitude: float = 0.1,
                           tau: float = 100.0, cfl: float = 0.2,
                           progress=None):
    """Forced-turbulence reference run with time-averaged subgrid spectra.

    Returns (accumulators, state): one SpectrumAccumulator per k_T collected
    every step over (t_spinup, t_spinup + t_avg].
    """
    state = make_state(N)
    fh = sine_forcing_hat(N, forcing_k, forcing_amplitude)
    accs = {int(kt): None for kt in k_T_list}
    t_end = t_spinup + t_avg
    while state.t < t_end - 1e-12:
        dt = min(cfl_dt(state, cfl), t_end - state.t)
        state = spectral_step(state, dt, fh, tau)
        if state.t > t_spinup:
            for kt in accs:
                accs[kt] = time_average(accs[kt],
                                        subgrid_spectra_of_state(state, kt))
        if progress is not None:
            progress(state)
    return accs, state
