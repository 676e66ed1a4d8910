"""Scalar invariants, uniform sampling, and spectral tendency diagnostics.

Tendency spectra follow the stream-function pairing: with J the Galerkin
representative of the advective vorticity tendency u.grad(omega),

    E_dot(kx, ky) = +Re{conj(psi_hat) J_hat} / N^4
    Z_dot(kx, ky) = -Re{conj(omega_hat) J_hat} / N^4

Both are true tendencies (positive = gain at that mode): summed over all
modes they equal the grid means of psi*J and -omega*J by Parseval. Shell
sums cover the retained modes kx^2 + ky^2 <= floor(N/3)^2, binned by the
nearest integer wavenumber.

All functions are pure over immutable inputs and safe to run concurrently
on independent snapshots.
"""

from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators as op
from .fespace import Field, evaluate_at_points
from .schemes import SupgIntegrator, VelocityIntegrator, VelocityState, VorticityState

__all__ = [
    "GridSample", "TendencySpectrum", "SubgridSpectra", "SpectrumAccumulator",
    "energy", "enstrophy", "mesh_time_scale", "numerical_jacobian",
    "sample_uniform", "tendency_spectra", "truncate_spectral",
    "subgrid_tendencies", "time_average",
]


@dataclass
class GridSample:
    N: int
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        if self.values.shape != (self.N, self.N):
            raise ValueError("grid sample must be N x N")


def energy(field: Field) -> float:
    """Kinetic energy: half squared L2 norm of u, or of grad(psi) for CG."""
    c = field.coefficients
    if field.space.vector_valued:
        return 0.5 * float(c @ (op.mass_matrix(field.space) @ c))
    return 0.5 * float(c @ (op.stiffness_matrix(field.space) @ c))


def enstrophy(omega: Field) -> float:
    c = omega.coefficients
    return 0.5 * float(c @ (op.mass_matrix(omega.space) @ c))


def mesh_time_scale(u: Field) -> float:
    """tau_h = h / sup |u|, the advective time scale of the mesh."""
    qdeg = 2 * u.space.degree + 2
    vals = op.qp_values(u.space, u.coefficients, qdeg)
    sup = op.max_speed(vals)
    return u.space.mesh.h / max(sup, 1e-300)


# ---------------------------------------------------------------------------
# numerical Jacobian

def numerical_jacobian(state, integrator) -> Field:
    """Galerkin representative of the advective vorticity tendency.

    SUPG: (J, phi) = a~(u; omega, phi) + s~(u; omega, phi) with the
    instantaneous self-consistent time derivative omega_dot = -J inside the
    stabilisation residual (one linear solve). Velocity schemes: J is minus
    the weak curl of the instantaneous advective du/dt; the pressure
    projection drops out exactly under the weak curl.
    """
    if isinstance(integrator, SupgIntegrator):
        V0 = integrator.V0
        qdeg = integrator.qdeg
        psi = state.psi.coefficients
        omega = state.omega.coefficients
        M0 = integrator.M0
        a_vec = np.zeros(V0.dim)
        rows = []
        locs_a, locs_s, smat_blocks = [], [], []
        gmax_parts = []
        fields = []
        for cls in (0, 1):
            cells = V0.class_cells(cls)
            _, w, tab, gtab = V0.cell_tabulation(qdeg)[cls]
            dm = V0.dof_map[cells]
            u = op.perp(np.einsum("cd,qdl->cql", psi[dm], gtab))
            gw = np.einsum("cd,qdl->cql", omega[dm], gtab)
            adv = np.einsum("cqi,cqi->cq", u, gw)
            speed = np.hypot(u[..., 0], u[..., 1])
            fields.append((cells, w, tab, gtab, dm, u, adv, speed))
            gmax_parts.append(float(np.max(speed, initial=0.0)))
        gmax = max(gmax_parts)
        for cells, w, tab, gtab, dm, u, adv, speed in fields:
            taus = integrator.rule.tau(speed, gmax)
            ugphi = np.einsum("cqi,qti->cqt", u, gtab)
            locs_a.append(np.einsum("q,cq,qt->ct", w, adv, tab))
            locs_s.append(np.einsum("q,cq,cqt->ct", w, taus * adv, ugphi))
            smat_blocks.append(np.einsum("q,cq,qd,cqt->ctd", w, taus, tab, ugphi))
        rhs = (op.scatter_cell_vector(V0, locs_a)
               + op.scatter_cell_vector(V0, locs_s))
        S = integrator._pat_ww.assemble(np.concatenate(
            [np.ascontiguousarray(b).ravel() for b in smat_blocks]))
        solver = getattr(integrator, "_jac_solver", None)
        if solver is None:
            from .schemes import StepLinearSolver

            solver = integrator._jac_solver = StepLinearSolver()
        J = solver(sp.csc_matrix(M0 + S), rhs)
        return Field(V0, J)

    # velocity schemes
    integ = integrator
    adv = integ.asm.residual(state.u.coefficients, state.u.coefficients,
                             integ.rule)
    from .schemes import _mass_lu

    udot = Field(integ.V1, -_mass_lu(integ.V1).solve(adv))
    omega_dot = op.weak_vorticity(udot, integ.V0)
    return Field(integ.V0, -omega_dot.coefficients)


# ---------------------------------------------------------------------------
# sampling and spectra

def sample_uniform(field: Field, N: int, tag: str = "") -> GridSample:
    """Field values at the uniform lattice x_i = i/N (periodic meshes).

    For a CG field whose nodal lattice matches N the nodal values are used
    directly; otherwise the field is evaluated point by point.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    space = field.space
    if not space.mesh.periodic:
        raise ValueError("uniform sampling requires a periodic mesh")
    if space.family == "CG" and space.degree * space.mesh.n == N:
        grid = space.lattice_map()
        return GridSample(N, field.coefficients[grid].copy(), tag)
    xs = np.arange(N) / N
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    vals = evaluate_at_points(field, pts)
    return GridSample(N, vals.reshape(N, N), tag)


def _wavenumbers(N: int):
    k = np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return kx, ky, kx * kx + ky * ky


def retained_mask(N: int) -> np.ndarray:
    kmax = N // 3
    _, _, k2 = _wavenumbers(N)
    return k2 <= kmax * kmax


@dataclass
class TendencySpectrum:
    k: np.ndarray
    E_dot: np.ndarray
    Z_dot: np.ndarray
    k_max: int
    k_T: int | None = None
    sample_count: int = 1
    E_dot_total: float = 0.0  # all-mode Parseval sum == mean(psi * J)
    Z_dot_total: float = 0.0  # all-mode Parseval sum == -mean(omega * J)


def tendency_spectra(psi_grid: GridSample, omega_grid: GridSample,
                     j_grid: GridSample, k_T: int | None = None) -> TendencySpectrum:
    """Shell-binned energy/enstrophy tendencies of a (psi, omega, J) triple."""
    N = psi_grid.N
    if omega_grid.N != N or j_grid.N != N:
        raise ValueError("mismatched sample sizes")
    psh = np.fft.fft2(psi_grid.values)
    omh = np.fft.fft2(omega_grid.values)
    jh = np.fft.fft2(j_grid.values)
    N4 = float(N) ** 4
    e_mode = np.real(np.conj(psh) * jh) / N4
    z_mode = -np.real(np.conj(omh) * jh) / N4
    kx, ky, k2 = _wavenumbers(N)
    kmax = N // 3
    keep = k2 <= kmax * kmax
    shell = np.rint(np.sqrt(k2[keep])).astype(np.int64)
    E = np.bincount(shell, weights=e_mode[keep], minlength=kmax + 1)
    Z = np.bincount(shell, weights=z_mode[keep], minlength=kmax + 1)
    return TendencySpectrum(
        k=np.arange(kmax + 1), E_dot=E, Z_dot=Z, k_max=kmax, k_T=k_T,
        E_dot_total=float(e_mode.sum()), Z_dot_total=float(z_mode.sum()))


def truncate_spectral(grid: GridSample, k_T: int) -> GridSample:
    """Zero every mode with |k| > k_T and transform back (real output)."""
    if k_T < 0:
        raise ValueError("k_T must be >= 0")
    _, _, k2 = _wavenumbers(grid.N)
    keep = k2 <= float(k_T) ** 2
    out = np.real(np.fft.ifft2(np.fft.fft2(grid.values) * keep))
    return GridSample(grid.N, out, grid.tag)


# ---------------------------------------------------------------------------
# subgrid tendencies (full minus truncated pipeline)

@dataclass
class SubgridSpectra:
    k: np.ndarray
    E_dot: np.ndarray
    Z_dot: np.ndarray
    E_dot_T: np.ndarray
    Z_dot_T: np.ndarray
    E_dot_SG: np.ndarray
    Z_dot_SG: np.ndarray
    k_T: int
    N: int


def state_fields(state, integrator):
    """(psi, omega) Fields of a scheme state; recovered weakly for velocity."""
    if isinstance(integrator, SupgIntegrator):
        return state.psi, state.omega
    omega = integrator.vorticity(state)
    psi = op.streamfunction_poisson(omega, integrator.Vpsi)
    return psi, omega


def _field_from_grid(grid: GridSample, space) -> Field:
    """Nodal interpolation of lattice values back into a CG space."""
    coefs = np.empty(space.dim)
    coefs[space.lattice_map()] = grid.values
    return Field(space, coefs)


def _sample_triple(state, integrator, N):
    psi, omega = state_fields(state, integrator)
    j = numerical_jacobian(state, integrator)
    return (sample_uniform(psi, N, "psi"), sample_uniform(omega, N, "omega"),
            sample_uniform(j, N, "J"))


def _truncated_pipeline(pg, og, integrator, k_cut, t):
    """Truncate (psi, omega) grids, rebuild FE fields, recompute the scheme
    Jacobian, and return the resulting tendency spectra."""
    pg_c = truncate_spectral(pg, k_cut)
    og_c = truncate_spectral(og, k_cut)
    if isinstance(integrator, SupgIntegrator):
        state_c = VorticityState(_field_from_grid(pg_c, integrator.Vpsi),
                                 _field_from_grid(og_c, integrator.V0), t)
    else:
        psi_c = _field_from_grid(pg_c, integrator.V0)
        u_c = Field(integrator.V1, integrator.curl @ psi_c.coefficients)
        state_c = VelocityState(u_c, Field(integrator.V2,
                                           np.zeros(integrator.V2.dim)), t)
    j_c = numerical_jacobian(state_c, integrator)
    return tendency_spectra(pg_c, og_c,
                            sample_uniform(j_c, pg.N, "J"), k_cut)


def subgrid_tendencies(state, integrator, k_T: int) -> SubgridSpectra:
    """Tendency spectra of the scheme minus those of the truncated fields.

    All transforms are first truncated at the maximum retained wavenumber
    k_max = N/3, so both pipelines live in the dealiased band: the stream
    function and vorticity grids are band-limited, mapped back into the
    finite element spaces by nodal interpolation on the shared lattice, and
    the scheme's Jacobian is recomputed on them. The k_T pipeline repeats
    this with the harder cut; the difference isolates the tendencies due to
    scales k_T < k <= k_max. At k_T = k_max the two pipelines coincide and
    the subgrid tendencies vanish identically.
    """
    N = (integrator.config.r + 1) * integrator.mesh.n
    kmax = N // 3
    if k_T > kmax:
        raise ValueError(f"k_T={k_T} exceeds k_max={kmax}")
    psi, omega = state_fields(state, integrator)
    pg = sample_uniform(psi, N, "psi")
    og = sample_uniform(omega, N, "omega")
    full = _truncated_pipeline(pg, og, integrator, kmax, state.t)
    trunc = _truncated_pipeline(pg, og, integrator, k_T, state.t)
    return SubgridSpectra(
        k=full.k, E_dot=full.E_dot, Z_dot=full.Z_dot,
        E_dot_T=trunc.E_dot, Z_dot_T=trunc.Z_dot,
        E_dot_SG=full.E_dot - trunc.E_dot, Z_dot_SG=full.Z_dot - trunc.Z_dot,
        k_T=k_T, N=N)


# ---------------------------------------------------------------------------
# streaming averages

class SpectrumAccumulator:
    """Running mean and variance (Welford) of named spectrum arrays."""

    def __init__(self):
        self.count = 0
        self._mean: dict = {}
        self._m2: dict = {}

    def add(self, arrays: dict):
        self.count += 1
        for name, val in arrays.items():
            val = np.asarray(val, dtype=float)
            if name not in self._mean:
                self._mean[name] = np.zeros_like(val)
                self._m2[name] = np.zeros_like(val)
            d = val - self._mean[name]
            self._mean[name] = self._mean[name] + d / self.count
            self._m2[name] = self._m2[name] + d * (val - self._mean[name])
        return self

    def mean(self, name: str) -> np.ndarray:
        return self._mean[name]

    def stderr(self, name: str) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self._mean[name], np.inf)
        return np.sqrt(self._m2[name] / (self.count * (self.count - 1)))


def time_average(accumulator: SpectrumAccumulator | None, spectrum) -> SpectrumAccumulator:
    """Accumulate a spectrum record into a running (streaming) average."""
    if accumulator is None:
        accumulator = SpectrumAccumulator()
    if isinstance(spectrum, SubgridSpectra):
        arrays = {n: getattr(spectrum, n)
                  for n in ("E_dot", "Z_dot", "E_dot_T", "Z_dot_T",
                            "E_dot_SG", "Z_dot_SG")}
    elif isinstance(spectrum, TendencySpectrum):
        arrays = {"E_dot": spectrum.E_dot, "Z_dot": spectrum.Z_dot}
    else:
        arrays = dict(spectrum)
    return accumulator.add(arrays)
