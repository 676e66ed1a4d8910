"""Implicit-midpoint time integration of the three discretisations.

Velocity schemes (flux form and Lie derivative) solve the coupled nonlinear
saddle-point system for (u, p) with the divergence constraint enforced at
the end of the step; the SUPG scheme solves the coupled (omega, psi) system
with the Poisson constraint at the end of the step. Both use exact Newton
on all smooth terms with the upwind sign / velocity floor frozen per
iterate, and a monolithic sparse direct factorization per iteration.

Forcing and Ekman drag enter the vorticity residual as -(f, phi) +
(omega_mid/tau, phi), and for SUPG also inside the stabilisation residual
R. Velocity schemes lift the vorticity forcing through the stream function
(curl of the inverse Laplacian); on the discretely divergence-free subspace
the drag lift reduces exactly to (u_mid - mean(u_mid))/tau, which keeps the
step implicit and sparse (rank-2 bordered correction).

A single integrator instance is sequential; independent instances share no
mutable state.
"""

from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators as op
from .fespace import Field, FunctionSpace
from .mesh import Mesh

__all__ = [
    "SchemeConfig", "VelocityState", "VorticityState", "NewtonError",
    "newton_solve", "VelocityIntegrator", "SupgIntegrator",
    "make_integrator", "set_initial_condition", "apply_forcing_and_drag",
]

SCHEMES = ("flux_form", "lie_derivative", "supg")


@dataclass
class SchemeConfig:
    scheme: str
    r: int = 1
    dt: float = 0.02
    alpha: float = 1.0
    beta: float = 1.0
    newton_tol: float = 1e-11
    newton_max_iters: int = 30
    forcing: object = None            # vorticity forcing f(t, pts) -> (npts,)
    forcing_static: bool = False
    momentum_forcing: object = None   # F(t, pts) -> (npts, 2), velocity only
    drag_tau: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.r not in (1, 2):
            raise ValueError("r must be 1 or 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.newton_tol > 0 and self.newton_max_iters > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.drag_tau is not None and not self.drag_tau > 0:
            raise ValueError("drag_tau must be positive")


@dataclass
class VelocityState:
    u: Field
    p: Field
    t: float


@dataclass
class VorticityState:
    psi: Field
    omega: Field
    t: float


@dataclass
class NewtonReport:
    iterations: int
    residual_norms: list
    converged: bool


class NewtonError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class StepLinearSolver:
    """Sparse direct factorization reused as a Krylov preconditioner.

    Consecutive Newton systems along a time march differ by O(dt), so one
    LU serves as a preconditioner for many of them: each solve first tries
    GMRES with the stored factorization and refactors only when that stops
    converging within `max_krylov` iterations. Falls back to (and keeps)
    an exact direct solve whenever it refactors, so every returned solution
    is backward stable to `rtol`.
    """

    def __init__(self, max_krylov: int = 30, rtol: float = 1e-10):
        self.max_krylov = max_krylov
        self.rtol = rtol
        self._lu = None

    def reset(self):
        self._lu = None

    def __call__(self, J, b: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            M = spla.LinearOperator(J.shape, self._lu.solve)
            x, info = spla.gmres(J, b, M=M, rtol=self.rtol, atol=0.0,
                                 restart=self.max_krylov, maxiter=1)
            if info == 0:
                return x
        self._lu = spla.splu(sp.csc_matrix(J))
        return self._lu.solve(b)


def _direct_solve(J, b):
    return spla.splu(sp.csc_matrix(J)).solve(b)


def newton_solve(residual, jacobian, guess, tol, max_iters, fd_check=False,
                 linear_solver=None):
    """Newton iteration with sparse linear solves.

    Stops when ||r|| <= tol * max(1, ||r0||); raises NewtonError on
    non-convergence or a singular linear solve. `linear_solver(J, b)`
    defaults to a direct factorization. With fd_check the Jacobian is
    verified against central finite differences in random directions
    before the first update.
    """
    solve = linear_solver or _direct_solve
    x = np.array(guess, dtype=float)
    r = residual(x)
    norms = [np.linalg.norm(r)]
    target = tol * max(1.0, norms[0])
    if fd_check:
        _check_jacobian(residual, jacobian, x)
    it = 0
    while norms[-1] > target:
        if it >= max_iters:
            raise NewtonError(
                f"Newton did not converge in {max_iters} iterations "
                f"(residual {norms[-1]:.3e}, target {target:.3e})",
                NewtonReport(it, norms, False))
        J = jacobian(x)
        try:
            dx = solve(J, -r)
        except RuntimeError as exc:
            raise NewtonError(f"singular Newton system: {exc}",
                              NewtonReport(it, norms, False)) from exc
        if not np.all(np.isfinite(dx)):
            raise NewtonError("linear solve returned non-finite update",
                              NewtonReport(it, norms, False))
        x = x + dx
        r = residual(x)
        norms.append(np.linalg.norm(r))
        it += 1
    return x, NewtonReport(it, norms, True)


def _check_jacobian(residual, jacobian, x, ndirs=3, eps=1e-6, rtol=1e-6):
    rng = np.random.default_rng(1234)
    J = jacobian(x)
    scale = max(1.0, np.linalg.norm(x))
    for _ in range(ndirs):
        v = rng.standard_normal(len(x))
        v /= np.linalg.norm(v)
        fd = (residual(x + eps * v) - residual(x - eps * v)) / (2 * eps)
        err = np.linalg.norm(J @ v - fd) / max(1.0, np.linalg.norm(fd))
        if err > rtol * scale:
            raise NewtonError(f"Jacobian/residual mismatch: {err:.3e}")


# ---------------------------------------------------------------------------
# velocity schemes (flux form, Lie derivative)

class VelocityIntegrator:
    def __init__(self, mesh: Mesh, config: SchemeConfig):
        if config.scheme not in ("flux_form", "lie_derivative"):
            raise ValueError("velocity integrator needs flux_form/lie_derivative")
        self.mesh = mesh
        self.config = config
        r = config.r
        self.V1 = FunctionSpace(mesh, "BDM", r)
        self.V2 = FunctionSpace(mesh, "DG", r - 1, zero_mean=True)
        self.V0 = FunctionSpace(mesh, "CG", r + 1)
        self.Vpsi = FunctionSpace(mesh, "CG", r + 1, zero_mean=mesh.periodic)
        self.rule = op.UpwindRule(alpha=config.alpha)
        form = "flux" if config.scheme == "flux_form" else "lie"
        self.asm = op.get_advection(self.V1, form)
        self.M1 = op.mass_matrix(self.V1)
        self.D = op.divergence_matrix(self.V1, self.V2)
        self.mp = self.V2.dof_integrals()
        self.B = self.V1.dof_integrals()  # (dim, 2)
        self.curl = op.curl_matrix(self.V0, self.V1)
        if mesh.periodic:
            self.free = np.arange(self.V1.dim)
        else:
            self.free = np.setdiff1d(np.arange(self.V1.dim),
                                     self.V1.boundary_dofs())
        self._force_cache: dict = {}
        self._qpts_phys = None
        self._du_prev = None
        self.linear_solver = StepLinearSolver()
        self.last_report = None

    # -- forcing --------------------------------------------------------

    def _phys_qpts(self):
        if self._qpts_phys is None:
            out = []
            for cls in (0, 1):
                cells = self.V1.class_cells(cls)
                pts, w, tab, _ = self.V1.cell_tabulation(self.asm.qdeg_cell)[cls]
                phys = self.mesh.cell_ij[cells][:, None, :] * self.mesh.h + pts
                out.append((cells, w, tab, phys))
            self._qpts_phys = out
        return self._qpts_phys

    def _momentum_force_vector(self, t: float) -> np.ndarray:
        vec = np.zeros(self.V1.dim)
        cfg = self.config
        if cfg.momentum_forcing is not None:
            locs = []
            for cells, w, tab, phys in self._phys_qpts():
                F = cfg.momentum_forcing(t, phys.reshape(-1, 2)).reshape(
                    phys.shape[0], phys.shape[1], 2)
                locs.append(np.einsum("q,cqi,qti->ct", w, F, tab))
            vec += op.scatter_cell_vector(self.V1, locs)
        if cfg.forcing is not None:
            key = None if cfg.forcing_static else t
            if key not in self._force_cache:
                self._force_cache.clear()
                b_f = _scalar_moment_vector(self.V0, cfg.forcing, t)
                M0lu = _mass_lu(self.V0)
                f_field = Field(self.V0, M0lu.solve(b_f))
                phi = op.streamfunction_poisson(f_field, self.Vpsi)
                self._force_cache[key] = self.M1 @ (self.curl @ phi.coefficients)
            vec += self._force_cache[key]
        return vec

    # -- initial conditions ----------------------------------------------

    def initial_state_from_vorticity(self, omega_fn) -> VelocityState:
        from .fespace import interpolate

        w0 = interpolate(lambda p: omega_fn(0.0, p), self.V0)
        psi = op.streamfunction_poisson(w0, self.Vpsi)
        u = Field(self.V1, self.curl @ psi.coefficients)
        return VelocityState(u, Field(self.V2, np.zeros(self.V2.dim)), 0.0)

    def initial_state_from_streamfunction(self, psi_fn, t0=0.0) -> VelocityState:
        from .fespace import interpolate

        psi = interpolate(lambda p: psi_fn(t0, p), self.V0)
        u = Field(self.V1, self.curl @ psi.coefficients)
        if not self.mesh.periodic:
            u.coefficients[self.V1.boundary_dofs()] = 0.0
        return VelocityState(u, Field(self.V2, np.zeros(self.V2.dim)), t0)

    # -- stepping ---------------------------------------------------------

    def _layout(self):
        nu = len(self.free)
        np2 = self.V2.dim
        drag = self.config.drag_tau is not None
        return nu, np2, drag

    def _expand(self, zu: np.ndarray) -> np.ndarray:
        if len(self.free) == self.V1.dim:
            return zu
        full = np.zeros(self.V1.dim)
        full[self.free] = zu
        return full

    def midpoint_step(self, state: VelocityState) -> VelocityState:
        cfg = self.config
        dt = cfg.dt
        nu, np2, drag = self._layout()
        u0 = state.u.coefficients
        t_mid = state.t + dt / 2
        bF = self._momentum_force_vector(t_mid)
        tau = cfg.drag_tau

        def split(z):
            u1 = self._expand(z[:nu])
            p = z[nu:nu + np2]
            lam = z[nu + np2]
            y = z[nu + np2 + 1:] if drag else None
            return u1, p, lam, y

        def residual(z):
            u1, p, lam, y = split(z)
            umid = 0.5 * (u0 + u1)
            r_u = (self.M1 @ (u1 - u0)) / dt
            r_u += self.asm.residual(umid, umid, self.rule)
            r_u -= self.D.T @ p
            r_u -= bF
            if drag:
                r_u += (self.M1 @ umid - self.B @ y) / tau
            parts = [r_u[self.free],
                     self.D @ u1 + self.mp * lam,
                     [self.mp @ p]]
            if drag:
                parts.append(y - self.B.T @ umid)
            return np.concatenate(parts)

        fr = self.free
        DT_f = sp.csr_matrix(-self.D.T[fr])
        D_f = sp.csr_matrix(self.D[:, fr])
        mp_col = sp.csr_matrix(self.mp.reshape(-1, 1))
        mp_row = sp.csr_matrix(self.mp.reshape(1, -1))

        def jacobian(z):
            u1, _, _, _ = split(z)
            umid = 0.5 * (u0 + u1)
            Juu = self.M1 / dt + 0.5 * self.asm.jacobian(umid, self.rule)
            if drag:
                Juu = Juu + self.M1 * (0.5 / tau)
            blocks = [
                [Juu[np.ix_(fr, fr)], DT_f, None],
                [D_f, None, mp_col],
                [None, mp_row, None],
            ]
            if drag:
                Bf = sp.csr_matrix(self.B[fr])
                blocks[0].append(-Bf / tau)
                blocks[1].append(None)
                blocks[2].append(None)
                blocks.append([sp.csr_matrix(-0.5 * self.B[fr].T), None, None,
                               sp.identity(2, format="csr")])
            return sp.bmat(blocks, format="csc")

        guess_u = u0 + (self._du_prev if self._du_prev is not None else 0.0)
        z0 = [guess_u[fr], state.p.coefficients, [0.0]]
        if drag:
            z0.append(self.B.T @ (0.5 * (u0 + guess_u)))
        z0 = np.concatenate(z0)

        z, report = newton_solve(residual, jacobian, z0,
                                 cfg.newton_tol, cfg.newton_max_iters,
                                 linear_solver=self.linear_solver)
        self.last_report = report
        u1, p, _, _ = split(z)
        self._du_prev = u1 - u0
        return VelocityState(Field(self.V1, u1), Field(self.V2, p),
                             state.t + dt)

    def energy(self, state: VelocityState) -> float:
        u = state.u.coefficients
        return 0.5 * float(u @ (self.M1 @ u))

    def vorticity(self, state: VelocityState) -> Field:
        return op.weak_vorticity(state.u, self.V0)

    def streamfunction(self, state: VelocityState) -> Field:
        return op.streamfunction_poisson(self.vorticity(state), self.Vpsi)


# ---------------------------------------------------------------------------
# SUPG stream function / vorticity scheme

class SupgIntegrator:
    def __init__(self, mesh: Mesh, config: SchemeConfig):
        if config.scheme != "supg":
            raise ValueError("SupgIntegrator needs scheme='supg'")
        self.mesh = mesh
        self.config = config
        r = config.r
        self.V0 = FunctionSpace(mesh, "CG", r + 1)
        self.Vpsi = FunctionSpace(mesh, "CG", r + 1, zero_mean=mesh.periodic)
        self.rule = op.SupgRule.for_mesh(mesh, r, beta=config.beta)
        self.qdeg = 2 * (r + 1) + 2
        self.M0 = op.mass_matrix(self.V0)
        self.K = op.stiffness_matrix(self.V0)
        self.m = self.V0.dof_integrals()
        if mesh.periodic:
            self.free_psi = np.arange(self.V0.dim)
        else:
            self.free_psi = np.setdiff1d(np.arange(self.V0.dim),
                                         self.V0.boundary_dofs())
        self._pat_ww = op.cell_pattern(self.V0, self.V0)
        self._force_cache: dict = {}
        self._qpts_phys = None
        self._dz_prev = None
        self.linear_solver = StepLinearSolver()
        self.last_report = None

    def _phys(self):
        if self._qpts_phys is None:
            out = []
            for cls in (0, 1):
                cells = self.V0.class_cells(cls)
                pts, w, tab, gtab = self.V0.cell_tabulation(self.qdeg)[cls]
                phys = self.mesh.cell_ij[cells][:, None, :] * self.mesh.h + pts
                out.append((cells, w, tab, gtab, phys))
            self._qpts_phys = out
        return self._qpts_phys

    def _forcing(self, t: float):
        """(moment vector, per-class qp values) of the vorticity forcing."""
        cfg = self.config
        if cfg.forcing is None:
            return None
        key = None if cfg.forcing_static else t
        if key not in self._force_cache:
            self._force_cache.clear()
            vals, locs = [], []
            for cells, w, tab, _, phys in self._phys():
                fq = cfg.forcing(t, phys.reshape(-1, 2)).reshape(phys.shape[:2])
                vals.append(fq)
                locs.append(np.einsum("q,cq,qt->ct", w, fq, tab))
            self._force_cache[key] = (op.scatter_cell_vector(self.V0, locs), vals)
        return self._force_cache[key]

    def initial_state(self, omega_fn, t0=0.0) -> VorticityState:
        from .fespace import interpolate

        w0 = interpolate(lambda p: omega_fn(t0, p), self.V0)
        psi = op.streamfunction_poisson(w0, self.Vpsi)
        return VorticityState(psi, w0, t0)

    # -- stepping ---------------------------------------------------------

    def _mid_fields(self, wm, pm, wdot, forcing, tau_d):
        """Per-class quadrature fields of the midpoint state.

        The velocity floor inside tau uses the global (both-class) maximum
        speed, matching the stabilisation definition.
        """
        out = []
        for cls, (cells, w, tab, gtab, _) in enumerate(self._phys()):
            dm = self.V0.dof_map[cells]
            nq, nd = tab.shape
            gflat = gtab.transpose(1, 0, 2).reshape(nd, 2 * nq)
            u = op.perp((pm[dm] @ gflat).reshape(-1, nq, 2))
            gw = (wm[dm] @ gflat).reshape(-1, nq, 2)
            adv = np.einsum("cqi,cqi->cq", u, gw)
            R = wdot[dm] @ tab.T + adv
            if forcing is not None:
                R = R - forcing[1][cls]
            if tau_d is not None:
                R = R + (wm[dm] @ tab.T) / tau_d
            speed = np.hypot(u[..., 0], u[..., 1])
            out.append(dict(w=w, tab=tab, gtab=gtab, u=u, gw=gw,
                            adv=adv, R=R, speed=speed))
        gmax = max(float(np.max(f["speed"], initial=0.0)) for f in out)
        for f in out:
            f["tau"] = self.rule.tau(f["speed"], gmax)
            f["floor"] = self.rule.velocity_floor * max(gmax, 1e-30)
            f["ugphi"] = np.einsum("cqi,qti->cqt", f["u"], f["gtab"])
        return out

    def midpoint_step(self, state: VorticityState) -> VorticityState:
        cfg = self.config
        dt = cfg.dt
        n0 = self.V0.dim
        fp = self.free_psi
        nfp = len(fp)
        periodic = self.mesh.periodic
        w0 = state.omega.coefficients
        psi0 = state.psi.coefficients
        t_mid = state.t + dt / 2
        forcing = self._forcing(t_mid)
        b_f = forcing[0] if forcing else None
        tau_d = cfg.drag_tau

        def split(z):
            w1 = z[:n0]
            if nfp == n0:
                psi1 = z[n0:n0 + nfp]
            else:
                psi1 = np.zeros(n0)
                psi1[fp] = z[n0:n0 + nfp]
            lam = z[n0 + nfp] if periodic else 0.0
            return w1, psi1, lam

        def residual(z):
            w1, psi1, lam = split(z)
            fields = self._mid_fields(0.5 * (w0 + w1), 0.5 * (psi0 + psi1),
                                      (w1 - w0) / dt, forcing, tau_d)
            r1 = (self.M0 @ (w1 - w0)) / dt
            if tau_d is not None:
                r1 += (self.M0 @ (0.5 * (w0 + w1))) / tau_d
            if b_f is not None:
                r1 -= b_f
            locs = []
            for f in fields:
                wtab = f["w"][:, None] * f["tab"]
                loc = f["adv"] @ wtab
                loc += np.einsum("cq,cqt->ct", f["w"] * f["tau"] * f["R"],
                                 f["ugphi"])
                locs.append(loc)
            r1 += op.scatter_cell_vector(self.V0, locs)
            r2 = self.K @ psi1 + self.M0 @ w1
            if periodic:
                return np.concatenate([r1, r2 + self.m * lam,
                                       [self.m @ psi1]])
            return np.concatenate([r1, r2[fp]])

        def jacobian(z):
            w1, psi1, lam = split(z)
            fields = self._mid_fields(0.5 * (w0 + w1), 0.5 * (psi0 + psi1),
                                      (w1 - w0) / dt, forcing, tau_d)
            ww_blocks, wp_blocks = [], []
            for f in fields:
                w, tab, gtab = f["w"], f["tab"], f["gtab"]
                u, gw, R, taus = f["u"], f["gw"], f["R"], f["tau"]
                ugphi = f["ugphi"]
                ugphi_t = ugphi.transpose(0, 2, 1)   # (c, t, q)
                wtau = w * taus                      # (c, q)
                ugd = np.einsum("cqi,qdi->cqd", u, gtab)
                # d / d omega1
                dR_w = np.broadcast_to(tab[None] / dt, ugd.shape) + 0.5 * ugd
                if tau_d is not None:
                    dR_w = dR_w + tab[None] / (2 * tau_d)
                loc_ww = np.matmul(0.5 * (w[:, None] * tab).T[None], ugd)
                loc_ww = loc_ww + np.matmul(ugphi_t, wtau[..., None] * dR_w)
                ww_blocks.append(loc_ww)
                # d / d psi1 via du = perp(grad dpsi) / 2
                pg = op.perp(gtab)
                du_gw = 0.5 * np.einsum("qdi,cqi->cqd", pg, gw)
                du_gphi = 0.5 * np.einsum("qdi,qti->qdt", pg, gtab)
                dtau = np.where(f["speed"] > f["floor"],
                                -taus / np.maximum(f["speed"], f["floor"]) ** 2,
                                0.0)
                u_du = 0.5 * np.einsum("cqi,qdi->cqd", u, pg)
                wtab_t = (w[:, None] * tab).T[None]  # (1, t, q)
                loc_wp = np.matmul(wtab_t, du_gw)
                loc_wp = loc_wp + np.matmul(ugphi_t,
                                            (w * dtau * R)[..., None] * u_du)
                loc_wp = loc_wp + np.matmul(ugphi_t, wtau[..., None] * du_gw)
                loc_wp = loc_wp + ((w * taus * R)
                                   @ du_gphi.reshape(len(w), -1)).reshape(
                                       -1, du_gphi.shape[1],
                                       du_gphi.shape[2]).transpose(0, 2, 1)
                wp_blocks.append(loc_wp)
            A_ww = self.M0 / dt + self._pat_ww.assemble(
                np.concatenate([np.ascontiguousarray(b).ravel()
                                for b in ww_blocks]))
            if tau_d is not None:
                A_ww = A_ww + self.M0 / (2 * tau_d)
            A_wp = self._pat_ww.assemble(
                np.concatenate([np.ascontiguousarray(b).ravel()
                                for b in wp_blocks]))
            if periodic:
                mcol = sp.csr_matrix(self.m.reshape(-1, 1))
                return sp.bmat([
                    [A_ww, A_wp, None],
                    [self.M0, self.K, mcol],
                    [None, mcol.T, None]], format="csc")
            return sp.bmat([
                [A_ww, sp.csr_matrix(A_wp[:, fp])],
                [sp.csr_matrix(self.M0[fp]),
                 sp.csr_matrix(self.K[np.ix_(fp, fp)])],
            ], format="csc")

        base = np.concatenate([w0, psi0[fp], [0.0]] if periodic
                              else [w0, psi0[fp]])
        guess = base.copy()
        if self._dz_prev is not None and len(self._dz_prev) == len(guess):
            guess = guess + self._dz_prev
        z, report = newton_solve(residual, jacobian, guess,
                                 cfg.newton_tol, cfg.newton_max_iters,
                                 linear_solver=self.linear_solver)
        self.last_report = report
        self._dz_prev = z - base
        w1, psi1, _ = split(z)
        return VorticityState(Field(self.Vpsi, psi1), Field(self.V0, w1),
                              state.t + cfg.dt)

    def energy(self, state: VorticityState) -> float:
        psi = state.psi.coefficients
        return 0.5 * float(psi @ (self.K @ psi))

    def enstrophy(self, state: VorticityState) -> float:
        w = state.omega.coefficients
        return 0.5 * float(w @ (self.M0 @ w))


# ---------------------------------------------------------------------------
# conveniences shared by the CLI and tests

def _mass_lu(space: FunctionSpace):
    key = "mass_lu"
    if key not in space._tab_cache:
        space._tab_cache[key] = spla.splu(sp.csc_matrix(op.mass_matrix(space)))
    return space._tab_cache[key]


def _scalar_moment_vector(space: FunctionSpace, fn, t: float) -> np.ndarray:
    locs = []
    qdeg = 2 * space.degree + 2
    for cls in (0, 1):
        cells = space.class_cells(cls)
        pts, w, tab, _ = space.cell_tabulation(qdeg)[cls]
        phys = space.mesh.cell_ij[cells][:, None, :] * space.mesh.h + pts
        vals = fn(t, phys.reshape(-1, 2)).reshape(phys.shape[:2])
        locs.append(np.einsum("q,cq,qt->ct", w, vals, tab))
    return op.scatter_cell_vector(space, locs)


def make_integrator(mesh: Mesh, config: SchemeConfig):
    if config.scheme == "supg":
        return SupgIntegrator(mesh, config)
    return VelocityIntegrator(mesh, config)


def set_initial_condition(omega_fn, integrator):
    """State with the interpolated vorticity and consistent psi / velocity."""
    if isinstance(integrator, SupgIntegrator):
        return integrator.initial_state(omega_fn)
    return integrator.initial_state_from_vorticity(omega_fn)


def apply_forcing_and_drag(residual: np.ndarray, omega_mid: Field, t_mid: float,
                           config: SchemeConfig) -> np.ndarray:
    """Add -(f, phi) + (omega_mid/tau, phi) to a vorticity residual vector."""
    out = residual.copy()
    V0 = omega_mid.space
    if config.forcing is not None:
        out -= _scalar_moment_vector(V0, config.forcing, t_mid)
    if config.drag_tau is not None:
        out += (op.mass_matrix(V0) @ omega_mid.coefficients) / config.drag_tau
    return out
