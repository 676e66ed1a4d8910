"""Assembly of every bilinear/trilinear form of the three discretisations.

Cells are processed in two translation classes and edges in small groups of
identical geometry (type x side classes), so all local computations are
batched einsum contractions and global scatter is a single bincount into a
precomputed sparsity pattern. Assembled operators are scipy CSR matrices;
dual vectors (residuals) are plain numpy arrays indexed by test-function
DOF.

Conventions: a_perp = (a_y, -a_x) (clockwise rotation), so grad_perp(psi) =
(psi_y, -psi_x), vorticity omega = weak curl with (gamma, omega) =
-(grad_perp(gamma), u), and omega = Laplace(psi).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements import LOCAL_EDGES, TYPE_NORMALS, cell_rule
from .fespace import Field, FunctionSpace, SolverError
from .mesh import CLASS_VERTS, Mesh
from .quadrature import segment_rule

__all__ = [
    "UpwindRule", "SupgRule", "mass_matrix", "stiffness_matrix",
    "divergence_matrix", "weak_vorticity", "streamfunction_poisson",
    "flux_form_residual", "lie_form_residual", "supg_residual", "tau_field",
    "scale_split", "energy_transfer_terms", "curl_matrix", "solve_spd",
]


def perp(a: np.ndarray) -> np.ndarray:
    """Clockwise rotation applied along the last axis."""
    out = np.empty_like(a)
    out[..., 0] = a[..., 1]
    out[..., 1] = -a[..., 0]
    return out


# ---------------------------------------------------------------------------
# rules

@dataclass
class UpwindRule:
    """Edge upwinding c_e = alpha * w.n / (2 |w.n|), 0 at degeneracies."""

    alpha: float = 1.0
    velocity_source: str = "full"  # or "continuous"
    degenerate_value: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if abs(self.degenerate_value) > self.alpha / 2 + 1e-15:
            raise ValueError("|c_e| must not exceed alpha/2")
        if self.velocity_source not in ("full", "continuous"):
            raise ValueError(f"unknown velocity_source {self.velocity_source}")

    def c_edge(self, source_normal: np.ndarray) -> np.ndarray:
        s = np.sign(source_normal)
        return np.where(s == 0.0, self.degenerate_value, 0.5 * self.alpha * s)


@dataclass
class SupgRule:
    """Intrinsic-time-scale stabilisation tau = beta * h_T * xi / (2 |u|)."""

    beta: float
    xi: float
    h_T: float
    velocity_floor: float = 1e-8  # relative to the global max speed

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @classmethod
    def for_mesh(cls, mesh: Mesh, r: int, beta: float = 1.0) -> "SupgRule":
        return cls(beta=beta, xi=1.0 if r == 1 else 0.5,
                   h_T=mesh.h / np.sqrt(2.0))

    def tau(self, speed: np.ndarray, global_max_speed: float) -> np.ndarray:
        floor = self.velocity_floor * max(global_max_speed, 1e-30)
        return self.beta * self.h_T * self.xi / (2.0 * np.maximum(speed, floor))


# ---------------------------------------------------------------------------
# sparse plumbing

class SparsePattern:
    """Precomputed CSR pattern; assembly is a bincount into its data slots."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape):
        self.shape = shape
        keys = rows.astype(np.int64) * shape[1] + cols.astype(np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        self.slot = inv
        self.nnz = len(uniq)
        self.indices = (uniq % shape[1]).astype(np.int32)
        counts = np.bincount((uniq // shape[1]).astype(np.int64),
                             minlength=shape[0])
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def assemble(self, data: np.ndarray) -> sp.csr_matrix:
        vals = np.bincount(self.slot, weights=data, minlength=self.nnz)
        vals[np.abs(vals) < 1e-300] = 0.0
        return sp.csr_matrix((vals, self.indices, self.indptr), shape=self.shape)


def _purged(A: sp.spmatrix) -> sp.csr_matrix:
    A = A.tocsr()
    A.data[np.abs(A.data) < 1e-300] = 0.0
    A.eliminate_zeros()
    return A


def solve_spd(A: sp.spmatrix, b: np.ndarray, zero_mean: bool = False,
              mean_vector: np.ndarray | None = None) -> np.ndarray:
    """Direct sparse solve; optional zero-mean constraint via a bordered row."""
    if zero_mean:
        m = mean_vector.reshape(-1, 1)
        Ab = sp.bmat([[A, m], [m.T, None]], format="csc")
        rhs = np.concatenate([b, [0.0]])
        try:
            x = spla.splu(Ab).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(str(exc)) from exc
        return x[:-1]
    try:
        return spla.splu(sp.csc_matrix(A)).solve(b)
    except RuntimeError as exc:
        raise SolverError(str(exc)) from exc


# ---------------------------------------------------------------------------
# cell-based forms

def _qdeg(space: FunctionSpace) -> int:
    return 2 * space.degree + 2


def cell_pattern(test: FunctionSpace, trial: FunctionSpace) -> SparsePattern:
    rows, cols = [], []
    for cls in (0, 1):
        cells = test.class_cells(cls)
        dt = test.dof_map[cells]
        dr = trial.dof_map[cells]
        nt, nr = dt.shape[1], dr.shape[1]
        rows.append(np.repeat(dt, nr, axis=1).ravel())
        cols.append(np.tile(dr, (1, nt)).ravel())
    return SparsePattern(np.concatenate(rows), np.concatenate(cols),
                         (test.dim, trial.dim))


def assemble_cell_matrix(test: FunctionSpace, trial: FunctionSpace,
                         local_blocks) -> sp.csr_matrix:
    """local_blocks[cls] has shape (ncells_cls, ndof_test, ndof_trial)."""
    pat = cell_pattern(test, trial)
    data = np.concatenate([np.ascontiguousarray(b).ravel() for b in local_blocks])
    return pat.assemble(data)


def scatter_cell_vector(space: FunctionSpace, local_vecs) -> np.ndarray:
    idx = np.concatenate([space.dof_map[space.class_cells(cls)].ravel()
                          for cls in (0, 1)])
    dat = np.concatenate([np.ascontiguousarray(v).ravel() for v in local_vecs])
    return np.bincount(idx, weights=dat, minlength=space.dim)


def qp_values(space: FunctionSpace, coefs: np.ndarray, qdeg: int,
              grad: bool = False):
    """Field values (and gradients) at cell quadrature points, per class."""
    vals, grads = [], []
    for cls in (0, 1):
        cells = space.class_cells(cls)
        _, _, tab, gtab = space.cell_tabulation(qdeg)[cls]
        c = coefs[space.dof_map[cells]]
        if space.vector_valued:
            vals.append(np.einsum("cd,qdi->cqi", c, tab))
            if grad:
                grads.append(np.einsum("cd,qdil->cqil", c, gtab))
        else:
            vals.append(np.einsum("cd,qd->cq", c, tab))
            if grad:
                grads.append(np.einsum("cd,qdl->cql", c, gtab))
    return (vals, grads) if grad else vals


def mass_matrix(space: FunctionSpace) -> sp.csr_matrix:
    key = "mass_matrix"
    if key not in space._tab_cache:
        blocks = []
        for cls in (0, 1):
            _, w, tab, _ = space.cell_tabulation(_qdeg(space))[cls]
            if space.vector_valued:
                loc = np.einsum("q,qti,qdi->td", w, tab, tab)
            else:
                loc = np.einsum("q,qt,qd->td", w, tab, tab)
            blocks.append(np.broadcast_to(
                loc, (len(space.class_cells(cls)),) + loc.shape))
        space._tab_cache[key] = _purged(assemble_cell_matrix(space, space, blocks))
    return space._tab_cache[key]


def stiffness_matrix(space: FunctionSpace) -> sp.csr_matrix:
    key = "stiffness_matrix"
    if key not in space._tab_cache:
        blocks = []
        for cls in (0, 1):
            _, w, _, gtab = space.cell_tabulation(_qdeg(space))[cls]
            loc = np.einsum("q,qtl,qdl->td", w, gtab, gtab)
            blocks.append(np.broadcast_to(
                loc, (len(space.class_cells(cls)),) + loc.shape))
        space._tab_cache[key] = _purged(assemble_cell_matrix(space, space, blocks))
    return space._tab_cache[key]


def divergence_matrix(V1: FunctionSpace, V2: FunctionSpace) -> sp.csr_matrix:
    """(q, div v) with rows in V2 and columns in V1."""
    qdeg = _qdeg(V1)
    blocks = []
    for cls in (0, 1):
        _, w, tab2, _ = V2.cell_tabulation(qdeg)[cls]
        _, _, _, g1 = V1.cell_tabulation(qdeg)[cls]
        div = g1[:, :, 0, 0] + g1[:, :, 1, 1]
        loc = np.einsum("q,qt,qd->td", w, tab2, div)
        blocks.append(np.broadcast_to(loc, (len(V1.class_cells(cls)),) + loc.shape))
    return _purged(assemble_cell_matrix(V2, V1, blocks))


def gradperp_pairing_matrix(V0: FunctionSpace, V1: FunctionSpace) -> sp.csr_matrix:
    """G[i, j] = (grad_perp gamma_i, chi_j)."""
    qdeg = _qdeg(V0)
    blocks = []
    for cls in (0, 1):
        _, w, _, g0 = V0.cell_tabulation(qdeg)[cls]
        _, _, tab1, _ = V1.cell_tabulation(qdeg)[cls]
        loc = np.einsum("q,qti,qdi->td", w, perp(g0), tab1)
        blocks.append(np.broadcast_to(loc, (len(V0.class_cells(cls)),) + loc.shape))
    return _purged(assemble_cell_matrix(V0, V1, blocks))


def wall_tangential_pairing(V0: FunctionSpace, V1: FunctionSpace) -> sp.csr_matrix:
    """T[i, j] = sum over wall edges of (gamma_i, chi_j . t_e)_e.

    t_e is the clockwise rotation of the outward wall normal; this is the
    boundary term that makes the weak curl consistent on walls.
    """
    mesh = V0.mesh
    groups = edge_groups(mesh, 2 * V1.degree + 3)
    rows, cols, vals = [], [], []
    for g in groups:
        if g.minus_cells is not None:
            continue
        t0 = edge_tabs(V0, g.etype, g.plus_cls, g.s)
        t1 = edge_tabs(V1, g.etype, g.plus_cls, g.s)
        te = perp(g.normal)
        loc = np.einsum("q,qt,qdi,i->td", g.weights, t0, t1, te)
        d0 = V0.dof_map[g.plus_cells]
        d1 = V1.dof_map[g.plus_cells]
        nt, nd = loc.shape
        rows.append(np.repeat(d0, nd, axis=1).ravel())
        cols.append(np.tile(d1, (1, nt)).ravel())
        vals.append(np.broadcast_to(loc, (len(g.edges), nt, nd)).ravel())
    if not rows:
        return sp.csr_matrix((V0.dim, V1.dim))
    return _purged(sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V0.dim, V1.dim)))


def weak_vorticity(u: Field, V0: FunctionSpace) -> Field:
    """Weak curl recovery: (gamma, omega) = -(grad_perp gamma, u) [+ wall term]."""
    key = "weak_vorticity_ops"
    if key not in V0._tab_cache:
        G = gradperp_pairing_matrix(V0, u.space)
        T = None if V0.mesh.periodic else wall_tangential_pairing(V0, u.space)
        M = mass_matrix(V0)
        V0._tab_cache[key] = (G, T, spla.splu(sp.csc_matrix(M)), M)
    G, T, Mlu, M = V0._tab_cache[key]
    rhs = -(G @ u.coefficients)
    if T is not None:
        rhs += T @ u.coefficients
    w = Mlu.solve(rhs)
    resid = np.linalg.norm(M @ w - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if resid > 1e-12:
        raise SolverError(f"weak vorticity residual {resid:.2e}")
    return Field(V0, w)


def streamfunction_poisson(omega: Field, Vpsi: FunctionSpace) -> Field:
    """Solve (grad psi, grad phi) = -(omega, phi).

    Periodic: zero-mean psi via a bordered constraint. Non-periodic: psi = 0
    on the boundary.
    """
    key = "poisson_ops"
    if key not in Vpsi._tab_cache:
        K = stiffness_matrix(Vpsi)
        M = mass_matrix(omega.space)
        if Vpsi.mesh.periodic:
            m = Vpsi.dof_integrals().reshape(-1, 1)
            Kb = sp.bmat([[K, m], [m.T, None]], format="csc")
            Vpsi._tab_cache[key] = ("periodic", spla.splu(Kb), M, K)
        else:
            free = np.setdiff1d(np.arange(Vpsi.dim), Vpsi.boundary_dofs())
            Kff = sp.csc_matrix(K[np.ix_(free, free)])
            Vpsi._tab_cache[key] = ("dirichlet", (spla.splu(Kff), free), M, K)
    kind, solver, M, K = Vpsi._tab_cache[key]
    rhs = -(M @ omega.coefficients)
    psi = np.zeros(Vpsi.dim)
    if kind == "periodic":
        x = solver.solve(np.concatenate([rhs, [0.0]]))
        psi = x[:-1]
    else:
        lu, free = solver
        psi[free] = lu.solve(rhs[free])
    return Field(Vpsi, psi)


def curl_matrix(Vpsi: FunctionSpace, V1: FunctionSpace) -> sp.csr_matrix:
    """Exact representation of psi -> grad_perp(psi) in BDM coefficients."""
    key = "curl_matrix"
    if key not in V1._tab_cache:
        mult = V1.dof_multiplicity().astype(float)
        rows, cols, vals = [], [], []
        for cls in (0, 1):
            el1 = V1.elements[cls]
            el0 = Vpsi.elements[cls]
            loc = np.empty((el1.ndof, el0.ndof))
            for j in range(el0.ndof):
                cj = el0.coeffs[:, j]
                loc[:, j] = el1.apply_functionals(
                    lambda pts, c=cj: perp(np.einsum(
                        "qml,m->ql", el0.mono_grad(pts), c)))
            cells = V1.class_cells(cls)
            d1 = V1.dof_map[cells]
            d0 = Vpsi.dof_map[cells]
            n1, n0 = loc.shape
            rows.append(np.repeat(d1, n0, axis=1).ravel())
            cols.append(np.tile(d0, (1, n1)).ravel())
            w = (loc[None] / mult[d1][:, :, None]).ravel()
            vals.append(w)
        C = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(V1.dim, Vpsi.dim))
        V1._tab_cache[key] = _purged(C)
    return V1._tab_cache[key]


def vector_cg_embedding(V1: FunctionSpace, Vl: FunctionSpace) -> sp.csr_matrix:
    """BDM coefficients of the vector Lagrange basis [e_x phi; e_y phi].

    Columns 0..dim-1 are x-components, dim..2dim-1 are y-components of the
    continuous degree-r subspace.
    """
    key = "vcg_embedding"
    if key not in V1._tab_cache:
        mult = V1.dof_multiplicity().astype(float)
        rows, cols, vals = [], [], []
        for cls in (0, 1):
            el1 = V1.elements[cls]
            el = Vl.elements[cls]
            loc = np.empty((el1.ndof, 2 * el.ndof))
            for j in range(el.ndof):
                cj = el.coeffs[:, j]
                for comp in (0, 1):
                    def f(pts, c=cj, comp=comp):
                        out = np.zeros((len(pts), 2))
                        out[:, comp] = el.mono(pts) @ c
                        return out
                    loc[:, 2 * j + comp] = el1.apply_functionals(f)
            cells = V1.class_cells(cls)
            d1 = V1.dof_map[cells]
            dl = Vl.dof_map[cells]
            gcols = np.empty((len(cells), 2 * el.ndof), dtype=np.int64)
            gcols[:, 0::2] = dl
            gcols[:, 1::2] = dl + Vl.dim
            n1, nl = loc.shape
            rows.append(np.repeat(d1, nl, axis=1).ravel())
            cols.append(np.tile(gcols, (1, n1)).ravel())
            vals.append((loc[None] / mult[d1][:, :, None]).ravel())
        E = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(V1.dim, 2 * Vl.dim))
        V1._tab_cache[key] = _purged(E)
    return V1._tab_cache[key]


def scale_split(u: Field):
    """L2-orthogonal split of a BDM field into continuous and fluctuation parts."""
    V1 = u.space
    key = "scale_split_ops"
    if key not in V1._tab_cache:
        Vl = FunctionSpace(V1.mesh, "CG", V1.degree)
        E = vector_cg_embedding(V1, Vl)
        M = mass_matrix(V1)
        A = sp.csc_matrix(E.T @ M @ E)
        V1._tab_cache[key] = (E, M, spla.splu(A))
    E, M, lu = V1._tab_cache[key]
    c = lu.solve(E.T @ (M @ u.coefficients))
    ul = E @ c
    return Field(V1, ul), Field(V1, u.coefficients - ul)


# ---------------------------------------------------------------------------
# edge machinery

class EdgeGroup:
    def __init__(self, mesh, etype, edges, qdeg):
        self.etype = etype
        self.edges = edges
        self.plus_cells = mesh.edge_plus[edges]
        minus = mesh.edge_minus[edges]
        self.minus_cells = minus if minus[0] >= 0 else None
        self.plus_cls = int(mesh.cell_class[self.plus_cells[0]])
        self.minus_cls = (int(mesh.cell_class[self.minus_cells[0]])
                          if self.minus_cells is not None else -1)
        self.normal = mesh.edge_normal[edges[0]].copy()
        rule = segment_rule(qdeg)
        self.s = rule.points[:, 0]
        self.weights = rule.weights * mesh.edge_length[edges[0]]
        if not np.allclose(mesh.edge_normal[edges], self.normal):
            raise RuntimeError("mixed normals in edge group")
        if not np.allclose(mesh.edge_length[edges], mesh.edge_length[edges[0]]):
            raise RuntimeError("mixed lengths in edge group")


def edge_groups(mesh: Mesh, qdeg: int):
    key = ("edge_groups", qdeg)
    if key not in mesh._stats:
        cls_of = mesh.cell_class
        buckets: dict = {}
        for e in range(mesh.num_edges):
            pc = int(cls_of[mesh.edge_plus[e]])
            mc = (int(cls_of[mesh.edge_minus[e]])
                  if mesh.edge_minus[e] >= 0 else -1)
            nkey = tuple(np.round(mesh.edge_normal[e], 12))
            buckets.setdefault((int(mesh.edge_type[e]), pc, mc, nkey), []).append(e)
        mesh._stats[key] = [
            EdgeGroup(mesh, k[0], np.array(v, dtype=np.int64), qdeg)
            for k, v in sorted(buckets.items())]
    return mesh._stats[key]


def edge_tabs(space: FunctionSpace, etype: int, cls: int, s: np.ndarray,
              grad: bool = False):
    """Basis values of `space` at edge parameter points, seen from `cls`."""
    key = ("edge_tab", etype, cls, s.tobytes(), grad)
    if key not in space._tab_cache:
        (a, b), _, _ = LOCAL_EDGES[cls][etype]
        verts = CLASS_VERTS[cls] * space.mesh.h
        pts = verts[a] + s[:, None] * (verts[b] - verts[a])
        el = space.elements[cls]
        space._tab_cache[key] = el.tabulate_grad(pts) if grad else el.tabulate(pts)
    return space._tab_cache[key]


# ---------------------------------------------------------------------------
# advection forms on V1 (flux and Lie derivative)

class AdvectionAssembler:
    """Residuals and frozen-upwind Jacobians of the V1 advection forms.

    Every basis-only contraction is collapsed into a constant kernel at
    construction, so evaluating a residual or Jacobian is a DOF gather, a
    few pointwise field products, and one small matrix product per cell
    class / edge group / side pair.
    """

    def __init__(self, V1: FunctionSpace, form: str):
        if form not in ("flux", "lie"):
            raise ValueError(form)
        self.V1 = V1
        self.form = form
        r = V1.degree
        self.qdeg_cell = 2 * (r + 1) + 2
        self.qdeg_edge = 2 * (r + 1) + 1
        self.groups = edge_groups(V1.mesh, self.qdeg_edge)
        nd = V1.ndof_local

        # cell kernels per class; field layouts:
        #   val  (c, q, comp)         raveled to (c, 2 nq)
        #   pair (c, q, i, l)         raveled to (c, 4 nq)
        #   dgrad(c, q, l, i)         raveled to (c, 4 nq)
        self.cell = []
        for cls in (0, 1):
            _, w, tab, gtab = V1.cell_tabulation(self.qdeg_cell)[cls]
            cells = V1.class_cells(cls)
            dm = V1.dof_map[cells]
            nq = len(w)
            tp = perp(tab)                      # (q, d, i) = (R phi_d)_i
            gp = perp(np.swapaxes(gtab, 2, 3))  # (q, d, l, i) = d_l (R phi_d)_i
            ker = {"dm": dm, "tab": tab, "gtab": gtab, "nq": nq,
                   # gather matrices: coefs @ X -> flattened point values
                   "val": np.ascontiguousarray(
                       tab.transpose(1, 0, 2).reshape(nd, 2 * nq)),
                   "pval": np.ascontiguousarray(
                       tp.transpose(1, 0, 2).reshape(nd, 2 * nq)),
                   "dgrad_p": np.ascontiguousarray(
                       gp.transpose(1, 0, 2, 3).reshape(nd, 4 * nq))}
            if form == "flux":
                # residual: - sum w u_i w_l G[t,i,l]; field P[c,q,i,l] = u_i w_l
                ker["res_pair"] = -np.einsum("q,qtil->qilt", w, gtab).reshape(
                    4 * nq, nd)
                # jacobian vs z (both slots): field zv as z_l plus zv as z_i
                ker["j_val"] = (
                    -np.einsum("q,qdi,qtil->qltd", w, tab, gtab)
                    - np.einsum("q,qdl,qtil->qitd", w, tab, gtab)
                ).reshape(2 * nq, nd * nd)
            else:
                # residual: sum w [ wp_l d_l(up)_i phi_ti + wp_l up_i G_til ]
                ker["res_f1"] = np.einsum("q,qti->qit", w, tab).reshape(
                    2 * nq, nd)
                ker["res_pair"] = np.einsum("q,qtil->qilt", w, gtab).reshape(
                    4 * nq, nd)
                # jacobian: dzp x Kdz + zp x (Ki + Kl)
                ker["j_dgrad"] = np.einsum("q,qdl,qti->qlitd", w, tp,
                                           tab).reshape(4 * nq, nd * nd)
                ker["j_val"] = (
                    np.einsum("q,qdl,qtil->qitd", w, tp, gtab)
                    + np.einsum("q,qdli,qti->qltd", w, gp, tab)
                    + np.einsum("q,qdi,qtil->qltd", w, tp, gtab)
                ).reshape(2 * nq, nd * nd)
            self.cell.append(ker)

        # edge kernels per group; edge fields: scalar (e, q) or (e, q, i)
        self.edge = []
        for g in self.groups:
            wall = g.minus_cells is None
            tabs = [edge_tabs(V1, g.etype, g.plus_cls, g.s)]
            dms = [V1.dof_map[g.plus_cells]]
            if not wall:
                tabs.append(edge_tabs(V1, g.etype, g.minus_cls, g.s))
                dms.append(V1.dof_map[g.minus_cells])
            nq = len(g.s)
            we = g.weights
            n = g.normal
            ek = {"dms": dms, "wall": wall, "normal": n, "nq": nq, "tabs": tabs,
                  "val": [np.ascontiguousarray(
                      ts.transpose(1, 0, 2).reshape(nd, 2 * nq)) for ts in tabs],
                  "pval": [np.ascontiguousarray(
                      perp(ts).transpose(1, 0, 2).reshape(nd, 2 * nq))
                      for ts in tabs]}
            # residual kernels: field (e, q, i) -> (e, t), per test side
            ek["res"] = [np.einsum("q,qti->qit", we, ts).reshape(2 * nq, nd)
                         for ts in tabs]
            ek["npl"] = tabs[0] @ n   # (q, d) normal traces, plus side
            if form == "flux":
                # u-slot: field (wn * fac)(e, q) @ K[q, t, d]
                ek["j_uf"] = [[np.einsum("q,qdi,qti->qtd", we, tt, ts)
                               .reshape(nq, nd * nd) for tt in tabs]
                              for ts in tabs]
                # wn-slot: field uf (e, q, i) @ K[q, i, t, d]
                ek["j_wn"] = [np.einsum("q,qd,qti->qitd", we, ek["npl"], ts)
                              .reshape(2 * nq, nd * nd) for ts in tabs]
            else:
                tps = [perp(ts) for ts in tabs]
                ek["tpn"] = [tp_ @ n for tp_ in tps]
                # w-slot: field fac*zper_si (e, q, i) @ K[q, i, t, d]
                ek["j_w"] = [[np.einsum("q,qd,qti->qitd", we, tpn_t, ts)
                              .reshape(2 * nq, nd * nd)
                              for tpn_t in ek["tpn"]] for ts in tabs]
                # u-slot: field F (e, q) @ K[q, t, d]
                ek["j_u"] = [np.einsum("q,qdi,qti->qtd", we, tps[si], tabs[si])
                             .reshape(nq, nd * nd) for si in range(len(tabs))]
            self.edge.append(ek)

        # residual scatter index
        idx = [k["dm"].ravel() for k in self.cell]
        for ek in self.edge:
            for dm in ek["dms"]:
                idx.append(dm.ravel())
        self._res_idx = np.concatenate(idx)
        # Jacobian pattern
        rows, cols = [], []
        for k in self.cell:
            dm = k["dm"]
            rows.append(np.repeat(dm, nd, axis=1).ravel())
            cols.append(np.tile(dm, (1, nd)).ravel())
        for ek in self.edge:
            for ds in ek["dms"]:
                for dt in ek["dms"]:
                    rows.append(np.repeat(ds, nd, axis=1).ravel())
                    cols.append(np.tile(dt, (1, ds.shape[1])).ravel())
        self.pattern = SparsePattern(np.concatenate(rows), np.concatenate(cols),
                                     (V1.dim, V1.dim))

    # -- helpers ----------------------------------------------------------

    def _edge_vals(self, ek, coefs, perp_vals=False):
        key = "pval" if perp_vals else "val"
        nq = ek["nq"]
        return [(coefs[dm] @ flat).reshape(-1, nq, 2)
                for dm, flat in zip(ek["dms"], ek[key])]

    def _c_edge(self, ek, w_coefs, rule: UpwindRule, src_coefs):
        coefs = w_coefs if rule.velocity_source == "full" else src_coefs
        srcn = coefs[ek["dms"][0]] @ ek["npl"].T  # (e, q)
        return rule.c_edge(srcn)

    # -- residual ---------------------------------------------------------

    def residual(self, w: np.ndarray, u: np.ndarray, rule: UpwindRule,
                 src_coefs=None, parts: str = "both") -> np.ndarray:
        """Dual vector v -> a(w; u, v) + s(w; u, v) (or one of the parts)."""
        chunks = []
        for k in self.cell:
            dm, tab, gtab = k["dm"], k["tab"], k["gtab"]
            nc = len(dm)
            if parts == "s":
                chunks.append(np.zeros(dm.size))
                continue
            nq = k["nq"]
            if self.form == "flux":
                wv = (w[dm] @ k["val"]).reshape(nc, nq, 2)
                uv = wv if u is w else (u[dm] @ k["val"]).reshape(nc, nq, 2)
                P = uv[:, :, :, None] * wv[:, :, None, :]
                loc = P.reshape(nc, -1) @ k["res_pair"]
            else:
                wp = (w[dm] @ k["pval"]).reshape(nc, nq, 2)
                dup = (u[dm] @ k["dgrad_p"]).reshape(nc, nq, 2, 2)
                F1 = np.matmul(wp[:, :, None, :], dup)[:, :, 0, :]
                loc = F1.reshape(nc, -1) @ k["res_f1"]
                up = wp if u is w else (u[dm] @ k["pval"]).reshape(nc, nq, 2)
                P = up[:, :, :, None] * wp[:, :, None, :]
                loc += P.reshape(nc, -1) @ k["res_pair"]
            chunks.append(loc.ravel())
        for ek in self.edge:
            wall = ek["wall"]
            c = self._c_edge(ek, w, rule, src_coefs)
            ne = len(ek["dms"][0])
            sgns = [1.0, -1.0][: len(ek["dms"])]
            if self.form == "flux":
                wvals = self._edge_vals(ek, w)
                uvals = wvals if u is w else self._edge_vals(ek, u)
                wn = wvals[0] @ ek["normal"]
                if wall:
                    avg = jmp = uvals[0]
                else:
                    avg = 0.5 * (uvals[0] + uvals[1])
                    jmp = uvals[0] - uvals[1]
                if parts == "a":
                    T = wn[..., None] * avg
                elif parts == "s":
                    T = (c * wn)[..., None] * jmp
                else:
                    T = wn[..., None] * avg + (c * wn)[..., None] * jmp
                for si, sgn in enumerate(sgns):
                    chunks.append(sgn * (T.reshape(ne, -1) @ ek["res"][si]).ravel())
            else:
                pw = self._edge_vals(ek, w, perp_vals=True)
                if wall:
                    avgn = jmpn = pw[0] @ ek["normal"]
                else:
                    avgn = (0.5 * (pw[0] + pw[1])) @ ek["normal"]
                    jmpn = (pw[0] - pw[1]) @ ek["normal"]
                if parts == "a":
                    F = avgn
                elif parts == "s":
                    F = c * jmpn
                else:
                    F = avgn + c * jmpn
                pu = pw if u is w else self._edge_vals(ek, u, perp_vals=True)
                for si, sgn in enumerate(sgns):
                    T = F[..., None] * pu[si]
                    chunks.append(-sgn * (T.reshape(ne, -1) @ ek["res"][si]).ravel())
        return np.bincount(self._res_idx, weights=np.concatenate(chunks),
                           minlength=self.V1.dim)

    # -- diagonal Jacobian --------------------------------------------------

    def jacobian(self, z: np.ndarray, rule: UpwindRule, src_coefs=None) -> sp.csr_matrix:
        """d/dz of a(z; z, .) + s(z; z, .), upwind signs frozen at z."""
        chunks = []
        for k in self.cell:
            dm, tab, gtab = k["dm"], k["tab"], k["gtab"]
            nc = len(dm)
            if self.form == "flux":
                loc = (z[dm] @ k["val"]) @ k["j_val"]
            else:
                loc = (z[dm] @ k["dgrad_p"]) @ k["j_dgrad"]
                loc += (z[dm] @ k["pval"]) @ k["j_val"]
            chunks.append(loc.ravel())
        for ek in self.edge:
            wall = ek["wall"]
            c = self._c_edge(ek, z, rule, src_coefs)
            ne = len(ek["dms"][0])
            nside = len(ek["dms"])
            sgn = [1.0, -1.0]
            half = 1.0 if wall else 0.5
            if self.form == "flux":
                zvals = self._edge_vals(ek, z)
                wn = zvals[0] @ ek["normal"]
                if wall:
                    avg = jmp = zvals[0]
                else:
                    avg = 0.5 * (zvals[0] + zvals[1])
                    jmp = zvals[0] - zvals[1]
                uf = avg + c[..., None] * jmp
                for si in range(nside):
                    for ti in range(nside):
                        fac = half + (1.0 if wall else sgn[ti]) * c
                        loc = sgn[si] * ((wn * fac) @ ek["j_uf"][si][ti])
                        if ti == 0:
                            loc += sgn[si] * (uf.reshape(ne, -1)
                                              @ ek["j_wn"][si])
                        chunks.append(loc.ravel())
            else:
                pz = self._edge_vals(ek, z, perp_vals=True)
                if wall:
                    F = (pz[0] @ ek["normal"]) * (1.0 + c)
                else:
                    F = (0.5 * (pz[0] + pz[1])
                         + c[..., None] * (pz[0] - pz[1])) @ ek["normal"]
                for si in range(nside):
                    for ti in range(nside):
                        fac = half + (1.0 if wall else sgn[ti]) * c
                        F3 = fac[..., None] * pz[si]
                        loc = -sgn[si] * (F3.reshape(ne, -1) @ ek["j_w"][si][ti])
                        if ti == si:
                            loc += -sgn[si] * (F @ ek["j_u"][si])
                        chunks.append(loc.ravel())
        return self.pattern.assemble(np.concatenate(chunks))
\
def get_advection(V1: FunctionSpace, form: str) -> AdvectionAssembler:
    key = ("advection", form)
    if key not in V1._tab_cache:
        V1._tab_cache[key] = AdvectionAssembler(V1, form)
    return V1._tab_cache[key]


def flux_form_residual(w: Field, u: Field, rule: UpwindRule) -> np.ndarray:
    return get_advection(u.space, "flux").residual(
        w.coefficients, u.coefficients, rule)


def lie_form_residual(w: Field, u: Field, rule: UpwindRule,
                      src: Field | None = None) -> np.ndarray:
    return get_advection(u.space, "lie").residual(
        w.coefficients, u.coefficients, rule,
        src_coefs=None if src is None else src.coefficients)


def energy_transfer_terms(u: Field, rule: UpwindRule):
    """Edge-dissipation pairings (s(u;u,u_l), s(u;u,u_s)); their sum is 0.

    The upwind sign is driven by the continuous part u_l, as in the
    large/small-scale energy budget.
    """
    ul, us = scale_split(u)
    asm = get_advection(u.space, "lie")
    svec = asm.residual(u.coefficients, u.coefficients, rule,
                        src_coefs=ul.coefficients, parts="s")
    return float(svec @ ul.coefficients), float(svec @ us.coefficients)


# ---------------------------------------------------------------------------
# SUPG forms

def max_speed(u_qp) -> float:
    return max(float(np.max(np.hypot(v[..., 0], v[..., 1]), initial=0.0))
               for v in u_qp)


def tau_field(u, rule: SupgRule, qdeg: int | None = None):
    """Per-quadrature-point intrinsic time scale, per cell class."""
    if isinstance(u, Field):
        qdeg = qdeg or 2 * (u.space.degree + 1) + 2
        u_qp = qp_values(u.space, u.coefficients, qdeg)
    else:
        u_qp = u
    gmax = max_speed(u_qp)
    return [rule.tau(np.hypot(v[..., 0], v[..., 1]), gmax) for v in u_qp]


def supg_terms(V0: FunctionSpace, u_qp, omega: np.ndarray, qdeg: int):
    """(u.grad omega) at quadrature points, per class."""
    _, grads = qp_values(V0, omega, qdeg, grad=True)
    return [np.einsum("cqi,cqi->cq", u_qp[cls], grads[cls]) for cls in (0, 1)]


def supg_residual(u: Field, omega: Field, omega_dot: Field,
                  rule: SupgRule) -> np.ndarray:
    """Dual vector of the stabilised vorticity advection form.

    Implements (u.grad omega, phi) + (tau R, u.grad phi) with
    R = omega_dot + u.grad omega.
    """
    V0 = omega.space
    qdeg = 2 * V0.degree + 2
    u_qp = qp_values(u.space, u.coefficients, qdeg)
    adv = supg_terms(V0, u_qp, omega.coefficients, qdeg)
    wdot = qp_values(V0, omega_dot.coefficients, qdeg)
    taus = tau_field(u_qp, rule)
    locs = []
    for cls in (0, 1):
        _, w, tab, gtab = V0.cell_tabulation(qdeg)[cls]
        ugphi = np.einsum("cqi,qti->cqt", u_qp[cls], gtab)
        R = wdot[cls] + adv[cls]
        loc = np.einsum("q,cq,qt->ct", w, adv[cls], tab)
        loc += np.einsum("q,cq,cqt->ct", w, taus[cls] * R, ugphi)
        locs.append(loc)
    return scatter_cell_vector(V0, locs)
