"""Function spaces, fields, interpolation and point evaluation.

Supported spaces on the structured meshes: continuous Lagrange CG_1..CG_3,
discontinuous DG_0/DG_1 and H(div) BDM_1/BDM_2. Global DOF layout is
deterministic: vertex DOFs, then per-edge DOFs in mesh edge order, then
per-cell interior DOFs. Shared DOFs agree across cells by the global
orientation conventions baked into the elements, so no sign flips appear
anywhere.

Spaces are immutable after construction; Fields are plain (space, vector)
pairs, safe to pass between workers.
"""

from dataclasses import dataclass, field as dfield

import numpy as np

from .elements import LOCAL_EDGES, BDMElement, LagrangeElement, cell_rule
from .mesh import Mesh

__all__ = ["FunctionSpace", "Field", "build_space", "interpolate", "l2_project"]

# integer index offsets of the local vertices, matching CLASS_VERTS
VERT_OFFSETS = (
    np.array([[0, 0], [1, 0], [1, 1]]),
    np.array([[0, 0], [1, 1], [0, 1]]),
)

_SUPPORTED = {("CG", 1), ("CG", 2), ("CG", 3), ("BDM", 1), ("BDM", 2),
              ("DG", 0), ("DG", 1)}


class SolverError(RuntimeError):
    """A linear solve failed to meet its residual contract."""


def _edge_gid(mesh: Mesh, etype: np.ndarray, ij: np.ndarray) -> np.ndarray:
    """Global edge ids from (type, v0 index), matching mesh build order."""
    n = mesh.n
    i, j = ij[..., 0], ij[..., 1]
    if mesh.periodic:
        i, j = np.mod(i, n), np.mod(j, n)
        base = np.array([0, n * n, 2 * n * n])
        stride = np.array([n, n, n])
    else:
        base = np.array([0, n * (n + 1), 2 * n * (n + 1)])
        stride = np.array([n, n + 1, n])
    return base[etype] + j * stride[etype] + i


def _vertex_gid(mesh: Mesh, ij: np.ndarray) -> np.ndarray:
    n = mesh.n
    i, j = ij[..., 0], ij[..., 1]
    if mesh.periodic:
        return np.mod(j, n) * n + np.mod(i, n)
    return j * (n + 1) + i


class FunctionSpace:
    def __init__(self, mesh: Mesh, family: str, degree: int, zero_mean: bool = False):
        if (family, degree) not in _SUPPORTED:
            raise ValueError(f"unsupported space {family}_{degree}")
        self.mesh = mesh
        self.family = family
        self.degree = degree
        self.zero_mean = zero_mean
        self.vector_valued = family == "BDM"
        if family == "BDM":
            self.elements = tuple(BDMElement(degree, mesh.h, c) for c in (0, 1))
        else:
            self.elements = tuple(LagrangeElement(degree, mesh.h, c) for c in (0, 1))
        self.ndof_local = self.elements[0].ndof
        self.dof_map, self.dim = self._build_dof_map()
        self._tab_cache: dict = {}
        self._dof_integrals = None
        self._dof_mult = None

    # -- layout ---------------------------------------------------------

    def _entity_layout(self):
        ent = self.elements[0].entities
        per_edge = sum(1 for k, a, b in ent if k == "e" and a == 0)
        n_int = sum(1 for k, a, b in ent if k == "i")
        return per_edge, n_int

    def _build_dof_map(self):
        mesh = self.mesh
        nc = mesh.num_cells
        dof_map = np.empty((nc, self.ndof_local), dtype=np.int64)
        per_edge, n_int = self._entity_layout()
        if self.family == "DG":
            for ld in range(self.ndof_local):
                dof_map[:, ld] = np.arange(nc) * self.ndof_local + ld
            return dof_map, nc * self.ndof_local

        nv = 0 if self.family == "BDM" else (
            mesh.n**2 if mesh.periodic else (mesh.n + 1) ** 2)
        ne = mesh.num_edges
        int_base = nv + ne * per_edge
        for cls in (0, 1):
            cells = np.nonzero(mesh.cell_class == cls)[0]
            ij = mesh.cell_ij[cells]
            for ld, (kind, a, b) in enumerate(self.elements[cls].entities):
                if kind == "v":
                    dof_map[cells, ld] = _vertex_gid(mesh, ij + VERT_OFFSETS[cls][a])
                elif kind == "e":
                    _, etype, off = LOCAL_EDGES[cls][a]
                    gid = _edge_gid(mesh, np.full(len(cells), etype), ij + np.array(off))
                    dof_map[cells, ld] = nv + gid * per_edge + b
                else:
                    dof_map[cells, ld] = int_base + cells * n_int + a
        return dof_map, int_base + nc * n_int

    # -- tabulations ----------------------------------------------------

    def cell_tabulation(self, qdegree: int):
        """Per class: (points, weights, values, gradients) at cell quadrature."""
        key = ("cell", qdegree)
        if key not in self._tab_cache:
            out = []
            for cls in (0, 1):
                pts, w = cell_rule(self.mesh.h, cls, qdegree)
                el = self.elements[cls]
                out.append((pts, w, el.tabulate(pts), el.tabulate_grad(pts)))
            self._tab_cache[key] = tuple(out)
        return self._tab_cache[key]

    def class_cells(self, cls: int) -> np.ndarray:
        key = ("cells", cls)
        if key not in self._tab_cache:
            self._tab_cache[key] = np.nonzero(self.mesh.cell_class == cls)[0]
        return self._tab_cache[key]

    def dof_multiplicity(self) -> np.ndarray:
        """Number of cells touching each global DOF."""
        if self._dof_mult is None:
            self._dof_mult = np.bincount(self.dof_map.ravel(), minlength=self.dim)
        return self._dof_mult

    def dof_integrals(self) -> np.ndarray:
        """Integrals of the basis functions: (dim,) or (dim, 2) for BDM."""
        if self._dof_integrals is None:
            shape = (self.dim, 2) if self.vector_valued else (self.dim,)
            out = np.zeros(shape)
            qdeg = 2 * self.degree + 2
            for cls in (0, 1):
                cells = self.class_cells(cls)
                _, w, tab, _ = self.cell_tabulation(qdeg)[cls]
                if self.vector_valued:
                    loc = np.einsum("q,qdi->di", w, tab)
                else:
                    loc = np.einsum("q,qd->d", w, tab)
                np.add.at(out, self.dof_map[cells], loc[None].repeat(len(cells), 0))
            self._dof_integrals = out
        return self._dof_integrals

    def boundary_dofs(self) -> np.ndarray:
        """Global DOFs on the domain boundary (non-periodic meshes)."""
        mesh = self.mesh
        if mesh.periodic:
            return np.array([], dtype=np.int64)
        per_edge, _ = self._entity_layout()
        walls = np.nonzero(mesh.edge_minus < 0)[0]
        dofs = []
        nv = 0 if self.family == "BDM" else (mesh.n + 1) ** 2
        if self.family != "BDM":
            n = mesh.n
            jj, ii = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
            on = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
            dofs.append(_vertex_gid(mesh, np.stack([ii[on], jj[on]], axis=-1)))
        if per_edge:
            dofs.append((nv + walls[:, None] * per_edge + np.arange(per_edge)).ravel())
        if not dofs:
            return np.array([], dtype=np.int64)
        return np.unique(np.concatenate(dofs))

    def lattice_map(self) -> np.ndarray:
        """CG nodal lattice: dof ids arranged on the (N, N) uniform grid.

        N = degree * n; entry [a, b] is the DOF whose node sits at
        (a/N, b/N). Periodic CG only.
        """
        if self.family != "CG" or not self.mesh.periodic:
            raise ValueError("lattice_map requires CG on a periodic mesh")
        key = "lattice"
        if key not in self._tab_cache:
            N = self.degree * self.mesh.n
            grid = np.full((N, N), -1, dtype=np.int64)
            for cls in (0, 1):
                cells = self.class_cells(cls)
                el = self.elements[cls]
                node_idx = np.rint(el.nodes / self.mesh.h * self.degree).astype(int)
                idx = (self.mesh.cell_ij[cells][:, None, :] * self.degree
                       + node_idx[None, :, :]) % N
                grid[idx[..., 0], idx[..., 1]] = self.dof_map[cells]
            if (grid < 0).any():
                raise RuntimeError("lattice map incomplete")
            self._tab_cache[key] = grid
        return self._tab_cache[key]

    def __repr__(self):
        return (f"FunctionSpace({self.family}_{self.degree}, n={self.mesh.n}, "
                f"dim={self.dim})")


def build_space(mesh: Mesh, family: str, degree: int, zero_mean: bool = False) -> FunctionSpace:
    return FunctionSpace(mesh, family, degree, zero_mean)


@dataclass
class Field:
    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        if len(self.coefficients) != self.space.dim:
            raise ValueError("coefficient length does not match space dimension")

    def copy(self) -> "Field":
        return Field(self.space, self.coefficients.copy())

    def mean(self):
        """Domain integral (== mean on the unit square)."""
        b = self.space.dof_integrals()
        if self.space.vector_valued:
            return self.coefficients @ b
        return float(self.coefficients @ b)


def zeros(space: FunctionSpace) -> Field:
    return Field(space, np.zeros(space.dim))


def evaluate(field: Field, cell: int, local_points: np.ndarray) -> np.ndarray:
    """Evaluate a field at local coordinates inside one cell."""
    space = field.space
    if not 0 <= cell < space.mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    el = space.elements[space.mesh.cell_class[cell]]
    tab = el.tabulate(np.atleast_2d(local_points))
    coefs = field.coefficients[space.dof_map[cell]]
    if space.vector_valued:
        return np.einsum("qdi,d->qi", tab, coefs)
    return tab @ coefs


def evaluate_at_points(field: Field, xy: np.ndarray) -> np.ndarray:
    """Evaluate a field at arbitrary physical points.

    Points are located in the structured grid; points on a diagonal are
    assigned to the lower cell deterministically.
    """
    space = field.space
    mesh = space.mesh
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n, h = mesh.n, mesh.h
    ij = np.floor(xy * n).astype(np.int64)
    if mesh.periodic:
        xy = xy - np.floor(xy)  # wrap representatives into [0, 1)
        ij = np.mod(np.floor(xy * n).astype(np.int64), n)
    else:
        ij = np.clip(ij, 0, n - 1)
    local = xy - ij * h
    cls = (local[:, 1] > local[:, 0] + 1e-14 * h).astype(np.int64)
    cell = 2 * (ij[:, 1] * n + ij[:, 0]) + cls
    if space.vector_valued:
        out = np.empty((len(xy), 2))
    else:
        out = np.empty(len(xy))
    for c in (0, 1):
        sel = np.nonzero(cls == c)[0]
        if not len(sel):
            continue
        tab = space.elements[c].tabulate(local[sel])
        coefs = field.coefficients[space.dof_map[cell[sel]]]
        if space.vector_valued:
            out[sel] = np.einsum("qdi,qd->qi", tab, coefs)
        else:
            out[sel] = np.einsum("qd,qd->q", tab, coefs)
    return out


def interpolate(func, space: FunctionSpace) -> Field:
    """Nodal/moment interpolation of an analytic function.

    `func` maps (npts, 2) physical coordinates to scalars, or to (npts, 2)
    vectors for BDM. On periodic meshes the function must be 1-periodic
    (evaluation may occur slightly outside the unit square).
    """
    coefs = np.zeros(space.dim)
    mesh = space.mesh
    if space.family == "BDM":
        for cls in (0, 1):
            el = space.elements[cls]
            for c in space.class_cells(cls):
                anchor = mesh.cell_ij[c] * mesh.h
                coefs[space.dof_map[c]] = el.apply_functionals(
                    lambda pts, a=anchor: np.asarray(func(pts + a)))
    else:
        for cls in (0, 1):
            cells = space.class_cells(cls)
            el = space.elements[cls]
            pts = (mesh.cell_ij[cells][:, None, :] * mesh.h
                   + el.nodes[None, :, :]).reshape(-1, 2)
            vals = np.asarray(func(pts)).reshape(len(cells), el.ndof)
            coefs[space.dof_map[cells]] = vals
    out = Field(space, coefs)
    if space.zero_mean:
        out.coefficients -= out.mean()
    return out


def l2_project(source, space: FunctionSpace) -> Field:
    """L2 projection of an analytic function or a Field onto `space`."""
    from . import operators  # deferred: operators depends on this module

    qdeg = 2 * max(space.degree, _source_degree(source)) + 2
    M = operators.mass_matrix(space)
    rhs = np.zeros(space.dim)
    mesh = space.mesh
    for cls in (0, 1):
        cells = space.class_cells(cls)
        pts, w, tab, _ = space.cell_tabulation(qdeg)[cls]
        phys = (mesh.cell_ij[cells][:, None, :] * mesh.h + pts[None, :, :])
        vals = _eval_source(source, phys.reshape(-1, 2)).reshape(
            len(cells), len(w), -1)
        if space.vector_valued:
            loc = np.einsum("q,cqi,qdi->cd", w, vals, tab)
        else:
            loc = np.einsum("q,cq,qd->cd", w, vals[..., 0], tab)
        np.add.at(rhs, space.dof_map[cells], loc)
    coefs = operators.solve_spd(M, rhs, zero_mean=space.zero_mean,
                                mean_vector=space.dof_integrals()
                                if space.zero_mean else None)
    resid = np.linalg.norm(M @ coefs - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if space.zero_mean:
        pass  # bordered solve leaves a mean-vector component in the residual
    elif resid > 1e-12:
        raise SolverError(f"projection residual {resid:.2e}")
    return Field(space, coefs)


def _source_degree(source) -> int:
    return source.space.degree if isinstance(source, Field) else 6


def _eval_source(source, pts: np.ndarray) -> np.ndarray:
    if isinstance(source, Field):
        vals = evaluate_at_points(source, pts)
    else:
        vals = np.asarray(source(pts))
    if vals.ndim == 1:
        vals = vals[:, None]
    return vals
