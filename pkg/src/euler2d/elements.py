"""Per-class reference bases for Lagrange and BDM elements.

All cells of a structured mesh are translates of two triangle classes, so
bases are constructed once per class directly in cell-local coordinates
(equivalent to a reference element plus affine/contravariant Piola maps,
with the map baked in). Degrees of freedom are defined against the global
edge orientations and normals fixed by the mesh conventions, which makes
shared DOFs agree across cells without per-cell sign bookkeeping:

* Lagrange: point values at the principal lattice, edge nodes ordered along
  the global edge direction.
* BDM: moments of u.n against shifted Legendre polynomials in the global
  edge parameter, plus (for degree 2) interior moments against gradients of
  linear polynomials and the rotated cubic bubble.
"""

import numpy as np

from .mesh import CLASS_VERTS, EDGE_D, EDGE_H, EDGE_V
from .quadrature import segment_rule, triangle_rule

__all__ = ["LagrangeElement", "BDMElement", "LOCAL_EDGES", "TYPE_NORMALS", "cell_rule"]

# Per class, ordered by edge type (H, V, D): local vertex pair ordered along
# the global edge direction, and the (di, dj) offset from the cell's square
# index to the edge index.
LOCAL_EDGES = (
    # lower: bottom, right, diagonal
    (((0, 1), EDGE_H, (0, 0)), ((1, 2), EDGE_V, (1, 0)), ((0, 2), EDGE_D, (0, 0))),
    # upper: top, left, diagonal
    (((2, 1), EDGE_H, (0, 1)), ((0, 2), EDGE_V, (0, 0)), ((0, 1), EDGE_D, (0, 0))),
)

_SQ2 = np.sqrt(2.0)
TYPE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [1.0 / _SQ2, -1.0 / _SQ2]])
TYPE_LENGTH_FACTOR = np.array([1.0, 1.0, _SQ2])


def cell_rule(h: float, cls: int, degree: int):
    """Quadrature points (local coords) and weights on a class triangle."""
    ref = triangle_rule(degree)
    v = CLASS_VERTS[cls] * h
    pts = v[0] + ref.points[:, :1] * (v[1] - v[0]) + ref.points[:, 1:] * (v[2] - v[0])
    det = abs((v[1] - v[0])[0] * (v[2] - v[0])[1] - (v[1] - v[0])[1] * (v[2] - v[0])[0])
    return pts, ref.weights * det


def shifted_legendre(m: int, s: np.ndarray) -> np.ndarray:
    return np.polynomial.legendre.legval(2.0 * np.asarray(s) - 1.0,
                                         np.eye(m + 1)[m])


def _monomials(degree: int):
    return [(a, b) for tot in range(degree + 1) for a in range(tot, -1, -1)
            for b in [tot - a]]


class _PolyBasis:
    """Shared monomial machinery; exponents in scaled coords x/h, y/h."""

    def __init__(self, degree: int, h: float):
        self.degree = degree
        self.h = h
        self.exps = _monomials(degree)
        self.nmono = len(self.exps)

    def mono(self, pts: np.ndarray) -> np.ndarray:
        x = np.asarray(pts)[:, 0] / self.h
        y = np.asarray(pts)[:, 1] / self.h
        out = np.empty((len(x), self.nmono))
        for k, (a, b) in enumerate(self.exps):
            out[:, k] = x**a * y**b
        return out

    def mono_grad(self, pts: np.ndarray) -> np.ndarray:
        x = np.asarray(pts)[:, 0] / self.h
        y = np.asarray(pts)[:, 1] / self.h
        out = np.zeros((len(x), self.nmono, 2))
        for k, (a, b) in enumerate(self.exps):
            if a > 0:
                out[:, k, 0] = a * x ** (a - 1) * y**b / self.h
            if b > 0:
                out[:, k, 1] = x**a * b * y ** (b - 1) / self.h
        return out


class LagrangeElement(_PolyBasis):
    """Nodal Lagrange basis of given degree on one cell class."""

    def __init__(self, degree: int, h: float, cls: int):
        super().__init__(degree, h)
        self.cls = cls
        verts = CLASS_VERTS[cls] * h
        if degree == 0:
            self.nodes = np.mean(verts, axis=0, keepdims=True)
            self.entities = [("i", 0, 0)]
            self.ndof = 1
            self.coeffs = np.ones((1, 1))
            return
        nodes, entities = [], []
        d = degree
        interior_idx = 0
        for i in range(d + 1):
            for j in range(d + 1 - i):
                lam = np.array([d - i - j, i, j], dtype=float) / d
                nodes.append(lam @ verts)
                where = np.nonzero(lam == 0.0)[0]
                if len(where) == 2:
                    entities.append(("v", int(np.nonzero(lam == 1.0)[0][0]), 0))
                elif len(where) == 1:
                    pair = tuple(k for k in range(3) if k != where[0])
                    for ledge, ((a, b), _, _) in enumerate(LOCAL_EDGES[cls]):
                        if {a, b} == set(pair):
                            t = lam[b] * d  # position along global direction
                            entities.append(("e", ledge, int(round(t)) - 1))
                            break
                else:
                    entities.append(("i", interior_idx, 0))
                    interior_idx += 1
        self.nodes = np.array(nodes)
        self.entities = entities
        self.ndof = len(nodes)
        V = self.mono(self.nodes)
        self.coeffs = np.linalg.inv(V)  # column i = monomial coeffs of basis i

    def tabulate(self, pts: np.ndarray) -> np.ndarray:
        return self.mono(pts) @ self.coeffs

    def tabulate_grad(self, pts: np.ndarray) -> np.ndarray:
        return np.einsum("qml,md->qdl", self.mono_grad(pts), self.coeffs)


class BDMElement(_PolyBasis):
    """H(div) BDM basis of degree r on one cell class.

    DOF order: for each local edge (H, V, D) the moments 0..r of u.n_e
    against shifted Legendre polynomials in the global edge parameter, then
    interior moments (degree 2 only).
    """

    def __init__(self, degree: int, h: float, cls: int):
        if degree not in (1, 2):
            raise ValueError(f"unsupported BDM degree {degree}")
        super().__init__(degree, h)
        self.cls = cls
        r = degree
        verts = CLASS_VERTS[cls] * h
        self.ndof = 3 * (r + 1) + (3 if r == 2 else 0)
        self.n_edge_dofs = r + 1
        self.n_interior = self.ndof - 3 * (r + 1)

        erule = segment_rule(2 * r + 2)
        s = erule.points[:, 0]
        crule_pts, crule_w = cell_rule(h, cls, 2 * r + 2)

        # rows of the generalized Vandermonde: functionals applied to the
        # vector monomials (comp, a, b)
        nm2 = 2 * self.nmono
        V = np.zeros((self.ndof, nm2))
        entities = []

        def mono_vals(pts):
            m = self.mono(pts)  # (np, nmono)
            vals = np.zeros((len(pts), 2, nm2))
            vals[:, 0, : self.nmono] = m
            vals[:, 1, self.nmono:] = m
            return vals

        row = 0
        for ledge, ((a, b), etype, _) in enumerate(LOCAL_EDGES[cls]):
            pts = verts[a] + s[:, None] * (verts[b] - verts[a])
            vals = mono_vals(pts)  # (nq, 2, nm2)
            un = np.einsum("qik,i->qk", vals, TYPE_NORMALS[etype])
            for m in range(r + 1):
                P = shifted_legendre(m, s)
                V[row] = np.einsum("q,q,qk->k", erule.weights, P, un)
                entities.append(("e", ledge, m))
                row += 1
        if r == 2:
            vals = mono_vals(crule_pts)
            # barycentric coordinates and the rotated cubic bubble
            A = np.column_stack([verts, np.ones(3)])
            lam_coef = np.linalg.inv(A.T)  # lam_k(x) = lam_coef[k] . (x, y, 1)
            lam = np.column_stack([crule_pts, np.ones(len(crule_pts))]) @ lam_coef.T
            grads = lam_coef[:, :2]
            db = (grads[0] * (lam[:, 1] * lam[:, 2])[:, None]
                  + grads[1] * (lam[:, 0] * lam[:, 2])[:, None]
                  + grads[2] * (lam[:, 0] * lam[:, 1])[:, None])
            rot_b = np.column_stack([db[:, 1], -db[:, 0]])
            for vec in (np.tile([1.0 / h, 0.0], (len(crule_pts), 1)),
                        np.tile([0.0, 1.0 / h], (len(crule_pts), 1)),
                        rot_b):
                V[row] = np.einsum("q,qi,qik->k", crule_w, vec, vals) / h
                entities.append(("i", row - 3 * (r + 1), 0))
                row += 1

        cond = np.linalg.cond(V)
        if cond > 1e8:
            raise RuntimeError(f"ill-conditioned BDM dual basis (cond={cond:.2e})")
        C = np.linalg.inv(V)  # column j = monomial coeffs of basis j
        # coeffs[dof, comp, mono]
        self.coeffs = np.stack([C[: self.nmono, :].T, C[self.nmono:, :].T], axis=1)
        self.entities = entities
        self._erule = erule
        self._crule = (crule_pts, crule_w)
        self._rot_b = rot_b if r == 2 else None

    def tabulate(self, pts: np.ndarray) -> np.ndarray:
        return np.einsum("qm,dim->qdi", self.mono(pts), self.coeffs)

    def tabulate_grad(self, pts: np.ndarray) -> np.ndarray:
        return np.einsum("qml,dim->qdil", self.mono_grad(pts), self.coeffs)

    def apply_functionals(self, func) -> np.ndarray:
        """DOF values of an arbitrary vector function given in local coords.

        `func(pts) -> (npts, 2)` is evaluated in this cell's local frame.
        Exact for members of the polynomial space, which makes interpolation
        a projection.
        """
        verts = CLASS_VERTS[self.cls] * self.h
        s = self._erule.points[:, 0]
        out = np.empty(self.ndof)
        row = 0
        for ledge, ((a, b), etype, _) in enumerate(LOCAL_EDGES[self.cls]):
            pts = verts[a] + s[:, None] * (verts[b] - verts[a])
            un = func(pts) @ TYPE_NORMALS[etype]
            for m in range(self.degree + 1):
                P = shifted_legendre(m, s)
                out[row] = np.sum(self._erule.weights * P * un)
                row += 1
        if self.degree == 2:
            pts, w = self._crule
            vals = func(pts)
            for vec in (np.tile([1.0 / self.h, 0.0], (len(pts), 1)),
                        np.tile([0.0, 1.0 / self.h], (len(pts), 1)),
                        self._rot_b):
                out[row] = np.einsum("q,qi,qi->", w, vec, vals) / self.h
                row += 1
        return out
