"""Structured right-triangle meshes of the unit square.

Every square of an n x n grid is split along the same lower-left to
upper-right diagonal, so each cell is a translate of one of two congruent
classes:

    class 0 ("lower"): local vertices (0,0), (h,0), (h,h)
    class 1 ("upper"): local vertices (0,0), (h,h), (0,h)

Cell geometry is expressed in the local frame anchored at the square's
lower-left corner, which keeps periodic wrap-around exact: all local
coordinates are computed from integer index differences times h.

Edges carry a fixed global orientation (tangents +x, +y and +(1,1)/sqrt(2)
for horizontal/vertical/diagonal edges) and a unit normal pointing out of
the "plus" cell. On walls of the non-periodic mesh the normal is the
outward domain normal and the minus cell is absent.

Meshes are immutable after construction and safe for concurrent reads.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "TraceSide",
    "build_unit_square_mesh",
    "trace_sides",
    "mesh_statistics",
]

# edge types
EDGE_H, EDGE_V, EDGE_D = 0, 1, 2
# index step from v0 to v1 per edge type
EDGE_DIR = np.array([[1, 0], [0, 1], [1, 1]])

# local vertex coordinates per class, in units of h
CLASS_VERTS = (
    np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]),  # lower
    np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),  # upper
)


@dataclass
class Mesh:
    n: int
    periodic: bool
    h: float
    vertices: np.ndarray      # (nv, 2) representative coordinates
    cells: np.ndarray         # (nc, 3) vertex ids, counterclockwise
    cell_ij: np.ndarray       # (nc, 2) square index of each cell
    cell_class: np.ndarray    # (nc,) 0 = lower, 1 = upper
    edge_ij: np.ndarray       # (ne, 2) index of v0
    edge_type: np.ndarray     # (ne,) EDGE_H / EDGE_V / EDGE_D
    edge_normal: np.ndarray   # (ne, 2) unit normal out of the plus cell
    edge_plus: np.ndarray     # (ne,) plus cell id
    edge_minus: np.ndarray    # (ne,) minus cell id, -1 on walls
    edge_length: np.ndarray   # (ne,)
    cell_edges: np.ndarray    # (nc, 3) edge ids
    cell_edge_sign: np.ndarray  # (nc, 3) +1 if edge normal is outward
    _stats: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edge_ij)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def cell_area(self) -> float:
        return 0.5 * self.h * self.h

    def cell_anchor(self, cells=None) -> np.ndarray:
        """Physical coordinates of the local frame origin of each cell."""
        ij = self.cell_ij if cells is None else self.cell_ij[cells]
        return ij * self.h

    def edge_local_frame(self, edges: np.ndarray, cells: np.ndarray):
        """Local-frame parametrization of `edges` seen from `cells`.

        Returns (origin, direction), both (len(edges), 2), such that the
        point at edge parameter s in [0, 1] has local coordinates
        origin + s * direction in the cell frame. Index arithmetic keeps
        periodic wrap-around exact.
        """
        d0 = self.edge_ij[edges] - self.cell_ij[cells]
        if self.periodic:
            d0 = np.mod(d0, self.n)
        step = EDGE_DIR[self.edge_type[edges]]
        return d0 * self.h, step * self.h


@dataclass(frozen=True)
class TraceSide:
    """One side of an edge: owning cell plus the edge-to-cell affine map."""

    cell: int
    cell_class: int
    origin: np.ndarray     # local coords of the edge point at s = 0
    direction: np.ndarray  # local chord vector; point(s) = origin + s*direction

    def local_points(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1, 1)
        return self.origin + s * self.direction


def build_unit_square_mesh(n: int, periodic: bool) -> Mesh:
    """Structured right-triangle mesh of [0,1]^2 with n cells per side."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    h = 1.0 / n
    nvs = n if periodic else n + 1  # vertices per side

    jj, ii = np.meshgrid(np.arange(nvs), np.arange(nvs), indexing="ij")
    vertices = np.column_stack([ii.ravel() * h, jj.ravel() * h])

    def vid(i, j):
        if periodic:
            return (j % n) * n + (i % n)
        return j * (n + 1) + i

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    nsq = n * n
    cells = np.empty((2 * nsq, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1)])
    cells[1::2] = np.column_stack([vid(ii, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)])
    cell_ij = np.repeat(np.column_stack([ii, jj]), 2, axis=0)
    cell_class = np.tile(np.array([0, 1]), nsq)

    def lower(i, j):
        if periodic:
            i, j = np.mod(i, n), np.mod(j, n)
        return 2 * (j * n + i)

    def upper(i, j):
        return lower(i, j) + 1

    sq2 = np.sqrt(2.0)
    e_ij, e_type, e_norm, e_plus, e_minus, e_len = [], [], [], [], [], []

    def add(ij, etype, normal, plus, minus, length):
        e_ij.append(ij)
        e_type.append(etype)
        e_norm.append(normal)
        e_plus.append(plus)
        e_minus.append(minus)
        e_len.append(length)

    if periodic:
        for j in range(n):
            for i in range(n):
                add((i, j), EDGE_H, (0.0, -1.0), lower(i, j), upper(i, j - 1), h)
        for j in range(n):
            for i in range(n):
                add((i, j), EDGE_V, (1.0, 0.0), lower(i - 1, j), upper(i, j), h)
        for j in range(n):
            for i in range(n):
                add((i, j), EDGE_D, (1 / sq2, -1 / sq2), upper(i, j), lower(i, j), h * sq2)
    else:
        for j in range(n + 1):
            for i in range(n):
                if j == 0:
                    add((i, j), EDGE_H, (0.0, -1.0), lower(i, 0), -1, h)
                elif j == n:
                    add((i, j), EDGE_H, (0.0, 1.0), upper(i, n - 1), -1, h)
                else:
                    add((i, j), EDGE_H, (0.0, -1.0), lower(i, j), upper(i, j - 1), h)
        for j in range(n):
            for i in range(n + 1):
                if i == 0:
                    add((i, j), EDGE_V, (-1.0, 0.0), upper(0, j), -1, h)
                elif i == n:
                    add((i, j), EDGE_V, (1.0, 0.0), lower(n - 1, j), -1, h)
                else:
                    add((i, j), EDGE_V, (1.0, 0.0), lower(i - 1, j), upper(i, j), h)
        for j in range(n):
            for i in range(n):
                add((i, j), EDGE_D, (1 / sq2, -1 / sq2), upper(i, j), lower(i, j), h * sq2)

    edge_ij = np.array(e_ij, dtype=np.int64)
    edge_type = np.array(e_type, dtype=np.int64)
    edge_normal = np.array(e_norm, dtype=float)
    edge_plus = np.array(e_plus, dtype=np.int64)
    edge_minus = np.array(e_minus, dtype=np.int64)
    edge_length = np.array(e_len, dtype=float)

    # per-cell edge lists with outward sign
    ncells = 2 * nsq
    cell_edges = np.empty((ncells, 3), dtype=np.int64)
    cell_edge_sign = np.empty((ncells, 3), dtype=np.int64)
    adj = [[] for _ in range(ncells)]
    for e in range(len(edge_ij)):
        adj[edge_plus[e]].append((e, +1))
        if edge_minus[e] >= 0:
            adj[edge_minus[e]].append((e, -1))
    for c, lst in enumerate(adj):
        if len(lst) != 3:
            raise RuntimeError(f"cell {c} touches {len(lst)} edges")
        for k, (e, s) in enumerate(sorted(lst)):
            cell_edges[c, k] = e
            cell_edge_sign[c, k] = s

    return Mesh(
        n=n, periodic=periodic, h=h,
        vertices=vertices, cells=cells, cell_ij=cell_ij, cell_class=cell_class,
        edge_ij=edge_ij, edge_type=edge_type, edge_normal=edge_normal,
        edge_plus=edge_plus, edge_minus=edge_minus, edge_length=edge_length,
        cell_edges=cell_edges, cell_edge_sign=cell_edge_sign,
    )


def trace_sides(mesh: Mesh, edge: int):
    """Plus/minus restriction contexts of an edge.

    Each context maps the edge parameter s in [0, 1] (along the stored
    orientation) to cell-local coordinates. Raises on the minus side of a
    wall edge.
    """
    if not 0 <= edge < mesh.num_edges:
        raise IndexError(f"edge {edge} out of range")
    eids = np.array([edge])

    def side(cell):
        origin, direction = mesh.edge_local_frame(eids, np.array([cell]))
        return TraceSide(int(cell), int(mesh.cell_class[cell]), origin[0], direction[0])

    plus = side(mesh.edge_plus[edge])
    mcell = mesh.edge_minus[edge]
    if mcell < 0:
        return plus, None
    return plus, side(mcell)


def mesh_statistics(mesh: Mesh) -> dict:
    """Mesh spacing, SUPG characteristic length h_T = h/sqrt(2), counts."""
    return {
        "h": mesh.h,
        "h_T": mesh.h / np.sqrt(2.0),
        "num_vertices": mesh.num_vertices,
        "num_edges": mesh.num_edges,
        "num_cells": mesh.num_cells,
        "euler_characteristic": mesh.num_vertices - mesh.num_edges + mesh.num_cells,
    }
