import numpy as np
import pytest

from euler2d import operators as op
from euler2d.fespace import (Field, build_space, evaluate, evaluate_at_points,
                             interpolate, l2_project)
from euler2d.mesh import build_unit_square_mesh, trace_sides


def l2_error(field, exact, qdeg=8):
    space = field.space
    mesh = space.mesh
    err2 = 0.0
    for cls in (0, 1):
        cells = space.class_cells(cls)
        pts, w, tab, _ = space.cell_tabulation(qdeg)[cls]
        phys = mesh.cell_ij[cells][:, None, :] * mesh.h + pts
        if space.vector_valued:
            vh = np.einsum("cd,qdi->cqi", field.coefficients[space.dof_map[cells]], tab)
            ve = exact(phys.reshape(-1, 2)).reshape(vh.shape)
            err2 += np.einsum("q,cqi->", w, (vh - ve) ** 2)
        else:
            vh = np.einsum("cd,qd->cq", field.coefficients[space.dof_map[cells]], tab)
            ve = exact(phys.reshape(-1, 2)).reshape(vh.shape)
            err2 += np.einsum("q,cq->", w, (vh - ve) ** 2)
    return float(np.sqrt(err2))


def test_space_dimensions_periodic():
    m = build_unit_square_mesh(4, periodic=True)
    assert build_space(m, "CG", 2).dim == 64
    assert build_space(m, "BDM", 1).dim == 96
    assert build_space(m, "DG", 0).dim == 32
    assert build_space(m, "CG", 3).dim == (3 * 4) ** 2
    assert build_space(m, "BDM", 2).dim == 3 * 48 + 3 * 32
    assert build_space(m, "DG", 1).dim == 3 * 32


def test_space_dimensions_walls():
    m = build_unit_square_mesh(3, periodic=False)
    assert build_space(m, "CG", 2).dim == (2 * 3 + 1) ** 2
    ne = m.num_edges
    assert build_space(m, "BDM", 1).dim == 2 * ne


def test_unsupported_spaces_rejected():
    m = build_unit_square_mesh(2, periodic=True)
    for fam, deg in (("BDM", 3), ("CG", 4), ("DG", 2), ("RT", 1)):
        with pytest.raises(ValueError):
            build_space(m, fam, deg)


def test_cg_continuity_across_edges(rng):
    m = build_unit_square_mesh(3, periodic=True)
    for deg in (2, 3):
        sp = build_space(m, "CG", deg)
        f = Field(sp, rng.standard_normal(sp.dim))
        s = np.linspace(0.1, 0.9, 5)
        for e in range(0, m.num_edges, 5):
            p, mns = trace_sides(m, e)
            vp = evaluate(f, p.cell, p.local_points(s))
            vm = evaluate(f, mns.cell, mns.local_points(s))
            assert np.max(np.abs(vp - vm)) < 1e-12


def test_bdm_normal_continuity(rng):
    m = build_unit_square_mesh(3, periodic=True)
    for deg in (1, 2):
        sp = build_space(m, "BDM", deg)
        f = Field(sp, rng.standard_normal(sp.dim))
        s = np.linspace(0.05, 0.95, 4)
        worst = 0.0
        for e in range(m.num_edges):
            p, mns = trace_sides(m, e)
            vp = evaluate(f, p.cell, p.local_points(s)) @ m.edge_normal[e]
            vm = evaluate(f, mns.cell, mns.local_points(s)) @ m.edge_normal[e]
            worst = max(worst, np.max(np.abs(vp - vm)))
        assert worst < 1e-12


def test_constant_field_evaluation():
    m = build_unit_square_mesh(2, periodic=False)
    sp = build_space(m, "CG", 2)
    f = interpolate(lambda p: np.full(len(p), 3.25), sp)
    pts = np.random.default_rng(0).random((40, 2))
    assert np.max(np.abs(evaluate_at_points(f, pts) - 3.25)) < 1e-13


def test_bdm1_linear_field_exact():
    m = build_unit_square_mesh(3, periodic=False)
    sp = build_space(m, "BDM", 1)
    u = interpolate(lambda p: np.column_stack([p[:, 1], -p[:, 0]]), sp)
    pts = np.random.default_rng(1).random((60, 2))
    exact = np.column_stack([pts[:, 1], -pts[:, 0]])
    assert np.max(np.abs(evaluate_at_points(u, pts) - exact)) < 1e-12


@pytest.mark.parametrize("fam,deg,expr", [
    ("CG", 2, lambda p: 1 + p[:, 0] ** 2 - 2 * p[:, 0] * p[:, 1]),
    ("CG", 3, lambda p: p[:, 0] ** 3 - p[:, 1] ** 2 + p[:, 0]),
    ("DG", 1, lambda p: 2 * p[:, 0] - p[:, 1]),
])
def test_interpolation_polynomial_exactness(fam, deg, expr):
    m = build_unit_square_mesh(2, periodic=False)
    sp = build_space(m, fam, deg)
    f = interpolate(expr, sp)
    pts = np.random.default_rng(2).random((50, 2))
    assert np.max(np.abs(evaluate_at_points(f, pts) - expr(pts))) < 1e-12


def test_bdm2_polynomial_exactness():
    m = build_unit_square_mesh(2, periodic=False)
    sp = build_space(m, "BDM", 2)

    def expr(p):
        return np.column_stack([p[:, 0] ** 2 + p[:, 1], p[:, 0] * p[:, 1] - 1.0])

    u = interpolate(expr, sp)
    pts = np.random.default_rng(3).random((50, 2))
    assert np.max(np.abs(evaluate_at_points(u, pts) - expr(pts))) < 1e-12


def test_interpolation_order_cg2():
    """Third-order interpolation: halving h cuts the error by about 8."""
    expr = lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1])
    errs = []
    for n in (4, 8):
        sp = build_space(build_unit_square_mesh(n, periodic=True), "CG", 2)
        errs.append(l2_error(interpolate(expr, sp), expr))
    assert 6.0 < errs[0] / errs[1] < 10.0


def test_de_rham_curl_is_divergence_free():
    m = build_unit_square_mesh(4, periodic=True)
    for r in (1, 2):
        V0 = build_space(m, "CG", r + 1)
        V1 = build_space(m, "BDM", r)
        psi = interpolate(
            lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1]), V0)
        u = Field(V1, op.curl_matrix(V0, V1) @ psi.coefficients)
        _, grads = op.qp_values(V1, u.coefficients, 2 * (r + 1) + 2, grad=True)
        div = max(np.max(np.abs(g[..., 0, 0] + g[..., 1, 1])) for g in grads)
        scale = np.max(np.abs(u.coefficients))
        assert div < 1e-12 * max(scale, 1.0)


def test_l2_projection_contracts():
    m = build_unit_square_mesh(3, periodic=True)
    sp = build_space(m, "CG", 2)
    rng = np.random.default_rng(4)
    member = Field(sp, rng.standard_normal(sp.dim))
    proj = l2_project(member, sp)
    assert np.max(np.abs(proj.coefficients - member.coefficients)) < 1e-11
    # idempotence on an analytic function
    f = lambda p: np.cos(2 * np.pi * p[:, 0]) + p_free(p)
    def p_free(p):
        return 0 * p[:, 0]
    once = l2_project(f, sp)
    twice = l2_project(once, sp)
    assert np.max(np.abs(once.coefficients - twice.coefficients)) < 1e-11


def test_l2_projection_zero_mean():
    m = build_unit_square_mesh(3, periodic=True)
    spz = build_space(m, "CG", 2, zero_mean=True)
    f = l2_project(lambda p: 1.5 + np.sin(2 * np.pi * p[:, 0]), spz)
    assert abs(f.mean()) < 1e-12


def test_interpolate_zero_mean_space():
    m = build_unit_square_mesh(3, periodic=True)
    spz = build_space(m, "CG", 2, zero_mean=True)
    f = interpolate(lambda p: 2.0 + np.cos(2 * np.pi * p[:, 1]), spz)
    assert abs(f.mean()) < 1e-12


def test_mass_matrix_properties(spaces3p):
    M = op.mass_matrix(spaces3p["V0"])
    assert abs(M.sum() - 1.0) < 1e-13              # partition of unity
    assert abs(M - M.T).max() < 1e-14              # symmetry
    evals = np.linalg.eigvalsh(M.toarray())
    assert evals.min() > 0                         # SPD
    Md = op.mass_matrix(spaces3p["V2"])
    assert np.allclose(Md.diagonal(), spaces3p["V2"].mesh.cell_area)


def test_evaluate_cell_out_of_range(spaces3p):
    f = Field(spaces3p["V0"], np.zeros(spaces3p["V0"].dim))
    with pytest.raises(IndexError):
        evaluate(f, 10_000, np.array([[0.1, 0.1]]))


def test_field_length_mismatch(spaces3p):
    with pytest.raises(ValueError):
        Field(spaces3p["V0"], np.zeros(3))
