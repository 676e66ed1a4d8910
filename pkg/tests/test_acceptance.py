"""Acceptance criteria, one test (or parametrized family) per criterion.

Each criterion prints a single "ACCEPTANCE n PASS ..." line on success;
tolerances are pinned here exactly as stated. The forced-turbulence
experiment (criterion 5, three n=32 runs to t=80) is marked slow. The
headline shell analyses exclude the k = 0 mean mode, which is reported
separately by the diagnostics (it carries sampling-mean artifacts only).
"""

import numpy as np
import pytest

from euler2d import cli
from euler2d import diagnostics as diag
from euler2d import operators as op
from euler2d import specref
from euler2d.fespace import Field, build_space
from euler2d.manufactured import turbulence_initial_vorticity
from euler2d.mesh import build_unit_square_mesh
from euler2d.schemes import SchemeConfig, VelocityState, make_integrator

OUT = "out/acceptance"


def _report(k, msg):
    print(f"\nACCEPTANCE {k} PASS: {msg}")


# ---------------------------------------------------------------------------
# criterion 1: manufactured-solution convergence orders

@pytest.fixture(scope="module")
def convergence_tables():
    tables = {}
    for scheme in ("supg", "lie_derivative"):
        for r in (1, 2):
            cfg = cli.parse_config(None, {
                "experiment": "converge", "scheme": scheme, "r": str(r),
                "dt": "1e-3", "t_end": "1.0",
                "out": f"{OUT}/converge_{scheme}_r{r}"})
            tables[scheme, r] = cli.run_convergence(cfg, meshes=(2, 4, 6, 8))
    return tables


@pytest.mark.parametrize("scheme", ["supg", "lie_derivative"])
@pytest.mark.parametrize("r", [1, 2])
def test_criterion_1_velocity_orders(convergence_tables, scheme, r):
    rows = convergence_tables[scheme, r]
    order_u = rows[-1][5]  # finest pair
    floor = 1.7 if r == 1 else 2.7
    assert order_u >= floor, rows
    _report(1, f"{scheme} r={r} velocity order {order_u:.2f} >= {floor}")


def test_criterion_1_vorticity_orders(convergence_tables):
    supg = convergence_tables["supg", 1][-1][7]
    lie = convergence_tables["lie_derivative", 1][-1][7]
    assert supg >= 2.1, supg
    assert 0.7 <= lie <= 1.3, lie
    _report(1, f"vorticity orders: supg {supg:.2f} >= 2.1, "
               f"lie {lie:.2f} in [0.7, 1.3]")


# ---------------------------------------------------------------------------
# criterion 2: exact conservation in vortex decay

@pytest.fixture(scope="module")
def decay_history():
    cfg = cli.parse_config(None, {
        "experiment": "decay", "n": "32", "r": "1", "dt": "0.02",
        "t_end": "10.0", "out": f"{OUT}/decay"})
    rows = cli.run_decay(cfg)
    out = {}
    for scheme, t, E, Z in rows:
        out.setdefault(scheme, []).append((t, E, Z))
    return {k: np.array(v) for k, v in out.items()}


def test_criterion_2_energy_conservation(decay_history):
    drifts = {}
    for scheme in ("lie_derivative", "supg"):
        E = decay_history[scheme][:, 1]
        drifts[scheme] = np.max(np.abs(E / E[0] - 1.0))
        assert drifts[scheme] <= 1e-8, (scheme, drifts[scheme])
    _report(2, "energy drift over t in [0,10]: "
               + ", ".join(f"{s} {d:.2e} <= 1e-8" for s, d in drifts.items()))


def test_criterion_2_flux_dissipates(decay_history):
    E = decay_history["flux_form"][:, 1]
    assert np.all(np.diff(E) < 0.0), "flux-form energy must strictly decrease"
    _report(2, f"flux-form energy strictly decreasing "
               f"({E[0]:.6f} -> {E[-1]:.6f})")


def test_criterion_2_supg_retains_enstrophy(decay_history):
    z_supg = decay_history["supg"][-1, 2]
    z_lie = decay_history["lie_derivative"][-1, 2]
    assert z_supg >= z_lie
    _report(2, f"final enstrophy: supg {z_supg:.4f} >= lie {z_lie:.4f}")


# ---------------------------------------------------------------------------
# criterion 3: structural identities, randomized, 100 trials each

def test_criterion_3_structural_identities():
    rng = np.random.default_rng(314159)
    mesh = build_unit_square_mesh(3, periodic=True)
    V0 = build_space(mesh, "CG", 2)
    V1 = build_space(mesh, "BDM", 1)
    lie = op.get_advection(V1, "lie")
    flux = op.get_advection(V1, "flux")
    curl = op.curl_matrix(V0, V1)
    rule = op.UpwindRule(1.0)
    rule_l = op.UpwindRule(1.0, velocity_source="continuous")
    supg_rule = op.SupgRule.for_mesh(mesh, 1)
    for _ in range(100):
        z = rng.standard_normal(V1.dim)
        scale = max(np.linalg.norm(z) ** 3, 1.0)
        assert abs(lie.residual(z, z, rule, parts="s") @ z) <= 1e-12 * scale
        assert abs(lie.residual(z, z, rule, parts="a") @ z) <= 1e-12 * scale
        assert flux.residual(z, z, rule, parts="s") @ z >= -1e-13 * scale
        sl, ss = op.energy_transfer_terms(Field(V1, z), rule_l)
        assert abs(sl + ss) <= 1e-13 * scale
        assert sl <= 1e-13 * scale and ss >= -1e-13 * scale
        psi = rng.standard_normal(V0.dim)
        u = Field(V1, curl @ psi)
        om = Field(V0, rng.standard_normal(V0.dim))
        omd = Field(V0, rng.standard_normal(V0.dim))
        rsup = op.supg_residual(u, om, omd, supg_rule)
        sscale = max(np.linalg.norm(rsup) * np.linalg.norm(psi), 1.0)
        assert abs(rsup @ psi) <= 1e-12 * sscale
    # pointwise incompressibility after velocity-scheme steps
    for scheme in ("lie_derivative", "flux_form"):
        cfg = SchemeConfig(scheme=scheme, r=1, dt=0.05)
        integ = make_integrator(mesh, cfg)
        st = VelocityState(Field(V1, curl @ rng.standard_normal(V0.dim)),
                           Field(integ.V2, np.zeros(integ.V2.dim)), 0.0)
        for _ in range(3):
            st = integ.midpoint_step(st)
            _, grads = op.qp_values(V1, st.u.coefficients, 6, grad=True)
            div = max(np.max(np.abs(g[..., 0, 0] + g[..., 1, 1])) for g in grads)
            assert div <= 1e-11 * max(np.max(np.abs(st.u.coefficients)), 1.0)
    _report(3, "lie/flux/supg identities, scale-split partition and sign "
               "pattern, pointwise div u = 0: 100 randomized trials each")


# ---------------------------------------------------------------------------
# criterion 4: diagnostics oracle equivalence

def test_criterion_4_pipeline_matches_oracle():
    from oracles import direct_dft2, shell_sums
    from euler2d.fespace import evaluate_at_points
    from euler2d.schemes import SupgIntegrator, VorticityState

    mesh = build_unit_square_mesh(8, periodic=True)  # N = 16 lattice
    N, k_T = 16, 3
    kmax = N // 3
    worst_pipe, worst_pars = 0.0, 0.0
    for scheme in ("supg", "lie_derivative", "flux_form"):
        integ = make_integrator(mesh, SchemeConfig(scheme=scheme, r=1, dt=0.02))
        st = (integ.initial_state(lambda t, p: turbulence_initial_vorticity(p))
              if scheme == "supg" else integ.initial_state_from_vorticity(
                  lambda t, p: turbulence_initial_vorticity(p)))
        got = diag.subgrid_tendencies(st, integ, k_T)

        def sample(field):
            xs = np.arange(N) / N
            X, Y = np.meshgrid(xs, xs, indexing="ij")
            return evaluate_at_points(
                field, np.column_stack([X.ravel(), Y.ravel()])).reshape(N, N)

        def dft_truncate(vals, kc):
            F = direct_dft2(vals)
            k = np.fft.fftfreq(N, 1.0 / N).astype(int)
            kx, ky = np.meshgrid(k, k, indexing="ij")
            F = np.where(kx**2 + ky**2 <= kc * kc, F, 0.0)
            return np.real(np.conj(direct_dft2(np.conj(F)))) / N**2

        psi, omega = diag.state_fields(st, integ)

        def pipeline(kc):
            pg = dft_truncate(sample(psi), kc)
            og = dft_truncate(sample(omega), kc)
            if isinstance(integ, SupgIntegrator):
                psi_f = Field(integ.Vpsi, np.empty(integ.Vpsi.dim))
                psi_f.coefficients[integ.Vpsi.lattice_map()] = pg
                om_f = Field(integ.V0, np.empty(integ.V0.dim))
                om_f.coefficients[integ.V0.lattice_map()] = og
                st_c = VorticityState(psi_f, om_f, 0.0)
            else:
                psi_f = Field(integ.V0, np.empty(integ.V0.dim))
                psi_f.coefficients[integ.V0.lattice_map()] = pg
                st_c = VelocityState(
                    Field(integ.V1, integ.curl @ psi_f.coefficients),
                    Field(integ.V2, np.zeros(integ.V2.dim)), 0.0)
            j = diag.numerical_jacobian(st_c, integ)
            jh = direct_dft2(sample(j))
            ph, oh = direct_dft2(pg), direct_dft2(og)
            e = shell_sums(np.real(np.conj(ph) * jh) / N**4, kmax)
            z = shell_sums(-np.real(np.conj(oh) * jh) / N**4, kmax)
            return e, z, pg, og, sample(j)

        e_full, z_full, pg, og, jg = pipeline(kmax)
        e_t, z_t, *_ = pipeline(k_T)
        scale = max(np.max(np.abs(e_full)), np.max(np.abs(z_full)))
        err = max(np.max(np.abs(got.E_dot - e_full)),
                  np.max(np.abs(got.Z_dot - z_full)),
                  np.max(np.abs(got.E_dot_SG - (e_full - e_t))),
                  np.max(np.abs(got.Z_dot_SG - (z_full - z_t)))) / scale
        assert err < 1e-10, (scheme, err)
        worst_pipe = max(worst_pipe, err)
        # Parseval totals against physical inner products
        spec = diag.tendency_spectra(diag.GridSample(N, pg),
                                     diag.GridSample(N, og),
                                     diag.GridSample(N, jg))
        pe = abs(spec.E_dot_total - np.mean(pg * jg))
        pz = abs(spec.Z_dot_total + np.mean(og * jg))
        assert pe < 1e-12 and pz < 1e-12, (scheme, pe, pz)
        worst_pars = max(worst_pars, pe, pz)
    _report(4, f"subgrid pipeline vs direct-DFT oracle: rel err "
               f"{worst_pipe:.1e} < 1e-10; Parseval residual "
               f"{worst_pars:.1e} < 1e-12 (all three schemes)")


# ---------------------------------------------------------------------------
# criterion 5: desk-scale backscatter of the FE schemes (slow)

@pytest.fixture(scope="module")
def turbulence_spectra():
    results = {}
    for scheme in ("lie_derivative", "supg", "flux_form"):
        cfg = cli.parse_config(None, {
            "experiment": "tendencies", "scheme": scheme, "n": "32",
            "r": "1", "dt": "0.02", "t_end": "80", "window": "60,80",
            "kt": "10", "forcing_k": "8", "tau": "100",
            "snapshot_every": "20", "out": f"{OUT}/turb_{scheme}"})
        accs, hist, integ, state = cli.run_turbulence(cfg, require_spectra=True)
        results[scheme] = accs[10]
    return results


@pytest.mark.slow
def test_criterion_5_backscatter_conservative_schemes(turbulence_spectra):
    details = []
    for scheme in ("lie_derivative", "supg"):
        acc = turbulence_spectra[scheme]
        e = acc.mean("E_dot_SG")
        se = acc.stderr("E_dot_SG")
        shells = [k for k in range(1, 7) if e[k] > 0 and e[k] > 2 * se[k]]
        assert shells, (scheme, e[:7], se[:7])
        details.append(f"{scheme} positive at k={shells}")
    _report(5, "backscatter (E_dot_SG > 0 beyond 2 s.e., shells 1..6): "
               + "; ".join(details))


@pytest.mark.slow
def test_criterion_5_flux_form_has_no_backscatter(turbulence_spectra):
    acc = turbulence_spectra["flux_form"]
    e = acc.mean("E_dot_SG")
    se = acc.stderr("E_dot_SG")
    offenders = [k for k in range(1, 7) if e[k] > 0 and e[k] > 2 * se[k]]
    assert not offenders, (e[:7], se[:7])
    _report(5, "flux form: no significant positive E_dot_SG on shells 1..6")


@pytest.mark.slow
def test_criterion_5_supg_enstrophy_peak(turbulence_spectra):
    acc = turbulence_spectra["supg"]
    z = acc.mean("Z_dot_SG")
    peak = int(np.argmin(z[1:])) + 1
    assert 4 <= peak <= 10, (peak, z)
    _report(5, f"supg Z_dot_SG most-negative shell {peak} in [4, 10]")


# ---------------------------------------------------------------------------
# criterion 6: pseudo-spectral reference analogue

@pytest.fixture(scope="module")
def reference_spectra():
    accs, _ = specref.reference_tendency_run(
        128, [21], t_spinup=40.0, t_avg=25.0, forcing_k=16, tau=100.0)
    return accs[21]


def test_criterion_6_reference_backscatter(reference_spectra):
    acc = reference_spectra
    e = acc.mean("E_dot_SG")
    se = acc.stderr("E_dot_SG")
    shells = [k for k in range(1, 9) if e[k] > 0 and e[k] > 2 * se[k]]
    assert shells, (e[:9], se[:9])
    z = acc.mean("Z_dot_SG")
    peak = int(np.argmin(z[1:])) + 1
    assert 21 - 8 <= peak <= 21, (peak,)
    _report(6, f"reference: E_dot_SG > 0 at shells {shells[:4]}...; "
               f"Z_dot_SG peak at {peak} in [13, 21]")


# ---------------------------------------------------------------------------
# criterion 7 (secondary): figure rendering from criterion-5 outputs

@pytest.mark.slow
def test_criterion_7_plots_from_turbulence_outputs(turbulence_spectra, tmp_path):
    plots = pytest.importorskip("plots")
    from plots import FigureSpec, SchemaError, render

    base = f"{OUT}/turb_supg"
    made = []
    made.append(render(FigureSpec([f"{base}/spectra.csv"], "tendencies",
                                  str(tmp_path / "tend.png"), k_T=[10])))
    made.append(render(FigureSpec([f"{base}/history.csv"], "history",
                                  str(tmp_path / "hist.png"))))
    import glob

    snap = sorted(glob.glob(f"{base}/omega_t*.csv"))[-1]
    made.append(render(FigureSpec([snap], "vorticity",
                                  str(tmp_path / "vort.png"))))
    import os

    assert all(os.path.getsize(p) > 0 for p in made)
    bad = tmp_path / "bad.csv"
    bad.write_text("k,E_dot\n1,0.0\n")
    with pytest.raises(SchemaError) as err:
        render(FigureSpec([str(bad)], "tendencies", str(tmp_path / "no.png")))
    assert "Z_dot_SG" in str(err.value)
    _report(7, "plots rendered tendencies/history/vorticity from "
               "criterion-5 outputs; schema violation reported by column name")
