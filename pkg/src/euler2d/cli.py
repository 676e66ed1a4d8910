"""Experiment orchestration: convergence, turbulence, decay, reference runs.

All outputs are plain CSV with a named header row and a comment line
carrying a hash of the effective configuration; identical configurations
produce bit-identical files. Exit codes: 0 success, 2 configuration error,
3 nonlinear-solver failure, 4 blow-up.
"""

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import operators as op
from . import specref
from .fespace import Field, SolverError
from .manufactured import manufactured_fields, sine_forcing, turbulence_initial_vorticity
from .mesh import build_unit_square_mesh
from .schemes import (NewtonError, SchemeConfig, SupgIntegrator, VelocityState,
                      VorticityState, make_integrator)

log = logging.getLogger("euler2d")

EXPERIMENTS = ("converge", "turbulence", "decay", "tendencies", "specref")
CONVERGE_MESHES = (2, 4, 6, 8)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "decay"
    scheme: str = "lie_derivative"
    r: int = 1
    n: int = 32
    dt: float = 0.02
    alpha: float = 1.0
    beta: float = 1.0
    t_end: float = 10.0
    window: tuple = (0.0, 0.0)
    kt: tuple = ()
    out: str = "out"
    snapshot_every: float = 0.0
    forcing_k: int = 16
    forcing_amp: float = 0.1
    tau: float = 100.0          # Ekman drag time scale; 0 disables drag
    newton_tol: float = 1e-11

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.scheme not in ("flux_form", "lie_derivative", "supg"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.r not in (1, 2):
            raise ConfigError("r must be 1 or 2")
        for key in ("n", "dt", "t_end", "forcing_k", "newton_tol"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.tau < 0 or self.snapshot_every < 0:
            raise ConfigError("tau and snapshot_every must be >= 0")
        w0, w1 = self.window
        if w1 > 0 and not (0 <= w0 <= w1 <= self.t_end + 1e-12):
            raise ConfigError("window must satisfy 0 <= t0 <= t1 <= t_end")
        if any(k < 0 for k in self.kt):
            raise ConfigError("kt entries must be >= 0")
        return self


_PARSERS = {
    "experiment": str, "scheme": str, "out": str,
    "r": int, "n": int, "forcing_k": int,
    "dt": float, "alpha": float, "beta": float, "t_end": float,
    "snapshot_every": float, "forcing_amp": float, "tau": float,
    "newton_tol": float,
    "window": lambda s: tuple(float(x) for x in str(s).split(",")) if s else (0.0, 0.0),
    "kt": lambda s: tuple(int(x) for x in str(s).split(",")) if s else (),
}


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Strictly parse key=value config; CLI overrides win over the file."""
    values: dict = {}
    if path:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _PARSERS[key](val)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(f"unknown option {key!r}")
        values[key] = _PARSERS[key](val) if isinstance(val, str) else val
    window = values.get("window", (0.0, 0.0))
    if isinstance(window, tuple) and len(window) == 1:
        raise ConfigError("window needs two comma-separated times")
    return RunConfig(**values).validate()


def emit_config(cfg: RunConfig) -> str:
    parts = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        parts.append(f"{f.name}={v}")
    return "\n".join(parts) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Hash of the scientific configuration (output location excluded)."""
    canon = emit_config(replace(cfg, out=""))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _write_csv(path: Path, cfg: RunConfig, header: list, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# euler2d config_hash={config_hash(cfg)}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    log.info("wrote %s", path)


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# experiments

def _scheme_config(cfg: RunConfig, **kw) -> SchemeConfig:
    base = dict(scheme=cfg.scheme, r=cfg.r, dt=cfg.dt, alpha=cfg.alpha,
                beta=cfg.beta, newton_tol=cfg.newton_tol)
    base.update(kw)
    return SchemeConfig(**base)


def _l2_velocity_error(integ, state, exact_u, t):
    """L2 norm of (discrete velocity - exact) by quadrature."""
    if isinstance(integ, SupgIntegrator):
        V = integ.V0
        qdeg = integ.qdeg
        psi = state.psi.coefficients
        err2 = 0.0
        for cls in (0, 1):
            cells = V.class_cells(cls)
            pts, w, _, gtab = V.cell_tabulation(qdeg)[cls]
            phys = V.mesh.cell_ij[cells][:, None, :] * V.mesh.h + pts
            uh = op.perp(np.einsum("cd,qdl->cql", psi[V.dof_map[cells]], gtab))
            ue = exact_u(t, phys.reshape(-1, 2)).reshape(uh.shape)
            err2 += np.einsum("q,cqi->", w, (uh - ue) ** 2)
        return float(np.sqrt(err2))
    V1 = integ.V1
    qdeg = integ.asm.qdeg_cell
    err2 = 0.0
    for cls in (0, 1):
        cells = V1.class_cells(cls)
        pts, w, tab, _ = V1.cell_tabulation(qdeg)[cls]
        phys = V1.mesh.cell_ij[cells][:, None, :] * V1.mesh.h + pts
        uh = np.einsum("cd,qdi->cqi", state.u.coefficients[V1.dof_map[cells]], tab)
        ue = exact_u(t, phys.reshape(-1, 2)).reshape(uh.shape)
        err2 += np.einsum("q,cqi->", w, (uh - ue) ** 2)
    return float(np.sqrt(err2))


def _l2_scalar_error(space, coefs, exact, t):
    qdeg = 2 * space.degree + 2
    err2 = 0.0
    for cls in (0, 1):
        cells = space.class_cells(cls)
        pts, w, tab, _ = space.cell_tabulation(qdeg)[cls]
        phys = space.mesh.cell_ij[cells][:, None, :] * space.mesh.h + pts
        vh = np.einsum("cd,qd->cq", coefs[space.dof_map[cells]], tab)
        ve = exact(t, phys.reshape(-1, 2)).reshape(vh.shape)
        err2 += np.einsum("q,cq->", w, (vh - ve) ** 2)
    return float(np.sqrt(err2))


def run_convergence(cfg: RunConfig, meshes=CONVERGE_MESHES):
    """Manufactured-solution accuracy study on wall-bounded meshes."""
    mf = manufactured_fields(100.0)
    rows = []
    prev = None
    for n in meshes:
        mesh = build_unit_square_mesh(n, periodic=False)
        if cfg.scheme == "supg":
            scfg = _scheme_config(cfg, dt=cfg.dt, forcing=mf.vorticity_forcing)
            integ = make_integrator(mesh, scfg)
            state = integ.initial_state(mf.omega)
        else:
            scfg = _scheme_config(cfg, dt=cfg.dt,
                                  momentum_forcing=mf.momentum_forcing)
            integ = make_integrator(mesh, scfg)
            state = integ.initial_state_from_streamfunction(mf.psi)
        nsteps = int(round(cfg.t_end / cfg.dt))
        for _ in range(nsteps):
            state = integ.midpoint_step(state)
        err_u = _l2_velocity_error(integ, state, mf.u, state.t)
        if cfg.scheme == "supg":
            err_w = _l2_scalar_error(integ.V0, state.omega.coefficients,
                                     mf.omega, state.t)
        else:
            wh = integ.vorticity(state)
            err_w = _l2_scalar_error(integ.V0, wh.coefficients, mf.omega, state.t)
        if prev is None:
            order_u = order_w = float("nan")
        else:
            ln = np.log(n / prev[0])
            order_u = float(np.log(prev[1] / err_u) / ln)
            order_w = float(np.log(prev[2] / err_w) / ln)
        rows.append((cfg.scheme, cfg.r, n, 1.0 / n, err_u, order_u, err_w, order_w))
        prev = (n, err_u, err_w)
        log.info("converge %s r=%d n=%d err_u=%.3e err_w=%.3e",
                 cfg.scheme, cfg.r, n, err_u, err_w)
    _write_csv(Path(cfg.out) / "convergence.csv", cfg,
               ["scheme", "r", "n", "h", "err_u", "order_u", "err_w", "order_w"],
               rows)
    return rows


def _state_scalars(integ, state):
    if isinstance(integ, SupgIntegrator):
        return integ.energy(state), integ.enstrophy(state)
    E = integ.energy(state)
    w = integ.vorticity(state)
    return E, diag.enstrophy(w)


def run_decay(cfg: RunConfig, schemes=("lie_derivative", "flux_form", "supg")):
    """Unforced vortex decay; energy/enstrophy history per scheme."""
    mesh = build_unit_square_mesh(cfg.n, periodic=True)
    rows = []
    for scheme in schemes:
        scfg = _scheme_config(cfg, scheme=scheme)
        integ = make_integrator(mesh, scfg)
        state = (integ.initial_state(lambda t, p: turbulence_initial_vorticity(p))
                 if scheme == "supg" else
                 integ.initial_state_from_vorticity(
                     lambda t, p: turbulence_initial_vorticity(p)))
        E, Z = _state_scalars(integ, state)
        rows.append((scheme, state.t, E, Z))
        nsteps = int(round(cfg.t_end / cfg.dt))
        for k in range(nsteps):
            state = integ.midpoint_step(state)
            E, Z = _state_scalars(integ, state)
            rows.append((scheme, state.t, E, Z))
        log.info("decay %s done: E=%.12g Z=%.6g", scheme, E, Z)
    _write_csv(Path(cfg.out) / "decay.csv", cfg, ["scheme", "t", "E", "Z"], rows)
    return rows


def _midpoint_state(integ, s0, s1):
    if isinstance(integ, SupgIntegrator):
        return VorticityState(
            Field(integ.Vpsi, 0.5 * (s0.psi.coefficients + s1.psi.coefficients)),
            Field(integ.V0, 0.5 * (s0.omega.coefficients + s1.omega.coefficients)),
            0.5 * (s0.t + s1.t))
    return VelocityState(
        Field(integ.V1, 0.5 * (s0.u.coefficients + s1.u.coefficients)),
        s1.p, 0.5 * (s0.t + s1.t))


def run_turbulence(cfg: RunConfig, require_spectra=False):
    """Forced-drag turbulence run with optional subgrid tendency averaging."""
    if require_spectra and not cfg.kt:
        raise ConfigError("tendencies experiment needs a nonempty kt list")
    mesh = build_unit_square_mesh(cfg.n, periodic=True)
    scfg = _scheme_config(
        cfg, forcing=sine_forcing(cfg.forcing_k, cfg.forcing_amp),
        forcing_static=True, drag_tau=cfg.tau if cfg.tau > 0 else None)
    integ = make_integrator(mesh, scfg)
    state = (integ.initial_state(lambda t, p: turbulence_initial_vorticity(p))
             if cfg.scheme == "supg" else
             integ.initial_state_from_vorticity(
                 lambda t, p: turbulence_initial_vorticity(p)))
    N = (cfg.r + 1) * cfg.n
    kmax = N // 3
    for kt in cfg.kt:
        if kt > kmax:
            raise ConfigError(f"kt={kt} exceeds k_max={kmax}")
    w0, w1 = cfg.window
    averaging = w1 > w0
    accs = {kt: None for kt in cfg.kt}
    hist = []
    mov = MovingAverage(10.0, cfg.dt)
    outdir = Path(cfg.out)
    nsteps = int(round(cfg.t_end / cfg.dt))
    next_snap = cfg.snapshot_every if cfg.snapshot_every > 0 else np.inf
    E, Z = _state_scalars(integ, state)
    hist.append((cfg.scheme, state.t, E, Z, mov.push(E)))
    try:
        for k in range(nsteps):
            prev = state
            state = integ.midpoint_step(state)
            E, Z = _state_scalars(integ, state)
            hist.append((cfg.scheme, state.t, E, Z, mov.push(E)))
            if averaging and w0 + 1e-9 < state.t <= w1 + 1e-9 and cfg.kt:
                smid = _midpoint_state(integ, prev, state)
                for kt in cfg.kt:
                    accs[kt] = diag.time_average(
                        accs[kt], diag.subgrid_tendencies(smid, integ, kt))
            if state.t >= next_snap - 1e-9:
                _write_snapshot(outdir, cfg, integ, state)
                next_snap += cfg.snapshot_every
            if (k + 1) % max(1, nsteps // 20) == 0:
                log.info("turbulence %s t=%.2f E=%.6g Z=%.6g iters=%d",
                         cfg.scheme, state.t, E, Z,
                         integ.last_report.iterations)
    except NewtonError:
        _write_history(outdir, cfg, hist)
        _write_spectra(outdir, cfg, accs, kmax)
        raise
    _write_history(outdir, cfg, hist)
    _write_spectra(outdir, cfg, accs, kmax)
    return accs, hist, integ, state


class MovingAverage:
    """Trailing moving average over a fixed time horizon."""

    def __init__(self, horizon: float, dt: float):
        self.maxlen = max(1, int(round(horizon / dt)))
        self.buf = []

    def push(self, value: float) -> float:
        self.buf.append(value)
        if len(self.buf) > self.maxlen:
            self.buf.pop(0)
        return float(np.mean(self.buf))


def _write_history(outdir: Path, cfg: RunConfig, hist):
    _write_csv(outdir / "history.csv", cfg,
               ["scheme", "t", "E", "Z", "E_movavg"], hist)


def _write_spectra(outdir: Path, cfg: RunConfig, accs: dict, kmax: int):
    rows = []
    for kt, acc in sorted(accs.items()):
        if acc is None:
            continue
        ks = np.arange(kmax + 1)
        for i, k in enumerate(ks):
            rows.append((cfg.scheme, kt, int(k),
                         acc.mean("E_dot")[i], acc.mean("Z_dot")[i],
                         acc.mean("E_dot_T")[i], acc.mean("Z_dot_T")[i],
                         acc.mean("E_dot_SG")[i], acc.mean("Z_dot_SG")[i],
                         acc.stderr("E_dot_SG")[i], acc.stderr("Z_dot_SG")[i]))
    if rows:
        _write_csv(outdir / "spectra.csv", cfg,
                   ["scheme", "k_T", "k", "E_dot", "Z_dot", "E_dot_T",
                    "Z_dot_T", "E_dot_SG", "Z_dot_SG", "E_dot_SG_se",
                    "Z_dot_SG_se"], rows)


def _write_snapshot(outdir: Path, cfg: RunConfig, integ, state):
    if isinstance(integ, SupgIntegrator):
        omega = state.omega
    else:
        omega = integ.vorticity(state)
    N = (cfg.r + 1) * cfg.n
    grid = diag.sample_uniform(omega, N, "omega")
    path = outdir / f"omega_t{state.t:08.3f}.csv"
    header = [f"c{j}" for j in range(N)]
    _write_csv(path, cfg, header, grid.values)


def run_specref(cfg: RunConfig):
    """Pseudo-spectral reference tendency run; n is the grid size N."""
    w0, w1 = cfg.window
    if not w1 > w0:
        raise ConfigError("specref needs a window (t_spinup, t_end_avg)")
    if not cfg.kt:
        raise ConfigError("specref needs a kt list")

    last_log = [0.0]

    def progress(state):
        if state.t - last_log[0] >= 5.0:
            E, Z = specref.energy_enstrophy(state)
            log.info("specref t=%.2f E=%.6g Z=%.6g", state.t, E, Z)
            last_log[0] = state.t

    accs, state = specref.reference_tendency_run(
        cfg.n, cfg.kt, w0, w1 - w0, forcing_k=cfg.forcing_k,
        forcing_amplitude=cfg.forcing_amp, tau=cfg.tau if cfg.tau > 0 else None,
        progress=progress)
    kmax = cfg.n // 3
    rows = []
    for kt, acc in sorted(accs.items()):
        for i in range(kmax + 1):
            rows.append(("specref", kt, i,
                         acc.mean("E_dot")[i], acc.mean("Z_dot")[i],
                         acc.mean("E_dot_T")[i], acc.mean("Z_dot_T")[i],
                         acc.mean("E_dot_SG")[i], acc.mean("Z_dot_SG")[i],
                         acc.stderr("E_dot_SG")[i], acc.stderr("Z_dot_SG")[i]))
    _write_csv(Path(cfg.out) / "specref_spectra.csv", cfg,
               ["scheme", "k_T", "k", "E_dot", "Z_dot", "E_dot_T", "Z_dot_T",
                "E_dot_SG", "Z_dot_SG", "E_dot_SG_se", "Z_dot_SG_se"], rows)
    return accs, state


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="euler2d", description=__doc__)
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("--scheme", default=None,
                        choices=("flux_form", "lie_derivative", "supg"))
        sp.add_argument("--r", default=None)
        sp.add_argument("--n", default=None)
        sp.add_argument("--dt", default=None)
        sp.add_argument("--alpha", default=None)
        sp.add_argument("--beta", default=None)
        sp.add_argument("--t-end", dest="t_end", default=None)
        sp.add_argument("--window", default=None, help="t0,t1")
        sp.add_argument("--kt", default=None, help="comma-separated k_T list")
        sp.add_argument("--out", default=None)
        sp.add_argument("--snapshot-every", dest="snapshot_every", default=None)
        sp.add_argument("--forcing-k", dest="forcing_k", default=None)
        sp.add_argument("--forcing-amp", dest="forcing_amp", default=None)
        sp.add_argument("--tau", default=None)
        sp.add_argument("--newton-tol", dest="newton_tol", default=None)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out) / "effective_config.txt").write_text(emit_config(cfg))
    try:
        if cfg.experiment == "converge":
            run_convergence(cfg)
        elif cfg.experiment == "decay":
            run_decay(cfg)
        elif cfg.experiment in ("turbulence", "tendencies"):
            run_turbulence(cfg, require_spectra=cfg.experiment == "tendencies")
        else:
            run_specref(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NewtonError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except specref.BlowupError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
