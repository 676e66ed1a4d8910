"""Closed-form fields for the wall-bounded accuracy test and turbulence setup.

The manufactured stream function and every derived quantity (velocity,
vorticity, momentum and vorticity forcings) are produced by symbolic
differentiation and lambdified once; the momentum forcing corresponds to
pressure p = 0, so the discrete pressure converges to |u|^2/2 terms without
affecting the velocity error.
"""

from functools import lru_cache
from types import SimpleNamespace

import numpy as np
import sympy as sym


@lru_cache(maxsize=None)
def manufactured_fields(sigma: float = 100.0) -> SimpleNamespace:
    x, y, t = sym.symbols("x y t")
    psi = (sym.sin(sym.pi * x) * sym.sin(sym.pi * y)
           * sym.sin(sym.pi * y - t) * sym.exp(-2 * t / sigma))
    u = sym.Matrix([sym.diff(psi, y), -sym.diff(psi, x)])
    omega = sym.diff(psi, x, 2) + sym.diff(psi, y, 2)
    conv = lambda g: u[0] * sym.diff(g, x) + u[1] * sym.diff(g, y)
    F = sym.Matrix([sym.diff(u[0], t) + conv(u[0]),
                    sym.diff(u[1], t) + conv(u[1])])
    f_vort = sym.diff(omega, t) + conv(omega)

    def scalar(expr):
        fn = sym.lambdify((t, x, y), expr, "numpy")
        return lambda tt, pts: np.asarray(fn(tt, pts[:, 0], pts[:, 1]), dtype=float)

    def vector(exprs):
        fns = [sym.lambdify((t, x, y), e, "numpy") for e in exprs]
        return lambda tt, pts: np.column_stack(
            [np.broadcast_to(f(tt, pts[:, 0], pts[:, 1]), len(pts)) for f in fns])

    return SimpleNamespace(
        psi=scalar(psi),
        u=vector([u[0], u[1]]),
        omega=scalar(omega),
        momentum_forcing=vector([F[0], F[1]]),
        vorticity_forcing=scalar(f_vort),
        sigma=sigma,
    )


def turbulence_initial_vorticity(pts: np.ndarray) -> np.ndarray:
    """Multi-mode initial vorticity of the forced turbulence experiments."""
    x, y = pts[:, 0], pts[:, 1]
    return (np.sin(8 * np.pi * x) * np.sin(8 * np.pi * y)
            + 0.4 * np.cos(6 * np.pi * x) * np.cos(6 * np.pi * y)
            + 0.3 * np.cos(10 * np.pi * x) * np.cos(4 * np.pi * y)
            + 0.01 * np.sin(2 * np.pi * y) + 0.02 * np.sin(2 * np.pi * x))


def sine_forcing(k: int, amplitude: float = 0.1):
    """Static vorticity forcing amplitude*sin(2 pi k x), acting on shell k."""

    def f(t, pts):
        return amplitude * np.sin(2 * np.pi * k * pts[:, 0])

    return f
