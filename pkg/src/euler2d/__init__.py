"""Finite element and pseudo-spectral solvers for 2D incompressible Euler.

Three discretisations on structured right-triangle meshes of the periodic
or wall-bounded unit square:

* flux-form DG advection with upwind dissipation,
* the energy-conserving Lie-derivative upwind scheme,
* the energy-conserving SUPG stream function / vorticity scheme,

all integrated with the implicit midpoint rule, plus shell-binned spectral
energy/enstrophy tendency diagnostics and a dealiased pseudo-spectral
reference solver.
"""

from .mesh import build_unit_square_mesh, mesh_statistics, trace_sides
from .fespace import Field, FunctionSpace, build_space, interpolate, l2_project
from .operators import (SupgRule, UpwindRule, divergence_matrix,
                        flux_form_residual, lie_form_residual, mass_matrix,
                        scale_split, streamfunction_poisson, supg_residual,
                        tau_field, weak_vorticity)
from .schemes import (SchemeConfig, SupgIntegrator, VelocityIntegrator,
                      make_integrator, newton_solve, set_initial_condition)
from .diagnostics import (energy, enstrophy, numerical_jacobian, sample_uniform,
                          subgrid_tendencies, tendency_spectra, time_average,
                          truncate_spectral)

__version__ = "0.1.0"
