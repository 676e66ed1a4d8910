"""Figure rendering for the euler2d experiment CSV outputs."""

from .figures import FigureSpec, plot_history, plot_tendencies, plot_vorticity, render
from .io import SchemaError

__version__ = "0.1.0"
