"""Figure rendering from the solver's CSV outputs.

Three figure kinds: subgrid tendency spectra panels per truncation
wavenumber, normalized energy/enstrophy histories per scheme, and vorticity
heatmaps on a symmetric diverging scale. Rendering is read-only over the
inputs and deterministic (fixed figure geometry and dpi).
"""

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import SchemaError, read_grid, read_table, require_columns

DPI = 130


@dataclass
class FigureSpec:
    inputs: list
    kind: str            # tendencies | history | vorticity
    output: str
    k_T: list = field(default_factory=list)
    logx: bool = False
    title: str = ""


def plot_tendencies(spec: FigureSpec) -> str:
    cols, nrows = read_table(spec.inputs[0])
    require_columns(cols, ["k_T", "k", "E_dot_SG", "Z_dot_SG"], spec.inputs[0])
    if nrows == 0:
        raise SchemaError(f"{spec.inputs[0]}: no spectrum rows")
    kts = [int(k) for k in spec.k_T] or sorted(set(int(v) for v in cols["k_T"]))
    present = set(int(v) for v in cols["k_T"])
    missing = [k for k in kts if k not in present]
    if missing:
        raise SchemaError(f"k_T values {missing} not present in the data")
    fig, axes = plt.subplots(len(kts), 2, figsize=(9, 3 * len(kts)),
                             squeeze=False)
    for row, kt in enumerate(kts):
        sel = cols["k_T"].astype(int) == kt
        k = cols["k"][sel]
        for col, (name, label) in enumerate(
                [("E_dot_SG", "energy tendency"),
                 ("Z_dot_SG", "enstrophy tendency")]):
            ax = axes[row][col]
            ax.axhline(0.0, color="0.6", lw=0.8)
            ax.plot(k, cols[name][sel], "o-", ms=3, lw=1.2)
            se = name + "_se"
            if se in cols:
                ax.fill_between(k, cols[name][sel] - 2 * cols[se][sel],
                                cols[name][sel] + 2 * cols[se][sel],
                                alpha=0.25, lw=0)
            ax.set_xlabel("wavenumber k")
            ax.set_ylabel(f"subgrid {label}")
            ax.set_title(f"k_T = {kt}")
            if spec.logx:
                ax.set_xscale("log")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=DPI)
    plt.close(fig)
    return spec.output


def plot_history(spec: FigureSpec) -> str:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for path in spec.inputs:
        cols, nrows = read_table(path)
        require_columns(cols, ["scheme", "t", "E", "Z"], path)
        if nrows == 0:
            raise SchemaError(f"{path}: no history rows")
        for scheme in dict.fromkeys(cols["scheme"]):
            sel = cols["scheme"] == scheme
            t = cols["t"][sel]
            for ax, name in zip(axes, ("E", "Z")):
                v = cols[name][sel]
                ref = v[0] if v[0] != 0 else 1.0
                ax.plot(t, v / ref, lw=1.2, label=str(scheme))
    for ax, name in zip(axes, ("energy", "enstrophy")):
        ax.set_xlabel("t")
        ax.set_ylabel(f"{name} / initial")
        ax.legend(fontsize=8)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=DPI)
    plt.close(fig)
    return spec.output


def plot_vorticity(spec: FigureSpec) -> str:
    grid = read_grid(spec.inputs[0])
    lim = float(np.max(np.abs(grid))) or 1.0
    fig, ax = plt.subplots(figsize=(5, 4.4))
    im = ax.imshow(grid.T, origin="lower", cmap="RdBu_r", vmin=-lim, vmax=lim,
                   extent=(0, 1, 0, 1), interpolation="nearest")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.colorbar(im, ax=ax, label="vorticity")
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=DPI)
    plt.close(fig)
    return spec.output


RENDERERS = {
    "tendencies": plot_tendencies,
    "history": plot_history,
    "vorticity": plot_vorticity,
}


def render(spec: FigureSpec) -> str:
    try:
        fn = RENDERERS[spec.kind]
    except KeyError:
        raise SchemaError(f"unknown figure kind {spec.kind!r}")
    return fn(spec)
