"""Static figures and generated plotting scripts for trajectory and comparison data."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

STYLE = {
    "qme": {"color": "tab:blue", "linestyle": "--", "label": "QME"},
    "negf": {"color": "tab:orange", "linestyle": "-", "label": "NEGF"},
}
PANEL_LABELS = (("eps", r"$\epsilon(t)$"), ("dSi", r"$\dot S_i$"), ("S", r"$S$"), ("R", r"$R$"))


def _style(engine: str) -> dict:
    return STYLE.get(engine, {"label": engine})


def panel_figure(panels: dict[str, dict[str, np.ndarray]], path, title: str = "") -> Path:
    """Four stacked panels sharing the time axis, one line per engine.

    ``panels[engine]`` maps column names ``t, eps, dSi, S, R`` to arrays.
    """
    fig = Figure(figsize=(5.0, 7.0), constrained_layout=True)
    axes = fig.subplots(len(PANEL_LABELS), 1, sharex=True)
    for ax, (key, label) in zip(axes, PANEL_LABELS):
        for engine, cols in panels.items():
            ax.plot(cols["t"], cols[key], **_style(engine))
        ax.set_ylabel(label)
    axes[0].legend(frameon=False, fontsize="small")
    axes[-1].set_xlabel("t")
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=120)
    return Path(path)


def bloch_figure(paths: dict[str, np.ndarray], path, title: str = "") -> Path:
    """Bloch-ball trajectories; ``paths[engine]`` has columns ``x, y, z``."""
    fig = Figure(figsize=(5.0, 5.0), constrained_layout=True)
    ax = fig.add_subplot(projection="3d")
    u, v = np.mgrid[0:2 * np.pi:40j, 0:np.pi:20j]
    ax.plot_wireframe(np.cos(u) * np.sin(v), np.sin(u) * np.sin(v), np.cos(v),
                      color="0.85", linewidth=0.4)
    for engine, xyz in paths.items():
        xyz = np.asarray(xyz)
        ax.plot(xyz[:, 0], xyz[:, 1], xyz[:, 2], **_style(engine))
        ax.scatter(*xyz[-1], color=_style(engine).get("color"), s=12)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("z")
    ax.set_box_aspect((1, 1, 1))
    ax.legend(frameon=False, fontsize="small")
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=120)
    return Path(path)


_PANEL_SCRIPT = '''\
"""Four-panel overlay of eps, dSi, S and R against t."""
import sys

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

FILES = {files!r}
STYLE = {style!r}
PANELS = [("eps", "eps(t)"), ("dSi", "dS_i/dt"), ("S", "S"), ("R", "R")]


def load(name):
    with open(name) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    columns = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return dict(zip(columns, data.T))


fig, axes = plt.subplots(len(PANELS), 1, sharex=True, figsize=(5, 7))
for engine, name in FILES.items():
    data = load(name)
    for ax, (key, label) in zip(axes, PANELS):
        ax.plot(data["t"], data[key], **STYLE.get(engine, {{"label": engine}}))
        ax.set_ylabel(label)
axes[0].legend(frameon=False)
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{output}", dpi=150)
'''

_BLOCH_SCRIPT = '''\
"""Bloch-ball trajectories per engine."""
import sys

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

FILES = {files!r}
STYLE = {style!r}


def load(name):
    with open(name) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    columns = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return dict(zip(columns, data.T))


fig = plt.figure(figsize=(5, 5))
ax = fig.add_subplot(projection="3d")
u, v = np.mgrid[0:2 * np.pi:40j, 0:np.pi:20j]
ax.plot_wireframe(np.cos(u) * np.sin(v), np.sin(u) * np.sin(v), np.cos(v), color="0.85", linewidth=0.4)
for engine, name in FILES.items():
    data = load(name)
    ax.plot(data["x"], data["y"], data["z"], **STYLE.get(engine, {{"label": engine}}))
ax.set_xlabel("x")
ax.set_ylabel("y")
ax.set_zlabel("z")
ax.legend(frameon=False)
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{output}", dpi=150)
'''


def write_plot_scripts(out_dir, stem: str, panel_files: dict[str, str], bloch_files: dict[str, str]) -> list[Path]:
    """Emit standalone scripts that redraw the figures from the CSVs beside them."""
    out_dir = Path(out_dir)
    style = {k: v for k, v in STYLE.items() if k in panel_files or k in bloch_files}
    scripts = []
    for kind, template, files in (("panels", _PANEL_SCRIPT, panel_files),
                                  ("bloch", _BLOCH_SCRIPT, bloch_files)):
        path = out_dir / f"plot_{stem}_{kind}.py"
        path.write_text(template.format(files=files, style=style, output=f"{stem}_{kind}.png"))
        scripts.append(path)
    return scripts
