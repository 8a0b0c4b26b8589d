"""Static SVG figures for a run or a sweep.

Output is deterministic: the SVG date stamp is dropped and element ids are
hashed with a fixed salt, so identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .plant import Scenario, eval_reference  # noqa: E402

_SVG_META = {"Date": None, "Creator": "nonovershoot"}


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "nonovershoot", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def _axes(title, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    ax.set_title(title)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _sample(trace, stride):
    stride = trace.stride if stride is None else stride
    return slice(None, None, max(1, stride))


def fig_y(trace, scenario: Scenario, path, stride=None) -> Path:
    """Output ``y = x1`` against the boundary ``r``."""
    sl = _sample(trace, stride)
    t = trace.t[sl]
    r = np.array([eval_reference(scenario.reference, tk, 0) for tk in t])
    fig, ax = _axes("output and boundary", "y")
    ax.plot(t, trace["x1"][sl], label="y")
    ax.plot(t, r, "--", label="r")
    ax.legend(loc="best")
    return _save(fig, path)


def fig_theta(trace, scenario: Scenario, path, stride=None) -> Path:
    """Parameter estimates against the true values."""
    sl = _sample(trace, stride)
    t = trace.t[sl]
    fig, ax = _axes("parameter estimate", "theta")
    for j, th in enumerate(scenario.plant.theta_true, start=1):
        line, = ax.plot(t, trace[f"thetahat{j}"][sl], label=f"thetahat{j}")
        ax.axhline(th, color=line.get_color(), ls="--", lw=0.8, label=f"theta{j}")
    ax.legend(loc="best")
    return _save(fig, path)


def fig_u(trace, scenario: Scenario, path, stride=None) -> Path:
    """Nominal, override and applied inputs."""
    sl = _sample(trace, stride)
    t = trace.t[sl]
    fig, ax = _axes("inputs", "u")
    ax.plot(t, trace["u0"][sl], label="u0")
    ax.plot(t, trace["ubar"][sl], label="ubar")
    ax.plot(t, trace["u"][sl], ":", label="u")
    ax.legend(loc="best")
    return _save(fig, path)


def fig_h1(trace, scenario: Scenario, h1_star: float, path, stride=None) -> Path:
    """``h1 = y - r`` with the guaranteed floor ``-h1*``."""
    sl = _sample(trace, stride)
    t = trace.t[sl]
    fig, ax = _axes("barrier h1", "h1")
    ax.plot(t, trace["h1"][sl], label="h1")
    if np.isfinite(h1_star):
        ax.axhline(-h1_star, color="C3", ls="--", label="-h1*")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.legend(loc="best")
    return _save(fig, path)


def fig_sweep(axis: str, values, violations, bounds, path) -> Path:
    """Observed violation and ``h1*`` against the swept axis."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(values, violations, "o-", label="violation")
    ax.plot(values, bounds, "s--", label="h1*")
    ax.set_xlabel(axis)
    ax.set_ylabel("violation")
    ax.set_title(f"violation vs {axis}")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    return _save(fig, path)
