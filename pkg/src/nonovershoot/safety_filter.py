"""Nominal tracking controller and the max-override safety filter.

The nominal law is certainty-equivalence backstepping toward ``y_r(t)``
using the true parameter.  With ``beta_0 = yr0`` and ``z_i = x_i - beta_{i-1}``::

    beta_i = -k_i z_i - z_{i-1} - phi_i^T theta
             + sum_{k<i} d(beta_{i-1})/dx_k (x_{k+1} + phi_k^T theta)
             + sum_k d(beta_{i-1})/dyr_k yr_{k+1}

and ``u0 = beta_n``.  Here ``yr_k`` is the k-th derivative of ``y_r``.
"""

from __future__ import annotations

import numpy as np

from . import exprlang as el
from .plant import Scenario, eval_nominal_reference, state_names
from .tape import Program


def nominal_names(n: int) -> list[str]:
    return [f"yr{k}" for k in range(n + 1)]


def build_nominal(phi, theta, k, n: int) -> el.Expr:
    """Symbolic ``u0`` over ``x1..xn`` and ``yr0..yrn``."""
    xs = state_names(n)
    X = [el.Var(v) for v in xs]
    YR = [el.Var(v) for v in nominal_names(n)]
    th = [el.const(float(v)) for v in theta]
    drift = [el.dot(row, th) for row in phi]   # phi_i^T theta
    beta = YR[0]
    z_prev = el.ZERO
    for i in range(1, n + 1):
        zi = el.sub(X[i - 1], beta)
        terms = [el.neg(el.mul(el.const(k[i - 1]), zi)), el.neg(z_prev), el.neg(drift[i - 1])]
        for kk in range(i - 1):
            terms.append(el.mul(el.diff(beta, xs[kk]), el.add(X[kk + 1], drift[kk])))
        for kk in range(n):
            terms.append(el.mul(el.diff(beta, f"yr{kk}"), YR[kk + 1]))
        beta = el.total(terms)
        z_prev = zi
    return beta


class NominalController:
    def __init__(self, scenario: Scenario, backend: str | None = None):
        n = scenario.n
        self.n = n
        self.reference = scenario.reference
        self.u0_expr = build_nominal(scenario.plant.phi, scenario.plant.theta_true, scenario.gains.k_nominal, n)
        self.program = Program(state_names(n) + nominal_names(n), {"u0": self.u0_expr}, backend=backend)

    def __call__(self, x, t: float) -> float:
        env = dict(zip(state_names(self.n), map(float, x)))
        for kk in range(self.n + 1):
            env[f"yr{kk}"] = eval_nominal_reference(self.reference, t, kk)
        return self.program(env)["u0"]


def nominal_u(controller: NominalController, x, t: float) -> float:
    return controller(x, t)


def override(u0: float, ubar: float) -> tuple[float, bool]:
    """``u = max(ubar, u0)``; ``active`` when the override wins or ties."""
    active = ubar >= u0
    return (float(ubar) if active else float(u0)), bool(active)


def intervention(u0, ubar):
    """``|u - u0|`` of the filter, i.e. ``max(0, ubar - u0)``."""
    return np.maximum(0.0, np.asarray(ubar) - np.asarray(u0))
