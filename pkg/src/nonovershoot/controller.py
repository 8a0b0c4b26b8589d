"""Nonovershooting backstepping: coordinates, virtual laws, override control, bounds.

The recursion is built symbolically.  With ``alpha_0 = 0`` and for
``i = 1..n``::

    h_i     = x_i - alpha_{i-1} - r_{i-1}
    w_i     = phi_i - sum_{j<i} d(alpha_{i-1})/dx_j * phi_j
    s_i     = c_i + kappa_i |w_i|^2 + g_i |d(alpha_{i-1})/d(thetahat)|^2
    alpha_i = -s_i h_i - w_i^T thetahat
              + sum_{k<i} [d(alpha_{i-1})/dx_k * x_{k+1} + d(alpha_{i-1})/dr_{k-1} * r_k]

and ``ubar = alpha_n + r_n``.  Here ``r_k`` stands for the k-th derivative
of the boundary, treated as an independent symbol, so every partial is an
ordinary symbolic derivative.  No estimate-rate symbol appears anywhere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import exprlang as el
from .errors import CompileError, InvalidMode
from .plant import GainConfig, Identifier, Reference, Scenario, eval_reference, reference_names, state_names, \
    theta_names
from .tape import DEFAULT_NODE_BUDGET, Program

DEGENERATE_H = 1e-9


@dataclass(frozen=True, eq=False)
class ControllerGraph:
    """Symbolic recursion over ``x1..xn``, ``thetahat1..p`` and ``r0..rn``.

    Lists indexed by level hold ``n + 1`` entries for ``alpha`` and its
    partials (entry 0 is the zero level) and ``n`` entries for ``h``, ``s``
    and ``w`` (entry ``i - 1`` is level ``i``).
    """

    n: int
    p: int
    x_names: tuple[str, ...]
    theta_names: tuple[str, ...]
    r_names: tuple[str, ...]
    h: tuple[el.Expr, ...]
    alpha: tuple[el.Expr, ...]
    s: tuple[el.Expr, ...]
    w: tuple[tuple[el.Expr, ...], ...]
    dalpha_dx: tuple[tuple[el.Expr, ...], ...]
    dalpha_dtheta: tuple[tuple[el.Expr, ...], ...]
    dalpha_dr: tuple[tuple[el.Expr, ...], ...]
    ubar: el.Expr
    reference: Reference
    gains: GainConfig
    node_count: int
    program: Program

    @property
    def inputs(self) -> tuple[str, ...]:
        return self.x_names + self.theta_names + self.r_names

    def env(self, x, thetahat, t: float) -> dict[str, float]:
        vals = dict(zip(self.x_names, map(float, x)))
        vals.update(zip(self.theta_names, map(float, thetahat)))
        for k, name in enumerate(self.r_names):
            vals[name] = eval_reference(self.reference, t, k)
        return vals


@dataclass(frozen=True)
class ErrorSystemMatrices:
    A: np.ndarray
    W: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class ControllerValues:
    h: np.ndarray
    s: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    ubar: float
    alpha: np.ndarray
    dalpha_dx: np.ndarray
    dalpha_dtheta: np.ndarray
    dalpha_dr: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return error_matrix(self.s)


def error_matrix(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return -np.diag(s) + np.diag(np.ones(len(s) - 1), 1)


def build_recursion(phi, gains: GainConfig, n: int, p: int) -> dict:
    """Symbolic recursion; returns a dict of the per-level expression lists."""
    xs = state_names(n)
    ths = theta_names(p)
    rs = reference_names(n)
    X = [el.Var(v) for v in xs]
    TH = [el.Var(v) for v in ths]
    R = [el.Var(v) for v in rs]

    alpha = [el.ZERO]
    dx = [tuple(el.ZERO for _ in xs)]
    dth = [tuple(el.ZERO for _ in ths)]
    dr = [tuple(el.ZERO for _ in rs)]
    h, s, w = [], [], []
    for i in range(1, n + 1):
        prev_dx, prev_dth, prev_dr = dx[i - 1], dth[i - 1], dr[i - 1]
        wi = tuple(
            el.sub(phi[i - 1][j], el.total(el.mul(prev_dx[k], phi[k][j]) for k in range(i - 1)))
            for j in range(p))
        si = el.total([el.const(gains.c[i - 1]),
                       el.mul(el.const(gains.kappa[i - 1]), el.dot(wi, wi)),
                       el.mul(el.const(gains.g[i - 1]), el.dot(prev_dth, prev_dth))])
        hi = el.sub(el.sub(X[i - 1], alpha[i - 1]), R[i - 1])
        feed = el.total(el.add(el.mul(prev_dx[k], X[k + 1]), el.mul(prev_dr[k], R[k + 1]))
                        for k in range(i - 1))
        ai = el.add(el.sub(el.neg(el.mul(si, hi)), el.dot(wi, TH)), feed)
        h.append(hi)
        s.append(si)
        w.append(wi)
        alpha.append(ai)
        memo_free = lambda v: el.diff(ai, v)  # noqa: E731
        dx.append(tuple(memo_free(v) for v in xs))
        dth.append(tuple(memo_free(v) for v in ths))
        dr.append(tuple(memo_free(v) for v in rs))
    ubar = el.add(alpha[n], R[n])
    return {"h": h, "s": s, "w": w, "alpha": alpha, "dalpha_dx": dx, "dalpha_dtheta": dth,
            "dalpha_dr": dr, "ubar": ubar}


def _outputs(rec: dict, n: int, p: int) -> dict[str, el.Expr]:
    out: dict[str, el.Expr] = {}
    for i in range(n):
        out[f"h{i + 1}"] = rec["h"][i]
        out[f"s{i + 1}"] = rec["s"][i]
        for j in range(p):
            out[f"w{i + 1}_{j + 1}"] = rec["w"][i][j]
    for i in range(n + 1):
        out[f"alpha{i}"] = rec["alpha"][i]
        for k in range(n):
            out[f"dadx{i}_{k + 1}"] = rec["dalpha_dx"][i][k]
        for j in range(p):
            out[f"dadth{i}_{j + 1}"] = rec["dalpha_dtheta"][i][j]
        for k in range(n + 1):
            out[f"dadr{i}_{k}"] = rec["dalpha_dr"][i][k]
    out["ubar"] = rec["ubar"]
    return out


def compile(scenario: Scenario, node_budget: int = DEFAULT_NODE_BUDGET, backend: str | None = None) -> ControllerGraph:
    """Build the recursion for a scenario.

    Raises :class:`CompileError` when the shared graph exceeds
    ``node_budget`` nodes.
    """
    n, p = scenario.n, scenario.p
    rec = build_recursion(scenario.plant.phi, scenario.gains, n, p)
    outputs = _outputs(rec, n, p)
    count = el.count_nodes(outputs.values())
    if count > node_budget:
        raise CompileError(f"controller graph has {count} nodes, budget is {node_budget}")
    inputs = state_names(n) + theta_names(p) + reference_names(n)
    program = Program(inputs, outputs, backend=backend, node_budget=node_budget)
    return ControllerGraph(
        n, p, tuple(state_names(n)), tuple(theta_names(p)), tuple(reference_names(n)),
        tuple(rec["h"]), tuple(rec["alpha"]), tuple(rec["s"]), tuple(rec["w"]),
        tuple(rec["dalpha_dx"]), tuple(rec["dalpha_dtheta"]), tuple(rec["dalpha_dr"]),
        rec["ubar"], scenario.reference, scenario.gains, count, program)


def evaluate_all(graph: ControllerGraph, x, thetahat, t: float) -> ControllerValues:
    n, p = graph.n, graph.p
    v = graph.program(graph.env(x, thetahat, t))
    W = np.array([[v[f"w{i}_{j}"] for i in range(1, n + 1)] for j in range(1, p + 1)])
    dth = np.array([[v[f"dadth{i}_{j}"] for j in range(1, p + 1)] for i in range(n + 1)])
    Q = np.zeros((p, n))
    for i in range(1, n):
        Q[:, i] = -dth[i]
    return ControllerValues(
        h=np.array([v[f"h{i}"] for i in range(1, n + 1)]),
        s=np.array([v[f"s{i}"] for i in range(1, n + 1)]),
        W=W, Q=Q, ubar=v["ubar"],
        alpha=np.array([v[f"alpha{i}"] for i in range(n + 1)]),
        dalpha_dx=np.array([[v[f"dadx{i}_{k}"] for k in range(1, n + 1)] for i in range(n + 1)]),
        dalpha_dtheta=dth,
        dalpha_dr=np.array([[v[f"dadr{i}_{k}"] for k in range(n + 1)] for i in range(n + 1)]),
    )


def eval_h(graph: ControllerGraph, x, thetahat, t: float) -> np.ndarray:
    return evaluate_all(graph, x, thetahat, t).h


def eval_ubar(graph: ControllerGraph, x, thetahat, t: float) -> float:
    return evaluate_all(graph, x, thetahat, t).ubar


def eval_AWQ(graph: ControllerGraph, x, thetahat, t: float) -> ErrorSystemMatrices:
    vals = evaluate_all(graph, x, thetahat, t)
    return ErrorSystemMatrices(vals.A, vals.W, vals.Q)


# --- gain floor ---------------------------------------------------------------

@dataclass(frozen=True)
class CiFloorReport:
    floor: tuple[float, ...]          # entry n-1 is nan: c_n only needs c_n > 0
    c: tuple[float, ...]
    h0: tuple[float, ...]
    degenerate: tuple[bool, ...]
    passed: tuple[bool, ...]
    violations: tuple[int, ...]       # 1-based levels failing the rule

    @property
    def ok(self) -> bool:
        return not self.violations


def ci_floor(scenario: Scenario, graph: ControllerGraph | None = None) -> CiFloorReport:
    """Lowest admissible ``c_i`` for ``i < n`` from the initial condition.

    ``cfloor_i = -(x_{i+1} - r^(i) + w_i^T thetahat
                   - sum_{j<i} [d(alpha_{i-1})/dx_j x_{j+1} + d(alpha_{i-1})/dr_{j-1} r^(j)]) / h_i``
    at ``t = 0``, which equals ``s_i - h_{i+1}(0)/h_i(0)``.  With
    ``|h_i(0)| < 1e-9`` the level is flagged degenerate and its floor is 0.
    """
    graph = graph or compile(scenario)
    n = scenario.n
    x0 = np.asarray(scenario.x0)
    th0 = np.asarray(scenario.thetahat0)
    vals = evaluate_all(graph, x0, th0, 0.0)
    rk = [eval_reference(scenario.reference, 0.0, k) for k in range(n + 1)]
    floors, degenerate, passed, bad = [], [], [], []
    for i in range(1, n + 1):
        c_i = scenario.gains.c[i - 1]
        hi = vals.h[i - 1]
        if i == n:
            floors.append(math.nan)
            degenerate.append(bool(abs(hi) < DEGENERATE_H))
            ok = c_i > 0
        else:
            num = x0[i] - rk[i] + float(vals.W[:, i - 1] @ th0)
            for j in range(1, i):
                num -= vals.dalpha_dx[i - 1][j - 1] * x0[j] + vals.dalpha_dr[i - 1][j - 1] * rk[j]
            if abs(hi) < DEGENERATE_H:
                floors.append(0.0)
                degenerate.append(True)
            else:
                floors.append(float(-num / hi))
                degenerate.append(False)
            ok = c_i >= max(floors[-1], 0.0) and c_i > 0
        passed.append(bool(ok))
        if not ok:
            bad.append(i)
    return CiFloorReport(tuple(floors), tuple(scenario.gains.c), tuple(float(v) for v in vals.h),
                         tuple(degenerate), tuple(passed), tuple(bad))


# --- violation bounds ---------------------------------------------------------

class BoundMode(str, enum.Enum):
    LINF = "Linf"
    L2 = "L2"
    H_PASSIVE = "h-passive"
    X_PASSIVE = "x-passive"
    H_SWAPPING = "h-swapping"
    X_SWAPPING = "x-swapping"

    @classmethod
    def parse(cls, mode) -> "BoundMode":
        if isinstance(mode, Identifier):
            return cls(mode.value)
        if isinstance(mode, cls):
            return mode
        key = str(mode).strip()
        for m in cls:
            if key.lower() == m.value.lower():
                return m
        try:
            return cls(Identifier.parse(key).value)
        except Exception:
            raise InvalidMode(f"unknown bound mode {mode!r}") from None


THEOREM_MODES = (BoundMode.H_PASSIVE, BoundMode.X_PASSIVE, BoundMode.H_SWAPPING, BoundMode.X_SWAPPING)


def geometric_factor(cbar: float, n: int) -> float:
    """``(cbar^n - 1) / (cbar^(n-1) (cbar - 1))``, with its limit ``n`` at ``cbar = 1``."""
    if abs(cbar - 1.0) < 1e-9:
        return float(n)
    return (cbar**n - 1.0) / (cbar ** (n - 1) * (cbar - 1.0))


def violation_bound(gains: GainConfig, theta_err: float, mode, *, n: int | None = None,
                    thetadot_norm: float | None = None) -> float:
    """Closed-form worst-case undershoot ``h1*`` of ``h1``.

    ``theta_err`` is ``|theta~(0)|`` in the identifier modes and the sup
    norm of ``theta~`` in ``Linf``/``L2``; those two also need
    ``thetadot_norm`` (sup norm or L2 norm of the estimate rate).  For
    ``n = 1`` the rate term is absent.
    """
    mode = BoundMode.parse(mode)
    n = len(gains.c) if n is None else n
    cbar, kbar, gbar = gains.c_min, gains.kappa_min, gains.g_min
    factor = geometric_factor(cbar, n)
    has_rate = n > 1
    if mode in (BoundMode.LINF, BoundMode.L2):
        if thetadot_norm is None:
            raise InvalidMode(f"mode {mode.value} needs thetadot_norm")
        term = theta_err / (2.0 * math.sqrt(cbar * kbar))
        if has_rate:
            if mode is BoundMode.LINF:
                term += thetadot_norm / (2.0 * math.sqrt(cbar * gbar))
            else:
                term += thetadot_norm / math.sqrt(2.0 * gbar)
        return factor * term
    if mode in (BoundMode.H_PASSIVE, BoundMode.X_PASSIVE):
        rate = math.sqrt(gains.gamma / (gains.sigma * gbar)) if has_rate else 0.0
    else:
        if not gains.nu > 0:
            raise InvalidMode(f"mode {mode.value} requires nu > 0, got {gains.nu}")
        rate = gains.gamma / (gains.nu * math.sqrt(cbar * gbar)) if has_rate else 0.0
    return 0.5 * factor * (1.0 / math.sqrt(cbar * kbar) + rate) * theta_err


def upper_envelope(t, h0, cbar: float, h1_star: float) -> np.ndarray:
    """``exp(-cbar t) sum_i t^(i-1)/(i-1)! h_i(0) + h1*`` evaluated at times ``t``."""
    t = np.asarray(t, dtype=float)
    acc = np.zeros_like(t)
    term = np.ones_like(t)
    for i, hi in enumerate(h0):
        if i:
            term = term * t / i
        acc = acc + term * hi
    return np.exp(-cbar * t) * acc + h1_star
