"""Closed-loop simulation: plant, override controller, safety filter, identifier.

The whole vector field is compiled into one tape with three segments:

0. ``ubar`` and ``u0`` from the state and time;
1. every state derivative, given the input registers ``u`` and ``gate``;
2. diagnostics (``h``, ``eps``, ``V``, regressors) for the trace.

The kernel resolves ``u = max(ubar, u0)`` (or ``u = ubar`` with the filter
off) and the adaptation gate between segments 0 and 1, at every RK4 stage.
References enter as expressions in ``t``, so the tape inputs are only
``t``, the state, ``u`` and ``gate``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import controller as ctl
from . import exprlang as el
from .errors import BoundViolated, NonFinite
from .identifiers import IdentifierState, aux_names, init_state, symbolic_laws
from .lyap import solve_P
from .plant import Identifier, Scenario, state_names, theta_names
from .safety_filter import build_nominal
from .tape import compile_tape, get_backend

SCHEMA_VERSION = 1
# automatic substeps keep spectral_radius * h at or below this
STIFFNESS_TARGET = 1.0
MAX_AUTO_SUBSTEPS = 1000
BOUND_TOL = 1e-6
SETTLE_TOL = 0.02
CSV_FORMAT = "%.17g"


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    x: np.ndarray
    identifier: IdentifierState

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.identifier.to_vector()])


class ClosedLoop:
    """Compiled closed-loop vector field for one scenario."""

    def __init__(self, scenario: Scenario, graph: ctl.ControllerGraph | None = None, backend: str | None = None):
        self.scenario = sc = scenario
        n, p = sc.n, sc.p
        self.n, self.p, self.scheme = n, p, sc.identifier
        self.graph = graph or ctl.compile(sc, backend=backend)
        self.lyap = solve_P(sc.gains.c)

        xs, ths, auxs = state_names(n), theta_names(p), aux_names(sc.identifier, n, p)
        self.state_names = xs + ths + auxs
        X = [el.Var(v) for v in xs]
        TH = [el.Var(v) for v in ths]
        AUX = [el.Var(v) for v in auxs]
        U, GATE = el.Var("u"), el.Var("gate")

        ref = sc.reference
        mapping = {f"r{k}": ref.derivs[k] for k in range(n + 1)}
        mapping.update({f"yr{k}": ref.yr_derivs[k] for k in range(n + 1)})
        memo: dict = {}
        sub = lambda e: el.substitute(e, mapping, memo)  # noqa: E731

        g = self.graph
        h = [sub(e) for e in g.h]
        s = [sub(e) for e in g.s]
        W = [[sub(g.w[i][j]) for i in range(n)] for j in range(p)]
        Q = [[el.neg(sub(g.dalpha_dtheta[i][j])) if i else el.ZERO for i in range(n)] for j in range(p)]
        ubar = sub(g.ubar)
        u0 = sub(build_nominal(sc.plant.phi, sc.plant.theta_true, sc.gains.k_nominal, n))
        F = [[sc.plant.phi[i][j] for i in range(n)] for j in range(p)]

        laws = symbolic_laws(
            sc.identifier, n=n, p=p, x=X, thetahat=TH, aux=AUX, u=U, h=h, s=s, W=W, Q=Q, F=F,
            P=self.lyap.P, A0=self.lyap.A0, sigma=sc.gains.sigma, gamma=sc.gains.gamma, nu=sc.gains.nu,
            theta_true=sc.plant.theta_true)
        thetadot = [el.mul(GATE, e) for e in laws.thetadot]
        theta = [el.const(v) for v in sc.plant.theta_true]
        xdot = [el.add(X[i + 1] if i + 1 < n else U, el.dot(sc.plant.phi[i], theta)) for i in range(n)]
        derivs = xdot + thetadot + laws.aux_deriv(thetadot)

        diag = {}
        for i in range(n):
            diag[f"h{i + 1}"] = h[i]
        for i in range(n):
            diag[f"eps{i + 1}"] = laws.eps[i]
        diag["V"] = laws.V
        for i in range(n):
            diag[f"s{i + 1}"] = s[i]
        for j in range(p):
            for i in range(n):
                diag[f"w{i + 1}_{j + 1}"] = W[j][i]
                diag[f"q{i + 1}_{j + 1}"] = Q[j][i]
        if laws.eps_tilde is not None:
            for i in range(n):
                diag[f"epst{i + 1}"] = laws.eps_tilde[i]
        diag["r"] = ref.derivs[0]
        diag["y_r"] = ref.yr_derivs[0]
        self.diag_names = list(diag)

        inputs = ["t"] + self.state_names + ["u", "gate"]
        self.tape = compile_tape(inputs, [[ubar, u0], derivs, list(diag.values())])
        self.backend = backend
        self.kernel = get_backend(backend).TapeKernel(self.tape)
        self.exprs = {"ubar": ubar, "u0": u0, "h": h, "derivs": derivs, "diag": diag}

        m = len(self.state_names)
        idx = {name: i for i, name in enumerate(inputs)}
        self._state_regs = np.arange(1, m + 1, dtype=np.int32)
        self._deriv_regs = np.asarray(self.tape.outputs[1], dtype=np.int32)
        self._t_reg, self._u_reg, self._gate_reg = idx["t"], idx["u"], idx["gate"]
        self._ubar_reg, self._u0_reg = self.tape.outputs[0]
        self.columns = (["t"] + self.state_names + ["u", "gate", "ubar", "u0"]
                        + [f"d_{v}" for v in self.state_names] + self.diag_names)
        self._rec_regs = np.asarray(
            [self._t_reg, *self._state_regs, self._u_reg, self._gate_reg, self._ubar_reg, self._u0_reg,
             *self._deriv_regs, *self.tape.outputs[2]], dtype=np.int32)

        self.substeps = self._resolve_substeps()

    @property
    def gated(self) -> bool:
        return self.scenario.gated

    def field(self, t: float, y, mode: int | None = None) -> np.ndarray:
        """Closed-loop vector field at ``(t, y)``; ``mode`` forces the switch."""
        regs = self.tape.fresh_registers()
        regs[self._t_reg] = t
        regs[self._state_regs] = y
        if self.kernel.eval(regs, 0, 1) >= 0:
            raise NonFinite("denominator below guard", component="division", t=t)
        ub, u0 = regs[self._ubar_reg], regs[self._u0_reg]
        if mode is None:
            mode = int(ub >= u0)
        regs[self._u_reg] = ub if (mode or not self.scenario.filter_on) else u0
        regs[self._gate_reg] = float(mode) if self.scenario.gated else 1.0
        if self.kernel.eval(regs, 1, 2) >= 0:
            raise NonFinite("denominator below guard", component="division", t=t)
        return regs[self._deriv_regs].copy()

    def spectral_radius(self, t: float = 0.0, y=None) -> float:
        """Largest eigenvalue magnitude of the field's Jacobian (central differences)."""
        y = self.initial_state().to_vector() if y is None else np.asarray(y, dtype=float)
        mode = int(self.field_mode(t, y))
        m = len(y)
        J = np.empty((m, m))
        for i in range(m):
            d = 1e-6 * max(1.0, abs(y[i]))
            yp, ym = y.copy(), y.copy()
            yp[i] += d
            ym[i] -= d
            J[:, i] = (self.field(t, yp, mode) - self.field(t, ym, mode)) / (2 * d)
        return float(np.max(np.abs(np.linalg.eigvals(J))))

    def field_mode(self, t: float, y) -> bool:
        regs = self.tape.fresh_registers()
        regs[self._t_reg] = t
        regs[self._state_regs] = y
        self.kernel.eval(regs, 0, 1)
        return bool(regs[self._ubar_reg] >= regs[self._u0_reg])

    def _resolve_substeps(self) -> int:
        sub = self.scenario.substeps
        if sub != "auto":
            return int(sub)
        rho = self.spectral_radius()
        if not math.isfinite(rho):
            return 1
        return int(min(MAX_AUTO_SUBSTEPS, max(1, math.ceil(rho * self.scenario.dt / STIFFNESS_TARGET))))

    def initial_state(self) -> SimState:
        sc = self.scenario
        h0 = ctl.eval_h(self.graph, sc.x0, sc.thetahat0, 0.0)
        ident = init_state(sc.identifier, sc.thetahat0, h0, sc.x0)
        return SimState(0.0, np.asarray(sc.x0, dtype=float), ident)

    def state_from_vector(self, t: float, vec) -> SimState:
        vec = np.asarray(vec, dtype=float)
        n, p = self.n, self.p
        return SimState(t, vec[:n].copy(), IdentifierState.from_vector(self.scheme, vec[n:], n, p))

    def integrate(self, y0, t0: float, dt: float, nsteps: int):
        """Run the kernel; returns ``(rows, status, at, detail)``."""
        regs = self.tape.fresh_registers()
        out = np.zeros((nsteps + 1, len(self._rec_regs)))
        status, at, detail = self.kernel.integrate(
            regs, self._state_regs, self._deriv_regs, self._t_reg, self._u_reg, self._gate_reg,
            int(self._ubar_reg), int(self._u0_reg), self._rec_regs, np.ascontiguousarray(y0, dtype=float),
            float(t0), float(dt), int(self.substeps), int(nsteps), bool(self.scenario.gated), bool(self.scenario.filter_on),
            bool(self.scenario.locate_switches), out)
        return out, int(status), int(at), int(detail)


def step(system: ClosedLoop | Scenario, state: SimState, dt: float) -> SimState:
    """One classical RK4 step of the closed loop."""
    if isinstance(system, Scenario):
        system = ClosedLoop(system)
    if not dt > 0:
        raise ValueError("dt must be positive")
    out, status, at, detail = system.integrate(state.to_vector(), state.t, dt, 1)
    if status:
        raise _failure(system, status, state.t + at * dt, detail, None)
    m = len(system.state_names)
    return system.state_from_vector(state.t + dt, out[1, 1:1 + m])


def _failure(system, status, t, detail, partial) -> NonFinite:
    if status == 1:
        return NonFinite(f"denominator below guard at t = {t:.6g} (instruction {detail})",
                         component="division", t=t, partial=partial)
    comp = system.state_names[detail] if 0 <= detail < len(system.state_names) else "overflow"
    return NonFinite(f"state component {comp} diverged at t = {t:.6g}", component=comp, t=t, partial=partial)


# --- trace and metrics ------------------------------------------------------------

CSV_TAIL = ("u0", "ubar", "u", "active", "eps_norm", "V")


@dataclass(frozen=True, eq=False)
class Trace:
    """Every integration step of one run; ``stride`` applies on export."""

    columns: tuple[str, ...]
    data: np.ndarray
    stride: int
    fingerprint: str
    n: int
    p: int
    scheme: Identifier
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.columns)})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self._index[name]]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self.data)

    @property
    def t(self) -> np.ndarray:
        return self["t"]

    def matrix(self, prefix: str, count: int, start: int = 1) -> np.ndarray:
        return np.column_stack([self[f"{prefix}{i}"] for i in range(start, start + count)])

    def csv_columns(self) -> list[str]:
        return (["t"] + [f"x{i}" for i in range(1, self.n + 1)] + [f"thetahat{j}" for j in range(1, self.p + 1)]
                + [f"h{i}" for i in range(1, self.n + 1)] + list(CSV_TAIL))

    def sampled(self, stride: int | None = None) -> np.ndarray:
        stride = self.stride if stride is None else stride
        cols = [self._index[c] for c in self.csv_columns()]
        return self.data[::stride][:, cols]

    def write_csv(self, path, stride: int | None = None) -> Path:
        path = Path(path)
        np.savetxt(path, self.sampled(stride), fmt=CSV_FORMAT, delimiter=",",
                   header=",".join(self.csv_columns()), comments="")
        return path


def _build_trace(system: ClosedLoop, rows: np.ndarray, stride: int) -> Trace:
    sc = system.scenario
    cols = list(system.columns)
    idx = {c: i for i, c in enumerate(cols)}
    n, p = sc.n, sc.p
    # a diverged partial trace may overflow in the norms
    with np.errstate(over="ignore", invalid="ignore"):
        extra = _derived_columns(rows, idx, sc, n, p)
    if "epst1" in idx:
        et = rows[:, [idx[f"epst{i}"] for i in range(1, n + 1)]]
        with np.errstate(over="ignore", invalid="ignore"):
            extra["eps_tilde_norm"] = np.sqrt(np.sum(et * et, axis=1))
    data = np.column_stack([rows] + list(extra.values())) if len(rows) else np.zeros((0, len(cols) + len(extra)))
    return Trace(tuple(cols + list(extra)), data, stride, sc.fingerprint(), n, p, sc.identifier, sc.dt)


def _derived_columns(rows, idx, sc, n, p) -> dict:
    eps = rows[:, [idx[f"eps{i}"] for i in range(1, n + 1)]]
    th = rows[:, [idx[f"thetahat{j}"] for j in range(1, p + 1)]]
    return {
        "active": (rows[:, idx["ubar"]] >= rows[:, idx["u0"]]).astype(float),
        "eps_norm": np.sqrt(np.sum(eps * eps, axis=1)),
        "theta_err_norm": np.linalg.norm(np.asarray(sc.plant.theta_true) - th, axis=1),
        "thetadot_norm": np.linalg.norm(rows[:, [idx[f"d_thetahat{j}"] for j in range(1, p + 1)]], axis=1),
    }


@dataclass(frozen=True)
class Metrics:
    min_h1: float
    violation: float
    h1_star: float
    bound_respected: bool
    theta_err_final: float
    h1_final: float
    settled: bool
    t_min_h1: float
    theta_err0: float
    theta_err_sup: float
    thetadot_sup: float
    thetadot_l2: float
    h1_star_linf: float
    h1_star_l2: float
    active_fraction: float
    fingerprint: str

    def to_dict(self) -> dict:
        return asdict(self)


def refined_min(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Minimum of sampled ``y`` refined by a parabola through the three
    samples around the discrete minimum (interior minima only)."""
    k = int(np.argmin(y))
    best_t, best = float(t[k]), float(y[k])
    if 0 < k < len(y) - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        curv = y0 - 2.0 * y1 + y2
        if curv > 0:
            off = 0.5 * (y0 - y2) / curv
            vertex = y1 - 0.25 * (y0 - y2) * off
            if vertex < best:
                best, best_t = float(vertex), float(t[k] + off * (t[k + 1] - t[k]))
    return best, best_t


def scheme_bound(scenario: Scenario) -> float:
    """``h1*`` of the scenario's own identifier, or nan when it is undefined."""
    if scenario.identifier.is_swapping and not scenario.gains.nu > 0:
        return math.nan
    return ctl.violation_bound(scenario.gains, scenario.theta_err0, scenario.identifier, n=scenario.n)


def compute_metrics(trace: Trace, scenario: Scenario) -> Metrics:
    t, h1 = trace.t, trace["h1"]
    min_h1, t_min = refined_min(t, h1)
    th_err = trace["theta_err_norm"]
    rate = trace["thetadot_norm"]
    theta_norm = float(np.linalg.norm(scenario.plant.theta_true))
    h1_star = scheme_bound(scenario)
    respected = bool(min_h1 >= -h1_star - BOUND_TOL) if not math.isnan(h1_star) else False
    h1_final = float(h1[-1])
    err_final = float(th_err[-1])
    rel = err_final / theta_norm if theta_norm > 0 else err_final
    sup_err, sup_rate = float(th_err.max()), float(rate.max())
    l2_rate = float(math.sqrt(trapezoid(rate * rate, t))) if len(t) > 1 else 0.0
    g = scenario.gains
    return Metrics(
        min_h1=min_h1, violation=max(0.0, -min_h1), h1_star=h1_star, bound_respected=respected,
        theta_err_final=err_final, h1_final=h1_final,
        settled=bool(abs(h1_final) <= SETTLE_TOL and rel <= SETTLE_TOL),
        t_min_h1=t_min, theta_err0=scenario.theta_err0, theta_err_sup=sup_err, thetadot_sup=sup_rate,
        thetadot_l2=l2_rate,
        h1_star_linf=ctl.violation_bound(g, sup_err, "Linf", n=scenario.n, thetadot_norm=sup_rate),
        h1_star_l2=ctl.violation_bound(g, sup_err, "L2", n=scenario.n, thetadot_norm=l2_rate),
        active_fraction=float(trace["active"].mean()), fingerprint=trace.fingerprint)


def run(scenario: Scenario, *, backend: str | None = None, system: ClosedLoop | None = None,
        stride: int | None = None) -> tuple[Trace, Metrics]:
    """Integrate ``[0, t_end]`` with fixed-step RK4 and compute the metrics.

    Raises :class:`NonFinite` carrying the partial trace if the state or a
    guarded denominator fails.
    """
    system = system or ClosedLoop(scenario, backend=backend)
    stride = scenario.stride if stride is None else stride
    y0 = system.initial_state().to_vector()
    rows, status, at, detail = system.integrate(y0, 0.0, scenario.dt, scenario.nsteps)
    if status:
        partial = _build_trace(system, rows[:at], stride)
        raise _failure(system, status, at * scenario.dt, detail, partial)
    trace = _build_trace(system, rows, stride)
    return trace, compute_metrics(trace, scenario)


# --- bound comparison -------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    mode: str
    min_h1: float
    h1_star: float
    respected: bool
    envelope_checked: bool
    envelope_excess: float     # max of h1 - envelope (<= tol when respected)

    def __str__(self):
        env = f", envelope excess {self.envelope_excess:.3g}" if self.envelope_checked else ""
        return f"{self.mode}: min h1 = {self.min_h1:.6g}, -h1* = {-self.h1_star:.6g}{env}"


def compare_bound(trace: Trace, metrics: Metrics, scenario: Scenario, mode=None, *, raise_on_fail: bool = True) -> BoundReport:
    """Check ``min h1 >= -h1* - tol``; with the filter off also check the
    transient upper envelope pointwise.  Raises :class:`BoundViolated`."""
    mode = ctl.BoundMode.parse(mode or scenario.identifier)
    if mode in (ctl.BoundMode.LINF, ctl.BoundMode.L2):
        h1_star = metrics.h1_star_linf if mode is ctl.BoundMode.LINF else metrics.h1_star_l2
    else:
        h1_star = ctl.violation_bound(scenario.gains, scenario.theta_err0, mode, n=scenario.n)
    ok = metrics.min_h1 >= -h1_star - BOUND_TOL
    env_checked = not scenario.filter_on
    excess = -math.inf
    if env_checked:
        h0 = [trace[f"h{i}"][0] for i in range(1, scenario.n + 1)]
        env = ctl.upper_envelope(trace.t, h0, scenario.gains.c_min, h1_star)
        excess = float(np.max(trace["h1"] - env))
        ok = ok and excess <= BOUND_TOL
    report = BoundReport(mode.value, metrics.min_h1, h1_star, bool(ok), env_checked, excess)
    if raise_on_fail and not ok:
        raise BoundViolated(str(report))
    return report


# --- export -----------------------------------------------------------------------

def metrics_json(metrics: Metrics, scenario: Scenario) -> str:
    payload = {"schema_version": SCHEMA_VERSION, "scenario": scenario.name, **metrics.to_dict()}
    payload = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in payload.items()}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def error_system_rhs(trace: Trace, scenario: Scenario) -> np.ndarray:
    """Right side of the error system at every recorded step, ``(len, n)``.

    ``-s_i h_i + h_{i+1} + w_i^T theta~ + q_i^T thetahat' + [i = n](u - ubar)``
    where ``q_i = -d(alpha_{i-1})/d(thetahat)``.
    """
    n, p = scenario.n, scenario.p
    theta = np.asarray(scenario.plant.theta_true)
    th_err = theta[None, :] - trace.matrix("thetahat", p)
    thd = np.column_stack([trace[f"d_thetahat{j}"] for j in range(1, p + 1)])
    out = np.zeros((len(trace), n))
    for i in range(1, n + 1):
        col = -trace[f"s{i}"] * trace[f"h{i}"]
        if i < n:
            col = col + trace[f"h{i + 1}"]
        for j in range(1, p + 1):
            col = col + trace[f"w{i}_{j}"] * th_err[:, j - 1] + trace[f"q{i}_{j}"] * thd[:, j - 1]
        if i == n:
            col = col + trace["u"] - trace["ubar"]
        out[:, i - 1] = col
    return out


def h_rate_along_flow(system: ClosedLoop, trace: Trace, delta: float = 1e-5) -> np.ndarray:
    """Central difference of ``h`` along the recorded vector field, ``(len, n)``.

    Row k is ``(h(t+d, y+d f) - h(t-d, y-d f)) / (2 d)`` with ``f`` the
    closed-loop derivative recorded at step k, i.e. the rate of ``h`` along
    the actual trajectory through that sample.
    """
    names = ["t"] + system.state_names
    tape = compile_tape(names, [system.exprs["h"]])
    kernel = get_backend(system.backend).TapeKernel(tape)
    regs = tape.fresh_registers()
    out_regs = list(tape.outputs[0])
    Y = np.column_stack([trace[c] for c in names])
    F = np.column_stack([np.ones(len(trace))] + [trace[f"d_{v}"] for v in system.state_names])
    rates = np.empty((len(trace), system.n))
    for k in range(len(trace)):
        regs[:len(names)] = Y[k] + delta * F[k]
        kernel.eval(regs, 0, 1)
        hp = regs[out_regs]
        regs[:len(names)] = Y[k] - delta * F[k]
        kernel.eval(regs, 0, 1)
        rates[k] = (hp - regs[out_regs]) / (2.0 * delta)
    return rates
