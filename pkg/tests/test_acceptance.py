"""Acceptance criteria 1-10, one test each, each recording a PASS/FAIL line."""

import math

import numpy as np

from nonovershoot import controller as ctl
from nonovershoot import exprlang as el
from nonovershoot import sim
from nonovershoot.lyap import solve_P

from conftest import record_criterion, run_named, scenario

TOL = 1e-6


def test_criterion_01_exact_parameter_nonovershooting():
    _, m = run_named("theorem_h_passive", **{"init.thetahat0": [10.0]})
    ok = m.min_h1 >= -1e-6
    record_criterion(1, ok, f"min h1 = {m.min_h1:.3e} >= -1e-6 (EX1, thetahat(0) = theta, u = ubar)")
    assert ok


def test_criterion_02_closed_loop_residual():
    worst = {}
    for name in ("theorem_h_passive", "ex1"):
        sc = scenario(name)
        loop = sim.ClosedLoop(sc)
        tr, _ = sim.run(sc, system=loop)
        rate = sim.h_rate_along_flow(loop, tr)
        rhs = sim.error_system_rhs(tr, sc)
        worst[name] = float(np.abs(rate - rhs).max())
        if not sc.filter_on:
            # u = ubar: the input mismatch term is identically zero
            assert np.all(tr["u"] == tr["ubar"])
        if name == "theorem_h_passive":
            # information only: a trajectory difference quotient, truncation-limited in the initial transient
            h = tr.matrix("h", sc.n)
            fd = (h[2:] - h[:-2]) / (tr.t[2:] - tr.t[:-2])[:, None]
            traj = float(np.median(np.abs(fd - rhs[1:-1])))
    ok = max(worst.values()) <= 1e-4
    record_criterion(2, ok, f"max residual u=ubar {worst['theorem_h_passive']:.2e}, filtered {worst['ex1']:.2e} "
                            f"<= 1e-4 (trajectory central difference, median: {traj:.2e})")
    assert ok


def test_criterion_03_lyapunov_monotone():
    rises = {}
    for name in ("theorem_h_passive", "ex2"):
        tr, _ = run_named(name)
        rises[name] = float(np.diff(tr["V"]).max())
    ok = all(v <= 1e-8 for v in rises.values())
    record_criterion(3, ok, "max per-step rise of V: h-passive {:.2e}, x-passive {:.2e} <= 1e-8".format(
        rises["theorem_h_passive"], rises["ex2"]))
    assert ok


def test_criterion_04_swapping_identity():
    sups = {}
    for name in ("theorem_h_swapping", "theorem_x_swapping"):
        tr, _ = run_named(name)
        sups[name] = float(tr["eps_tilde_norm"].max())
    ok = all(v <= TOL for v in sups.values())
    record_criterion(4, ok, "sup |eps - Omega^T theta~|: h-swapping {:.2e}, x-swapping {:.2e} <= 1e-6".format(
        sups["theorem_h_swapping"], sups["theorem_x_swapping"]))
    assert ok


def test_criterion_05_estimation_error_contraction():
    parts, ok = [], True
    for name in ("theorem_h_passive", "theorem_h_swapping", "ex2", "theorem_x_swapping"):
        sc = scenario(name)
        tr, m = run_named(name)
        good = m.theta_err_sup <= m.theta_err0 + TOL
        parts.append(f"{sc.identifier.value} {m.theta_err_sup:.6f}<={m.theta_err0:.6f}")
        if sc.identifier.is_swapping:
            cap = sc.gains.gamma / sc.gains.nu * m.theta_err0
            good = good and m.thetadot_sup <= cap + TOL
            parts.append(f"rate {m.thetadot_sup:.3f}<={cap:.3f}")
        ok = ok and good
    record_criterion(5, ok, "; ".join(parts))
    assert ok


def formula_oracle(c, kappa, g, sigma, gamma, err0, n=2):
    factor = (c**n - 1) / (2 * c ** (n - 1) * (c - 1))
    return factor * (1 / math.sqrt(c * kappa) + math.sqrt(gamma / (sigma * g))) * err0


def test_criterion_06_theorem_bounds():
    pinned = formula_oracle(2.5, 0.05, 0.3, 1.0, 2.0, 0.5)
    got = ctl.violation_bound(scenario("ex1").gains, 0.5, "h-passive")
    ok = abs(got - pinned) <= 1e-9 and abs(got - 1.894) < 5e-4
    parts = [f"h1*(EX1) = {got:.6f}"]
    for name in ("ex1", "theorem_h_passive", "theorem_h_swapping", "ex2", "theorem_x_swapping"):
        sc = scenario(name)
        _, m = run_named(name)
        bound = ctl.violation_bound(sc.gains, sc.theta_err0, sc.identifier)
        good = m.min_h1 >= -bound - TOL
        ok = ok and good
        parts.append(f"{name} {m.min_h1:.3f}>={-bound:.3f}")
    record_criterion(6, ok, "; ".join(parts))
    assert ok


def test_criterion_07_convergence():
    parts, ok = [], True
    for name in ("ex1", "ex2"):
        sc = scenario(name)
        tr, m = run_named(name)
        rel = m.theta_err_final / np.linalg.norm(sc.plant.theta_true)
        good = abs(tr["h1"][-1]) <= 0.02 and rel <= 0.02 and tr.t[-1] == 30.0
        ok = ok and good
        parts.append(f"{name} |h1(30)| = {abs(tr['h1'][-1]):.1e}, rel err {rel:.1e}")
    record_criterion(7, ok, "; ".join(parts) + " (<= 0.02)")
    assert ok


def test_criterion_08_gating_phenomenology():
    tr2, _ = run_named("poor_init_gated")
    spread = float(np.ptp(tr2["thetahat1"]))
    tr6, _ = run_named("poor_init_xpassive")
    k = int(round(0.5 / tr6.dt))
    assert tr6.t[k] == 0.5
    moved = abs(tr6["thetahat1"][k] - tr6["thetahat1"][0])
    ok = spread <= 1e-12 and moved > 1e-3
    record_criterion(8, ok, f"gated h-passive spread {spread:.1e} <= 1e-12; x-passive |dtheta(0.5)| = {moved:.3f} > 1e-3")
    assert ok


def test_criterion_09_trend_suite():
    sweeps = {"gains.c": (2.5, 5.0, 10.0), "gains.kappa": (0.05, 0.2, 0.8), "gains.g": (0.3, 1.2, 4.8)}
    parts, ok = [], True
    for key, values in sweeps.items():
        viol = [run_named("fixed_boundary", **{key: [v, v]})[1].violation for v in values]
        good = all(b <= a for a, b in zip(viol, viol[1:]))
        ok = ok and good
        parts.append(f"{key.split('.')[1]} " + ">=".join(f"{v:.3f}" for v in viol))
    record_criterion(9, ok, "; ".join(parts))
    assert ok


def test_criterion_10_numerics():
    # Lyapunov: pinned matrices from the three scalar equations
    p1 = solve_P([1.0, 1.0])
    p2 = solve_P([2.5, 2.5])
    lyap_ok = (max(p1.residual(), p2.residual()) <= 1e-10
               and np.abs(p1.P - [[0.5, 0.25], [0.25, 0.75]]).max() <= 1e-12
               and np.abs(p2.P - [[0.2, 0.04], [0.04, 0.216]]).max() <= 1e-12)

    # symbolic partials of every alpha_i against central differences
    graph = ctl.compile(scenario("ex1"))
    rng = np.random.default_rng(2024)
    worst = 0.0
    h = 1e-4
    for _ in range(100):
        env = dict(zip(graph.inputs, rng.uniform(-5.0, 5.0, len(graph.inputs))))
        for i in range(1, graph.n + 1):
            groups = zip((graph.dalpha_dx[i], graph.dalpha_dtheta[i], graph.dalpha_dr[i]),
                         (graph.x_names, graph.theta_names, graph.r_names))
            for partials, names in groups:
                for d, v in zip(partials, names):
                    f = lambda dv: el.evaluate(graph.alpha[i], {**env, v: env[v] + dv})  # noqa: E731
                    fd = (f(h) - f(-h)) / (2 * h)
                    worst = max(worst, abs(el.evaluate(d, env) - fd) / (1 + abs(fd)))
    partial_ok = worst <= 1e-6

    # RK4 step doubling on EX1
    _, m1 = run_named("ex1")
    _, m2 = run_named("ex1", **{"sim.dt": 5e-4, "sim.stride": 20})
    change = abs(m1.min_h1 - m2.min_h1)
    ok = lyap_ok and partial_ok and change <= 1e-6
    record_criterion(10, ok, f"Lyapunov residual {max(p1.residual(), p2.residual()):.1e}; "
                             f"partials vs FD {worst:.1e}; step doubling |d min h1| = {change:.1e} <= 1e-6")
    assert ok
