import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.linalg import expm

from nonovershoot import controller as ctl
from nonovershoot import sim
from nonovershoot.errors import BoundViolated, NonFinite
from nonovershoot.plant import scenario_from_dict

from conftest import run_named, scenario


def linear_chain(n, c, x0, t_end=1.0):
    return scenario_from_dict({
        "plant": {"phi": [["0"]] * n, "theta": [0.0]},
        "reference": {"r": "0"},
        "gains": {"c": list(c), "kappa": [1.0] * n, "g": [1.0] * n, "sigma": 1.0, "gamma": 1.0},
        "init": {"x0": list(x0), "thetahat0": [0.0]},
        "sim": {"filter": False, "gated": False, "t_end": t_end, "dt": 1e-3, "stride": 1},
    })


# --- integrator sanity -----------------------------------------------------------

def test_linear_cascade_matches_expm():
    # phi = 0 gives s_i = c_i and an autonomous linear error system h' = A h
    sc = linear_chain(2, [2.0, 3.0], [1.0, 0.5])
    tr, _ = sim.run(sc)
    A = ctl.error_matrix([2.0, 3.0])
    h0 = np.array([tr["h1"][0], tr["h2"][0]])
    worst = 0.0
    for k in range(0, len(tr), 50):
        exact = expm(A * tr.t[k]) @ h0
        worst = max(worst, np.abs(exact - [tr["h1"][k], tr["h2"][k]]).max())
    assert worst <= 1e-8


def test_scalar_decay():
    sc = linear_chain(1, [4.0], [2.0])
    tr, _ = sim.run(sc)
    np.testing.assert_allclose(tr["x1"], 2.0 * np.exp(-4.0 * tr.t), rtol=0, atol=1e-8)


def test_step_matches_run():
    sc = scenario("ex1")
    loop = sim.ClosedLoop(sc)
    s1 = sim.step(loop, loop.initial_state(), sc.dt)
    rows, *_ = loop.integrate(loop.initial_state().to_vector(), 0.0, sc.dt, 1)
    assert s1.t == sc.dt
    np.testing.assert_array_equal(s1.to_vector(), rows[1, 1:1 + len(loop.state_names)])


def test_step_rejects_bad_dt(ex1):
    with pytest.raises(ValueError):
        sim.step(ex1, sim.ClosedLoop(ex1).initial_state(), 0.0)


def test_exact_estimate_cascade():
    # theta^ = theta stays put; with u = ubar the error system is the cascade
    # h1' = -s1 h1 + h2, h2' = -s2 h2, here with constant s (phi is constant).
    # Oracle: the scalar cascade integrated separately by RK4 at the same step.
    tr, m = run_named("theorem_h_passive", **{"init.thetahat0": [10.0]})
    # epsilon is zero up to roundoff, so the estimate only drifts at that level
    np.testing.assert_allclose(tr["thetahat1"], 10.0, rtol=0, atol=1e-9)
    s1, s2 = tr["s1"][0], tr["s2"][0]
    np.testing.assert_allclose(tr["s2"], s2, rtol=1e-12)
    A = np.array([[-s1, 1.0], [0.0, -s2]])
    h = np.array([tr["h1"][0], tr["h2"][0]])
    dt = tr.dt
    oracle = [h]
    for _ in range(len(tr) - 1):
        k1 = A @ h
        k2 = A @ (h + dt / 2 * k1)
        k3 = A @ (h + dt / 2 * k2)
        k4 = A @ (h + dt * k3)
        h = h + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        oracle.append(h)
    oracle = np.array(oracle)
    np.testing.assert_allclose(tr.matrix("h", 2), oracle, rtol=0, atol=1e-8)
    # and RK4 itself is close to the exact exponential decay
    np.testing.assert_allclose(tr["h2"], tr["h2"][0] * np.exp(-s2 * tr.t), rtol=0, atol=1e-4)
    assert m.min_h1 >= -1e-6
    assert m.h1_star == 0.0


# --- trace -------------------------------------------------------------------------

def test_trace_columns_and_csv(tmp_path):
    tr, _ = run_named("ex1")
    assert tr.csv_columns() == ["t", "x1", "x2", "thetahat1", "h1", "h2", "u0", "ubar", "u", "active", "eps_norm", "V"]
    path = tr.write_csv(tmp_path / "trace.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(tr.csv_columns())
    assert len(lines) == 1 + len(range(0, len(tr), tr.stride))
    row = lines[2].split(",")
    assert float(row[0]) == tr.t[tr.stride]
    assert float(row[1]) == tr["x1"][tr.stride]          # 17 digits round-trip exactly


def test_trace_time_axis():
    tr, _ = run_named("ex1")
    t = tr.sampled()[:, 0]
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(np.diff(t), 10 * 1e-3, rtol=1e-9)
    assert tr.t[-1] == pytest.approx(30.0)


def test_fingerprint_matches_scenario():
    tr, m = run_named("ex1")
    assert tr.fingerprint == m.fingerprint == scenario("ex1").fingerprint()


def test_determinism(tmp_path):
    sc = scenario("ex1", **{"sim.t_end": 3.0})
    a, _ = sim.run(sc)
    b, _ = sim.run(sc)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.write_csv(tmp_path / "a.csv").read_bytes() == b.write_csv(tmp_path / "b.csv").read_bytes()


def test_active_flag():
    tr, m = run_named("ex1")
    np.testing.assert_array_equal(tr["active"], (tr["ubar"] >= tr["u0"]).astype(float))
    assert 0.0 < m.active_fraction < 1.0


# --- failures ----------------------------------------------------------------------

def test_nonfinite_carries_partial_trace():
    sc = scenario("ex1", **{"sim.dt": 0.1, "sim.substeps": 1, "sim.t_end": 30.0})
    with pytest.raises(NonFinite) as info:
        sim.run(sc)
    exc = info.value
    assert exc.component is not None
    assert 0.0 < exc.t < 30.0
    assert exc.partial is not None and 0 < len(exc.partial) < sc.nsteps + 1
    assert np.all(np.isfinite(exc.partial["x1"][:-1]))


# --- metrics and bounds ------------------------------------------------------------

def test_ex1_metrics():
    _, m = run_named("ex1")
    assert m.violation == max(0.0, -m.min_h1) > 0
    assert m.h1_star == pytest.approx(1.89364560777623, abs=1e-12)
    assert m.bound_respected and m.settled
    assert m.theta_err0 == 0.5


def test_violation_shrinks_with_time():
    tr, _ = run_named("ex1")
    early = tr["h1"][tr.t < 10].min()
    late = tr["h1"][tr.t > 20].min()
    assert late > early
    assert abs(tr["thetahat1"][-1] - 10.0) < abs(tr["thetahat1"][0] - 10.0)


def test_compare_bound_report():
    tr, m = run_named("theorem_h_passive")
    rep = sim.compare_bound(tr, m, scenario("theorem_h_passive"))
    assert rep.respected and rep.envelope_checked
    assert rep.envelope_excess <= 1e-6
    assert rep.h1_star == pytest.approx(1.89364560777623, abs=1e-12)
    assert "min h1" in str(rep)


def test_compare_bound_raises():
    tr, m = run_named("ex1")
    bad = dataclasses.replace(m, min_h1=-10.0)
    with pytest.raises(BoundViolated):
        sim.compare_bound(tr, bad, scenario("ex1"))
    rep = sim.compare_bound(tr, bad, scenario("ex1"), raise_on_fail=False)
    assert not rep.respected


def test_doubling_cbar_tightens():
    _, m1 = run_named("ex1")
    _, m2 = run_named("ex1", **{"gains.c": [5.0, 5.0]})
    assert m2.h1_star < m1.h1_star
    assert m2.violation <= m1.violation


def test_swapping_without_nu_has_no_bound():
    sc = scenario("theorem_h_swapping", **{"gains.nu": 0.0, "sim.t_end": 1.0})
    _, m = sim.run(sc)
    assert math.isnan(m.h1_star) and not m.bound_respected
    payload = json.loads(sim.metrics_json(m, sc))
    assert payload["h1_star"] is None
    assert payload["schema_version"] == sim.SCHEMA_VERSION


def test_metrics_json_keys():
    _, m = run_named("ex1")
    payload = json.loads(sim.metrics_json(m, scenario("ex1")))
    for key in ("min_h1", "violation", "h1_star", "bound_respected", "theta_err_final", "h1_final", "settled",
                "fingerprint", "schema_version", "scenario"):
        assert key in payload


def test_refined_min_recovers_vertex():
    t = np.linspace(0, 1, 11)
    y = (t - 0.43) ** 2 - 1.0
    best, at = sim.refined_min(t, y)
    assert best == pytest.approx(-1.0, abs=1e-12)
    assert at == pytest.approx(0.43, abs=1e-12)


# --- identifier invariants along trajectories ---------------------------------------

@pytest.mark.parametrize("name", ["theorem_h_passive", "ex2"])
def test_passive_energy_non_increasing(name):
    tr, _ = run_named(name)
    assert np.diff(tr["V"]).max() <= 1e-8


@pytest.mark.parametrize("name", ["theorem_h_swapping", "theorem_x_swapping"])
def test_swapping_energy_non_increasing(name):
    # |eps - Omega^T theta~| stays at roundoff, so the observable part of the
    # swapping Lyapunov function and |theta~| both decay
    tr, _ = run_named(name)
    assert np.diff(tr["V"]).max() <= 1e-8
    assert np.diff(tr["theta_err_norm"]).max() <= 1e-8


def test_update_continuity_contrast():
    # x-passive rate is continuous across filter switches; gated h-passive jumps
    def max_jump(tr):
        switch = np.flatnonzero(np.diff(tr["active"]) != 0)
        assert len(switch) > 0
        rate = tr["d_thetahat1"]
        return np.abs(rate[switch + 1] - rate[switch]).max()

    x_tr, _ = run_named("ex2")
    h_tr, _ = run_named("ex1")
    assert max_jump(x_tr) <= 50 * x_tr.dt
    assert max_jump(h_tr) >= 0.1


def test_auto_substeps_follow_stiffness():
    assert sim.ClosedLoop(scenario("ex1")).substeps == 1
    loop = sim.ClosedLoop(scenario("fixed_boundary", **{"gains.kappa": [0.2, 0.2]}))
    assert loop.substeps > 1
    assert loop.spectral_radius() * 1e-3 / loop.substeps <= sim.STIFFNESS_TARGET


def test_error_system_rhs_shape():
    tr, _ = run_named("ex1")
    rhs = sim.error_system_rhs(tr, scenario("ex1"))
    assert rhs.shape == (len(tr), 2)
