import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonovershoot.plant import scenario_from_dict
from nonovershoot.safety_filter import NominalController, intervention, nominal_u, override

from conftest import run_named, scenario


def hand_u0_ex1(x1, x2, k1=2.0, k2=2.0):
    """n = 2 law toward y_r = 0 for phi = (-8, -3), theta = 10, derived by hand:
    beta1 = -k1 x1 + 80,  z2 = x2 - beta1,  u0 = -k2 z2 - x1 + 30 - k1 (x2 - 80)."""
    beta1 = -k1 * x1 + 80.0
    z2 = x2 - beta1
    return -k2 * z2 - x1 + 30.0 + (-k1) * (x2 - 80.0)


@pytest.fixture(scope="module")
def ex1_nominal():
    return NominalController(scenario("ex1"))


def test_u0_at_origin(ex1_nominal):
    # z1 = 0, beta1 = 80, z2 = -80: u0 = 160 - 0 + 30 + 160
    assert hand_u0_ex1(0.0, 0.0) == 350.0
    assert nominal_u(ex1_nominal, [0.0, 0.0], 0.0) == pytest.approx(350.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 30))
def test_u0_matches_hand_law(x1, x2, t):
    ctrl = _EX1_NOMINAL
    assert ctrl([x1, x2], t) == pytest.approx(hand_u0_ex1(x1, x2), rel=1e-12, abs=1e-9)


_EX1_NOMINAL = NominalController(scenario("ex1"))


def free_chain(yr="0.5", theta=0.0, k=(2.0, 2.0)):
    return scenario_from_dict({
        "plant": {"phi": [["0"], ["0"]], "theta": [theta]},
        "reference": {"r": "0", "y_r": yr},
        "gains": {"c": [1.0, 1.0], "kappa": [1.0, 1.0], "g": [1.0, 1.0], "sigma": 1.0, "gamma": 1.0,
                  "k_nominal": list(k)},
        "init": {"x0": [1.0, 0.0], "thetahat0": [0.0]},
    })


def test_equilibrium_on_target_manifold():
    ctrl = NominalController(free_chain("0.5"))
    assert ctrl([0.5, 0.0], 3.0) == 0.0


def test_linear_structure_without_parameters():
    ctrl = NominalController(free_chain("0.5", k=(3.0, 4.0)))
    for x1, x2 in [(1.0, 2.0), (-0.3, 0.7)]:
        z1 = x1 - 0.5
        # beta1 = -3 z1, z2 = x2 + 3 z1, d(beta1)/dx1 x2 = -3 x2
        assert ctrl([x1, x2], 0.0) == pytest.approx(-4.0 * (x2 + 3.0 * z1) - z1 - 3.0 * x2, abs=1e-12)


def test_tracks_constant_target():
    ctrl = NominalController(free_chain("0.5"))
    x, dt = np.array([1.0, 0.0]), 0.01
    f = lambda t, x: np.array([x[1], ctrl(x, t)])  # noqa: E731
    for k in range(1000):
        t = k * dt
        k1 = f(t, x)
        k2 = f(t + dt / 2, x + dt / 2 * k1)
        k3 = f(t + dt / 2, x + dt / 2 * k2)
        k4 = f(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert abs(x[0] - 0.5) < 1e-4


@pytest.mark.parametrize("u0,ubar,u,active", [(-5.0, -3.0, -3.0, True), (4.0, -3.0, 4.0, False), (7.0, 7.0, 7.0, True)])
def test_override(u0, ubar, u, active):
    assert override(u0, ubar) == (u, active)


def test_minimal_intervention():
    tr, _ = run_named("ex1")
    np.testing.assert_array_equal(np.abs(tr["u"] - tr["u0"]), intervention(tr["u0"], tr["ubar"]))
    assert np.all(tr["u"] >= tr["ubar"])
    assert np.all(tr["u"] == np.maximum(tr["u0"], tr["ubar"]))


def test_dominance_with_exact_estimate():
    _, m = run_named("ex1", **{"init.thetahat0": [10.0]})
    assert m.min_h1 >= -1e-6
