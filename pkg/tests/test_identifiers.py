import numpy as np
import pytest

from nonovershoot import controller as ctl
from nonovershoot import identifiers as idf
from nonovershoot.lyap import solve_P
from nonovershoot.plant import Identifier
from nonovershoot.sim import ClosedLoop

from conftest import scenario

SCHEMES = list(Identifier)
EX1_P = solve_P([2.5, 2.5])


def ex1_start(scheme):
    sc = scenario("ex1")
    g = ctl.compile(sc)
    h0 = ctl.eval_h(g, sc.x0, sc.thetahat0, 0.0)
    return sc, g, h0, idf.init_state(scheme, sc.thetahat0, h0, sc.x0)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_initialization_zeroes_error(scheme):
    sc, _, h0, state = ex1_start(scheme)
    np.testing.assert_array_equal(idf.epsilon(state, h0, np.asarray(sc.x0)), 0.0)


def test_initialization_values():
    sc, _, h0, _ = ex1_start(Identifier.H_PASSIVE)
    hs = idf.init_state("h-swapping", [9.5], h0, sc.x0)
    xs = idf.init_state("x-swapping", [9.5], h0, sc.x0)
    np.testing.assert_array_equal(hs.Omega, np.zeros((1, 2)))
    np.testing.assert_array_equal(hs.Omega0, -h0)
    np.testing.assert_array_equal(xs.Omega0, -np.asarray(sc.x0))
    np.testing.assert_array_equal(idf.init_state("x-passive", [9.5], h0, sc.x0).xhat, sc.x0)


def test_swapping_definitional_zero():
    th = np.array([1.5, -2.0])
    Om = np.array([[1.0, 0.5], [0.2, -1.0]])
    x = np.array([3.0, 1.0])
    st = idf.IdentifierState(Identifier.X_SWAPPING, th, Omega=Om, Omega0=Om.T @ th - x)
    np.testing.assert_allclose(idf.epsilon(st, None, x), 0.0, atol=1e-15)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_zero_error_zero_rate(scheme):
    sc, g, h0, state = ex1_start(scheme)
    W = ctl.eval_AWQ(g, sc.x0, sc.thetahat0, 0.0).W
    out = idf.theta_dot(state, np.zeros(2), W, EX1_P.P, 2.0, 1.0)
    np.testing.assert_array_equal(out, 0.0)


def test_gate():
    st = idf.IdentifierState(Identifier.H_PASSIVE, np.array([9.5]), hhat=np.zeros(2))
    eps, W = np.array([0.1, -0.2]), np.array([[-8.0, -48.6]])
    on = idf.theta_dot(st, eps, W, EX1_P.P, 2.0)
    assert np.all(on != 0)
    np.testing.assert_array_equal(idf.theta_dot(st, eps, W, EX1_P.P, 2.0, gate=(1.0, 2.0)), 0.0)
    np.testing.assert_array_equal(idf.theta_dot(st, eps, W, EX1_P.P, 2.0, gate=(2.0, 2.0)), on)
    assert idf.adaptation_active(7.0, 7.0)
    assert not idf.adaptation_active(6.9, 7.0)


def test_passive_law():
    st = idf.IdentifierState(Identifier.H_PASSIVE, np.array([9.5]), hhat=np.zeros(2))
    eps, W = np.array([0.1, -0.2]), np.array([[-8.0, -48.6]])
    np.testing.assert_allclose(idf.theta_dot(st, eps, W, EX1_P.P, 2.0), 2.0 * W @ EX1_P.P @ eps, rtol=1e-15)


def test_swapping_without_normalization():
    Om = np.eye(2)
    st = idf.IdentifierState(Identifier.H_SWAPPING, np.zeros(2), Omega=Om, Omega0=np.zeros(2))
    eps = np.array([0.3, -0.7])
    np.testing.assert_array_equal(idf.theta_dot(st, eps, gamma=3.0, nu=0.0), 3.0 * eps)
    np.testing.assert_allclose(idf.theta_dot(st, eps, gamma=3.0, nu=1.0), 3.0 * eps / 3.0)


def test_x_passive_exact_model():
    x = np.array([1.6, 84.5])
    F = np.array([[-8.0, -3.0]])
    f = np.array([x[1], 12.0])
    st = idf.IdentifierState(Identifier.X_PASSIVE, np.array([10.0]), xhat=x.copy())
    d = idf.state_deriv(st, thetadot=[0.0], A0=EX1_P.A0, sigma=1.0, F=F, P=EX1_P.P, f=f, x=x)
    np.testing.assert_allclose(d.xhat, f + F.T @ [10.0])


def test_h_swapping_free_filters_decay():
    A = ctl.error_matrix([5.7, 139.798])
    Om = np.array([[0.3, -0.4]])
    st = idf.IdentifierState(Identifier.H_SWAPPING, np.array([9.5]), Omega=Om, Omega0=np.zeros(2))
    d = idf.state_deriv(st, thetadot=[0.0], A=A, W=np.zeros((1, 2)), Q=np.zeros((1, 2)))
    np.testing.assert_allclose(d.Omega.T, A @ Om.T)


def test_x_swapping_filter_at_start():
    sc = scenario("ex1")
    st = idf.init_state("x-swapping", sc.thetahat0, [1.1, 14.27], sc.x0)
    F = np.array([[-8.0, -3.0]])
    d = idf.state_deriv(st, thetadot=[0.0], A0=EX1_P.A0, sigma=1.0, F=F, P=EX1_P.P,
                        f=np.array([84.5, 0.0]), x=np.asarray(sc.x0))
    np.testing.assert_array_equal(d.Omega, [[-8.0, -3.0]])


def test_state_vector_round_trip():
    st = idf.IdentifierState(Identifier.H_SWAPPING, np.array([1.0, 2.0]), Omega=np.arange(6.0).reshape(2, 3),
                             Omega0=np.array([7.0, 8.0, 9.0]))
    back = idf.IdentifierState.from_vector(Identifier.H_SWAPPING, st.to_vector(), 3, 2)
    np.testing.assert_array_equal(back.Omega, st.Omega)
    np.testing.assert_array_equal(back.Omega0, st.Omega0)
    assert idf.aux_names(Identifier.H_SWAPPING, 3, 2)[:4] == ["Omega_1_1", "Omega_1_2", "Omega_1_3", "Omega_2_1"]


# --- two independent routes to the same vector field ---------------------------

def numpy_field(sc, g, t, vec):
    """Closed-loop derivative assembled from the numpy identifier functions
    with u = ubar and no gate."""
    n, p = sc.n, sc.p
    x = vec[:n]
    state = idf.IdentifierState.from_vector(sc.identifier, vec[n:], n, p)
    v = ctl.evaluate_all(g, x, state.thetahat, t)
    theta = np.asarray(sc.plant.theta_true)
    F = np.array([[ctl.el.evaluate(sc.plant.phi[i][j], dict(zip(g.x_names, x))) for i in range(n)]
                  for j in range(p)])
    u = v.ubar
    f = np.append(x[1:], u)
    xdot = f + F.T @ theta
    pair = solve_P(sc.gains.c)
    eps = idf.epsilon(state, v.h, x)
    reg = {Identifier.H_PASSIVE: v.W, Identifier.X_PASSIVE: F}.get(sc.identifier)   # swapping uses Omega
    thd = idf.theta_dot(state, eps, reg, pair.P, sc.gains.gamma, sc.gains.nu)
    d = idf.state_deriv(state, thetadot=thd, eps=eps, A=v.A, W=v.W, Q=v.Q, A0=pair.A0, sigma=sc.gains.sigma,
                        F=F, P=pair.P, f=f, x=x)
    return np.concatenate([xdot, d.to_vector()])


@pytest.mark.parametrize("scheme", SCHEMES)
def test_symbolic_and_numpy_routes_agree(scheme):
    sc = scenario("ex1", **{"sim.identifier": scheme.value, "sim.gated": False, "sim.filter": False})
    loop = ClosedLoop(sc)
    rng = np.random.default_rng(11)
    y0 = loop.initial_state().to_vector()
    for _ in range(25):
        y = y0 + rng.normal(scale=0.5, size=len(y0))
        t = rng.uniform(0, 10)
        a = loop.field(t, y)
        b = numpy_field(sc, loop.graph, t, y)
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-9 * np.abs(b).max())


@pytest.mark.parametrize("scheme", SCHEMES)
def test_lyapunov_value_matches_trace(scheme):
    sc = scenario("ex1", **{"sim.identifier": scheme.value, "sim.gated": False, "sim.filter": False,
                            "sim.t_end": 0.5})
    loop = ClosedLoop(sc)
    rows, status, _, _ = loop.integrate(loop.initial_state().to_vector(), 0.0, sc.dt, sc.nsteps)
    assert status == 0
    cols = {c: i for i, c in enumerate(loop.columns)}
    m = len(loop.state_names)
    k = 300
    vec = rows[k, 1:1 + m]
    state = loop.state_from_vector(rows[k, 0], vec)
    eps = rows[k, [cols["eps1"], cols["eps2"]]]
    V = idf.lyapunov_value(state.identifier, eps, sc.plant.theta_true, loop.lyap.P, sc.gains.gamma)
    assert V == pytest.approx(rows[k, cols["V"]], rel=1e-12)
