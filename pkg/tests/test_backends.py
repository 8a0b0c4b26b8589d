import numpy as np
import pytest

from nonovershoot import exprlang as el
from nonovershoot import sim, tape
from nonovershoot.plant import Identifier

from conftest import scenario

needs_cython = pytest.mark.skipif("cython" not in tape.available_backends(), reason="compiled kernel not built")


def test_python_backend_always_present():
    assert "python" in tape.available_backends()


def test_program_matches_tree_walk():
    e = el.parse("sin(x1) * x2^3 - exp(x1 / (1 + x2^2)) + tanh(x2)")
    prog = tape.Program(["x1", "x2"], {"e": e}, backend="python")
    env = {"x1": 0.3, "x2": -1.7}
    assert prog(env)["e"] == el.evaluate(e, env)


def test_division_guard_in_kernel():
    prog = tape.Program(["x1"], {"e": el.parse("1/x1")}, backend="python")
    with pytest.raises(el.DivisionNearZero):
        prog({"x1": 0.0})


@needs_cython
@pytest.mark.parametrize("scheme", list(Identifier))
def test_bit_identical_traces(scheme):
    changes = {"sim.identifier": scheme.value, "sim.gated": scheme is Identifier.H_PASSIVE, "sim.t_end": 3.0}
    sc = scenario("ex1", **changes)
    a, _ = sim.run(sc, backend="python")
    b, _ = sim.run(sc, backend="cython")
    assert a.data.tobytes() == b.data.tobytes()


@needs_cython
def test_bit_identical_with_substeps():
    sc = scenario("fixed_boundary", **{"gains.kappa": [0.2, 0.2], "sim.t_end": 1.0})
    a, _ = sim.run(sc, backend="python")
    b, _ = sim.run(sc, backend="cython")
    assert a.data.tobytes() == b.data.tobytes()


@needs_cython
def test_bit_identical_failure():
    sc = scenario("ex1", **{"sim.dt": 0.1, "sim.substeps": 1})
    rows = []
    for backend in ("python", "cython"):
        loop = sim.ClosedLoop(sc, backend=backend)
        out, status, at, detail = loop.integrate(loop.initial_state().to_vector(), 0.0, sc.dt, sc.nsteps)
        rows.append((status, at, out[:at].tobytes()))
    assert rows[0][0] == rows[1][0] != 0
    assert rows[0][1:] == rows[1][1:]


@needs_cython
def test_program_backends_agree():
    e = el.parse("x1^4 / (2 + cos(x2)) - x1*x2")
    env = {"x1": 1.25, "x2": 0.5}
    py = tape.Program(["x1", "x2"], {"e": e}, backend="python")(env)["e"]
    cy = tape.Program(["x1", "x2"], {"e": e}, backend="cython")(env)["e"]
    assert np.float64(py).tobytes() == np.float64(cy).tobytes()
