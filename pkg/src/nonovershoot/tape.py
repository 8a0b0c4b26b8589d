"""Linearize expression DAGs into a register tape and pick an evaluation backend.

A tape is a straight-line program over a flat ``float64`` register file:
inputs occupy the first registers, constants follow, then one register per
instruction.  Instructions are grouped into consecutive *segments* so a
caller can evaluate part of the program, write further inputs, and resume
(the simulator uses this to resolve ``u = max(ubar, u0)`` between the
control law and the closed-loop dynamics).

Two backends execute tapes with identical IEEE semantics: a compiled Cython
module (``_kernel``) and a pure-Python fallback (``_kernel_py``) that
generates straight-line Python source.  The compiled one is chosen at import
when it is available, unless ``NONOVERSHOOT_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import exprlang as el
from .errors import CompileError, DivisionNearZero, NonFinite, UnknownSymbol

OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_POW, OP_SIN, OP_COS, OP_EXP, OP_TANH = range(1, 11)

_OPCODES = {
    el.Add: OP_ADD, el.Sub: OP_SUB, el.Mul: OP_MUL, el.Div: OP_DIV, el.Neg: OP_NEG,
    el.PowInt: OP_POW, el.Sin: OP_SIN, el.Cos: OP_COS, el.Exp: OP_EXP, el.Tanh: OP_TANH,
}

DEFAULT_NODE_BUDGET = 10**6


@dataclass(frozen=True, eq=False)
class Tape:
    inputs: tuple[str, ...]
    n_regs: int
    const_regs: np.ndarray
    const_vals: np.ndarray
    op: np.ndarray
    a: np.ndarray
    b: np.ndarray
    dst: np.ndarray
    # instruction index where each segment starts; last entry is the total
    segments: tuple[int, ...]
    outputs: tuple[tuple[int, ...], ...]

    @property
    def n_instructions(self) -> int:
        return len(self.op)

    def fresh_registers(self) -> np.ndarray:
        regs = np.zeros(self.n_regs)
        regs[self.const_regs] = self.const_vals
        return regs


def compile_tape(inputs: Sequence[str], segments: Sequence[Sequence[el.Expr]],
                 node_budget: int = DEFAULT_NODE_BUDGET) -> Tape:
    """Emit the instructions needed by each segment's outputs, in order.

    Nodes already emitted for an earlier segment are reused, never
    recomputed.
    """
    inputs = tuple(inputs)
    reg: dict[int, int] = {}
    by_name = {name: i for i, name in enumerate(inputs)}
    if len(by_name) != len(inputs):
        raise CompileError("duplicate input names")
    all_nodes = el.topo_order([e for seg in segments for e in seg])
    if len(all_nodes) > node_budget:
        raise CompileError(f"expression graph has {len(all_nodes)} nodes, budget is {node_budget}")

    consts: list[float] = []
    next_reg = len(inputs)
    for node in all_nodes:
        if isinstance(node, el.Var):
            if node.name not in by_name:
                raise UnknownSymbol(node.name)
            reg[id(node)] = by_name[node.name]
        elif isinstance(node, el.Constant):
            reg[id(node)] = next_reg
            consts.append(node.number)
            next_reg += 1
    const_regs = np.arange(len(inputs), next_reg, dtype=np.int32)

    op, a, b, dst = [], [], [], []
    bounds = [0]
    outputs = []
    for seg in segments:
        for node in el.topo_order(seg):
            if id(node) in reg:
                continue
            code = _OPCODES[type(node)]
            op.append(code)
            a.append(reg[id(node.args[0])])
            if code == OP_POW:
                b.append(node.exponent)
            elif len(node.args) == 2:
                b.append(reg[id(node.args[1])])
            else:
                b.append(0)
            dst.append(next_reg)
            reg[id(node)] = next_reg
            next_reg += 1
        bounds.append(len(op))
        outputs.append(tuple(reg[id(e)] for e in seg))

    as_i32 = lambda v: np.asarray(v, dtype=np.int32)  # noqa: E731
    return Tape(inputs, next_reg, const_regs, np.asarray(consts, dtype=np.float64),
                as_i32(op), as_i32(a), as_i32(b), as_i32(dst), tuple(bounds), tuple(outputs))


# --- backend selection -------------------------------------------------------

def _load_backends():
    found = {}
    from . import _kernel_py
    found["python"] = _kernel_py
    try:
        from . import _kernel  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        found["cython"] = _kernel
    return found


BACKENDS = _load_backends()
DEFAULT_BACKEND = "python" if os.environ.get("NONOVERSHOOT_PURE_PYTHON") == "1" or "cython" not in BACKENDS else "cython"


def available_backends() -> list[str]:
    return sorted(BACKENDS)


def get_backend(name: str | None = None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


class Program:
    """Named-input, named-output evaluator for a set of expressions.

    Convenience wrapper used for pointwise queries (not the simulator's
    inner loop).
    """

    def __init__(self, inputs: Sequence[str], outputs: Mapping[str, el.Expr], backend: str | None = None,
                 node_budget: int = DEFAULT_NODE_BUDGET):
        self.names = tuple(outputs)
        self.tape = compile_tape(inputs, [list(outputs.values())], node_budget)
        self.kernel = get_backend(backend).TapeKernel(self.tape)
        self._index = {n: i for i, n in enumerate(self.tape.inputs)}

    def __call__(self, env: Mapping[str, float]) -> dict[str, float]:
        regs = self.tape.fresh_registers()
        for name, i in self._index.items():
            try:
                regs[i] = env[name]
            except KeyError:
                raise UnknownSymbol(name) from None
        try:
            bad = self.kernel.eval(regs, 0, 1)
        except OverflowError:
            raise NonFinite("overflow during evaluation") from None
        if bad >= 0:
            raise DivisionNearZero(f"|denominator| below guard {el.DIV_GUARD} at instruction {bad}")
        out = {}
        for name, r in zip(self.names, self.tape.outputs[0]):
            v = float(regs[r])
            if not np.isfinite(v):
                raise NonFinite(f"{name} evaluated to {v}", component=name)
            out[name] = v
        return out
