"""Pure-Python tape kernel; mirrors ``_kernel.pyx`` operation for operation.

Each segment is turned into a straight-line Python function at
construction time.  Arithmetic order in :meth:`TapeKernel.integrate` matches
the compiled kernel exactly so both produce the same bits.
"""

import math

import numpy as np

from .exprlang import DIV_GUARD

_BINARY = {1: "+", 2: "-", 3: "*"}
_UNARY_FN = {7: "_sin", 8: "_cos", 9: "_exp", 10: "_tanh"}

# bisection stops once the bracket is this short (seconds)
SWITCH_TOL = 1e-13
MAX_BISECT = 64


def _segment_source(name, op, a, b, dst, lo, hi):
    lines = [f"def {name}(r):"]
    for k in range(lo, hi):
        o, x, y, d = int(op[k]), int(a[k]), int(b[k]), int(dst[k])
        if o in _BINARY:
            lines.append(f"    r[{d}] = r[{x}] {_BINARY[o]} r[{y}]")
        elif o == 4:
            lines.append(f"    _d = r[{y}]")
            lines.append(f"    if abs(_d) < {DIV_GUARD!r}: return {k}")
            lines.append(f"    r[{d}] = r[{x}] / _d")
        elif o == 5:
            lines.append(f"    r[{d}] = -r[{x}]")
        elif o == 6:
            lines.append(f"    r[{d}] = _pow(r[{x}], {float(y)!r})")
        else:
            lines.append(f"    r[{d}] = {_UNARY_FN[o]}(r[{x}])")
    lines.append("    return -1")
    return "\n".join(lines)


class _Fail(Exception):
    def __init__(self, detail):
        self.detail = detail


class TapeKernel:
    def __init__(self, tape):
        self.tape = tape
        namespace = {"_sin": math.sin, "_cos": math.cos, "_exp": math.exp,
                     "_tanh": math.tanh, "_pow": math.pow}
        self._segs = []
        bounds = tape.segments
        for s in range(len(bounds) - 1):
            name = f"_seg{s}"
            src = _segment_source(name, tape.op, tape.a, tape.b, tape.dst, bounds[s], bounds[s + 1])
            exec(compile(src, f"<tape segment {s}>", "exec"), namespace)
            self._segs.append(namespace[name])

    def eval(self, regs, seg_lo, seg_hi):
        """Run segments ``seg_lo..seg_hi-1`` in place on ``regs``.

        Returns -1 on success or the index of the guarded division that
        tripped.  ``OverflowError`` from ``math`` propagates; the compiled
        kernel yields ``inf`` instead and callers treat both as non-finite.
        """
        r = regs.tolist()
        try:
            for s in range(seg_lo, seg_hi):
                bad = self._segs[s](r)
                if bad >= 0:
                    return bad
        finally:
            regs[:] = r
        return -1

    def integrate(self, regs, state_regs, deriv_regs, t_reg, u_reg, gate_reg, ubar_reg, u0_reg,
                  rec_regs, state0, t0, dt, substeps, nsteps, gated, filter_on, locate, out):
        """Fixed-step classical RK4 over ``nsteps`` recorded steps of ``dt``,
        each split into ``substeps`` equal RK4 steps.

        The *mode* is ``ubar >= u0``: it selects ``u`` (with the filter on)
        and the adaptation gate (when gated).  Without ``locate`` the mode
        is re-decided at every stage.  With ``locate`` each step is first
        taken with the mode frozen at its start; if the mode at the end
        differs, the crossing is bracketed by bisection on the frozen-mode
        RK4 map and the step is finished in the new mode from there.

        Row ``k`` of ``out`` receives ``rec_regs`` evaluated at step ``k``
        (including the diagnostics segment).  Returns ``(status, k, detail)``
        with status 0 = ok, 1 = guarded division (detail = instruction),
        2 = non-finite state (detail = component, -1 when unknown).
        """
        r = regs.tolist()
        seg0, seg1, seg2 = self._segs[0], self._segs[1], self._segs[2]
        sreg = [int(i) for i in state_regs]
        dreg = [int(i) for i in deriv_regs]
        rreg = [int(i) for i in rec_regs]
        m = len(sreg)
        y = [float(v) for v in state0]
        switching = bool(locate) and (bool(gated) or bool(filter_on))

        def field(t, ys, mode, diagnostics):
            # mode: -1 decide from the state, 0/1 forced; returns the mode used
            r[t_reg] = t
            for i in range(m):
                r[sreg[i]] = ys[i]
            bad = seg0(r)
            if bad >= 0:
                raise _Fail(bad)
            if mode < 0:
                mode = 1 if r[ubar_reg] >= r[u0_reg] else 0
            if filter_on:
                u = r[ubar_reg] if mode == 1 else r[u0_reg]
            else:
                u = r[ubar_reg]
            if gated:
                gate = 1.0 if mode == 1 else 0.0
            else:
                gate = 1.0
            r[u_reg] = u
            r[gate_reg] = gate
            bad = seg1(r)
            if bad >= 0:
                raise _Fail(bad)
            if diagnostics:
                bad = seg2(r)
                if bad >= 0:
                    raise _Fail(bad)
            return mode

        def mode_at(t, ys):
            r[t_reg] = t
            for i in range(m):
                r[sreg[i]] = ys[i]
            bad = seg0(r)
            if bad >= 0:
                raise _Fail(bad)
            return 1 if r[ubar_reg] >= r[u0_reg] else 0

        def rk4(ys, t, h, mode, k1):
            # k1 is the derivative at (t, ys) when already known, else None
            hh = 0.5 * h
            if k1 is None:
                field(t, ys, mode, False)
                k1 = [r[i] for i in dreg]
            yt = [ys[i] + hh * k1[i] for i in range(m)]
            field(t + hh, yt, mode, False)
            k2 = [r[i] for i in dreg]
            yt = [ys[i] + hh * k2[i] for i in range(m)]
            field(t + hh, yt, mode, False)
            k3 = [r[i] for i in dreg]
            yt = [ys[i] + h * k3[i] for i in range(m)]
            field(t + h, yt, mode, False)
            k4 = [r[i] for i in dreg]
            h6 = h / 6.0
            return [ys[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(m)]

        k = 0
        h = dt / substeps
        try:
            for k in range(nsteps + 1):
                tk = t0 + k * dt
                mode0 = field(tk, y, -1, True)
                out[k, :] = [r[i] for i in rreg]
                if k == nsteps:
                    break
                for j in range(substeps):
                    tj = tk + j * h
                    if j > 0:
                        mode0 = field(tj, y, -1, False)
                    k1 = [r[i] for i in dreg]
                    if not switching:
                        y = rk4(y, tj, h, -1, k1)
                    else:
                        ynew = rk4(y, tj, h, mode0, k1)
                        if mode_at(tj + h, ynew) == mode0:
                            y = ynew
                        else:
                            lo, hi = 0.0, h
                            it = 0
                            while hi - lo > SWITCH_TOL and it < MAX_BISECT:
                                mid = 0.5 * (lo + hi)
                                ymid = rk4(y, tj, mid, mode0, k1)
                                if mode_at(tj + mid, ymid) == mode0:
                                    lo = mid
                                else:
                                    hi = mid
                                it += 1
                            ys = rk4(y, tj, hi, mode0, k1)
                            y = rk4(ys, tj + hi, h - hi, 1 - mode0, None)
                    for i in range(m):
                        if not math.isfinite(y[i]):
                            return 2, k + 1, i
        except _Fail as exc:
            return 1, k, exc.detail
        except OverflowError:
            return 2, k, -1
        finally:
            regs[:] = np.asarray(r)
        return 0, nsteps, -1
