# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled tape kernel.  Same contract and arithmetic order as ``_kernel_py``."""

from libc.math cimport sin, cos, exp, tanh, pow, fabs, isfinite
from libc.stdlib cimport malloc, free

import numpy as np

cdef double DIV_GUARD = 1e-12
cdef double SWITCH_TOL = 1e-13
cdef int MAX_BISECT = 64


cdef class TapeKernel:
    cdef int[::1] op
    cdef int[::1] a
    cdef int[::1] b
    cdef int[::1] dst
    cdef int[::1] seg
    cdef public object tape
    # integration context, valid during integrate()
    cdef double* r
    cdef const int* sreg
    cdef const int* dreg
    cdef int m, t_reg, u_reg, gate_reg, ubar_reg, u0_reg
    cdef bint gated, filter_on
    cdef double* k1
    cdef double* k2
    cdef double* k3
    cdef double* k4
    cdef double* yt

    def __init__(self, tape):
        self.tape = tape
        self.op = np.ascontiguousarray(tape.op, dtype=np.int32)
        self.a = np.ascontiguousarray(tape.a, dtype=np.int32)
        self.b = np.ascontiguousarray(tape.b, dtype=np.int32)
        self.dst = np.ascontiguousarray(tape.dst, dtype=np.int32)
        self.seg = np.ascontiguousarray(tape.segments, dtype=np.int32)

    cdef int _run(self, double* r, int s) noexcept nogil:
        cdef int k, o, lo = self.seg[s], hi = self.seg[s + 1]
        cdef double d
        for k in range(lo, hi):
            o = self.op[k]
            if o == 1:
                r[self.dst[k]] = r[self.a[k]] + r[self.b[k]]
            elif o == 2:
                r[self.dst[k]] = r[self.a[k]] - r[self.b[k]]
            elif o == 3:
                r[self.dst[k]] = r[self.a[k]] * r[self.b[k]]
            elif o == 4:
                d = r[self.b[k]]
                if fabs(d) < DIV_GUARD:
                    return k
                r[self.dst[k]] = r[self.a[k]] / d
            elif o == 5:
                r[self.dst[k]] = -r[self.a[k]]
            elif o == 6:
                r[self.dst[k]] = pow(r[self.a[k]], <double>self.b[k])
            elif o == 7:
                r[self.dst[k]] = sin(r[self.a[k]])
            elif o == 8:
                r[self.dst[k]] = cos(r[self.a[k]])
            elif o == 9:
                r[self.dst[k]] = exp(r[self.a[k]])
            else:
                r[self.dst[k]] = tanh(r[self.a[k]])
        return -1

    def eval(self, double[::1] regs, int seg_lo, int seg_hi):
        cdef int s, bad
        for s in range(seg_lo, seg_hi):
            bad = self._run(&regs[0], s)
            if bad >= 0:
                return bad
        return -1

    cdef int _load(self, double t, const double* ys) noexcept nogil:
        cdef int i
        self.r[self.t_reg] = t
        for i in range(self.m):
            self.r[self.sreg[i]] = ys[i]
        return self._run(self.r, 0)

    cdef int _field(self, double t, const double* ys, int* mode, bint diagnostics) noexcept nogil:
        # mode[0] = -1 decides from the state and writes back the decision
        cdef int bad
        cdef double u, gate
        bad = self._load(t, ys)
        if bad >= 0:
            return bad
        if mode[0] < 0:
            mode[0] = 1 if self.r[self.ubar_reg] >= self.r[self.u0_reg] else 0
        if self.filter_on:
            u = self.r[self.ubar_reg] if mode[0] == 1 else self.r[self.u0_reg]
        else:
            u = self.r[self.ubar_reg]
        if self.gated:
            gate = 1.0 if mode[0] == 1 else 0.0
        else:
            gate = 1.0
        self.r[self.u_reg] = u
        self.r[self.gate_reg] = gate
        bad = self._run(self.r, 1)
        if bad >= 0:
            return bad
        if diagnostics:
            bad = self._run(self.r, 2)
            if bad >= 0:
                return bad
        return -1

    cdef int _mode_at(self, double t, const double* ys, int* bad) noexcept nogil:
        bad[0] = self._load(t, ys)
        return 1 if self.r[self.ubar_reg] >= self.r[self.u0_reg] else 0

    cdef int _rk4(self, const double* ys, double t, double h, int mode, bint have_k1,
                  double* yout) noexcept nogil:
        # frozen mode when mode >= 0; per-stage decision when mode == -1
        cdef int i, bad, md
        cdef double hh = 0.5 * h, h6
        cdef int m = self.m
        if not have_k1:
            md = mode
            bad = self._field(t, ys, &md, False)
            if bad >= 0:
                return bad
            for i in range(m):
                self.k1[i] = self.r[self.dreg[i]]
        for i in range(m):
            self.yt[i] = ys[i] + hh * self.k1[i]
        md = mode
        bad = self._field(t + hh, self.yt, &md, False)
        if bad >= 0:
            return bad
        for i in range(m):
            self.k2[i] = self.r[self.dreg[i]]
            self.yt[i] = ys[i] + hh * self.k2[i]
        md = mode
        bad = self._field(t + hh, self.yt, &md, False)
        if bad >= 0:
            return bad
        for i in range(m):
            self.k3[i] = self.r[self.dreg[i]]
            self.yt[i] = ys[i] + h * self.k3[i]
        md = mode
        bad = self._field(t + h, self.yt, &md, False)
        if bad >= 0:
            return bad
        for i in range(m):
            self.k4[i] = self.r[self.dreg[i]]
        h6 = h / 6.0
        for i in range(m):
            yout[i] = ys[i] + h6 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i])
        return -1

    def integrate(self, double[::1] regs, const int[::1] state_regs, const int[::1] deriv_regs,
                  int t_reg, int u_reg, int gate_reg, int ubar_reg, int u0_reg,
                  const int[::1] rec_regs, const double[::1] state0, double t0, double dt,
                  int substeps, long nsteps, bint gated, bint filter_on, bint locate, double[:, ::1] out):
        cdef int m = state_regs.shape[0]
        cdef int nrec = rec_regs.shape[0]
        cdef long k
        cdef int i, j, bad = -1, mode0, it
        cdef double tk, tj, lo, hi, mid, h = dt / substeps
        cdef bint switching = locate and (gated or filter_on)
        cdef double* buf = <double*> malloc(9 * m * sizeof(double) + 8)
        if buf == NULL:
            raise MemoryError()
        cdef double* y = buf
        cdef double* ynew = buf + m
        cdef double* ymid = buf + 2 * m
        cdef double* ys = buf + 3 * m
        cdef int status = 0, detail = -1
        cdef long at = nsteps
        self.r = &regs[0]
        self.sreg = &state_regs[0]
        self.dreg = &deriv_regs[0]
        self.m = m
        self.t_reg = t_reg
        self.u_reg = u_reg
        self.gate_reg = gate_reg
        self.ubar_reg = ubar_reg
        self.u0_reg = u0_reg
        self.gated = gated
        self.filter_on = filter_on
        self.k1 = buf + 4 * m
        self.k2 = buf + 5 * m
        self.k3 = buf + 6 * m
        self.k4 = buf + 7 * m
        self.yt = buf + 8 * m
        try:
            for i in range(m):
                y[i] = state0[i]
            with nogil:
                for k in range(nsteps + 1):
                    tk = t0 + <double>k * dt
                    mode0 = -1
                    bad = self._field(tk, y, &mode0, True)
                    if bad >= 0:
                        break
                    for i in range(nrec):
                        out[k, i] = self.r[rec_regs[i]]
                    if k == nsteps:
                        break
                    for j in range(substeps):
                        tj = tk + <double>j * h
                        if j > 0:
                            mode0 = -1
                            bad = self._field(tj, y, &mode0, False)
                            if bad >= 0:
                                break
                        for i in range(m):
                            self.k1[i] = self.r[self.dreg[i]]
                        if not switching:
                            bad = self._rk4(y, tj, h, -1, True, ynew)
                            if bad >= 0:
                                break
                            for i in range(m):
                                y[i] = ynew[i]
                        else:
                            bad = self._rk4(y, tj, h, mode0, True, ynew)
                            if bad >= 0:
                                break
                            if self._mode_at(tj + h, ynew, &bad) == mode0 and bad < 0:
                                for i in range(m):
                                    y[i] = ynew[i]
                            else:
                                if bad >= 0:
                                    break
                                lo = 0.0
                                hi = h
                                it = 0
                                while hi - lo > SWITCH_TOL and it < MAX_BISECT:
                                    mid = 0.5 * (lo + hi)
                                    bad = self._rk4(y, tj, mid, mode0, True, ymid)
                                    if bad >= 0:
                                        break
                                    if self._mode_at(tj + mid, ymid, &bad) == mode0:
                                        lo = mid
                                    else:
                                        hi = mid
                                    if bad >= 0:
                                        break
                                    it = it + 1
                                if bad >= 0:
                                    break
                                bad = self._rk4(y, tj, hi, mode0, True, ys)
                                if bad >= 0:
                                    break
                                bad = self._rk4(ys, tj + hi, h - hi, 1 - mode0, False, y)
                                if bad >= 0:
                                    break
                        for i in range(m):
                            if not isfinite(y[i]):
                                status = 2; at = k + 1; detail = i
                                break
                        if status != 0:
                            break
                    if status != 0 or bad >= 0:
                        break
                if bad >= 0 and status == 0:
                    status = 1; at = k; detail = bad
        finally:
            self.r = NULL
            free(buf)
        return status, at, detail
