"""Parameter identifiers: h-passive, h-swapping, x-passive, x-swapping.

Two routes share the same formulas:

* a numpy route (:func:`epsilon`, :func:`theta_dot`, :func:`state_deriv`,
  :func:`lyapunov_value`) for pointwise queries and tests, and
* a symbolic route (:func:`symbolic_laws`) that the simulator compiles into
  its closed-loop tape.

Shapes: ``W``, ``Q``, ``F`` and ``Omega`` are ``p x n``; ``A``, ``A0`` and
``P`` are ``n x n``; ``f = (x2, ..., xn, u)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import exprlang as el
from .plant import Identifier

Scheme = Identifier


@dataclass(frozen=True, eq=False)
class IdentifierState:
    scheme: Identifier
    thetahat: np.ndarray
    hhat: np.ndarray | None = None
    xhat: np.ndarray | None = None
    Omega: np.ndarray | None = None
    Omega0: np.ndarray | None = None

    def aux_vector(self) -> np.ndarray:
        if self.scheme is Identifier.H_PASSIVE:
            return np.asarray(self.hhat, dtype=float)
        if self.scheme is Identifier.X_PASSIVE:
            return np.asarray(self.xhat, dtype=float)
        return np.concatenate([np.asarray(self.Omega, dtype=float).ravel(), self.Omega0])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.thetahat, self.aux_vector()])

    @classmethod
    def from_vector(cls, scheme: Identifier, vec, n: int, p: int) -> "IdentifierState":
        vec = np.asarray(vec, dtype=float)
        th, aux = vec[:p].copy(), vec[p:]
        if scheme is Identifier.H_PASSIVE:
            return cls(scheme, th, hhat=aux[:n].copy())
        if scheme is Identifier.X_PASSIVE:
            return cls(scheme, th, xhat=aux[:n].copy())
        return cls(scheme, th, Omega=aux[: n * p].reshape(p, n).copy(), Omega0=aux[n * p:n * p + n].copy())


def aux_names(scheme: Identifier, n: int, p: int) -> list[str]:
    """Variable names of the auxiliary state, in :meth:`IdentifierState.aux_vector` order."""
    if scheme is Identifier.H_PASSIVE:
        return [f"hhat{i}" for i in range(1, n + 1)]
    if scheme is Identifier.X_PASSIVE:
        return [f"xhat{i}" for i in range(1, n + 1)]
    return [f"Omega_{j}_{i}" for j in range(1, p + 1) for i in range(1, n + 1)] + \
           [f"Omega0_{i}" for i in range(1, n + 1)]


def init_state(scheme: Identifier, thetahat0, h0, x0) -> IdentifierState:
    """Zero-initial-error initialization for each scheme."""
    scheme = Identifier.parse(scheme) if not isinstance(scheme, Identifier) else scheme
    th = np.asarray(thetahat0, dtype=float).copy()
    h0 = np.asarray(h0, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    p, n = len(th), len(h0)
    if scheme is Identifier.H_PASSIVE:
        return IdentifierState(scheme, th, hhat=h0.copy())
    if scheme is Identifier.X_PASSIVE:
        return IdentifierState(scheme, th, xhat=x0.copy())
    start = h0 if scheme is Identifier.H_SWAPPING else x0
    return IdentifierState(scheme, th, Omega=np.zeros((p, n)), Omega0=-start.copy())


def epsilon(state: IdentifierState, h, x) -> np.ndarray:
    s = state.scheme
    if s is Identifier.H_PASSIVE:
        return np.asarray(h) - state.hhat
    if s is Identifier.X_PASSIVE:
        return np.asarray(x) - state.xhat
    base = h if s is Identifier.H_SWAPPING else x
    return np.asarray(base) + state.Omega0 - state.Omega.T @ state.thetahat


def adaptation_active(ubar: float, u0: float) -> bool:
    """Gate of the switched update law; the tie goes to adaptation on."""
    return ubar >= u0


def theta_dot(state: IdentifierState, eps, regressor=None, P=None, gamma: float = 1.0, nu: float = 0.0,
              gate: tuple[float, float] | None = None) -> np.ndarray:
    """Update law.  ``regressor`` is ``W`` (h-passive) or ``F`` (x-passive);
    swapping schemes use ``state.Omega`` when it is omitted.  ``gate`` is
    ``(ubar, u0)``; adaptation stops when ``ubar < u0``.
    """
    eps = np.asarray(eps, dtype=float)
    if gate is not None and not adaptation_active(*gate):
        return np.zeros_like(state.thetahat)
    if state.scheme.is_swapping:
        Om = state.Omega if regressor is None else np.asarray(regressor)
        return gamma * (Om @ eps) / (1.0 + nu * float(np.sum(Om * Om)))
    return gamma * (np.asarray(regressor) @ (np.asarray(P) @ eps))


def observer_matrix(A0, sigma: float, F, P) -> np.ndarray:
    """``A0 - sigma F^T F P`` shared by the plant-observer schemes."""
    F = np.asarray(F)
    return np.asarray(A0) - sigma * F.T @ F @ np.asarray(P)


def state_deriv(state: IdentifierState, *, thetadot, eps=None, A=None, W=None, Q=None,
                A0=None, sigma=None, F=None, P=None, f=None, x=None) -> IdentifierState:
    """Time derivative of the identifier state (``thetahat`` field holds ``thetadot``)."""
    s = state.scheme
    thetadot = np.asarray(thetadot, dtype=float)
    if s is Identifier.H_PASSIVE:
        W = np.asarray(W)
        d = A @ state.hhat + sigma * W.T @ (W @ (P @ eps)) + np.asarray(Q).T @ thetadot
        return replace(state, thetahat=thetadot, hhat=d)
    if s is Identifier.H_SWAPPING:
        W = np.asarray(W)
        dOmT = A @ state.Omega.T + W.T
        dOm0 = A @ state.Omega0 + W.T @ state.thetahat - np.asarray(Q).T @ thetadot
        return replace(state, thetahat=thetadot, Omega=dOmT.T, Omega0=dOm0)
    Abar = observer_matrix(A0, sigma, F, P)
    F = np.asarray(F)
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    if s is Identifier.X_PASSIVE:
        d = Abar @ (state.xhat - x) + f + F.T @ state.thetahat
        return replace(state, thetahat=thetadot, xhat=d)
    dOmT = Abar @ state.Omega.T + F.T
    dOm0 = Abar @ (state.Omega0 + x) - f
    return replace(state, thetahat=thetadot, Omega=dOmT.T, Omega0=dOm0)


def epsilon_tilde(state: IdentifierState, eps, theta_true) -> np.ndarray:
    """``eps - Omega^T theta~`` for swapping schemes (needs the true parameter)."""
    th_err = np.asarray(theta_true) - state.thetahat
    return np.asarray(eps) - state.Omega.T @ th_err


def lyapunov_value(state: IdentifierState, eps, theta_true, P, gamma: float) -> float:
    """``e^T P e + |theta~|^2 / gamma`` with ``e = eps`` (passive) or ``eps~`` (swapping)."""
    th_err = np.asarray(theta_true) - state.thetahat
    e = epsilon_tilde(state, eps, theta_true) if state.scheme.is_swapping else np.asarray(eps)
    return float(e @ np.asarray(P) @ e + th_err @ th_err / gamma)


# --- symbolic route -------------------------------------------------------------

def _c(v) -> el.Expr:
    return v if isinstance(v, el.Expr) else el.const(float(v))


def _matvec(M, v) -> list[el.Expr]:
    return [el.total(el.mul(_c(M[i][k]), v[k]) for k in range(len(v))) for i in range(len(M))]


def _transpose(M) -> list[list]:
    return [list(col) for col in zip(*M)]


def _A_apply(s: Sequence[el.Expr], v: Sequence[el.Expr]) -> list[el.Expr]:
    n = len(s)
    return [el.add(el.neg(el.mul(s[i], v[i])), v[i + 1]) if i + 1 < n else el.neg(el.mul(s[i], v[i]))
            for i in range(n)]


@dataclass(frozen=True)
class SymbolicLaws:
    eps: list[el.Expr]
    thetadot: list[el.Expr]     # ungated update law
    V: el.Expr
    eps_tilde: list[el.Expr] | None
    # aux derivatives as a function of the (possibly gated) estimate rate
    _aux: object

    def aux_deriv(self, thetadot: Sequence[el.Expr]) -> list[el.Expr]:
        return self._aux(list(thetadot))


def symbolic_laws(scheme: Identifier, *, n: int, p: int, x, thetahat, aux, u, h, s, W, Q, F,
                  P, A0, sigma: float, gamma: float, nu: float, theta_true) -> SymbolicLaws:
    """Build identifier expressions over symbolic closed-loop quantities.

    ``x``, ``thetahat``, ``aux``, ``u``, ``h``, ``s`` are lists of Exprs (or
    a single Expr for ``u``); ``W``, ``Q``, ``F`` are ``p x n`` nested
    lists of Exprs; ``P``, ``A0`` are numeric arrays.
    """
    Pl = [[float(P[i][k]) for k in range(n)] for i in range(n)]
    th_err = [el.sub(el.const(theta_true[j]), thetahat[j]) for j in range(p)]
    inv_gamma = el.const(1.0 / gamma)
    f = list(x[1:]) + [u]

    def quad_P(e):
        Pe = _matvec(Pl, e)
        return el.dot(e, Pe)

    if scheme in (Identifier.H_PASSIVE, Identifier.X_PASSIVE):
        est = aux[:n]
        base = h if scheme is Identifier.H_PASSIVE else x
        eps = [el.sub(base[i], est[i]) for i in range(n)]
        Pe = _matvec(Pl, eps)
        R = W if scheme is Identifier.H_PASSIVE else F
        thetadot = [el.mul(el.const(gamma), el.dot(R[j], Pe)) for j in range(p)]
        V = el.add(el.dot(eps, Pe), el.mul(inv_gamma, el.dot(th_err, th_err)))

        if scheme is Identifier.H_PASSIVE:
            WPe = [el.dot(W[j], Pe) for j in range(p)]
            WT = _transpose(W)

            def aux_fn(td):
                Ah = _A_apply(s, est)
                return [el.total([Ah[i], el.mul(el.const(sigma), el.dot(WT[i], WPe)),
                                  el.dot([Q[j][i] for j in range(p)], td)]) for i in range(n)]
        else:
            Abar = _observer_matrix_sym(A0, sigma, F, Pl, n, p)
            FT = _transpose(F)

            def aux_fn(td):
                diff_ = [el.sub(est[i], x[i]) for i in range(n)]
                Ad = _matvec(Abar, diff_)
                return [el.total([Ad[i], f[i], el.dot(FT[i], thetahat)]) for i in range(n)]

        return SymbolicLaws(eps, thetadot, V, None, aux_fn)

    Om = [[aux[j * n + i] for i in range(n)] for j in range(p)]
    Om0 = aux[n * p:n * p + n]
    OmT = _transpose(Om)
    base = h if scheme is Identifier.H_SWAPPING else x
    eps = [el.sub(el.add(base[i], Om0[i]), el.dot(OmT[i], thetahat)) for i in range(n)]
    fro = el.total(el.mul(Om[j][i], Om[j][i]) for j in range(p) for i in range(n))
    denom = el.add(el.ONE, el.mul(el.const(nu), fro))
    thetadot = [el.div(el.mul(el.const(gamma), el.dot(Om[j], eps)), denom) if nu > 0
                else el.mul(el.const(gamma), el.dot(Om[j], eps)) for j in range(p)]
    eps_t = [el.sub(eps[i], el.dot(OmT[i], th_err)) for i in range(n)]
    V = el.add(quad_P(eps_t), el.mul(inv_gamma, el.dot(th_err, th_err)))

    if scheme is Identifier.H_SWAPPING:
        WT = _transpose(W)

        def aux_fn(td):
            dOm = [_A_apply(s, Om[j]) for j in range(p)]
            dOm = [[el.add(dOm[j][i], W[j][i]) for i in range(n)] for j in range(p)]
            A0m = _A_apply(s, Om0)
            dOm0 = [el.sub(el.add(A0m[i], el.dot(WT[i], thetahat)), el.dot([Q[j][i] for j in range(p)], td))
                    for i in range(n)]
            return [e for row in dOm for e in row] + dOm0
    else:
        Abar = _observer_matrix_sym(A0, sigma, F, Pl, n, p)

        def aux_fn(td):
            dOm = [_matvec(Abar, Om[j]) for j in range(p)]
            dOm = [[el.add(dOm[j][i], F[j][i]) for i in range(n)] for j in range(p)]
            Ax = _matvec(Abar, [el.add(Om0[i], x[i]) for i in range(n)])
            dOm0 = [el.sub(Ax[i], f[i]) for i in range(n)]
            return [e for row in dOm for e in row] + dOm0

    return SymbolicLaws(eps, thetadot, V, eps_t, aux_fn)


def _observer_matrix_sym(A0, sigma, F, Pl, n, p) -> list[list[el.Expr]]:
    # (F^T F)_{ik} = sum_j F[j][i] F[j][k]; then times P
    FtF = [[el.total(el.mul(F[j][i], F[j][k]) for j in range(p)) for k in range(n)] for i in range(n)]
    FtFP = [[el.total(el.mul(FtF[i][m], el.const(Pl[m][k])) for m in range(n)) for k in range(n)]
            for i in range(n)]
    return [[el.sub(el.const(float(A0[i][k])), el.mul(el.const(sigma), FtFP[i][k])) for k in range(n)]
            for i in range(n)]
