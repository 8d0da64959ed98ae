"""Dense strictly convex QP solver (dual active set, Goldfarb-Idnani).

Solves ``min 0.5 x'Hx + g'x  s.t.  G x <= h``.  Starting from the
unconstrained minimizer, the most violated constraint is added each outer
iteration while dual feasibility is kept; the factors ``J = L^-T Q`` and
``R`` are updated in place, so one iteration costs O(n^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QpError(RuntimeError):
    """Solver failure; carries the last iterate and its KKT residual."""

    def __init__(self, msg: str, x: np.ndarray | None = None, residual: float = np.inf,
                 iterations: int = 0):
        super().__init__(msg)
        self.x = x
        self.residual = residual
        self.iterations = iterations


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    G: np.ndarray   # inequality rows, G x <= h
    h: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = len(self.g)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.H.shape != (n, n) or len(self.h) != len(self.G):
            raise ValueError("inconsistent QP dimensions")

    @property
    def n(self) -> int:
        return len(self.g)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray    # one per inequality row, zero when inactive
    active: np.ndarray
    iterations: int
    residual: float
    objective: float


def kkt_residual(p: QpProblem, x: np.ndarray, lam: np.ndarray) -> float:
    """Scaled worst violation of stationarity, feasibility and complementarity."""
    scale = 1.0 + max(np.max(np.abs(p.g), initial=0.0), np.max(np.abs(p.h), initial=0.0))
    stat = np.max(np.abs(p.H @ x + p.g + p.G.T @ lam), initial=0.0)
    slack = p.h - p.G @ x
    primal = max(0.0, -np.min(slack, initial=0.0))
    dual = max(0.0, -np.min(lam, initial=0.0))
    comp = np.max(np.abs(lam * slack), initial=0.0)
    return float(max(stat, comp) / scale + primal + dual)


def _inverse_factor(H: np.ndarray) -> np.ndarray:
    """``J = L^-T`` for ``H = L L^T``; a diagonal trailing block is factored directly."""
    n = len(H)
    off = H - np.diag(np.diag(H))
    nz = np.flatnonzero(np.any(off != 0.0, axis=0))
    k = int(nz[-1]) + 1 if len(nz) else 0       # rows/cols k.. are decoupled and diagonal
    d = np.diag(H)[k:]
    if np.any(d <= 0):
        raise np.linalg.LinAlgError("non-positive diagonal")
    J = np.zeros((n, n))
    if k:
        L = np.linalg.cholesky(H[:k, :k])
        J[:k, :k] = np.linalg.inv(L).T
    J[np.arange(k, n), np.arange(k, n)] = 1.0 / np.sqrt(d)
    return J


def solve_qp(p: QpProblem, tol: float = 1e-6, max_iter: int = 1000) -> QpResult:
    """Solve ``p``; raises :class:`QpError` if the KKT residual of the final
    iterate is not below ``tol`` or more than ``max_iter`` constraints are added."""
    n = p.n
    try:
        J = _inverse_factor(p.H)
    except np.linalg.LinAlgError as exc:
        raise QpError("Hessian is not positive definite") from exc
    # inequalities in the >= form used below: c_i' x >= b_i
    C = -p.G
    b = -p.h
    rownorm = np.maximum(np.linalg.norm(C, axis=1), 1e-300)
    x = -(J @ (J.T @ p.g))
    R = np.zeros((n, n))
    active: list[int] = []
    u = np.zeros(0)
    q = 0
    it = 0
    feas_tol = 0.01 * tol * (1.0 + np.max(np.abs(b), initial=0.0))

    def result() -> QpResult:
        lam = np.zeros(len(b))
        lam[active] = u
        return QpResult(x, lam, np.array(sorted(active), dtype=int), it,
                        kkt_residual(p, x, lam), p.objective(x))

    while True:
        s = C @ x - b
        viol = s / rownorm
        viol[active] = 0.0
        k = int(np.argmin(viol)) if len(viol) else -1   # first index wins ties
        if k < 0 or s[k] >= -feas_tol:
            res = result()
            if not res.residual < tol:
                raise QpError(f"KKT residual {res.residual:.3g} after {it} iterations",
                              x, res.residual, it)
            return res
        if it >= max_iter:
            res = result()
            raise QpError(f"iteration cap {max_iter} reached", x, res.residual, it)
        it += 1
        npl = C[k]
        u_plus = np.append(u, 0.0)
        while True:
            d = J.T @ npl
            z = J[:, q:] @ d[q:]
            r = np.linalg.solve(np.triu(R[:q, :q]), d[:q]) if q else np.zeros(0)
            # partial (dual) step
            t1, l = np.inf, -1
            pos = np.flatnonzero(r > 1e-12 * max(1.0, np.max(np.abs(r), initial=0.0)))
            if len(pos):
                ratios = u_plus[pos] / r[pos]
                j = int(np.argmin(ratios))
                t1, l = float(ratios[j]), int(pos[j])
            # full (primal) step
            zn = float(z @ npl)
            sk = float(npl @ x - b[k])
            t2 = -sk / zn if abs(zn) > 1e-14 * max(1.0, float(npl @ npl)) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                res = result()
                raise QpError("constraints are infeasible", x, res.residual, it)
            if np.isfinite(t2):
                x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t == t2:
                # add constraint k: reflect d[q:] onto its first axis
                v = d[q:].copy()
                nv = np.linalg.norm(v)
                alpha = -nv if v[0] >= 0 else nv
                v[0] -= alpha
                vv = v @ v
                if vv > 0:
                    J[:, q:] -= np.outer(J[:, q:] @ v, (2.0 / vv) * v)
                R[:q, q] = d[:q]
                R[q, q] = alpha
                q += 1
                active.append(k)
                u = u_plus
                break
            # drop constraint l and retriangularize
            active.pop(l)
            u_plus = np.delete(u_plus, l)
            u = u_plus[:-1].copy()
            R[:q, l:q - 1] = R[:q, l + 1:q].copy()
            R[:q, q - 1] = 0.0
            for i in range(l, q - 1):
                a, c = R[i, i], R[i + 1, i]
                hyp = np.hypot(a, c)
                if hyp == 0:
                    continue
                cs, sn = a / hyp, c / hyp
                ri, rj = R[i, i:q - 1].copy(), R[i + 1, i:q - 1].copy()
                R[i, i:q - 1] = cs * ri + sn * rj
                R[i + 1, i:q - 1] = -sn * ri + cs * rj
                ji, jj = J[:, i].copy(), J[:, i + 1].copy()
                J[:, i] = cs * ji + sn * jj
                J[:, i + 1] = -sn * ji + cs * jj
            R[q - 1, :] = 0.0
            q -= 1
