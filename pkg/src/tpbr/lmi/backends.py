"""Max-margin semidefinite feasibility backends.

Contract: given affine symmetric blocks ``M_j(x) = C_j + sum_k x_k G_jk`` with a
sign ``s_j`` and positive scale ``c_j``, maximise ``t`` subject to
``s_j M_j(x) / c_j >= t I`` for every block, optional linear equalities and
optional box bounds on a subset of the variables.  Backends return ``t`` and
``x``; whether the point is acceptable is decided by the caller.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BackendResult:
    status: str
    t: float
    x: np.ndarray
    info: dict = field(default_factory=dict)


def _normalised(block):
    return block.sign * block.constant / block.scale, block.sign * block.coeffs / block.scale


def cvxopt_backend(blocks, n_vars, A_eq=None, b_eq=None, box_index=None, box_bound=None,
                   tol=1e-9, max_iters=200) -> BackendResult:
    """Primal-dual interior-point solve through ``cvxopt.solvers.sdp``."""
    from cvxopt import matrix, solvers

    ny = n_vars + 1
    c = matrix(np.concatenate([np.zeros(n_vars), [-1.0]]))
    Gs, hs = [], []
    for block in blocks:
        const, coeffs = _normalised(block)
        d = const.shape[0]
        G = np.empty((d * d, ny))
        for k in range(n_vars):
            G[:, k] = -coeffs[k].ravel(order="F")
        G[:, -1] = np.eye(d).ravel(order="F")
        Gs.append(matrix(G))
        hs.append(matrix(np.ascontiguousarray(const)))
    kwargs = {}
    if box_index is not None and len(box_index):
        idx = np.asarray(box_index)
        Gl = np.zeros((2 * idx.size, ny))
        Gl[np.arange(idx.size), idx] = 1.0
        Gl[idx.size + np.arange(idx.size), idx] = -1.0
        kwargs["G"] = matrix(Gl)
        kwargs["h"] = matrix(np.full(2 * idx.size, float(box_bound)))
    if A_eq is not None:
        A = np.hstack([np.atleast_2d(A_eq), np.zeros((np.atleast_2d(A_eq).shape[0], 1))])
        kwargs["A"] = matrix(A)
        kwargs["b"] = matrix(np.atleast_1d(np.asarray(b_eq, dtype=float)))
    options = {"show_progress": False, "abstol": tol, "reltol": tol,
               "feastol": tol, "maxiters": max_iters}
    start = time.perf_counter()
    try:
        sol = solvers.sdp(c, Gs=Gs, hs=hs, options=options, **kwargs)
    except (ArithmeticError, ValueError) as exc:
        # cvxopt raises on singular KKT systems and zero scaling updates
        return BackendResult(f"error: {exc!r}", -np.inf, np.full(n_vars, np.nan),
                             {"backend": "cvxopt", "seconds": time.perf_counter() - start})
    elapsed = time.perf_counter() - start
    if sol["x"] is None:
        return BackendResult(sol["status"], -np.inf, np.zeros(n_vars),
                             {"backend": "cvxopt", "seconds": elapsed})
    y = np.array(sol["x"]).ravel()
    return BackendResult(sol["status"], float(y[-1]), y[:-1],
                         {"backend": "cvxopt", "seconds": elapsed,
                          "iterations": sol.get("iterations")})


def cvxpy_backend(blocks, n_vars, A_eq=None, b_eq=None, box_index=None, box_bound=None,
                  solver="CLARABEL", tol=1e-12, max_iters=500) -> BackendResult:
    """Bridge to an external conic solver through cvxpy.

    Margins near 1e-6 sit below Clarabel's default gap tolerance, so the
    tolerances are tightened; other solvers run with their defaults.
    """
    import cvxpy as cp

    x = cp.Variable(n_vars)
    t = cp.Variable()
    constraints = []
    for block in blocks:
        const, coeffs = _normalised(block)
        d = const.shape[0]
        expr = const + sum(x[k] * coeffs[k] for k in range(n_vars) if np.any(coeffs[k]))
        expr = (expr + expr.T) / 2
        constraints.append(expr - t * np.eye(d) >> 0)
    if A_eq is not None:
        constraints.append(np.atleast_2d(A_eq) @ x == np.atleast_1d(b_eq))
    if box_index is not None and len(box_index):
        constraints.append(cp.abs(x[np.asarray(box_index)]) <= box_bound)
    prob = cp.Problem(cp.Maximize(t), constraints)
    start = time.perf_counter()
    opts = {}
    if solver == "CLARABEL":
        opts = {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol, "max_iter": max_iters}
    prob.solve(solver=solver, **opts)
    elapsed = time.perf_counter() - start
    if x.value is None:
        return BackendResult(prob.status, -np.inf, np.zeros(n_vars),
                             {"backend": f"cvxpy/{solver}", "seconds": elapsed})
    return BackendResult(prob.status, float(t.value), np.asarray(x.value).ravel(),
                         {"backend": f"cvxpy/{solver}", "seconds": elapsed})


BACKENDS = {
    "cvxopt": cvxopt_backend,
    "cvxpy": cvxpy_backend,
}


def get_backend(backend):
    if callable(backend):
        return backend
    try:
        return BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}") from None
