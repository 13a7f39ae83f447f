"""Independent re-check of a certificate.

Nothing here reuses the block formulas of :mod:`assembly`.  Each matrix is
recovered by polarisation of the scalar quadratic form it represents, written
directly in terms of the stacked vector ``xi = [w_1 ... w_m, mu]``:

    xi' Psi xi   = 2 (P0 sum_i w_i + S mu)' (sum_i A_i w_i + K mu)
    xi' Phi xi   = 4 (sum_i alpha_i w_i)' S mu
    Cb(theta) xi = stack over pairs i<j of (theta_j w_i - theta_i w_j)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .problem import LmiCertificate, LmiProblem, VertexData, to_working


def _split(xi, n, m):
    w = [xi[i * n:(i + 1) * n] for i in range(m)]
    return w, xi[n * m:]


def _polarise(q, dim) -> np.ndarray:
    eye = np.eye(dim)
    M = np.empty((dim, dim))
    for a in range(dim):
        for b in range(a, dim):
            val = 0.25 * (q(eye[a] + eye[b]) - q(eye[a] - eye[b]))
            M[a, b] = M[b, a] = val
    return M


def psi_matrix(A_list, K, P0, S) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    n, m = K.shape

    def q(xi):
        w, mu = _split(xi, n, m)
        lhs = P0 @ sum(w) + S @ mu
        rhs = sum(A_list[i] @ w[i] for i in range(m)) + K @ mu
        return 2.0 * lhs @ rhs

    return _polarise(q, n * m + m)


def phi_matrix(alpha, S) -> np.ndarray:
    n, m = S.shape
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (m,))

    def q(xi):
        w, mu = _split(xi, n, m)
        return 4.0 * sum(alpha[i] * w[i] for i in range(m)) @ (S @ mu)

    return _polarise(q, n * m + m)


def cb_matrix(theta, n, m) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    Cb = np.zeros((len(pairs) * n, n * m + m))
    for row, (i, j) in enumerate(pairs):
        for c in range(n):
            Cb[row * n + c, i * n + c] = theta[j]
            Cb[row * n + c, j * n + c] = -theta[i]
    return Cb


def constraint_matrix(vertex: VertexData, alpha, theta, P0, S, L) -> np.ndarray:
    n, m = vertex.n, vertex.m
    M = psi_matrix(vertex.A, vertex.K, P0, S) + phi_matrix(alpha, S)
    Cb = cb_matrix(theta, n, m)
    if Cb.shape[0]:
        M = M + L @ Cb + (L @ Cb).T
    return M


def _null_basis(n, m, rng=None) -> np.ndarray:
    C_a = np.concatenate([np.zeros(n * m), np.ones(m)])[None, :]
    Q = scipy.linalg.null_space(C_a)
    if rng is not None:
        R, _ = np.linalg.qr(rng.standard_normal((Q.shape[1], Q.shape[1])))
        Q = Q @ R
    return Q


@dataclass
class VerificationReport:
    passed: bool
    p0_min_eig: float
    worst_vertex_eig: float
    worst_sample_eig: float
    n_vertex_blocks: int
    n_samples: int
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "p0_min_eig": self.p0_min_eig,
            "worst_vertex_eig": self.worst_vertex_eig,
            "worst_sample_eig": self.worst_sample_eig,
            "n_vertex_blocks": self.n_vertex_blocks,
            "n_samples": self.n_samples,
            "violations": self.violations[:20],
            "n_violations": len(self.violations),
        }

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: min eig(P0)={self.p0_min_eig:.3e}, "
                f"worst vertex eig={self.worst_vertex_eig:.3e} "
                f"over {self.n_vertex_blocks} blocks, "
                f"worst sample eig={self.worst_sample_eig:.3e} over {self.n_samples} samples")


def _frob(vertex: VertexData) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in vertex.A) + np.sum(vertex.K ** 2)))


def verify_certificate(cert: LmiCertificate, problem: LmiProblem, sample_count: int = 0,
                       seed: int = 0, tol: float = 0.0) -> VerificationReport:
    """Check positivity of P0 and negativity of every projected block.

    Vertex blocks are always checked.  ``sample_count`` additional random
    points (theta in the simplex, parameters inside the polytope) are checked
    as a convexity witness.  Eigenvalues are in the same normalised working
    coordinates the solver used; a block passes when its largest eigenvalue is
    below ``-tol``.
    """
    n, m = problem.n, problem.m
    d = problem.scaling
    P0, S, L = to_working(cert.P0, cert.S, cert.L, d, m)
    rng = np.random.default_rng(seed)
    Q = _null_basis(n, m)
    violations = []

    p0_min = float(np.linalg.eigvalsh(P0)[0])
    if not p0_min > tol:
        violations.append({"family": "positivity", "eig": p0_min})

    def check(vertex, theta, label):
        work = vertex.scaled(d)
        M = constraint_matrix(work, problem.alpha, theta, P0, S, L)
        Mp = Q.T @ M @ Q / _frob(work)
        top = float(np.linalg.eigvalsh((Mp + Mp.T) / 2)[-1])
        if not top < -tol:
            violations.append({**label, "eig": top})
        return top

    worst_vertex = -np.inf
    n_blocks = 0
    for vi, vertex in enumerate(problem.vertices):
        for ti in range(m):
            theta = np.eye(m)[ti]
            worst_vertex = max(worst_vertex, check(vertex, theta, {
                "family": "decrease", "vertex": vi, "theta": ti,
                "delta": [float(v) for v in vertex.label]}))
            n_blocks += 1

    factory = problem.vertex_factory()
    worst_sample = -np.inf
    for k in range(sample_count):
        theta = rng.dirichlet(np.ones(m))
        if factory is not None and problem.box is not None:
            delta = problem.box.sample(rng)
            vertex = factory(*delta)
        else:
            lam = rng.dirichlet(np.ones(len(problem.vertices)))
            vertex = VertexData(
                tuple(sum(l * v.A[i] for l, v in zip(lam, problem.vertices)) for i in range(m)),
                sum(l * v.K for l, v in zip(lam, problem.vertices)), ("interior",))
            delta = vertex.label
        worst_sample = max(worst_sample, check(vertex, theta, {
            "family": "sample", "sample": k, "theta": [float(t) for t in theta],
            "delta": [float(v) for v in delta] if delta != ("interior",) else "interior"}))

    return VerificationReport(not violations, p0_min, worst_vertex, worst_sample, n_blocks,
                              sample_count, violations)
