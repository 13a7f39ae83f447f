"""Block-matrix assembly of the reduced (common-P0) switching-rule LMIs.

Decision variables are the common quadratic weight ``P0`` (n x n, symmetric),
the per-mode linear weights ``S = [S_1 ... S_m]`` (n x m) and the multiplier
``L`` ((nm+m) x rn).  For one parameter vertex with data ``A = [A_1 ... A_m]``
and ``K = [k_1 ... k_m]`` the constraint is

    Qa' (Psi + Phi + L Cb(theta) + Cb(theta)' L') Qa < 0,

    Psi = [[A'P + P'A, P'K + A'S], [K'P + S'A, K'S + S'K]],  P = [P0 ... P0]
    Phi = [[0, 2 alpha' S], [2 S' alpha, 0]],                alpha = [a_1 I ... a_m I]
    Cb(theta) = [aleph(theta) kron I_n, 0]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..model import DomainError


@dataclass(frozen=True)
class VariableLayout:
    """Packing of (P0, S, L) into one flat decision vector."""

    n: int
    m: int

    @property
    def r(self) -> int:
        return self.m * (self.m - 1) // 2

    @property
    def dim(self) -> int:
        return self.n * self.m + self.m

    @property
    def n_p(self) -> int:
        return self.n * (self.n + 1) // 2

    @property
    def n_s(self) -> int:
        return self.n * self.m

    @property
    def l_shape(self) -> tuple[int, int]:
        return (self.dim, self.r * self.n)

    @property
    def n_l(self) -> int:
        rows, cols = self.l_shape
        return rows * cols

    @property
    def size(self) -> int:
        return self.n_p + self.n_s + self.n_l

    @property
    def s_slice(self) -> slice:
        return slice(self.n_p, self.n_p + self.n_s)

    @property
    def l_slice(self) -> slice:
        return slice(self.n_p + self.n_s, self.size)

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        n = self.n
        P0 = np.zeros((n, n))
        iu = np.triu_indices(n)
        P0[iu] = x[:self.n_p]
        P0 = P0 + np.triu(P0, 1).T
        S = x[self.s_slice].reshape(n, self.m, order="F")
        L = x[self.l_slice].reshape(self.l_shape)
        return P0, S, L

    def pack(self, P0, S, L=None) -> np.ndarray:
        P0 = np.asarray(P0, dtype=float)
        S = np.asarray(S, dtype=float).reshape(self.n, self.m)
        if L is None:
            L = np.zeros(self.l_shape)
        return np.concatenate([P0[np.triu_indices(self.n)],
                               S.reshape(-1, order="F"),
                               np.asarray(L, dtype=float).reshape(-1)])

    def trace_row(self) -> np.ndarray:
        """Row ``a`` with ``a @ x == trace(P0)``."""
        row = np.zeros(self.size)
        iu = np.triu_indices(self.n)
        row[:self.n_p] = (iu[0] == iu[1]).astype(float)
        return row

    def gauge_rows(self) -> np.ndarray:
        """Rows fixing ``sum_i S_i = 0`` and ``C_a L = 0``.

        The projection by ``Q_a`` removes both directions: the projected
        constraints only see differences ``S_i - S_j`` (and so does the argmax
        rule), and only the part of ``L`` orthogonal to ``C_a'``.  Left free
        they make the interior-point KKT system singular.
        """
        rows = []
        for c in range(self.n):
            row = np.zeros(self.size)
            for i in range(self.m):
                row[self.n_p + i * self.n + c] = 1.0
            rows.append(row)
        n_rows, n_cols = self.l_shape
        for c in range(n_cols):
            row = np.zeros(self.size)
            for i in range(self.m):
                row[self.l_slice.start + (self.n * self.m + i) * n_cols + c] = 1.0
            rows.append(row)
        return np.array(rows)


def annihilator(theta) -> np.ndarray:
    """Linear annihilator of ``theta``: rows ``theta_j e_i - theta_i e_j`` for i < j."""
    theta = np.asarray(theta, dtype=float).ravel()
    m = theta.size
    if m < 2:
        raise DomainError("annihilator needs at least two modes")
    rows = []
    for i in range(m):
        for j in range(i + 1, m):
            row = np.zeros(m)
            row[i], row[j] = theta[j], -theta[i]
            rows.append(row)
    return np.array(rows)


def null_space_basis(C_a: np.ndarray) -> np.ndarray:
    """Orthonormal null-space basis of a single-row constraint matrix.

    Coordinates the row does not touch keep their unit vectors, so for
    ``C_a = [0, 1_m]`` the basis is ``e_1..e_nm`` followed by a basis of
    ``1_m``'s orthogonal complement, e.g. ``(e_5 - e_6)/sqrt(2)`` for n=m=2.
    """
    C_a = np.atleast_2d(np.asarray(C_a, dtype=float))
    if C_a.shape[0] != 1:
        raise DomainError("expected a single constraint row")
    row = C_a[0]
    size = row.size
    support = np.flatnonzero(row)
    free = np.flatnonzero(row == 0)
    cols = []
    for k in free:
        col = np.zeros(size)
        col[k] = 1.0
        cols.append(col)
    if support.size > 1:
        sub = scipy.linalg.null_space(row[support][None, :])
        for c in sub.T:
            c = c / np.linalg.norm(c)
            if c[np.flatnonzero(np.abs(c) > 1e-12)[0]] < 0:
                c = -c
            col = np.zeros(size)
            col[support] = c
            cols.append(col)
    return np.column_stack(cols) if cols else np.zeros((size, 0))


def constraint_row(n: int, m: int) -> np.ndarray:
    return np.concatenate([np.zeros(n * m), np.ones(m)])[None, :]


def assemble_psi(A_list, K, P0, S) -> np.ndarray:
    A = np.hstack([np.asarray(a, dtype=float) for a in A_list])
    K = np.asarray(K, dtype=float)
    n, m = K.shape
    if A.shape != (n, n * m):
        raise ValueError(f"A blocks have shape {A.shape}, expected {(n, n * m)}")
    P = np.hstack([P0] * m)
    top = A.T @ P + P.T @ A
    off = P.T @ K + A.T @ S
    bottom = K.T @ S + S.T @ K
    return np.block([[top, off], [off.T, bottom]])


def assemble_phi(alpha, S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    n, m = S.shape
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (m,))
    alpha_mat = np.hstack([a * np.eye(n) for a in alpha])
    off = 2.0 * alpha_mat.T @ S
    return np.block([[np.zeros((n * m, n * m)), off],
                     [off.T, np.zeros((m, m))]])


def assemble_cb(theta, n: int, m: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.size != m:
        raise ValueError("theta length does not match m")
    if m == 1:
        return np.zeros((0, n + 1))
    ann = annihilator(theta)
    return np.hstack([np.kron(ann, np.eye(n)), np.zeros((ann.shape[0] * n, m))])


def full_block(A_list, K, alpha, theta, P0, S, L) -> np.ndarray:
    """Unprojected ``Psi + Phi + L Cb + Cb' L'``."""
    n, m = np.asarray(K).shape
    M = assemble_psi(A_list, K, P0, S) + assemble_phi(alpha, S)
    Cb = assemble_cb(theta, n, m)
    if Cb.shape[0]:
        LC = L @ Cb
        M = M + LC + LC.T
    return M


def data_scale(A_list, K) -> float:
    """Normalisation for one vertex block: Frobenius norm of ``[A_1 ... A_m, K]``."""
    F = np.hstack([*(np.asarray(a, dtype=float) for a in A_list), np.asarray(K, dtype=float)])
    return float(np.linalg.norm(F))


def simplex_vertices(m: int) -> list[np.ndarray]:
    return [np.eye(m)[i] for i in range(m)]
